#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = lcov_core::io::decode_pgm(data) {
        // Whatever the header said, decoded pixels are integer codes in
        // [0, 65535], which makes them re-encodable bit-exactly.
        assert!(img.pixels().iter().all(|v| (0.0..=65535.0).contains(v) && v.fract() == 0.0));
        let bytes = lcov_core::io::encode_pgm16_raw(&img).unwrap();
        let again = lcov_core::io::decode_pgm(&bytes).unwrap();
        assert_eq!(img.pixels(), again.pixels());
        assert_eq!((img.height(), img.width()), (again.height(), again.width()));
    }
});
