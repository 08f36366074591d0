#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Valid frames are exactly 1024x1536 headerless little-endian u16, so
    // almost every input exercises the length gate; a correctly sized one
    // must survive a decode/encode round trip untouched.
    if let Ok(img) = lcov_core::io::decode_iml(data) {
        let bytes = lcov_core::io::encode_iml(&img).unwrap();
        assert_eq!(data, &bytes[..]);
    }
});
