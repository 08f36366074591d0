#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(map) = lcov_core::io::decode_covmap(data) {
        let bytes = lcov_core::io::encode_covmap(&map).unwrap();
        let again = lcov_core::io::decode_covmap(&bytes).unwrap();
        assert_eq!(map.matrices().len(), again.matrices().len());
        for (a, b) in map.matrices().iter().zip(again.matrices()) {
            // Compare bit patterns: entries are unconstrained f64s.
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
});
