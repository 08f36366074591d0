#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(bank) = lcov_core::io::decode_bank(data) {
        let bytes = lcov_core::io::encode_bank(&bank);
        let again = lcov_core::io::decode_bank(&bytes).unwrap();
        assert_eq!(bank.num_filters(), again.num_filters());
        assert_eq!(bank.kernel_size(), again.kernel_size());
        // Compare bit patterns: taps are unconstrained f64s, NaN included.
        assert_eq!(bank.blur_sigma().to_bits(), again.blur_sigma().to_bits());
        for (a, b) in bank.kernels().iter().zip(again.kernels()) {
            for (x, y) in a.taps().iter().zip(b.taps()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
});
