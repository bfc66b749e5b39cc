#![no_main]

use libfuzzer_sys::fuzz_target;
use robust_si_cli::parse_sigma;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = parse_sigma(text) {
            assert_eq!(m.nrows(), m.ncols());
            assert!(m.iter().all(|v| v.is_finite()));
        }
    }
});
