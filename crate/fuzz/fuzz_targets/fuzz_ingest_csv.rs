#![no_main]

use libfuzzer_sys::fuzz_target;
use robust_si_cli::ingest_csv;

fuzz_target!(|data: &[u8]| {
    for intercept in [true, false] {
        if let Ok(ds) = ingest_csv(data, "y", &[], intercept, 1.0) {
            assert_eq!(ds.y().len(), ds.x().nrows());
            assert!(ds.y().iter().all(|v| v.is_finite()));
        }
    }
    let _ = ingest_csv(data, "y", &["x".to_owned()], true, 1.0);
});
