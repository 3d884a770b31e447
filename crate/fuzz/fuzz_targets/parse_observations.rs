#![no_main]

use libfuzzer_sys::fuzz_target;
use volcheck::simulate::parse_observations;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(series) = parse_observations(text) {
        assert_eq!(series.z.len(), series.n + 1);
        assert!(series.z.iter().all(|v| v.is_finite()));
    }
});
