#![no_main]

use libfuzzer_sys::fuzz_target;
use volcheck::experiment::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = ExperimentConfig::from_toml(text) else { return };
    // resolution may reject the config but must not panic
    let _ = cfg.study();
});
