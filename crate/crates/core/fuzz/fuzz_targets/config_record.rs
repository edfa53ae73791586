#![no_main]

use koopctl::config::{parse_config, AnalysisConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(overrides) = parse_config(data) {
        // values are only checked on apply; that must not panic either
        let mut config = AnalysisConfig::default();
        let _ = config.apply(&overrides);
    }
});
