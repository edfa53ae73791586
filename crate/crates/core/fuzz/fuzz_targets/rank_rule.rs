#![no_main]

use koopctl::dmdc::RankRule;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    if let Ok(rule) = text.parse::<RankRule>() {
        assert_eq!(rule.to_string().parse::<RankRule>().ok(), Some(rule));
    }
});
