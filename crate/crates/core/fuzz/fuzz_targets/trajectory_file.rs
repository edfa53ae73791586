#![no_main]

use koopctl::trajmodel::{parse_trajectory_file, serialize_trajectory_file};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(set) = parse_trajectory_file(data) {
        let again = parse_trajectory_file(&serialize_trajectory_file(&set)).expect("serialized set parses");
        assert_eq!(again, set);
    }
});
