#![no_main]

use koopctl::dmdc::{parse_model_file, serialize_model};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((model, comment)) = parse_model_file(data) {
        let (again, _) = parse_model_file(&serialize_model(&model, comment.as_deref())).expect("serialized model parses");
        assert_eq!(again, model);
    }
});
