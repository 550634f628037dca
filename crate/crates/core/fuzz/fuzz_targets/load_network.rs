#![no_main]

use libfuzzer_sys::fuzz_target;
use vrvq::model::ToyCodec;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = ToyCodec::from_bytes(data) {
        let again = ToyCodec::from_bytes(&model.to_bytes()).expect("reload");
        assert_eq!(again.params(), model.params());
    }
});
