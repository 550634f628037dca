#![no_main]

use libfuzzer_sys::fuzz_target;
use vrvq::quantizer::CodebookStack;

fuzz_target!(|data: &[u8]| {
    if let Ok(stack) = CodebookStack::from_bytes(data) {
        let again = CodebookStack::from_bytes(&stack.to_bytes()).expect("reload");
        assert_eq!(again, stack);
    }
});
