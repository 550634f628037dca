#![no_main]

use libfuzzer_sys::fuzz_target;
use vrvq::cli::config;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(c) = config::parse_config(text) {
            assert_eq!(config::parse_config(&config::render(&c)).expect("reparse"), c);
        }
    }
});
