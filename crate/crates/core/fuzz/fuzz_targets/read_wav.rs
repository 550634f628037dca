#![no_main]

use libfuzzer_sys::fuzz_target;
use vrvq::cli::wav;

fuzz_target!(|data: &[u8]| {
    let _ = wav::read_wav(data);
    let _ = wav::wav_comment(data);
});
