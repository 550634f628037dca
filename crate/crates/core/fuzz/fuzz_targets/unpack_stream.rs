#![no_main]

use libfuzzer_sys::fuzz_target;
use vrvq::bitstream;

fuzz_target!(|data: &[u8]| {
    if let Ok((header, codes)) = bitstream::unpack(data) {
        // anything accepted must survive a repack unchanged
        let bytes = bitstream::pack(&codes, &header).expect("repack accepted stream");
        let (h2, c2) = bitstream::unpack(&bytes).expect("unpack repacked stream");
        assert_eq!(h2, header);
        assert_eq!(c2, codes);
    }
});
