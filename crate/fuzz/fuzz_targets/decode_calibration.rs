#![no_main]
use libfuzzer_sys::fuzz_target;
use sqcorr::io::{decode_calibration, encode_calibration};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(c) = decode_calibration(text) {
        let again = decode_calibration(&encode_calibration(&c)).expect("re-decode");
        assert_eq!(again, c);
    }
});
