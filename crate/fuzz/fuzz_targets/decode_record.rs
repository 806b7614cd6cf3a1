#![no_main]
use libfuzzer_sys::fuzz_target;
use sqcorr::io::{decode_record, encode_record};

fuzz_target!(|data: &[u8]| {
    if let Ok(record) = decode_record(data) {
        // Accepted input must be canonical.
        assert_eq!(encode_record(&record), data);
    }
});
