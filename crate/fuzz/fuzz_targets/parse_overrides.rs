#![no_main]
use libfuzzer_sys::fuzz_target;
use sqcorr::config::{parse_config, parse_overrides};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let items: Vec<String> = text.split('\0').map(String::from).collect();
    if let Ok(pairs) = parse_overrides(&items) {
        if let Ok(base) = parse_config("preset = opa\n") {
            let _ = base.with_overrides(&pairs);
        }
    }
});
