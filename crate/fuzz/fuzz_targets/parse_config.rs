#![no_main]
use libfuzzer_sys::fuzz_target;
use sqcorr::config::{build_scenario, parse_config, render_config};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(doc) = parse_config(text) else { return };
    if let Ok(scenario) = build_scenario(&doc) {
        let rendered = render_config(&scenario);
        let doc = parse_config(&rendered).expect("rendered config parses");
        assert_eq!(
            build_scenario(&doc).expect("rendered config builds"),
            scenario
        );
    }
});
