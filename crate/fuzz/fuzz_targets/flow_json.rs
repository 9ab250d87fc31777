#![no_main]
use libfuzzer_sys::fuzz_target;
use minimax_mfg::io::{parse_flow_json, write_flow_json};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(flow) = parse_flow_json(text) {
        let json = write_flow_json(&flow).unwrap();
        assert_eq!(parse_flow_json(&json).unwrap(), flow);
    }
});
