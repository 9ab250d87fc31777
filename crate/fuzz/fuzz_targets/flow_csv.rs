#![no_main]
use libfuzzer_sys::fuzz_target;
use minimax_mfg::io::{parse_flow_csv, write_flow_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(flow) = parse_flow_csv(text) {
        assert_eq!(parse_flow_csv(&write_flow_csv(&flow)).unwrap(), flow);
    }
});
