#![no_main]
use libfuzzer_sys::fuzz_target;
use minimax_mfg::io::parse_value_json;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(t) = parse_value_json(text) {
            assert_eq!(t.values.len(), t.time.node_count() * t.sgrid.len());
        }
    }
});
