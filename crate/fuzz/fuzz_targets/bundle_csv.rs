#![no_main]
use libfuzzer_sys::fuzz_target;
use minimax_mfg::io::parse_bundle_csv;

// First byte picks the control count, the rest is the document.
fuzz_target!(|data: &[u8]| {
    let Some((&n, rest)) = data.split_first() else { return };
    if let Ok(text) = std::str::from_utf8(rest) {
        let _ = parse_bundle_csv(text, n as usize % 8);
    }
});
