#![no_main]
use libfuzzer_sys::fuzz_target;
use minimax_mfg::io::{parse_trajectory_csv, write_trajectory_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(tr) = parse_trajectory_csv(text) {
        assert_eq!(parse_trajectory_csv(&write_trajectory_csv(&tr)).unwrap(), tr);
    }
});
