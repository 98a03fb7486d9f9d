#![no_main]

use libfuzzer_sys::fuzz_target;
use nilheat::harness::{grid_label, parse_grid_list};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ladder) = parse_grid_list(text) {
        let again = ladder.iter().map(|s| grid_label(s)).collect::<Vec<_>>().join(",");
        assert_eq!(parse_grid_list(&again).unwrap(), ladder);
    }
});
