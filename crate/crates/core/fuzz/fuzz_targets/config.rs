#![no_main]

use libfuzzer_sys::fuzz_target;
use nilheat::harness::SuiteConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = SuiteConfig::from_toml_str(text) {
        // accepted configs must have built every grid of the ladder
        assert!(!cfg.grids.is_empty());
    }
});
