#![no_main]

use libfuzzer_sys::fuzz_target;
use nilheat::heat::decode_checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = decode_checkpoint(data) {
        assert!(c.dt > 0.0 && c.t >= 0.0);
    }
});
