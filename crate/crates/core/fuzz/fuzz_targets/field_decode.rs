#![no_main]

use libfuzzer_sys::fuzz_target;
use nilheat::discretization::io::decode_field;

fuzz_target!(|data: &[u8]| {
    if let Ok(f) = decode_field(data) {
        assert_eq!(f.values.len(), f.sizes.iter().product::<usize>());
    }
});
