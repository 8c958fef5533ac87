#![no_main]

use libfuzzer_sys::fuzz_target;
use mrmkg::nn::{parse_optimizer, write_optimizer};

fuzz_target!(|data: &[u8]| {
    let Ok(opt) = parse_optimizer(data) else { return };
    let written = write_optimizer(&opt);
    let again = parse_optimizer(&written).expect("written optimizer state parses");
    assert_eq!(write_optimizer(&again), written);
});
