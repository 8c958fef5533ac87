#![no_main]

use libfuzzer_sys::fuzz_target;
use mrmkg::nn::{parse_checkpoint, write_checkpoint};

fuzz_target!(|data: &[u8]| {
    let Ok(store) = parse_checkpoint(data) else { return };
    let written = write_checkpoint(&store);
    let again = parse_checkpoint(&written).expect("written checkpoint parses");
    assert_eq!(write_checkpoint(&again), written);
});
