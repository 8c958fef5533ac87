#![no_main]

use libfuzzer_sys::fuzz_target;
use mrmkg::embedding::{parse_embeddings, write_embeddings};

fuzz_target!(|data: &[u8]| {
    let Ok(store) = parse_embeddings(data) else { return };
    // Compared as bytes: stored vectors may hold NaN.
    let written = write_embeddings(&store);
    let again = parse_embeddings(&written).expect("written store parses");
    assert_eq!(write_embeddings(&again), written);
});
