#![no_main]

use libfuzzer_sys::fuzz_target;
use mrmkg::graph::{parse_graph, write_graph};

// Anything the parser accepts must survive a write/parse cycle unchanged.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(graph) = parse_graph(text) else { return };
    let written = write_graph(&graph);
    let again = parse_graph(&written).expect("written graph parses");
    assert_eq!(again, graph);
    assert_eq!(write_graph(&again), written);
});
