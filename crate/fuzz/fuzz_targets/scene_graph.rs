#![no_main]

use std::collections::BTreeSet;

use libfuzzer_sys::fuzz_target;
use mrmkg::graph::{ingest_scene_graph, parse_scene_graph_lines};

// Parsed records always ingest, and every graph obeys the count law.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(records) = parse_scene_graph_lines(text) else { return };
    for r in &records {
        let g = ingest_scene_graph(r).expect("validated record ingests");
        let pairs: usize = r.objects.iter().map(|o| o.attributes.iter().collect::<BTreeSet<_>>().len()).sum();
        assert_eq!(g.entity_count(), 2 * r.objects.len() + pairs);
        assert_eq!(g.triple_count(), r.objects.len() + pairs + r.relations.len());
    }
});
