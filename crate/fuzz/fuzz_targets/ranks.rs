#![no_main]

use libfuzzer_sys::fuzz_target;
use mrmkg::train::{parse_ranks, RankingMetrics};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(ranks) = parse_ranks(text) else { return };
    if let Ok(m) = RankingMetrics::from_ranks(ranks) {
        assert!(m.mrr > 0.0 && m.mrr <= 1.0);
        assert!(m.hits.windows(2).all(|w| w[0].1 <= w[1].1));
    }
});
