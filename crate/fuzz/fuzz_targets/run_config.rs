#![no_main]

use libfuzzer_sys::fuzz_target;
use mrmkg::config::{apply_config, write_config};
use mrmkg::train::TrainConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let mut cfg = TrainConfig::default();
    if apply_config(&mut cfg, text).is_err() {
        return;
    }
    let written = write_config(&cfg);
    let mut again = TrainConfig::default();
    apply_config(&mut again, &written).expect("written config applies");
    assert_eq!(write_config(&again), written);
});
