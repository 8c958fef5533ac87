#![no_main]

use libfuzzer_sys::fuzz_target;
use mrmkg::train::{parse_corpus, parse_instance, write_instance};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_corpus(text);
    let Ok(inst) = parse_instance(text.lines().next().unwrap_or("")) else { return };
    if inst.is_writable() {
        let line = write_instance(&inst);
        assert_eq!(parse_instance(&line).expect("written line parses"), inst);
    }
});
