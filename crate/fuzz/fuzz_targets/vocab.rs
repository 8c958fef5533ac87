#![no_main]

use libfuzzer_sys::fuzz_target;
use mrmkg::model::Vocab;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(vocab) = Vocab::parse(text) else { return };
    assert_eq!(Vocab::parse(&vocab.write()).expect("written vocab parses"), vocab);
    for id in 0..vocab.len() {
        let token = vocab.token(id).expect("ids are dense");
        assert_eq!(vocab.id(token), Some(id));
    }
});
