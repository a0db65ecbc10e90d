#![no_main]

use annopipe::corpus::Lang;
use annopipe::preprocess::Normalizer;
use annopipe::sampling::KeywordList;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = KeywordList::parse(Lang::En, text, &Normalizer::default());
});
