#![no_main]

use annopipe::preprocess::{EmoticonTable, Normalizer};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(table) = EmoticonTable::parse(text) {
        let _ = Normalizer::new(table).normalize(text);
    }
});
