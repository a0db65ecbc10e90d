#![no_main]

use annopipe::collector::{Policy, Scenario};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(s) = Scenario::parse(text) {
        let _ = s.collection_config(Policy::default());
    }
});
