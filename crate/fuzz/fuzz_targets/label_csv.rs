#![no_main]

use annopipe::corpus::parse_label_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = parse_label_csv(text);
});
