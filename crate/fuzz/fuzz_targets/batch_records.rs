#![no_main]

use annopipe::corpus::{parse_batch_records, write_batch_records};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(entries) = parse_batch_records(text) {
        let again = parse_batch_records(&write_batch_records(&entries)).expect("written records parse");
        assert_eq!(again, entries);
    }
});
