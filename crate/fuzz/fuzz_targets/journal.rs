#![no_main]

use annopipe_service::journal::parse_journal;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((lines, torn)) = parse_journal(data) {
        assert!(torn <= data.len());
        assert!(lines.iter().enumerate().all(|(i, l)| l.seq == i as u64 + 1));
    }
});
