#![no_main]

use annopipe::qc::parse_audit_log;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = parse_audit_log(text);
});
