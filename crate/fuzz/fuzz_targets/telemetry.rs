#![no_main]

use annopipe::collector::parse_telemetry;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = parse_telemetry(text);
});
