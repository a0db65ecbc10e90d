#![no_main]

use annopipe_cli::manifest::RunManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = RunManifest::parse(text);
});
