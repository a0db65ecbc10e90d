#![no_main]

use annopipe::checkpoint::CommitteeManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = CommitteeManifest::parse(text);
});
