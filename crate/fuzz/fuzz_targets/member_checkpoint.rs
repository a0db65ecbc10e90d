#![no_main]

use annopipe::checkpoint::{decode_member, encode_member};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(member) = decode_member(data) {
        let bytes = encode_member(&member).expect("decoded member encodes");
        decode_member(&bytes).expect("re-encoded member decodes");
    }
});
