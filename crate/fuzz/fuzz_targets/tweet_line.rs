#![no_main]

use annopipe::corpus::{parse_corpus, parse_tweet_line};
use annopipe::preprocess::Normalizer;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_corpus(data, None);
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(tweet) = parse_tweet_line(text) {
            let _ = Normalizer::default().normalize(&tweet.text);
        }
    }
});
