#![no_main]

use annopipe_service::ServiceConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = ServiceConfig::from_toml(text) {
        let _ = cfg.validate();
    }
});
