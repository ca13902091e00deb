#![no_main]

use libfuzzer_sys::fuzz_target;
use mcwc_cli::config::Document;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(doc) = toml::from_str::<Document>(text) {
        let _ = doc.codec.validate();
        let _ = doc.scenario.validate();
    }
});
