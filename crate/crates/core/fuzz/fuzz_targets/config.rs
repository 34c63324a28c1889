#![no_main]

use libfuzzer_sys::fuzz_target;
use magio::pipeline::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_toml_str(text) {
        let text = cfg.to_toml_string();
        let again = RunConfig::from_toml_str(&text).expect("serialized config parses");
        assert_eq!(again.to_toml_string(), text);
    }
});
