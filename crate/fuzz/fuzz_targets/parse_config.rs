#![no_main]
use libfuzzer_sys::fuzz_target;
use swarmloc_cli::config::parse_config_str;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // a valid config must survive its own echo
    if let Ok(cfg) = parse_config_str(text) {
        if cfg.validate().is_ok() {
            let echo = serde_json::to_string(&cfg).unwrap();
            assert_eq!(parse_config_str(&echo).unwrap(), cfg);
        }
    }
});
