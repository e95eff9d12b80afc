#![no_main]
use libfuzzer_sys::fuzz_target;
use swarmloc::evaluation::Method;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(m) = s.parse::<Method>() {
            assert_eq!(m.name(), s);
        }
    }
});
