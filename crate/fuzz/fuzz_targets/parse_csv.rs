#![no_main]
use libfuzzer_sys::fuzz_target;
use swarmloc::report::{parse_csv, to_csv_string};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(parsed) = parse_csv(text) {
        // re-emitting a parsed file is a fixed point after one round
        let once = to_csv_string(&parsed).unwrap();
        let twice = to_csv_string(&parse_csv(&once).expect("emitted CSV parses")).unwrap();
        assert_eq!(once, twice);
    }
});
