#![no_main]

use libfuzzer_sys::fuzz_target;
use sketchdfo::trace::{parse_timings, timings_to_string};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(times) = parse_timings(text) {
        assert_eq!(parse_timings(&timings_to_string(&times)).unwrap(), times);
    }
});
