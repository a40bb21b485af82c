#![no_main]

use libfuzzer_sys::fuzz_target;
use sketchdfo::problems::{parse_dataset, Link};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(ds) = parse_dataset(text) {
        // Anything accepted must survive a round trip.
        let again = parse_dataset(&ds.to_csv()).expect("re-parse of serialized dataset");
        assert_eq!(again, ds);
        let _ = ds.into_problem("fuzz", Link::Logistic, true);
    }
});
