#![no_main]

use libfuzzer_sys::fuzz_target;
use sketchdfo::bench::SketchSize;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(size) = text.parse::<SketchSize>() {
        assert_eq!(size.to_string().parse::<SketchSize>().unwrap(), size);
        if let Ok(m) = size.resolve(7) {
            assert!(m > 0);
        }
    }
});
