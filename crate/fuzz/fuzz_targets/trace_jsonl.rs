#![no_main]

use hashalloc::parse::{parse_trace, write_trace};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(steps) = parse_trace(text) {
            assert_eq!(parse_trace(&write_trace(&steps)).unwrap(), steps);
        }
    }
});
