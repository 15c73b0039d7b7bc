#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(strategy) = hashalloc::parse::parse_strategy(text) {
            assert_eq!(
                hashalloc::parse::parse_strategy(strategy.as_str()),
                Ok(strategy)
            );
        }
    }
});
