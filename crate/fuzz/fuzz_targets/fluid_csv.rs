#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(grid) = hashalloc::parse::parse_fluid_csv(text) {
            assert_eq!(grid.times.len(), grid.levels.len());
        }
    }
});
