#![no_main]

use hashalloc::experiments::{ComparisonReport, MaxLoadStudy, TrialBatchReport};
use hashalloc::parse::decode_report;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = decode_report::<TrialBatchReport>(text);
        let _ = decode_report::<ComparisonReport>(text);
        let _ = decode_report::<MaxLoadStudy>(text);
    }
});
