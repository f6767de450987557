#![no_main]

use fkchi::cli::{structured, RunRecord};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(record) = serde_json::from_slice::<RunRecord>(data) {
        let _ = structured(&record);
        let _ = record.exit_code();
    }
});
