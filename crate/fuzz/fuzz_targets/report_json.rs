#![no_main]

use libfuzzer_sys::fuzz_target;
use volcheck::report::{ReportTable, TestReport};

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = serde_json::from_slice::<ReportTable>(data) {
        let _ = table.to_text();
        let _ = table.to_csv();
        if let Ok(json) = table.to_json() {
            let back: ReportTable = serde_json::from_str(&json).expect("own output parses");
            assert_eq!(back.rows.len(), table.rows.len());
        }
    }
    if let Ok(report) = serde_json::from_slice::<TestReport>(data) {
        if let Ok(json) = report.to_json() {
            let _: TestReport = serde_json::from_str(&json).expect("own output parses");
        }
    }
});
