#![no_main]

use libfuzzer_sys::fuzz_target;

use learngroup::report;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(rows) = report::rows_from_json(text) {
        for row in &rows {
            assert!(row.value.is_finite());
        }
        let json = report::rows_to_json(&rows);
        let reparsed = report::rows_from_json(&json).expect("round trip");
        assert_eq!(reparsed, rows);
    }
});
