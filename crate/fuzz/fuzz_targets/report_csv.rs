#![no_main]

use libfuzzer_sys::fuzz_target;

use learngroup::report;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(rows) = report::rows_from_csv(text) {
        // accepted rows stay inside the frozen vocabulary and survive a
        // round trip
        for row in &rows {
            assert!(report::Metric::parse(row.metric.name()).is_some());
            assert!(row.value.is_finite());
        }
        let csv = report::rows_to_csv(&rows);
        let reparsed = report::rows_from_csv(&csv).expect("round trip");
        assert_eq!(reparsed, rows);
    }
});
