#![no_main]

use libfuzzer_sys::fuzz_target;

use learngroup::flgw::MaskMatrix;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(mask) = MaskMatrix::parse_dump(text) {
        // type invariants hold on anything accepted
        assert!(mask.groups() >= 1);
        assert!(mask.distinct_row_count() <= mask.groups());
        assert_eq!(
            mask.popcount(),
            mask.row_workloads().iter().sum::<usize>()
        );
        let dump = mask.to_dump_string();
        let reparsed = MaskMatrix::parse_dump(&dump).expect("round trip");
        assert_eq!(reparsed, mask);
    }
});
