#![no_main]

use libfuzzer_sys::fuzz_target;

use learngroup::osel::SparseRowMemory;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(srm) = SparseRowMemory::parse_dump(text) {
        assert!(srm.occupied() <= srm.groups());
        for (_, tuple) in srm.iter_occupied() {
            // the workload/popcount invariant is enforced on parse
            assert_eq!(tuple.workload(), tuple.bitvector().popcount());
            assert_eq!(tuple.nonzero_indexes().len(), tuple.workload());
        }
        let dump = srm.to_dump_string();
        let reparsed = SparseRowMemory::parse_dump(&dump).expect("round trip");
        assert_eq!(reparsed, srm);
    }
});
