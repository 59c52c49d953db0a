#![no_main]

use libfuzzer_sys::fuzz_target;

use learngroup::config::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = ExperimentConfig::parse(text) {
        // accepted configs are valid and canonicalization is a fixed point
        cfg.validate().expect("parsed config must validate");
        let canon = cfg.to_config_string();
        let reparsed = ExperimentConfig::parse(&canon).expect("canonical form must parse");
        assert_eq!(reparsed, cfg);
        assert_eq!(reparsed.to_config_string(), canon);
    }
});
