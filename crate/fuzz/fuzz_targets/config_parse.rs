#![no_main]

use libfuzzer_sys::fuzz_target;
use udakit::trainer::TrainConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = TrainConfig::from_toml_str(text) {
        // a resolved config survives its own serialization
        let again = TrainConfig::from_toml_str(&cfg.to_toml()).expect("round trip");
        assert_eq!(again, cfg);
    }
});
