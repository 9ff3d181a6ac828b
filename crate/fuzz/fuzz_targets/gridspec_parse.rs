#![no_main]

use libfuzzer_sys::fuzz_target;
use udakit_cli::grid::GridSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(mut spec) = GridSpec::parse(text) else { return };
    spec.cap = spec.cap.min(64);
    if let Ok((cells, _)) = spec.expand() {
        assert!(cells.len() <= spec.cap);
    }
});
