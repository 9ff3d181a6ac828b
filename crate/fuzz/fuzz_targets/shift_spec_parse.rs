#![no_main]

use libfuzzer_sys::fuzz_target;
use udakit::datakit::ShiftSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = ShiftSpec::parse(text) {
        spec.validate().expect("parsed specs are valid");
    }
});
