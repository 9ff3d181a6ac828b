#![no_main]

use libfuzzer_sys::fuzz_target;
use udakit::datakit::parse_list_file;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(entries) = parse_list_file(text) {
        for (path, _) in entries {
            assert!(!path.is_empty());
        }
    }
});
