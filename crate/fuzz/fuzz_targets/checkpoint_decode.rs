#![no_main]

use libfuzzer_sys::fuzz_target;
use udakit::backbone::decode_checkpoint;

fuzz_target!(|data: &[u8]| {
    let _ = decode_checkpoint::<f32>(data);
});
