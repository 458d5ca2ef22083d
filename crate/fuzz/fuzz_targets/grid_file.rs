#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(g) = lipforge::formats::GridFile::from_bytes(data) {
        let _ = g.to_lipfn();
    }
});
