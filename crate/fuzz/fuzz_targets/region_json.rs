#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(r) = lipforge::region::parse_region_json(s) {
            if let Some(d) = r.dim() {
                let _ = r.contains(&vec![0.5; d]);
            }
        }
    }
});
