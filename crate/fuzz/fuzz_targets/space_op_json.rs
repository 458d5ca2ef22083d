#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let _ = serde_json::from_str::<lipforge::NormedSpace>(s);
        let _ = lipforge::operator::parse_op_json(s);
        if let Ok(doc) = serde_json::from_str::<lipforge::operator::FamilyDoc>(s) {
            let _ = doc.to_family();
        }
    }
});
