#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(f) = lipforge::func::parse_dag_json(s) {
            let x = vec![0.25; f.din()];
            let _ = f.eval_f(&x);
        }
    }
});
