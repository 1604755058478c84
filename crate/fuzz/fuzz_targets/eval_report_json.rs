#![no_main]

use cellsurrogate::eval::EvalReport;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(r) = EvalReport::from_json(text) {
        let _ = r.check();
        if let Ok(json) = r.to_json() {
            if let Ok(back) = EvalReport::from_json(&json) {
                // NaN never survives JSON, so compare the serialized forms
                assert_eq!(back.to_json().unwrap(), json);
            }
        }
    }
});
