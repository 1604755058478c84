#![no_main]

use cellsurrogate::electrochem::ParameterSet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(p) = ParameterSet::from_json(text) {
        p.validate().unwrap();
        let _ = p.ocv_full();
    }
});
