#![no_main]

use cellsurrogate::cycles::Dataset;
use libfuzzer_sys::fuzz_target;

// first four bytes: manifest length (LE); then manifest, then payload
fuzz_target!(|data: &[u8]| {
    if data.len() < 4 {
        return;
    }
    let n = u32::from_le_bytes([data[0], data[1], data[2], data[3]]) as usize;
    let rest = &data[4..];
    let split = n.min(rest.len());
    if let Ok(d) = Dataset::from_parts(&rest[..split], &rest[split..]) {
        let again = Dataset::from_parts(d.manifest_json().as_bytes(), &d.payload_bytes()).unwrap();
        assert_eq!(again, d);
    }
});
