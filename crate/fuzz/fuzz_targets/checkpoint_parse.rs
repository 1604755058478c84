#![no_main]

use cellsurrogate::surrogate::{checkpoint_bytes, parse_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(w) = parse_checkpoint(data) {
        let bytes = checkpoint_bytes(&w).unwrap();
        assert_eq!(parse_checkpoint(&bytes).unwrap(), w);
    }
});
