#![no_main]

use libfuzzer_sys::fuzz_target;
use mcwc_core::container::{from_bytes, to_bytes};

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = from_bytes(data) {
        let again = to_bytes(&ckpt).expect("parsed checkpoint serializes");
        assert_eq!(from_bytes(&again).expect("reparse"), ckpt);
    }
});
