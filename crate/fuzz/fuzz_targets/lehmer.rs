#![no_main]

use libfuzzer_sys::fuzz_target;
use mcwc_core::permcode::{lehmer_decode, lehmer_encode};

fuzz_target!(|data: &[u8]| {
    let digits: Vec<u32> = data.iter().map(|&d| d as u32).collect();
    if let Ok(p) = lehmer_decode(&digits) {
        assert_eq!(lehmer_encode(&p), digits);
    }
});
