#![no_main]

use libfuzzer_sys::fuzz_target;
use mcwc_core::entropy::{range_decode, range_encode, Cdf};

// Layout: alphabet size, that many weight bytes, a little-endian u16 symbol count, payload.
fuzz_target!(|data: &[u8]| {
    let Some((&n, rest)) = data.split_first() else { return };
    let n = n as usize % 64 + 1;
    if rest.len() < n + 2 {
        return;
    }
    let probs: Vec<f64> = rest[..n].iter().map(|&w| w as f64 + 1.0).collect();
    let cdf = Cdf::from_probs(&probs).expect("positive weights");
    let count = u16::from_le_bytes([rest[n], rest[n + 1]]) as usize;
    let payload = &rest[n + 2..];
    if let Ok(syms) = range_decode(payload, |_| &cdf, count) {
        assert!(syms.iter().all(|&s| s < n));
        let again = range_encode(&syms, |_| &cdf);
        assert_eq!(range_decode(&again, |_| &cdf, count).unwrap(), syms);
    }
});
