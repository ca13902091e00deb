#![no_main]

use libfuzzer_sys::fuzz_target;
use mcwc_core::codec::{rate_report, DecodeLimits, Stream};

fuzz_target!(|data: &[u8]| {
    if Stream::open_with_limits(data, DecodeLimits { max_params: 1 << 20 }).is_err() {
        return;
    }
    if let Ok(r) = rate_report(data) {
        assert_eq!(r.total_bits, 8 * data.len() as u64);
        assert!(r.is_consistent());
    }
});
