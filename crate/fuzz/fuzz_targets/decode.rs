#![no_main]

use libfuzzer_sys::fuzz_target;
use mcwc_core::codec::{decode_checkpoint, decode_segments_parallel, DecodeLimits, Stream};
use mcwc_core::container::to_bytes;

fuzz_target!(|data: &[u8]| {
    // Plans past the limit are rejected before any tensor is allocated.
    if Stream::open_with_limits(data, DecodeLimits { max_params: 1 << 20 }).is_err() {
        return;
    }
    let seq = decode_checkpoint(data);
    let par = decode_segments_parallel(data, 2);
    if let (Ok(a), Ok(b)) = (&seq, &par) {
        assert_eq!(to_bytes(a).unwrap(), to_bytes(b).unwrap());
    }
});
