#![no_main]

use libfuzzer_sys::fuzz_target;
use mcwc_core::codec::{parse_header, write_header};

fuzz_target!(|data: &[u8]| {
    if let Ok((h, layout)) = parse_header(data) {
        assert!(layout.end() <= data.len());
        let bytes = write_header(&h);
        assert_eq!(parse_header(&bytes).expect("rewritten header parses").0, h);
    }
});
