#![no_main]

use libfuzzer_sys::fuzz_target;
use mcwc_core::blocks::BlockTypeSpec;
use mcwc_core::codec::format::validate_block_types;

fuzz_target!(|data: &[u8]| {
    if let Ok(types) = serde_json::from_slice::<Vec<BlockTypeSpec>>(data) {
        let _ = validate_block_types(&types);
    }
});
