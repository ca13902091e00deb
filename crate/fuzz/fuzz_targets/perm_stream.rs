#![no_main]

use libfuzzer_sys::fuzz_target;
use mcwc_core::align::random_permutation;
use mcwc_core::permcode::{decode_perm_stream, encode_perm_stream, lehmer_decode, lehmer_encode, PermModelParams};

// Layout: B − 1, a byte whose low bit selects a predecessor, payload.
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let b = data[0] as usize + 1;
    let prev = (data[1] & 1 == 1).then(|| lehmer_encode(&random_permutation(b, data[1] as u64)));
    let model = PermModelParams::default();
    if let Ok(digits) = decode_perm_stream(&data[2..], b, prev.as_deref(), &model) {
        assert_eq!(digits.len(), b);
        let p = lehmer_decode(&digits).expect("decoded digits are in range");
        let again = encode_perm_stream(&lehmer_encode(&p), prev.as_deref(), &model).unwrap();
        assert_eq!(decode_perm_stream(&again, b, prev.as_deref(), &model).unwrap(), digits);
    }
});
