#![no_main]

use libfuzzer_sys::fuzz_target;
use smokegrid_core::network::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok((spec, params)) = decode_checkpoint::<f64>(data) {
        let bytes = encode_checkpoint(&spec, &params);
        let (spec2, params2) = decode_checkpoint::<f64>(&bytes).expect("re-encoded checkpoint decodes");
        assert_eq!(spec, spec2);
        assert_eq!(params, params2);
    }
    let _ = decode_checkpoint::<f32>(data);
});
