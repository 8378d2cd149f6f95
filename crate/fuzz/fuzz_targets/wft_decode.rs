#![no_main]

use libfuzzer_sys::fuzz_target;
use smokegrid_core::tensor::wft::{self, AnyTensor};

fuzz_target!(|data: &[u8]| {
    let Ok(tensor) = wft::decode(data) else {
        return;
    };
    // Whatever decodes must encode back to the same bytes.
    let again = match &tensor {
        AnyTensor::F32(t) => wft::encode(t),
        AnyTensor::F64(t) => wft::encode(t),
    };
    assert_eq!(again, data);
    if let Ok((prefix, used)) = wft::decode_prefix(data) {
        assert_eq!(prefix, tensor);
        assert_eq!(used, data.len());
    }
});
