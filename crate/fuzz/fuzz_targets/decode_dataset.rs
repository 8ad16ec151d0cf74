#![no_main]

use libfuzzer_sys::fuzz_target;
use sidetune::data::{decode_samples, encode_samples};

fuzz_target!(|data: &[u8]| {
    if let Ok(samples) = decode_samples(data) {
        let bytes = encode_samples(&samples).expect("decoded samples re-encode");
        assert_eq!(decode_samples(&bytes).expect("re-encoded samples decode"), samples);
    }
});
