#![no_main]

use libfuzzer_sys::fuzz_target;
use sidetune::checkpoint::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::decode(data) {
        let back = Checkpoint::decode(&ck.encode()).expect("re-encoded checkpoint decodes");
        assert_eq!(back.config_text, ck.config_text);
        assert_eq!(back.params.len(), ck.params.len());
        for (name, t) in &ck.params {
            assert!(back.params[name].bit_eq(t));
        }
    }
});
