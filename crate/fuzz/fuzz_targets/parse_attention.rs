#![no_main]

use libfuzzer_sys::fuzz_target;
use sidetune::attention;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(layers) = attention::parse(text) {
        let once = attention::write(&[], &layers);
        let again = attention::parse(&once).expect("written attention parses");
        assert_eq!(attention::write(&[], &again), once);
    }
});
