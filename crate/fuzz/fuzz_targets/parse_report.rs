#![no_main]

use libfuzzer_sys::fuzz_target;
use sidetune::report::TrainingReport;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(r) = TrainingReport::from_json(text) {
        let _ = TrainingReport::from_json(&r.to_json()).expect("serialised report parses");
    }
});
