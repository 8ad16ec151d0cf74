#![no_main]

use libfuzzer_sys::fuzz_target;
use sidetune::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        // Canonical text must parse back to the same configuration.
        let again = RunConfig::parse(&cfg.to_text()).expect("canonical text parses");
        assert_eq!(again.to_text(), cfg.to_text());
        let _ = cfg.validate();
    }
});
