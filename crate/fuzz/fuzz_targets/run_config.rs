#![no_main]

use libfuzzer_sys::fuzz_target;
use smokegrid_core::config::{parse_kv_lines, RunConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = parse_kv_lines(text);
    if let Ok(cfg) = RunConfig::load(Some(text), &[]) {
        // A loaded configuration renders to text that loads back unchanged.
        let again = RunConfig::load(Some(&cfg.to_text()), &[]).expect("rendered configuration loads");
        assert_eq!(again, cfg);
    }
});
