#![no_main]

use libfuzzer_sys::fuzz_target;
use smokegrid_core::grid::{parse_archive_manifest, parse_frame_manifest};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = parse_archive_manifest(text);
    if let Ok(frame) = parse_frame_manifest(text) {
        if let Some(truth) = &frame.truth {
            assert!(!truth.contains('/') && !truth.starts_with('.'));
        }
    }
});
