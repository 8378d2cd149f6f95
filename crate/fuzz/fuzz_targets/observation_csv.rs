#![no_main]

use libfuzzer_sys::fuzz_target;
use smokegrid_core::grid::{parse_observations, ObservationStore};

fuzz_target!(|data: &[u8]| {
    let Ok(observations) = parse_observations(data, |v| v != "rejected") else {
        return;
    };
    for o in &observations {
        assert!(o.value.is_finite() && o.lat.is_finite() && o.lon.is_finite());
    }
    let store = ObservationStore::new(observations);
    let _ = store.times("pm25");
});
