//! Grid definition, observation gridding and sample composition.

mod archive;
mod observation;
mod raster;
mod registry;
mod sample;
mod spec;

pub use archive::{
    parse_archive_manifest, parse_frame_manifest, read_archive, read_frame, write_archive, write_frame, Archive,
    ArchiveManifest, FrameManifest, ARCHIVE_FORMAT,
};
pub use observation::{parse_observations, read_observations, ObservationStore, PointObservation, Reading};
pub use raster::{fill_forward, fill_nearest, rasterize, Raster};
pub use registry::{ChannelRegistry, ChannelSpec, FillPolicy, Reduce, Transform};
pub use sample::{compose_sample, split_dataset, ComposeOptions, Composed, SampleFrame};
pub use spec::{GridSpec, LatLon};

use crate::error::{Error, Result};

/// Value of a cell that has never been observed.
pub const SENTINEL: f64 = -1.0;

/// `ln(1 + x)` for non-negative concentrations.
pub fn log_transform(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "log transform needs a non-negative value, got {x}"
        )));
    }
    Ok(x.ln_1p())
}

/// `exp(y) − 1`, clamped at zero.
pub fn inverse_log_transform(y: f64) -> f64 {
    y.exp_m1().max(0.0)
}
