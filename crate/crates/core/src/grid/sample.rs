use chrono::{DateTime, Duration, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::raster::{fill_forward, fill_nearest, rasterize, Raster};
use super::registry::{ChannelRegistry, FillPolicy, Reduce, Transform};
use super::{log_transform, GridSpec, ObservationStore, SENTINEL};
use crate::error::{Error, Result};
use crate::tensor::{MaskGrid, Tensor};

/// One training pair: inputs valid 24 h before `timestamp`, labels at `timestamp`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFrame {
    /// Label time.
    pub timestamp: DateTime<Utc>,
    /// `H×W×C`, channels in registry order.
    pub input: Tensor<f32>,
    /// `H×W`, `ln(1 + PM2.5)` at stations and 0 elsewhere.
    pub label: Tensor<f32>,
    /// Binary station mask.
    pub mask: MaskGrid,
    pub station_count: usize,
}

impl SampleFrame {
    pub fn rows(&self) -> usize {
        self.input.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.input.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.input.shape()[2]
    }

    /// Checks the frame invariants: shapes agree, mask binary, label zero
    /// off-mask and finite everywhere.
    pub fn validate(&self) -> Result<()> {
        let [h, w, _] = self.input.shape()[..] else {
            return Err(Error::Shape("sample input must be H×W×C".into()));
        };
        if self.label.shape() != [h, w] || (self.mask.height(), self.mask.width()) != (h, w) {
            return Err(Error::Shape("sample label/mask do not match input".into()));
        }
        if !self.mask.is_binary() {
            return Err(Error::Mask("sample mask must be binary".into()));
        }
        if self.mask.count() != self.station_count {
            return Err(Error::Mask("station count disagrees with mask".into()));
        }
        let bad = self
            .label
            .data()
            .iter()
            .zip(self.mask.values())
            .any(|(&l, &m)| !l.is_finite() || (m == 0.0 && l != 0.0));
        if bad || !self.input.all_finite() {
            return Err(Error::NonFinite("sample label or input".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposeOptions {
    /// Lead time between inputs and label.
    pub horizon: Duration,
    /// How far before the input anchor time observations are considered.
    pub lookback: Duration,
    pub label_variable: String,
    pub label_reduce: Reduce,
    /// After temporal filling, copy the nearest observed cell of the same
    /// channel into cells that are still unobserved. Off by default.
    pub spatial_fill: bool,
}

impl Default for ComposeOptions {
    fn default() -> Self {
        ComposeOptions {
            horizon: Duration::hours(24),
            lookback: Duration::hours(24),
            label_variable: "pm25".into(),
            label_reduce: Reduce::Mean,
            spatial_fill: false,
        }
    }
}

/// Outcome of [`compose_sample`]: the frame plus how many observations fell
/// outside the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Composed {
    pub frame: SampleFrame,
    pub skipped: usize,
}

/// Builds the sample whose label time is `t`.
///
/// Each channel takes its latest observations at or before `t − horizon`,
/// filled forward from earlier ones inside the lookback window; the label is
/// the log-transformed PM2.5 at `t` and the mask is where it was observed.
pub fn compose_sample(
    t: DateTime<Utc>,
    store: &ObservationStore,
    grid: &GridSpec,
    registry: &ChannelRegistry,
    options: &ComposeOptions,
) -> Result<Composed> {
    let (h, w, c) = (grid.rows, grid.cols, registry.len());
    let labels = rasterize(
        store.at(&options.label_variable, t),
        grid,
        options.label_reduce,
    );
    let mut skipped = labels.skipped;
    if labels.populated() == 0 {
        return Err(Error::InvalidArgument(format!(
            "no {} ground truth inside the grid at {}",
            options.label_variable,
            t.format("%Y-%m-%dT%H:%M:%SZ")
        )));
    }

    let anchor = t - options.horizon;
    let mut input = vec![0f32; h * w * c];
    for (ci, channel) in registry.channels().iter().enumerate() {
        let times = store.times_between(&channel.variable, anchor - options.lookback, anchor);
        let mut rasters: Vec<Raster> = times
            .iter()
            .map(|&ti| rasterize(store.at(&channel.variable, ti), grid, channel.reduce))
            .collect();
        skipped += rasters.first().map_or(0, |r| r.skipped);
        if channel.transform == Transform::Log1p {
            for r in &mut rasters {
                for (v, &p) in r.values.iter_mut().zip(&r.presence) {
                    if p {
                        *v = log_transform(*v)?;
                    }
                }
            }
        }
        let empty = Raster::empty(h, w);
        let (current, history) = rasters.split_first().unwrap_or((&empty, &[]));
        let mut filled = match channel.fill {
            FillPolicy::Forward => fill_forward(current, history, SENTINEL),
            FillPolicy::Zero => fill_forward(current, &[], 0.0),
        };
        if options.spatial_fill && channel.fill == FillPolicy::Forward {
            let known: Vec<bool> = (0..h * w)
                .map(|i| current.presence[i] || history.iter().any(|r| r.presence[i]))
                .collect();
            fill_nearest(&mut filled, &known, h, w);
        }
        for (px, v) in filled.into_iter().enumerate() {
            input[px * c + ci] = v as f32;
        }
    }

    let mut label = vec![0f32; h * w];
    for (i, (&v, &p)) in labels.values.iter().zip(&labels.presence).enumerate() {
        if p {
            label[i] = log_transform(v)? as f32;
        }
    }
    let mask = MaskGrid::binary(
        h,
        w,
        labels.presence.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect(),
    )?;
    let frame = SampleFrame {
        timestamp: t,
        input: Tensor::new(&[h, w, c], input)?,
        label: Tensor::new(&[h, w], label)?,
        station_count: mask.count(),
        mask,
    };
    Ok(Composed { frame, skipped })
}

/// Seeded shuffle, then contiguous train/validation/test partition. The
/// validation and test sizes are floored; the remainder goes to training.
pub fn split_dataset<T>(
    items: Vec<T>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty dataset".into()));
    }
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !(*r >= 0.0)) || (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be non-negative and sum to 1, got {ratios:?}"
        )));
    }
    let n = items.len();
    let n_val = (n as f64 * va).floor() as usize;
    let n_test = (n as f64 * te).floor() as usize;
    let n_train = n - n_val - n_test;

    let mut items = items;
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = items.split_off(n_train + n_val);
    let val = items.split_off(n_train);
    Ok((items, val, test))
}
