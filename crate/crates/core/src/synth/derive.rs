use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::sim::{advect_only, SimState};
use super::SimConfig;
use crate::error::{Error, Result};
use crate::grid::log_transform;
use crate::tensor::{MaskGrid, Tensor};

/// Simulator fields at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time_h: f64,
    pub c: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl From<&SimState> for Snapshot {
    fn from(s: &SimState) -> Self {
        Snapshot {
            time_h: s.elapsed_h,
            c: s.c.clone(),
            u: s.u.clone(),
            v: s.v.clone(),
        }
    }
}

/// Raw (untransformed) input planes for one frame. `hms_plume` is `None`
/// when the plume analysis dropped out.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedChannels {
    pub firework_pm25: Vec<f64>,
    pub bluesky_pm25: Vec<f64>,
    pub aod: Vec<f64>,
    pub wind_u_50m: Vec<f64>,
    pub wind_v_50m: Vec<f64>,
    pub wind_u_250hpa: Vec<f64>,
    pub wind_v_250hpa: Vec<f64>,
    pub frp: Vec<f64>,
    pub hms_plume: Option<Vec<f64>>,
}

impl DerivedChannels {
    /// Variable names this generator can supply.
    pub const VARIABLES: [&'static str; 9] = [
        "firework_pm25",
        "bluesky_pm25",
        "aod",
        "wind_u_50m",
        "wind_v_50m",
        "wind_u_250hpa",
        "wind_v_250hpa",
        "frp",
        "hms_plume",
    ];

    /// The plane for `variable`: `Some(None)` for a dropped plume analysis,
    /// `None` for an unknown variable.
    pub fn plane(&self, variable: &str) -> Option<Option<&[f64]>> {
        let p = match variable {
            "firework_pm25" => &self.firework_pm25,
            "bluesky_pm25" => &self.bluesky_pm25,
            "aod" => &self.aod,
            "wind_u_50m" => &self.wind_u_50m,
            "wind_v_50m" => &self.wind_v_50m,
            "wind_u_250hpa" => &self.wind_u_250hpa,
            "wind_v_250hpa" => &self.wind_v_250hpa,
            "frp" => &self.frp,
            "hms_plume" => return Some(self.hms_plume.as_deref()),
            _ => return None,
        };
        Some(Some(p))
    }
}

/// Mean over the in-bounds part of a `k×k` window.
fn box_blur(plane: &[f64], rows: usize, cols: usize, k: usize) -> Vec<f64> {
    if k <= 1 {
        return plane.to_vec();
    }
    let pad = k / 2;
    let mut out = vec![0.0; plane.len()];
    for r in 0..rows {
        let (r0, r1) = (r.saturating_sub(pad), (r + pad).min(rows - 1));
        for c in 0..cols {
            let (c0, c1) = (c.saturating_sub(pad), (c + pad).min(cols - 1));
            let mut sum = 0.0;
            for rr in r0..=r1 {
                sum += plane[rr * cols + c0..=rr * cols + c1].iter().sum::<f64>();
            }
            out[r * cols + c] = sum / ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64;
        }
    }
    out
}

/// Builds the input planes for a frame whose label time is `target.time_h`
/// and whose observations are taken at `anchor.time_h`.
///
/// The two smoke forecasts are issued at the anchor time for the target
/// time: the firework one is a blurred, biased, noisy copy of the target
/// field and the bluesky one is the target field pushed one extra step
/// downwind with a larger bias and more noise. Everything else describes
/// the anchor time. The result depends only on the inputs and `seed`.
pub fn derive_channels(
    target: &Snapshot,
    anchor: &Snapshot,
    config: &SimConfig,
    seed: u64,
) -> Result<DerivedChannels> {
    let (rows, cols) = (config.rows, config.cols);
    let n = rows * cols;
    for s in [target, anchor] {
        if s.c.len() != n || s.u.len() != n || s.v.len() != n {
            return Err(Error::Shape("snapshot does not match the simulation grid".into()));
        }
    }
    let noise = &config.noise;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = move || -> f64 { rng.sample(StandardNormal) };

    let blurred = box_blur(&target.c, rows, cols, noise.fw_blur);
    let firework_pm25: Vec<f64> = blurred
        .iter()
        .map(|&x| noise.fw_gain * x * (noise.fw_noise * gauss()).exp())
        .collect();

    let shifted = advect_only(
        &SimState {
            rows,
            cols,
            c: target.c.clone(),
            u: target.u.clone(),
            v: target.v.clone(),
            elapsed_h: target.time_h,
            clamped: 0,
        },
        config,
    )?;
    let bluesky_pm25: Vec<f64> = shifted
        .c
        .iter()
        .map(|&x| noise.bs_gain * x * (noise.bs_noise * gauss()).exp())
        .collect();

    let aod: Vec<f64> = anchor
        .c
        .iter()
        .map(|&x| (noise.aod_scale * x + noise.aod_noise * gauss()).max(0.0))
        .collect();

    let (s, turn) = (noise.upper_wind_scale, noise.upper_wind_turn_deg.to_radians());
    let (sin, cos) = turn.sin_cos();
    let wind_u_250hpa = anchor.u.iter().zip(&anchor.v).map(|(&u, &v)| s * (u * cos - v * sin)).collect();
    let wind_v_250hpa = anchor.u.iter().zip(&anchor.v).map(|(&u, &v)| s * (u * sin + v * cos)).collect();

    let mut frp = vec![0.0; n];
    for src in &config.sources {
        if src.is_active(anchor.time_h) {
            frp[src.row * cols + src.col] += src.frp * config.season_factor(anchor.time_h);
        }
    }

    let dropped = rng_dropout(seed, noise.hms_dropout);
    let hms_plume = (!dropped).then(|| {
        anchor
            .c
            .iter()
            .map(|&x| if x > noise.plume_threshold { 1.0 } else { 0.0 })
            .collect()
    });

    Ok(DerivedChannels {
        firework_pm25,
        bluesky_pm25,
        aod,
        wind_u_50m: anchor.u.clone(),
        wind_v_50m: anchor.v.clone(),
        wind_u_250hpa,
        wind_v_250hpa,
        frp,
        hms_plume,
    })
}

/// Dropout draw on its own stream so it does not depend on the grid size.
fn rng_dropout(seed: u64, p: f64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng.gen::<f64>() < p
}

/// Station labels and mask for one dense truth plane (μg/m³). Repeated
/// station cells count once.
pub fn sample_stations(
    truth: &[f64],
    rows: usize,
    cols: usize,
    stations: &[(usize, usize)],
) -> Result<(Tensor<f32>, MaskGrid)> {
    if truth.len() != rows * cols {
        return Err(Error::Shape("truth plane does not match the grid".into()));
    }
    let mask = MaskGrid::from_cells(rows, cols, stations)?;
    let mut label = vec![0f32; rows * cols];
    for i in mask.active_indices() {
        label[i] = log_transform(truth[i])? as f32;
    }
    Ok((Tensor::new(&[rows, cols], label)?, mask))
}
