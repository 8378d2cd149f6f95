//! Synthetic smoke scenarios with known dense ground truth.
//!
//! A two-dimensional advection–diffusion simulator produces hourly
//! concentration fields from a handful of fire sources. Every input channel
//! and the sparse station labels are then derived from those fields, which
//! makes it possible to score interpolation away from the stations.

mod derive;
mod scenario;
mod sim;

use std::f64::consts::TAU;

use chrono::{DateTime, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, LatLon};

pub use derive::{derive_channels, sample_stations, DerivedChannels, Snapshot};
pub use scenario::{generate_scenario, Scenario};
pub use sim::{advect_only, stability, step, SimState, Stability, KMH_PER_MS};

/// Hours `[start, end)` during which a source burns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Episode {
    pub start_h: f64,
    pub end_h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub row: usize,
    pub col: usize,
    /// Emission rate in μg/m³ per hour added to the source cell.
    pub rate: f64,
    /// Fire radiative power reported while burning, MW.
    pub frp: f64,
    /// Burning periods. Empty means always burning.
    pub episodes: Vec<Episode>,
}

impl Source {
    pub fn always_on(row: usize, col: usize, rate: f64, frp: f64) -> Self {
        Source {
            row,
            col,
            rate,
            frp,
            episodes: Vec::new(),
        }
    }

    pub fn is_active(&self, t_h: f64) -> bool {
        self.episodes.is_empty() || self.episodes.iter().any(|e| e.start_h <= t_h && t_h < e.end_h)
    }
}

/// Wind that turns slowly in time with a mild spatial shear.
///
/// Direction is `direction_deg + drift_deg·sin(2πt/period_h + phase)`; speed
/// is `mean_speed·(1 + gust·sin(2πt/(0.37·period_h)))`; the east component is
/// scaled by `1 + shear·sin(2π·row/rows)` and the north component by
/// `1 + shear·cos(2π·col/cols)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindParams {
    /// m/s.
    pub mean_speed: f64,
    /// Mean heading the wind blows towards, degrees counter-clockwise from east.
    pub direction_deg: f64,
    pub drift_deg: f64,
    pub period_h: f64,
    pub phase: f64,
    pub gust: f64,
    pub shear: f64,
}

impl WindParams {
    pub fn calm() -> Self {
        WindParams {
            mean_speed: 0.0,
            direction_deg: 0.0,
            drift_deg: 0.0,
            period_h: 1.0,
            phase: 0.0,
            gust: 0.0,
            shear: 0.0,
        }
    }

    /// Uniform, constant wind.
    pub fn uniform(speed: f64, direction_deg: f64) -> Self {
        WindParams {
            mean_speed: speed,
            direction_deg,
            ..Self::calm()
        }
    }

    /// Largest component magnitude the generator can produce.
    pub fn max_component(&self) -> f64 {
        self.mean_speed * (1.0 + self.gust.abs()) * (1.0 + self.shear.abs())
    }
}

/// Noise and bias settings for the derived input channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelNoise {
    /// Multiplicative bias of the firework forecast.
    pub fw_gain: f64,
    /// Log-normal σ of the firework forecast.
    pub fw_noise: f64,
    /// Box blur width applied to the firework forecast (odd).
    pub fw_blur: usize,
    pub bs_gain: f64,
    pub bs_noise: f64,
    /// AOD per μg/m³.
    pub aod_scale: f64,
    /// Additive Gaussian σ on AOD.
    pub aod_noise: f64,
    /// μg/m³ above which a cell is flagged as under a plume.
    pub plume_threshold: f64,
    /// Probability that a plume analysis is missing for a frame.
    pub hms_dropout: f64,
    /// Scale of the upper-level wind relative to the surface wind.
    pub upper_wind_scale: f64,
    /// Rotation of the upper-level wind, degrees.
    pub upper_wind_turn_deg: f64,
}

impl Default for ChannelNoise {
    fn default() -> Self {
        ChannelNoise {
            fw_gain: 1.4,
            fw_noise: 0.25,
            fw_blur: 5,
            bs_gain: 1.9,
            bs_noise: 0.5,
            aod_scale: 0.01,
            aod_noise: 0.02,
            plume_threshold: 10.0,
            hms_dropout: 0.2,
            upper_wind_scale: 2.5,
            upper_wind_turn_deg: 30.0,
        }
    }
}

impl ChannelNoise {
    /// Unbiased, noiseless, unblurred channels.
    pub fn exact() -> Self {
        ChannelNoise {
            fw_gain: 1.0,
            fw_noise: 0.0,
            fw_blur: 1,
            bs_gain: 1.0,
            bs_noise: 0.0,
            aod_noise: 0.0,
            hms_dropout: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub rows: usize,
    pub cols: usize,
    pub cell_km: f64,
    pub dt_h: f64,
    /// km²/h.
    pub diffusion: f64,
    pub sources: Vec<Source>,
    /// Uniform emission everywhere, μg/m³ per hour.
    pub background_rate: f64,
    pub wind: WindParams,
    pub stations: Vec<(usize, usize)>,
    pub noise: ChannelNoise,
    pub seed: u64,
    /// Number of labelled frames to emit.
    pub frames: usize,
    pub frame_interval_h: f64,
    /// Simulated hours before the first input time.
    pub spinup_h: f64,
    /// Lead time between inputs and labels.
    pub horizon_h: f64,
    /// Wall-clock time of simulation hour 0.
    pub start: DateTime<Utc>,
    /// Emission multipliers for the first, middle and last third of the run.
    pub season_factors: [f64; 3],
    /// Geographic placement written to archives.
    pub grid: GridSpec,
}

/// Knobs of the randomized scenario generator. Source positions, burning
/// episodes, station cells and the wind heading are drawn from the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioParams {
    pub rows: usize,
    pub cols: usize,
    pub cell_km: f64,
    pub dt_h: f64,
    pub diffusion: f64,
    pub background_rate: f64,
    pub frames: usize,
    pub frame_interval_h: f64,
    pub spinup_h: f64,
    pub horizon_h: f64,
    pub start: DateTime<Utc>,
    pub season_factors: [f64; 3],
    pub stations: usize,
    pub min_sources: usize,
    pub max_sources: usize,
    /// Emission rates are uniform in `[rate_min, rate_max)`.
    pub rate_min: f64,
    pub rate_max: f64,
    pub frp_min: f64,
    pub frp_max: f64,
    pub wind_speed: f64,
    pub wind_drift_deg: f64,
    pub wind_period_h: f64,
    pub wind_gust: f64,
    pub wind_shear: f64,
    pub noise: ChannelNoise,
}

impl Default for ScenarioParams {
    /// 64×64 cells of 10 km, hourly steps, 40 stations, 3 to 6 intermittent
    /// fires, 600 frames eight hours apart starting in April, with a quiet, a
    /// peak and a declining third.
    fn default() -> Self {
        let base = SimConfig::empty(64, 64);
        ScenarioParams {
            rows: 64,
            cols: 64,
            cell_km: base.cell_km,
            dt_h: base.dt_h,
            diffusion: 5.0,
            background_rate: 0.05,
            frames: 600,
            frame_interval_h: base.frame_interval_h,
            spinup_h: base.spinup_h,
            horizon_h: base.horizon_h,
            start: base.start,
            season_factors: [0.25, 1.0, 0.5],
            stations: 40,
            min_sources: 3,
            max_sources: 6,
            rate_min: 60.0,
            rate_max: 180.0,
            frp_min: 200.0,
            frp_max: 1500.0,
            wind_speed: 1.0,
            wind_drift_deg: 70.0,
            wind_period_h: 96.0,
            wind_gust: 0.25,
            wind_shear: 0.2,
            noise: ChannelNoise::default(),
        }
    }
}

impl ScenarioParams {
    pub fn build(&self, seed: u64) -> Result<SimConfig> {
        let (rows, cols) = (self.rows, self.cols);
        if rows < 3 || cols < 3 {
            return Err(Error::Config(format!("scenario grid {rows}×{cols} is smaller than 3×3")));
        }
        if self.stations > rows * cols {
            return Err(Error::Config(format!(
                "{} stations do not fit on {rows}×{cols} cells",
                self.stations
            )));
        }
        if self.min_sources > self.max_sources {
            return Err(Error::Config("min_sources exceeds max_sources".into()));
        }
        for (name, lo, hi) in [("rate", self.rate_min, self.rate_max), ("frp", self.frp_min, self.frp_max)] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi) {
                return Err(Error::Config(format!("{name} range [{lo}, {hi}) is empty or negative")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cfg = SimConfig {
            cell_km: self.cell_km,
            dt_h: self.dt_h,
            diffusion: self.diffusion,
            background_rate: self.background_rate,
            noise: self.noise,
            seed,
            frames: self.frames,
            frame_interval_h: self.frame_interval_h,
            spinup_h: self.spinup_h,
            horizon_h: self.horizon_h,
            start: self.start,
            season_factors: self.season_factors,
            ..SimConfig::empty(rows, cols)
        };
        let total_h = cfg.total_hours();

        let n_sources = rng.gen_range(self.min_sources..=self.max_sources);
        let (mr, mc) = (rows / 8, cols / 8);
        cfg.sources = (0..n_sources)
            .map(|_| {
                let mut episodes = Vec::new();
                let mut t = rng.gen_range(0.0..120.0);
                while t < total_h {
                    let on = rng.gen_range(48.0..240.0);
                    episodes.push(Episode {
                        start_h: t,
                        end_h: t + on,
                    });
                    t += on + rng.gen_range(24.0..120.0);
                }
                Source {
                    row: rng.gen_range(mr..rows - mr),
                    col: rng.gen_range(mc..cols - mc),
                    rate: rng.gen_range(self.rate_min..self.rate_max),
                    frp: rng.gen_range(self.frp_min..self.frp_max),
                    episodes,
                }
            })
            .collect();

        let mut stations = Vec::new();
        while stations.len() < self.stations {
            let cell = (rng.gen_range(0..rows), rng.gen_range(0..cols));
            if !stations.contains(&cell) {
                stations.push(cell);
            }
        }
        cfg.stations = stations;

        cfg.wind = WindParams {
            mean_speed: self.wind_speed,
            direction_deg: rng.gen_range(0.0..360.0),
            drift_deg: self.wind_drift_deg,
            period_h: self.wind_period_h,
            phase: rng.gen_range(0.0..TAU),
            gust: self.wind_gust,
            shear: self.wind_shear,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl SimConfig {
    /// A calm, empty world with the default timing; mostly useful as a base
    /// for hand-built cases.
    pub fn empty(rows: usize, cols: usize) -> Self {
        SimConfig {
            rows,
            cols,
            cell_km: 10.0,
            dt_h: 1.0,
            diffusion: 0.0,
            sources: Vec::new(),
            background_rate: 0.0,
            wind: WindParams::calm(),
            stations: Vec::new(),
            noise: ChannelNoise::default(),
            seed: 0,
            frames: 0,
            frame_interval_h: 8.0,
            spinup_h: 72.0,
            horizon_h: 24.0,
            start: Utc.with_ymd_and_hms(2018, 4, 1, 0, 0, 0).unwrap(),
            season_factors: [1.0; 3],
            grid: default_geo(rows, cols),
        }
    }

    /// The default randomized scenario, see [`ScenarioParams`].
    pub fn scenario(seed: u64) -> Self {
        ScenarioParams::default().build(seed).expect("default scenario parameters are valid")
    }

    /// Simulated time of the last label.
    pub fn total_hours(&self) -> f64 {
        self.label_hour(self.frames.saturating_sub(1)).max(0.0)
    }

    /// Simulation hour of frame `k`'s label.
    pub fn label_hour(&self, k: usize) -> f64 {
        self.spinup_h + self.horizon_h + k as f64 * self.frame_interval_h
    }

    pub fn season_factor(&self, t_h: f64) -> f64 {
        let total = self.total_hours();
        if total <= 0.0 {
            return self.season_factors[0];
        }
        let third = ((t_h / total) * 3.0).floor().clamp(0.0, 2.0) as usize;
        self.season_factors[third]
    }

    /// Emission rate of `src` at hour `t_h`, μg/m³ per hour.
    pub fn emission(&self, src: &Source, t_h: f64) -> f64 {
        if src.is_active(t_h) {
            src.rate * self.season_factor(t_h)
        } else {
            0.0
        }
    }

    /// Wind planes `(u, v)` in m/s at hour `t_h`.
    pub fn wind_field(&self, t_h: f64) -> (Vec<f64>, Vec<f64>) {
        let w = &self.wind;
        let heading = (w.direction_deg + w.drift_deg * (TAU * t_h / w.period_h + w.phase).sin()).to_radians();
        let speed = w.mean_speed * (1.0 + w.gust * (TAU * t_h / (0.37 * w.period_h)).sin());
        let (rows, cols) = (self.rows, self.cols);
        let mut u = vec![0.0; rows * cols];
        let mut v = vec![0.0; rows * cols];
        for r in 0..rows {
            let su = 1.0 + w.shear * (TAU * r as f64 / rows as f64).sin();
            for c in 0..cols {
                let sv = 1.0 + w.shear * (TAU * c as f64 / cols as f64).cos();
                u[r * cols + c] = speed * heading.cos() * su;
                v[r * cols + c] = speed * heading.sin() * sv;
            }
        }
        (u, v)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.rows < 2 || self.cols < 2 {
            return bad(format!("simulation grid must be at least 2×2, got {}×{}", self.rows, self.cols));
        }
        if (self.grid.rows, self.grid.cols) != (self.rows, self.cols) {
            return bad("geographic grid does not match the simulation grid".into());
        }
        for (name, v) in [
            ("cell_km", self.cell_km),
            ("dt_h", self.dt_h),
            ("frame_interval_h", self.frame_interval_h),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("diffusion", self.diffusion),
            ("background_rate", self.background_rate),
            ("spinup_h", self.spinup_h),
            ("horizon_h", self.horizon_h),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.season_factors.iter().any(|f| !(*f >= 0.0)) {
            return bad("season factors must be non-negative".into());
        }
        for s in &self.sources {
            if s.row >= self.rows || s.col >= self.cols {
                return bad(format!("source ({}, {}) is outside the grid", s.row, s.col));
            }
            if !(s.rate >= 0.0 && s.frp >= 0.0) {
                return bad("source rate and FRP must be non-negative".into());
            }
        }
        if let Some(&(r, c)) = self.stations.iter().find(|&&(r, c)| r >= self.rows || c >= self.cols) {
            return bad(format!("station ({r}, {c}) is outside the grid"));
        }
        let n = &self.noise;
        if n.fw_blur % 2 == 0 {
            return bad(format!("fw_blur must be odd, got {}", n.fw_blur));
        }
        if !(0.0..=1.0).contains(&n.hms_dropout) {
            return bad(format!("hms_dropout must lie in [0, 1], got {}", n.hms_dropout));
        }
        let lam = self.dt_h / self.cell_km;
        let courant = self.wind.max_component() * KMH_PER_MS * lam;
        let diff = 4.0 * self.diffusion * self.dt_h / (self.cell_km * self.cell_km);
        // |cos θ| + |sin θ| ≤ √2 bounds the combined outflow of both components.
        if courant > Stability::LIMIT || diff > Stability::LIMIT || std::f64::consts::SQRT_2 * courant + diff > 1.0 {
            return Err(Error::Cfl(format!(
                "wind courant bound {courant:.4} and diffusion number {diff:.4} are unstable"
            )));
        }
        Ok(())
    }
}

/// A square patch in the interior of British Columbia sized for `rows × cols`
/// cells of roughly 10 km.
fn default_geo(rows: usize, cols: usize) -> GridSpec {
    let (lat0, lon0) = (55.0, -126.0);
    let dlat = 0.09 * rows as f64;
    let dlon = 0.16 * cols as f64;
    GridSpec {
        nw: LatLon::new(lat0 + dlat, lon0),
        sw: LatLon::new(lat0, lon0),
        ne: LatLon::new(lat0 + dlat, lon0 + dlon),
        se: LatLon::new(lat0, lon0 + dlon),
        rows,
        cols,
    }
}
