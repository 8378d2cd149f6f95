//! Flat `key = value` run configuration.
//!
//! A run is described by one [`RunConfig`]. It is built from defaults, then a
//! config file, then command-line overrides, with the last writer winning.
//! Every key is listed in [`KEYS`] together with a one-line description, and
//! [`RunConfig::to_text`] renders the complete current configuration in the
//! same format the parser reads.

use std::path::PathBuf;
use std::str::FromStr;

use chrono::{DateTime, Duration, SecondsFormat, Utc};

use crate::error::{Error, Result};
use crate::grid::{ChannelRegistry, ComposeOptions, GridSpec, LatLon, Reduce};
use crate::network::{format_layers, parse_layers, AuxTargets, InputMask, NetworkSpec, Precision, TrainConfig};
use crate::synth::ScenarioParams;
use crate::tensor::Reduction;

/// One `key = value` entry with its 1-based source line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvEntry {
    pub line: u64,
    pub key: String,
    pub value: String,
}

/// Splits text into `key = value` entries. Blank lines and lines starting
/// with `#` are ignored; keys and values are trimmed.
pub fn parse_kv_lines(text: &str) -> Result<Vec<KvEntry>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                line: idx as u64 + 1,
                message: format!("expected `key = value`, found `{line}`"),
            });
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Parse {
                line: idx as u64 + 1,
                message: "empty key".into(),
            });
        }
        out.push(KvEntry {
            line: idx as u64 + 1,
            key: key.to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}

/// Every accepted key with its description, in rendering order.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "seeds the scenario, the dataset split, initialization, shuffling and gradcheck draws"),
    ("threads", "worker threads; 0 defers to SMOKEGRID_THREADS, then to all cores"),
    ("archive", "sample archive directory written by synth and ingest, read by train and eval"),
    ("checkpoint", "checkpoint file written by train and read by eval"),
    ("history", "per-epoch loss history CSV written by train"),
    ("report_dir", "directory receiving the evaluation report and heatmaps"),
    ("resume", "continue training from `checkpoint` instead of a fresh initialization"),
    ("split", "train,validation,test fractions of the archive"),
    ("eval_subset", "frames scored by eval: `test` split or `all`"),
    ("heatmaps", "number of evaluation frames exported as heatmaps"),
    ("heatmap_lo", "concentration mapped to gray level 0, μg/m³"),
    ("heatmap_hi", "concentration mapped to gray level 255, μg/m³"),
    ("gradcheck_fault", "negate analytic gradients in gradcheck to prove the harness can fail"),
    ("grid_nw", "north-west grid corner, `lat,lon`"),
    ("grid_sw", "south-west grid corner, `lat,lon`"),
    ("grid_ne", "north-east grid corner, `lat,lon`"),
    ("grid_se", "south-east grid corner, `lat,lon`"),
    ("grid_rows", "ingestion grid rows"),
    ("grid_cols", "ingestion grid columns"),
    ("channels", "input channels, comma-separated `name:variable:reduce:fill:transform`"),
    ("horizon_h", "hours between the inputs and the label they forecast, kept to whole seconds"),
    ("lookback_h", "hours of history searched when filling unobserved cells"),
    ("label_variable", "observation variable used as the PM2.5 label"),
    ("label_reduce", "combination of several label readings in one cell: mean, sum or max"),
    ("spatial_fill", "copy the nearest observed cell into cells still empty after temporal filling"),
    ("epochs", "training epochs"),
    ("lr", "Adam learning rate"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("adam_eps", "Adam denominator stabilizer"),
    ("gamma_fw", "weight of the fw reconstruction loss"),
    ("gamma_bscan", "weight of the bscan reconstruction loss"),
    ("gamma_pm25", "weight of the masked PM2.5 loss"),
    ("precision", "training arithmetic: f32 or f64"),
    ("loss_reduction", "L1 reduction: sum or mean"),
    ("input_mask", "first-layer mask: stations (label cells), valid (cells with any observed channel) or dense"),
    ("aux_fw_channel", "input channel reconstructed by the fw head"),
    ("aux_bscan_channel", "input channel reconstructed by the bscan head"),
    ("backbone", "backbone layers, comma-separated `<kernel>x<filters>:<relu|none>`"),
    ("head_fw", "fw head layers"),
    ("head_bscan", "bscan head layers"),
    ("head_pm25", "PM2.5 head layers"),
    ("mask_eps", "stabilizer of the sparse convolution normalization"),
    ("frames", "labelled frames generated by synth"),
    ("sim_rows", "synthetic grid rows"),
    ("sim_cols", "synthetic grid columns"),
    ("cell_km", "synthetic cell size, km"),
    ("dt_h", "simulator time step, hours"),
    ("diffusion", "eddy diffusivity, km²/h"),
    ("background_rate", "uniform emission everywhere, μg/m³ per hour"),
    ("frame_interval_h", "hours between consecutive synthetic labels"),
    ("spinup_h", "simulated hours before the first input time"),
    ("start", "wall-clock time of simulation hour 0, RFC 3339"),
    ("season_factors", "emission multipliers for the first, middle and last third of the run"),
    ("stations", "number of synthetic monitoring stations"),
    ("min_sources", "fewest fire sources drawn"),
    ("max_sources", "most fire sources drawn"),
    ("rate_min", "lowest source emission rate, μg/m³ per hour"),
    ("rate_max", "highest source emission rate (exclusive)"),
    ("frp_min", "lowest fire radiative power, MW"),
    ("frp_max", "highest fire radiative power (exclusive)"),
    ("wind_speed", "mean surface wind speed, m/s"),
    ("wind_drift_deg", "amplitude of the slow turning of the wind, degrees"),
    ("wind_period_h", "period of the wind turning, hours"),
    ("wind_gust", "relative amplitude of speed oscillations"),
    ("wind_shear", "relative spatial modulation of the wind components"),
    ("fw_gain", "multiplicative bias of the synthetic firework forecast"),
    ("fw_noise", "log-normal sigma of the synthetic firework forecast"),
    ("fw_blur", "box blur width of the synthetic firework forecast (odd)"),
    ("bs_gain", "multiplicative bias of the synthetic bluesky forecast"),
    ("bs_noise", "log-normal sigma of the synthetic bluesky forecast"),
    ("aod_scale", "aerosol optical depth per μg/m³"),
    ("aod_noise", "additive Gaussian sigma on aerosol optical depth"),
    ("plume_threshold", "concentration above which a cell is flagged as under a plume, μg/m³"),
    ("hms_dropout", "probability that a plume analysis is missing for a frame"),
    ("upper_wind_scale", "250 hPa wind speed relative to the surface wind"),
    ("upper_wind_turn_deg", "rotation of the 250 hPa wind relative to the surface wind, degrees"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSubset {
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub archive: PathBuf,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub report_dir: PathBuf,
    pub resume: bool,
    pub split: (f64, f64, f64),
    pub eval_subset: EvalSubset,
    pub heatmaps: usize,
    pub heatmap_lo: f64,
    pub heatmap_hi: f64,
    pub gradcheck_fault: bool,
    pub grid: GridSpec,
    pub registry: ChannelRegistry,
    pub compose: ComposeOptions,
    pub train: TrainConfig,
    /// Channel names of the reconstruction targets, resolved against the
    /// registry by [`RunConfig::train_config`].
    pub aux_fw_channel: String,
    pub aux_bscan_channel: String,
    pub network: NetworkSpec,
    pub scenario: ScenarioParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        let registry = ChannelRegistry::default();
        RunConfig {
            seed: 7,
            threads: 0,
            archive: "archive".into(),
            checkpoint: "model.ckpt".into(),
            history: "history.csv".into(),
            report_dir: "report".into(),
            resume: false,
            split: (0.8, 0.1, 0.1),
            eval_subset: EvalSubset::Test,
            heatmaps: 0,
            heatmap_lo: 0.0,
            heatmap_hi: 50.0,
            gradcheck_fault: false,
            grid: GridSpec::british_columbia(),
            network: NetworkSpec::default_for(registry.len()),
            registry,
            compose: ComposeOptions::default(),
            train: TrainConfig::default(),
            aux_fw_channel: "firework_pm25".into(),
            aux_bscan_channel: "bluesky_pm25".into(),
            scenario: ScenarioParams::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}` cannot be `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}` must be true or false, got `{value}`"))),
    }
}

fn parse_list<const N: usize>(key: &str, value: &str) -> Result<[f64; N]> {
    let parts: Vec<f64> = value
        .split(',')
        .map(|p| parse::<f64>(key, p.trim()))
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| Error::Config(format!("`{key}` needs {N} comma-separated numbers, got `{value}`")))
}

fn hours(key: &str, value: &str) -> Result<f64> {
    let v: f64 = parse(key, value)?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::Config(format!("`{key}` must be a non-negative number of hours")));
    }
    Ok(v)
}

fn join(values: &[f64]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Defaults, then `file_text` (if any), then `overrides` in order.
    pub fn load(file_text: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(text) = file_text {
            for entry in parse_kv_lines(text)? {
                cfg.set(&entry.key, &entry.value).map_err(|e| Error::Parse {
                    line: entry.line,
                    message: e.to_string(),
                })?;
            }
        }
        for (key, value) in overrides {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Assigns one key. `-` in keys is accepted as `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('-', "_");
        let k = key.as_str();
        let v = value.trim();
        let sc = &mut self.scenario;
        let noise = &mut sc.noise;
        let t = &mut self.train;
        match k {
            "seed" => self.seed = parse(k, v)?,
            "threads" => self.threads = parse(k, v)?,
            "archive" => self.archive = v.into(),
            "checkpoint" => self.checkpoint = v.into(),
            "history" => self.history = v.into(),
            "report_dir" => self.report_dir = v.into(),
            "resume" => self.resume = parse_bool(k, v)?,
            "split" => {
                let [a, b, c] = parse_list::<3>(k, v)?;
                self.split = (a, b, c);
            }
            "eval_subset" => {
                self.eval_subset = match v {
                    "test" => EvalSubset::Test,
                    "all" => EvalSubset::All,
                    _ => return Err(Error::Config(format!("`eval_subset` must be test or all, got `{v}`"))),
                }
            }
            "heatmaps" => self.heatmaps = parse(k, v)?,
            "heatmap_lo" => self.heatmap_lo = parse(k, v)?,
            "heatmap_hi" => self.heatmap_hi = parse(k, v)?,
            "gradcheck_fault" => self.gradcheck_fault = parse_bool(k, v)?,
            "grid_nw" => self.grid.nw = parse::<LatLon>(k, v)?,
            "grid_sw" => self.grid.sw = parse::<LatLon>(k, v)?,
            "grid_ne" => self.grid.ne = parse::<LatLon>(k, v)?,
            "grid_se" => self.grid.se = parse::<LatLon>(k, v)?,
            "grid_rows" => self.grid.rows = parse(k, v)?,
            "grid_cols" => self.grid.cols = parse(k, v)?,
            "channels" => self.registry = ChannelRegistry::parse(v)?,
            "horizon_h" => {
                // Both consumers see the same whole number of seconds.
                let seconds = (hours(k, v)? * 3600.0).round() as i64;
                self.compose.horizon = Duration::seconds(seconds);
                sc.horizon_h = seconds as f64 / 3600.0;
            }
            "lookback_h" => self.compose.lookback = Duration::seconds((hours(k, v)? * 3600.0).round() as i64),
            "label_variable" => self.compose.label_variable = v.to_string(),
            "label_reduce" => self.compose.label_reduce = v.parse::<Reduce>()?,
            "spatial_fill" => self.compose.spatial_fill = parse_bool(k, v)?,
            "epochs" => t.epochs = parse(k, v)?,
            "lr" => t.adam.lr = parse(k, v)?,
            "beta1" => t.adam.beta1 = parse(k, v)?,
            "beta2" => t.adam.beta2 = parse(k, v)?,
            "adam_eps" => t.adam.eps = parse(k, v)?,
            "gamma_fw" => t.gammas.fw = parse(k, v)?,
            "gamma_bscan" => t.gammas.bscan = parse(k, v)?,
            "gamma_pm25" => t.gammas.pm25 = parse(k, v)?,
            "precision" => {
                t.precision = match v {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(Error::Config(format!("`precision` must be f32 or f64, got `{v}`"))),
                }
            }
            "loss_reduction" => {
                t.reduction = match v {
                    "sum" => Reduction::Sum,
                    "mean" => Reduction::Mean,
                    _ => return Err(Error::Config(format!("`loss_reduction` must be sum or mean, got `{v}`"))),
                }
            }
            "input_mask" => {
                t.input_mask = match v {
                    "valid" => InputMask::Valid,
                    "stations" => InputMask::Stations,
                    "dense" => InputMask::Dense,
                    _ => {
                        return Err(Error::Config(format!(
                            "`input_mask` must be valid, stations or dense, got `{v}`"
                        )))
                    }
                }
            }
            "aux_fw_channel" => self.aux_fw_channel = v.to_string(),
            "aux_bscan_channel" => self.aux_bscan_channel = v.to_string(),
            "backbone" => self.network.backbone = parse_layers(v)?,
            "head_fw" => self.network.heads[0] = parse_layers(v)?,
            "head_bscan" => self.network.heads[1] = parse_layers(v)?,
            "head_pm25" => self.network.heads[2] = parse_layers(v)?,
            "mask_eps" => self.network.mask_eps = parse(k, v)?,
            "frames" => sc.frames = parse(k, v)?,
            "sim_rows" => sc.rows = parse(k, v)?,
            "sim_cols" => sc.cols = parse(k, v)?,
            "cell_km" => sc.cell_km = parse(k, v)?,
            "dt_h" => sc.dt_h = parse(k, v)?,
            "diffusion" => sc.diffusion = parse(k, v)?,
            "background_rate" => sc.background_rate = parse(k, v)?,
            "frame_interval_h" => sc.frame_interval_h = parse(k, v)?,
            "spinup_h" => sc.spinup_h = hours(k, v)?,
            "start" => {
                sc.start = DateTime::parse_from_rfc3339(v)
                    .map_err(|e| Error::Config(format!("`start` = `{v}`: {e}")))?
                    .with_timezone(&Utc)
            }
            "season_factors" => sc.season_factors = parse_list::<3>(k, v)?,
            "stations" => sc.stations = parse(k, v)?,
            "min_sources" => sc.min_sources = parse(k, v)?,
            "max_sources" => sc.max_sources = parse(k, v)?,
            "rate_min" => sc.rate_min = parse(k, v)?,
            "rate_max" => sc.rate_max = parse(k, v)?,
            "frp_min" => sc.frp_min = parse(k, v)?,
            "frp_max" => sc.frp_max = parse(k, v)?,
            "wind_speed" => sc.wind_speed = parse(k, v)?,
            "wind_drift_deg" => sc.wind_drift_deg = parse(k, v)?,
            "wind_period_h" => sc.wind_period_h = parse(k, v)?,
            "wind_gust" => sc.wind_gust = parse(k, v)?,
            "wind_shear" => sc.wind_shear = parse(k, v)?,
            "fw_gain" => noise.fw_gain = parse(k, v)?,
            "fw_noise" => noise.fw_noise = parse(k, v)?,
            "fw_blur" => noise.fw_blur = parse(k, v)?,
            "bs_gain" => noise.bs_gain = parse(k, v)?,
            "bs_noise" => noise.bs_noise = parse(k, v)?,
            "aod_scale" => noise.aod_scale = parse(k, v)?,
            "aod_noise" => noise.aod_noise = parse(k, v)?,
            "plume_threshold" => noise.plume_threshold = parse(k, v)?,
            "hms_dropout" => noise.hms_dropout = parse(k, v)?,
            "upper_wind_scale" => noise.upper_wind_scale = parse(k, v)?,
            "upper_wind_turn_deg" => noise.upper_wind_turn_deg = parse(k, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Current value of a key, formatted so that [`set`](Self::set) reads it back.
    pub fn get(&self, key: &str) -> Option<String> {
        let sc = &self.scenario;
        let noise = &sc.noise;
        let t = &self.train;
        let hours = |d: Duration| (d.num_seconds() as f64 / 3600.0).to_string();
        let path = |p: &PathBuf| p.display().to_string();
        Some(match key.replace('-', "_").as_str() {
            "seed" => self.seed.to_string(),
            "threads" => self.threads.to_string(),
            "archive" => path(&self.archive),
            "checkpoint" => path(&self.checkpoint),
            "history" => path(&self.history),
            "report_dir" => path(&self.report_dir),
            "resume" => self.resume.to_string(),
            "split" => join(&[self.split.0, self.split.1, self.split.2]),
            "eval_subset" => match self.eval_subset {
                EvalSubset::Test => "test".into(),
                EvalSubset::All => "all".into(),
            },
            "heatmaps" => self.heatmaps.to_string(),
            "heatmap_lo" => self.heatmap_lo.to_string(),
            "heatmap_hi" => self.heatmap_hi.to_string(),
            "gradcheck_fault" => self.gradcheck_fault.to_string(),
            "grid_nw" => self.grid.nw.to_string(),
            "grid_sw" => self.grid.sw.to_string(),
            "grid_ne" => self.grid.ne.to_string(),
            "grid_se" => self.grid.se.to_string(),
            "grid_rows" => self.grid.rows.to_string(),
            "grid_cols" => self.grid.cols.to_string(),
            "channels" => self.registry.to_string(),
            "horizon_h" => hours(self.compose.horizon),
            "lookback_h" => hours(self.compose.lookback),
            "label_variable" => self.compose.label_variable.clone(),
            "label_reduce" => self.compose.label_reduce.to_string(),
            "spatial_fill" => self.compose.spatial_fill.to_string(),
            "epochs" => t.epochs.to_string(),
            "lr" => t.adam.lr.to_string(),
            "beta1" => t.adam.beta1.to_string(),
            "beta2" => t.adam.beta2.to_string(),
            "adam_eps" => t.adam.eps.to_string(),
            "gamma_fw" => t.gammas.fw.to_string(),
            "gamma_bscan" => t.gammas.bscan.to_string(),
            "gamma_pm25" => t.gammas.pm25.to_string(),
            "precision" => match t.precision {
                Precision::F32 => "f32".into(),
                Precision::F64 => "f64".into(),
            },
            "loss_reduction" => match t.reduction {
                Reduction::Sum => "sum".into(),
                Reduction::Mean => "mean".into(),
            },
            "input_mask" => match t.input_mask {
                InputMask::Valid => "valid".into(),
                InputMask::Stations => "stations".into(),
                InputMask::Dense => "dense".into(),
            },
            "aux_fw_channel" => self.aux_fw_channel.clone(),
            "aux_bscan_channel" => self.aux_bscan_channel.clone(),
            "backbone" => format_layers(&self.network.backbone),
            "head_fw" => format_layers(&self.network.heads[0]),
            "head_bscan" => format_layers(&self.network.heads[1]),
            "head_pm25" => format_layers(&self.network.heads[2]),
            "mask_eps" => self.network.mask_eps.to_string(),
            "frames" => sc.frames.to_string(),
            "sim_rows" => sc.rows.to_string(),
            "sim_cols" => sc.cols.to_string(),
            "cell_km" => sc.cell_km.to_string(),
            "dt_h" => sc.dt_h.to_string(),
            "diffusion" => sc.diffusion.to_string(),
            "background_rate" => sc.background_rate.to_string(),
            "frame_interval_h" => sc.frame_interval_h.to_string(),
            "spinup_h" => sc.spinup_h.to_string(),
            "start" => sc.start.to_rfc3339_opts(SecondsFormat::AutoSi, true),
            "season_factors" => join(&sc.season_factors),
            "stations" => sc.stations.to_string(),
            "min_sources" => sc.min_sources.to_string(),
            "max_sources" => sc.max_sources.to_string(),
            "rate_min" => sc.rate_min.to_string(),
            "rate_max" => sc.rate_max.to_string(),
            "frp_min" => sc.frp_min.to_string(),
            "frp_max" => sc.frp_max.to_string(),
            "wind_speed" => sc.wind_speed.to_string(),
            "wind_drift_deg" => sc.wind_drift_deg.to_string(),
            "wind_period_h" => sc.wind_period_h.to_string(),
            "wind_gust" => sc.wind_gust.to_string(),
            "wind_shear" => sc.wind_shear.to_string(),
            "fw_gain" => noise.fw_gain.to_string(),
            "fw_noise" => noise.fw_noise.to_string(),
            "fw_blur" => noise.fw_blur.to_string(),
            "bs_gain" => noise.bs_gain.to_string(),
            "bs_noise" => noise.bs_noise.to_string(),
            "aod_scale" => noise.aod_scale.to_string(),
            "aod_noise" => noise.aod_noise.to_string(),
            "plume_threshold" => noise.plume_threshold.to_string(),
            "hms_dropout" => noise.hms_dropout.to_string(),
            "upper_wind_scale" => noise.upper_wind_scale.to_string(),
            "upper_wind_turn_deg" => noise.upper_wind_turn_deg.to_string(),
            _ => return None,
        })
    }

    /// The whole configuration as commented `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, doc) in KEYS {
            let value = self.get(key).expect("every listed key is readable");
            out.push_str(&format!("# {doc}\n{key} = {value}\n"));
        }
        out
    }

    /// Cross-key consistency checks.
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.split;
        if [a, b, c].iter().any(|r| !(*r >= 0.0)) || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must be >= 0 and sum to 1, got {a},{b},{c}")));
        }
        if !(self.heatmap_lo < self.heatmap_hi) {
            return Err(Error::Config("heatmap_lo must be below heatmap_hi".into()));
        }
        self.grid.validate()?;
        self.train.gammas.validate()?;
        self.network_spec().validate()?;
        self.aux_targets()?;
        Ok(())
    }

    /// The network specification with its input width taken from the registry.
    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec {
            input_channels: self.registry.len(),
            ..self.network.clone()
        }
    }

    pub fn aux_targets(&self) -> Result<AuxTargets> {
        let find = |name: &str| {
            self.registry
                .index_of(name)
                .ok_or_else(|| Error::Config(format!("auxiliary target `{name}` is not a channel")))
        };
        Ok(AuxTargets {
            fw_channel: find(&self.aux_fw_channel)?,
            bscan_channel: find(&self.aux_bscan_channel)?,
        })
    }

    /// Training settings with the auxiliary targets resolved and the seed applied.
    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            aux: self.aux_targets()?,
            seed: self.seed,
            ..self.train.clone()
        })
    }

    /// Effective worker-thread count: the `threads` key, else the
    /// `SMOKEGRID_THREADS` environment variable, else `None` for all cores.
    pub fn thread_count(&self) -> Result<Option<usize>> {
        if self.threads > 0 {
            return Ok(Some(self.threads));
        }
        match std::env::var("SMOKEGRID_THREADS") {
            Ok(v) if !v.trim().is_empty() => {
                let n: usize = parse("SMOKEGRID_THREADS", v.trim())?;
                Ok((n > 0).then_some(n))
            }
            _ => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_lines_skip_comments_and_report_lines() {
        let entries = parse_kv_lines("# c\n\n a = 1 \nb=x=y\n").unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[1].line, 4);
        assert_eq!(entries[1].value, "x=y");
        match parse_kv_lines("a = 1\nnot a pair\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_kv_lines(" = 3").is_err());
    }

    #[test]
    fn every_key_is_documented_readable_and_writable() {
        let cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (key, doc) in KEYS {
            assert!(seen.insert(*key), "duplicate key {key}");
            assert!(!doc.is_empty());
            let value = cfg.get(key).unwrap_or_else(|| panic!("{key} unreadable"));
            let mut copy = cfg.clone();
            copy.set(key, &value).unwrap_or_else(|e| panic!("{key} = {value}: {e}"));
            assert_eq!(copy, cfg, "{key} did not round-trip");
        }
    }

    #[test]
    fn rendered_defaults_parse_back_identically() {
        let text = RunConfig::default().to_text();
        assert_eq!(RunConfig::load(Some(&text), &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected_with_line_numbers() {
        match RunConfig::load(Some("seed = 3\nepochz = 4\n"), &[]) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("epochz"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        assert!(RunConfig::load(None, &[("nope".into(), "1".into())]).is_err());
    }

    #[test]
    fn overrides_win_over_file() {
        let cfg = RunConfig::load(
            Some("epochs = 3\nframes = 10\n"),
            &[("epochs".into(), "1".into()), ("frames".into(), "0".into())],
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 1);
        assert_eq!(cfg.scenario.frames, 0);
        assert_eq!(RunConfig::load(None, &[("report-dir".into(), "x".into())]).unwrap().report_dir, PathBuf::from("x"));
    }

    #[test]
    fn horizon_feeds_both_ingestion_and_simulation() {
        let cfg = RunConfig::load(None, &[("horizon_h".into(), "12".into())]).unwrap();
        assert_eq!(cfg.compose.horizon, Duration::hours(12));
        assert_eq!(cfg.scenario.horizon_h, 12.0);
    }

    #[test]
    fn fractional_horizon_survives_rendering() {
        let cfg = RunConfig::load(Some("horizon_h = 0.021944444444444444"), &[]).unwrap();
        assert_eq!(cfg.compose.horizon, Duration::seconds(79));
        assert_eq!(RunConfig::load(Some(&cfg.to_text()), &[]).unwrap(), cfg);
    }

    #[test]
    fn invalid_combinations_fail_validation() {
        for (k, v) in [
            ("split", "0.5,0.5,0.5"),
            ("aux_fw_channel", "missing"),
            ("head_pm25", "3x2:none"),
            ("heatmap_lo", "60"),
            ("gamma_pm25", "-1"),
        ] {
            assert!(RunConfig::load(None, &[(k.into(), v.into())]).is_err(), "{k} = {v}");
        }
    }

    #[test]
    fn registry_width_drives_the_network() {
        let cfg = RunConfig::load(
            None,
            &[(
                "channels".into(),
                "firework_pm25:firework_pm25:mean:forward:log1p,bluesky_pm25:bluesky_pm25:mean:forward:log1p".into(),
            )],
        )
        .unwrap();
        assert_eq!(cfg.network_spec().input_channels, 2);
        assert_eq!(cfg.aux_targets().unwrap().bscan_channel, 1);
    }
}
