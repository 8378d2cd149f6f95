use std::collections::BTreeMap;

use chrono::Duration;

use super::derive::{derive_channels, sample_stations, DerivedChannels, Snapshot};
use super::sim::{step, SimState};
use super::SimConfig;
use crate::error::{Error, Result};
use crate::grid::{log_transform, Archive, ChannelRegistry, SampleFrame, Transform, SENTINEL};
use crate::tensor::Tensor;

/// A generated run: the archive (frames plus dense truth at each label time)
/// and simulator bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub archive: Archive,
    pub steps: u64,
    /// Cells clamped at zero over the whole run.
    pub clamped: u64,
}

/// Per-frame seed for the derived-channel noise.
fn frame_seed(seed: u64, frame: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (frame as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

fn step_index(hours: f64, dt: f64) -> Result<u64> {
    let n = (hours / dt).round();
    if (n * dt - hours).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "time {hours} h is not a whole number of {dt} h steps"
        )));
    }
    Ok(n as u64)
}

/// Runs the simulator and emits one frame per label time.
///
/// Frame `k` has its label at `spinup + horizon + k·interval` hours and its
/// inputs at `horizon` hours earlier. Channels follow `registry`, which may
/// only name variables the generator knows; transforms from the registry
/// are applied, and a missing plume analysis is filled from the previous
/// frame's (or the sentinel when there is none).
pub fn generate_scenario(config: &SimConfig, registry: &ChannelRegistry) -> Result<Scenario> {
    config.validate()?;
    for ch in registry.channels() {
        if !DerivedChannels::VARIABLES.contains(&ch.variable.as_str()) {
            return Err(Error::Config(format!(
                "the simulator cannot supply variable `{}`",
                ch.variable
            )));
        }
    }
    let (rows, cols) = (config.rows, config.cols);
    let mut archive = Archive::new(config.grid, registry.names().iter().map(|s| s.to_string()).collect());
    let mut truths = Vec::with_capacity(config.frames);
    if config.frames == 0 {
        archive.truths = Some(truths);
        return Ok(Scenario {
            archive,
            steps: 0,
            clamped: 0,
        });
    }

    let mut wanted: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    let mut plan = Vec::with_capacity(config.frames);
    for k in 0..config.frames {
        let label = step_index(config.label_hour(k), config.dt_h)?;
        let anchor = step_index(config.label_hour(k) - config.horizon_h, config.dt_h)?;
        wanted.entry(anchor).or_default().push(k);
        wanted.entry(label).or_default().push(k);
        plan.push((anchor, label));
    }
    let last = plan.last().map(|p| p.1).unwrap_or(0);

    let mut state = SimState::new(rows, cols);
    let mut snapshots: BTreeMap<u64, Snapshot> = BTreeMap::new();
    let mut next_frame = 0;
    let mut last_hms: Option<Vec<f64>> = None;
    for n in 0..=last {
        state.elapsed_h = n as f64 * config.dt_h;
        (state.u, state.v) = config.wind_field(state.elapsed_h);
        if wanted.contains_key(&n) {
            snapshots.insert(n, Snapshot::from(&state));
        }
        while next_frame < config.frames && plan[next_frame].1 == n {
            let (anchor, label) = plan[next_frame];
            let (target, base) = (&snapshots[&label], &snapshots[&anchor]);
            let derived = derive_channels(target, base, config, frame_seed(config.seed, next_frame))?;
            if let Some(h) = &derived.hms_plume {
                last_hms = Some(h.clone());
            }

            let nch = registry.len();
            let mut input = vec![0f32; rows * cols * nch];
            for (ci, ch) in registry.channels().iter().enumerate() {
                let plane = match derived.plane(&ch.variable).flatten() {
                    Some(p) => Some(p),
                    None => last_hms.as_deref(),
                };
                for px in 0..rows * cols {
                    let raw = plane.map_or(SENTINEL, |p| p[px]);
                    let value = match (plane, ch.transform) {
                        (Some(_), Transform::Log1p) => log_transform(raw)?,
                        _ => raw,
                    };
                    input[px * nch + ci] = value as f32;
                }
            }

            let (label_plane, mask) = sample_stations(&target.c, rows, cols, &config.stations)?;
            let secs = (config.label_hour(next_frame) * 3600.0).round() as i64;
            archive.frames.push(SampleFrame {
                timestamp: config.start + Duration::seconds(secs),
                input: Tensor::new(&[rows, cols, nch], input)?,
                label: label_plane,
                station_count: mask.count(),
                mask,
            });
            truths.push(Tensor::new(&[rows, cols], target.c.clone())?);

            next_frame += 1;
            let keep_from = plan.get(next_frame).map_or(u64::MAX, |p| p.0);
            snapshots.retain(|&k, _| k >= keep_from);
        }
        if n < last {
            state = step(&state, config)?;
        }
    }
    archive.truths = Some(truths);
    Ok(Scenario {
        archive,
        steps: last,
        clamped: state.clamped,
    })
}
