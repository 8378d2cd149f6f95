use super::SimConfig;
use crate::error::{Error, Result};

/// km/h per m/s.
pub const KMH_PER_MS: f64 = 3.6;

/// Concentration and wind on the simulation grid. Planes are row-major
/// `rows × cols`; row 0 is the northern edge, `u` points east and `v` north.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub rows: usize,
    pub cols: usize,
    /// μg/m³.
    pub c: Vec<f64>,
    /// m/s.
    pub u: Vec<f64>,
    /// m/s.
    pub v: Vec<f64>,
    /// Hours since the start of the run.
    pub elapsed_h: f64,
    /// Number of cells ever clamped back to zero. Stays 0 whenever the
    /// stability check passes.
    pub clamped: u64,
}

impl SimState {
    /// Clean air and calm wind.
    pub fn new(rows: usize, cols: usize) -> Self {
        SimState {
            rows,
            cols,
            c: vec![0.0; rows * cols],
            u: vec![0.0; rows * cols],
            v: vec![0.0; rows * cols],
            elapsed_h: 0.0,
            clamped: 0,
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.c.iter().sum()
    }

    /// Concentration-weighted mean `(row, col)`.
    pub fn center_of_mass(&self) -> Option<(f64, f64)> {
        let m = self.total_mass();
        if m <= 0.0 {
            return None;
        }
        let (mut r, mut c) = (0.0, 0.0);
        for (i, &x) in self.c.iter().enumerate() {
            r += x * (i / self.cols) as f64;
            c += x * (i % self.cols) as f64;
        }
        Some((r / m, c / m))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rows * self.cols;
        if self.c.len() != n || self.u.len() != n || self.v.len() != n {
            return Err(Error::Shape("simulation planes do not match the grid".into()));
        }
        if self.c.iter().chain(&self.u).chain(&self.v).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("simulation state".into()));
        }
        if self.c.iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidArgument("negative concentration".into()));
        }
        Ok(())
    }
}

/// Face velocities in km/h: `east[r * (cols + 1) + f]` is the velocity
/// through vertical face `f` of row `r` (face `f` sits west of column `f`);
/// `north[f * cols + c]` is through horizontal face `f` of column `c` (face
/// `f` sits north of row `f`). Boundary faces take the adjacent cell's wind.
struct Faces {
    east: Vec<f64>,
    north: Vec<f64>,
}

fn faces(state: &SimState) -> Faces {
    let (rows, cols) = (state.rows, state.cols);
    let mut east = vec![0.0; rows * (cols + 1)];
    for r in 0..rows {
        for f in 0..=cols {
            let at = |c: usize| state.u[r * cols + c];
            let vel = if f == 0 {
                at(0)
            } else if f == cols {
                at(cols - 1)
            } else {
                0.5 * (at(f - 1) + at(f))
            };
            east[r * (cols + 1) + f] = vel * KMH_PER_MS;
        }
    }
    let mut north = vec![0.0; (rows + 1) * cols];
    for f in 0..=rows {
        for c in 0..cols {
            let at = |r: usize| state.v[r * cols + c];
            let vel = if f == 0 {
                at(0)
            } else if f == rows {
                at(rows - 1)
            } else {
                0.5 * (at(f - 1) + at(f))
            };
            north[f * cols + c] = vel * KMH_PER_MS;
        }
    }
    Faces { east, north }
}

/// Stability margins of a state under `config`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stability {
    /// `max|wind|·dt / cell`, per component.
    pub courant: f64,
    /// `4·D·dt / cell²`.
    pub diffusion: f64,
    /// Largest fraction of any cell's content leaving it in one step.
    pub outflow: f64,
}

impl Stability {
    pub const LIMIT: f64 = 0.9;

    pub fn holds(&self) -> bool {
        self.courant <= Self::LIMIT && self.diffusion <= Self::LIMIT && self.outflow <= 1.0
    }
}

pub fn stability(state: &SimState, config: &SimConfig) -> Stability {
    let (rows, cols) = (state.rows, state.cols);
    let lam = config.dt_h / config.cell_km;
    let mu = config.diffusion * config.dt_h / (config.cell_km * config.cell_km);
    let vmax = state
        .u
        .iter()
        .chain(&state.v)
        .fold(0.0f64, |m, x| m.max(x.abs()));
    let f = faces(state);
    let mut outflow = 0.0f64;
    for r in 0..rows {
        for c in 0..cols {
            let out = f.east[r * (cols + 1) + c + 1].max(0.0)
                + (-f.east[r * (cols + 1) + c]).max(0.0)
                + f.north[r * cols + c].max(0.0)
                + (-f.north[(r + 1) * cols + c]).max(0.0);
            let neighbours = [r > 0, r + 1 < rows, c > 0, c + 1 < cols]
                .iter()
                .filter(|&&b| b)
                .count() as f64;
            outflow = outflow.max(lam * out + mu * neighbours);
        }
    }
    Stability {
        courant: vmax * KMH_PER_MS * lam,
        diffusion: 4.0 * mu,
        outflow,
    }
}

/// Advances the state by one time step: upwind advection through cell faces,
/// diffusion between neighbours, then source emission. Mass only leaves the
/// domain by advection through a boundary face whose wind points outward.
pub fn step(state: &SimState, config: &SimConfig) -> Result<SimState> {
    step_with(state, config, true)
}

/// [`step`] without emission or diffusion: pure transport by the current wind.
pub fn advect_only(state: &SimState, config: &SimConfig) -> Result<SimState> {
    let calm = SimConfig {
        diffusion: 0.0,
        ..config.clone()
    };
    step_with(state, &calm, false)
}

fn step_with(state: &SimState, config: &SimConfig, emit: bool) -> Result<SimState> {
    let (rows, cols) = (state.rows, state.cols);
    if (rows, cols) != (config.rows, config.cols) {
        return Err(Error::Shape(format!(
            "state is {rows}×{cols} but the configuration is {}×{}",
            config.rows, config.cols
        )));
    }
    state.validate()?;
    let s = stability(state, config);
    if !s.holds() {
        return Err(Error::Cfl(format!(
            "courant {:.4}, diffusion {:.4}, outflow {:.4} (limits {}, {}, 1)",
            s.courant,
            s.diffusion,
            s.outflow,
            Stability::LIMIT,
            Stability::LIMIT
        )));
    }

    let lam = config.dt_h / config.cell_km;
    let mu = config.diffusion * config.dt_h / (config.cell_km * config.cell_km);
    let f = faces(state);
    let c = &state.c;
    let mut next = c.clone();

    for r in 0..rows {
        for fc in 0..=cols {
            let vel = f.east[r * (cols + 1) + fc];
            let west = (fc > 0).then(|| r * cols + fc - 1);
            let east = (fc < cols).then(|| r * cols + fc);
            // Boundary faces only carry outflow.
            let (from, to) = if vel > 0.0 { (west, east) } else { (east, west) };
            if let Some(src) = from {
                let amount = lam * vel.abs() * c[src];
                next[src] -= amount;
                if let Some(dst) = to {
                    next[dst] += amount;
                }
            }
        }
    }
    for fr in 0..=rows {
        for col in 0..cols {
            let vel = f.north[fr * cols + col];
            let north = (fr > 0).then(|| (fr - 1) * cols + col);
            let south = (fr < rows).then(|| fr * cols + col);
            let (from, to) = if vel > 0.0 { (south, north) } else { (north, south) };
            if let Some(src) = from {
                let amount = lam * vel.abs() * c[src];
                next[src] -= amount;
                if let Some(dst) = to {
                    next[dst] += amount;
                }
            }
        }
    }
    if mu > 0.0 {
        for r in 0..rows {
            for col in 0..cols {
                let i = r * cols + col;
                if col + 1 < cols {
                    let flux = mu * (c[i] - c[i + 1]);
                    next[i] -= flux;
                    next[i + 1] += flux;
                }
                if r + 1 < rows {
                    let flux = mu * (c[i] - c[i + cols]);
                    next[i] -= flux;
                    next[i + cols] += flux;
                }
            }
        }
    }
    if emit {
        let t = state.elapsed_h;
        for src in &config.sources {
            next[src.row * cols + src.col] += config.emission(src, t) * config.dt_h;
        }
        if config.background_rate > 0.0 {
            let add = config.background_rate * config.season_factor(t) * config.dt_h;
            next.iter_mut().for_each(|x| *x += add);
        }
    }

    let mut clamped = state.clamped;
    for x in &mut next {
        if *x < 0.0 {
            *x = 0.0;
            clamped += 1;
        }
    }
    Ok(SimState {
        c: next,
        elapsed_h: state.elapsed_h + config.dt_h,
        clamped,
        ..state.clone()
    })
}
