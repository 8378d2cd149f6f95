use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub const fn new(lat: f64, lon: f64) -> Self {
        LatLon { lat, lon }
    }
}

impl std::fmt::Display for LatLon {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{}", self.lat, self.lon)
    }
}

impl std::str::FromStr for LatLon {
    type Err = Error;

    /// `lat,lon` in degrees.
    fn from_str(s: &str) -> Result<Self> {
        let parsed = s
            .split_once(',')
            .and_then(|(a, b)| Some((a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?)));
        match parsed {
            Some((lat, lon)) if lat.is_finite() && lon.is_finite() => Ok(LatLon::new(lat, lon)),
            _ => Err(Error::Config(format!("`{s}` is not `lat,lon`"))),
        }
    }
}

/// A `rows × cols` grid spanning the quadrilateral with the given corners.
///
/// Positions inside the quadrilateral are parameterized bilinearly by
/// `(u, v) ∈ [0, 1]²`, `u` running west→east (columns) and `v` north→south
/// (rows).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nw: LatLon,
    pub sw: LatLon,
    pub ne: LatLon,
    pub se: LatLon,
    pub rows: usize,
    pub cols: usize,
}

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 25;
/// Slack on the unit square so corners survive rounding.
const EDGE_SLACK: f64 = 1e-9;

impl GridSpec {
    /// The 125 × 125 grid of 10 km cells over British Columbia.
    pub fn british_columbia() -> Self {
        GridSpec {
            nw: LatLon::new(57.87, -133.54),
            sw: LatLon::new(47.31, -127.18),
            ne: LatLon::new(60.61, -112.19),
            se: LatLon::new(49.43, -110.61),
            rows: 125,
            cols: 125,
        }
    }

    pub fn new(nw: LatLon, sw: LatLon, ne: LatLon, se: LatLon, rows: usize, cols: usize) -> Result<Self> {
        let grid = GridSpec {
            nw,
            sw,
            ne,
            se,
            rows,
            cols,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Rejects grids smaller than 2×2 and corner sets that do not form a
    /// convex, non-degenerate quadrilateral.
    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::Config(format!(
                "grid must be at least 2×2, got {}×{}",
                self.rows, self.cols
            )));
        }
        let ring = [self.nw, self.ne, self.se, self.sw];
        if ring.iter().any(|p| !(p.lat.is_finite() && p.lon.is_finite())) {
            return Err(Error::Config("grid corners must be finite".into()));
        }
        let cross: Vec<f64> = (0..4)
            .map(|i| {
                let (a, b, c) = (ring[i], ring[(i + 1) % 4], ring[(i + 2) % 4]);
                (b.lon - a.lon) * (c.lat - b.lat) - (b.lat - a.lat) * (c.lon - b.lon)
            })
            .collect();
        let all_pos = cross.iter().all(|&c| c > 1e-12);
        let all_neg = cross.iter().all(|&c| c < -1e-12);
        if !(all_pos || all_neg) {
            return Err(Error::Config("grid corners form a degenerate quadrilateral".into()));
        }
        Ok(())
    }

    /// Bilinear position of unit coordinates `(u, v)`.
    pub fn position(&self, u: f64, v: f64) -> LatLon {
        let w = [(1.0 - u) * (1.0 - v), u * (1.0 - v), (1.0 - u) * v, u * v];
        let pts = [self.nw, self.ne, self.sw, self.se];
        LatLon {
            lat: w.iter().zip(&pts).map(|(w, p)| w * p.lat).sum(),
            lon: w.iter().zip(&pts).map(|(w, p)| w * p.lon).sum(),
        }
    }

    pub fn cell_center(&self, row: usize, col: usize) -> LatLon {
        self.position(
            (col as f64 + 0.5) / self.cols as f64,
            (row as f64 + 0.5) / self.rows as f64,
        )
    }

    /// Newton inversion of [`position`](Self::position). `None` when the
    /// iteration fails to converge or the point lies outside the grid.
    pub fn unit_coords(&self, lat: f64, lon: f64) -> Option<(f64, f64)> {
        if !(lat.is_finite() && lon.is_finite()) {
            return None;
        }
        let (mut u, mut v) = (0.5, 0.5);
        let mut converged = false;
        for _ in 0..NEWTON_MAX_ITER {
            let p = self.position(u, v);
            let (rx, ry) = (p.lon - lon, p.lat - lat);
            // Columns of the Jacobian, in (lon, lat).
            let du = (
                (1.0 - v) * (self.ne.lon - self.nw.lon) + v * (self.se.lon - self.sw.lon),
                (1.0 - v) * (self.ne.lat - self.nw.lat) + v * (self.se.lat - self.sw.lat),
            );
            let dv = (
                (1.0 - u) * (self.sw.lon - self.nw.lon) + u * (self.se.lon - self.ne.lon),
                (1.0 - u) * (self.sw.lat - self.nw.lat) + u * (self.se.lat - self.ne.lat),
            );
            let det = du.0 * dv.1 - dv.0 * du.1;
            if det.abs() < 1e-300 {
                return None;
            }
            let step_u = (rx * dv.1 - dv.0 * ry) / det;
            let step_v = (du.0 * ry - rx * du.1) / det;
            u -= step_u;
            v -= step_v;
            if !(u.is_finite() && v.is_finite()) {
                return None;
            }
            if step_u.abs().max(step_v.abs()) < NEWTON_TOL {
                converged = true;
                break;
            }
        }
        let inside = |t: f64| (-EDGE_SLACK..=1.0 + EDGE_SLACK).contains(&t);
        (converged && inside(u) && inside(v)).then(|| (u.clamp(0.0, 1.0), v.clamp(0.0, 1.0)))
    }

    /// Cell `(row, col)` containing the point, or `None` when out of bounds.
    /// Points on the far edges belong to the last row/column.
    pub fn latlon_to_cell(&self, lat: f64, lon: f64) -> Option<(usize, usize)> {
        let (u, v) = self.unit_coords(lat, lon)?;
        let col = ((u * self.cols as f64).floor() as usize).min(self.cols - 1);
        let row = ((v * self.rows as f64).floor() as usize).min(self.rows - 1);
        Some((row, col))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corners_map_to_corner_cells() {
        let g = GridSpec::british_columbia();
        assert_eq!(g.latlon_to_cell(57.87, -133.54), Some((0, 0)));
        assert_eq!(g.latlon_to_cell(49.43, -110.61), Some((124, 124)));
        assert_eq!(g.latlon_to_cell(47.31, -127.18), Some((124, 0)));
        assert_eq!(g.latlon_to_cell(60.61, -112.19), Some((0, 124)));
    }

    #[test]
    fn bilinear_midpoint_is_center_cell() {
        let g = GridSpec::british_columbia();
        // Forward map at (0.5, 0.5) is the average of the four corners.
        let lat = (57.87 + 47.31 + 60.61 + 49.43) / 4.0;
        let lon = (-133.54 - 127.18 - 112.19 - 110.61) / 4.0;
        assert_eq!(g.latlon_to_cell(lat, lon), Some((62, 62)));
    }

    #[test]
    fn outside_points_are_rejected() {
        let g = GridSpec::british_columbia();
        assert_eq!(g.latlon_to_cell(40.0, -120.0), None);
        assert_eq!(g.latlon_to_cell(55.0, -140.0), None);
        assert_eq!(g.latlon_to_cell(f64::NAN, -120.0), None);
    }

    #[test]
    fn degenerate_quadrilaterals_rejected() {
        let g = GridSpec::british_columbia();
        let crossed = GridSpec::new(g.nw, g.sw, g.se, g.ne, 10, 10);
        assert!(crossed.is_err());
        let flat = GridSpec::new(
            LatLon::new(0., 0.),
            LatLon::new(0., 1.),
            LatLon::new(0., 2.),
            LatLon::new(0., 3.),
            10,
            10,
        );
        assert!(flat.is_err());
        assert!(GridSpec::new(g.nw, g.sw, g.ne, g.se, 1, 10).is_err());
        assert!(GridSpec::new(g.nw, g.sw, g.ne, g.se, 125, 125).is_ok());
    }
}
