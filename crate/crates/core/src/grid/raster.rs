use super::observation::Reading;
use super::registry::Reduce;
use super::GridSpec;

/// One variable gridded at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub rows: usize,
    pub cols: usize,
    /// Reduced value per cell, 0 where nothing landed.
    pub values: Vec<f64>,
    pub presence: Vec<bool>,
    /// Observations outside the grid.
    pub skipped: usize,
}

impl Raster {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Raster {
            rows,
            cols,
            values: vec![0.0; rows * cols],
            presence: vec![false; rows * cols],
            skipped: 0,
        }
    }

    pub fn populated(&self) -> usize {
        self.presence.iter().filter(|&&p| p).count()
    }
}

/// Drops each reading into its cell and combines collisions with `reduce`.
pub fn rasterize(readings: &[Reading], grid: &GridSpec, reduce: Reduce) -> Raster {
    let mut raster = Raster::empty(grid.rows, grid.cols);
    let mut counts = vec![0u32; grid.rows * grid.cols];
    for r in readings {
        let Some((row, col)) = grid.latlon_to_cell(r.lat, r.lon) else {
            raster.skipped += 1;
            continue;
        };
        let idx = row * grid.cols + col;
        let slot = &mut raster.values[idx];
        *slot = if counts[idx] == 0 {
            r.value
        } else {
            match reduce {
                Reduce::Mean | Reduce::Sum => *slot + r.value,
                Reduce::Max => slot.max(r.value),
            }
        };
        counts[idx] += 1;
        raster.presence[idx] = true;
    }
    if reduce == Reduce::Mean {
        for (v, &n) in raster.values.iter_mut().zip(&counts) {
            if n > 1 {
                *v /= n as f64;
            }
        }
    }
    raster
}

/// Fills unpopulated cells of `current` from the most recent earlier raster
/// (history is ordered most-recent-first) that populated them; cells never
/// populated get `sentinel`.
pub fn fill_forward(current: &Raster, history: &[Raster], sentinel: f64) -> Vec<f64> {
    (0..current.values.len())
        .map(|i| {
            if current.presence[i] {
                return current.values[i];
            }
            history
                .iter()
                .find(|h| h.presence[i])
                .map_or(sentinel, |h| h.values[i])
        })
        .collect()
}

/// Replaces every cell not marked in `known` with the value of the nearest
/// known cell (Euclidean distance in index space, ties to the lowest index).
/// Leaves the plane untouched when nothing is known.
pub fn fill_nearest(values: &mut [f64], known: &[bool], rows: usize, cols: usize) {
    let sources: Vec<(usize, usize, f64)> = (0..rows * cols)
        .filter(|&i| known[i])
        .map(|i| (i / cols, i % cols, values[i]))
        .collect();
    if sources.is_empty() {
        return;
    }
    for i in (0..rows * cols).filter(|&i| !known[i]) {
        let (r, c) = ((i / cols) as isize, (i % cols) as isize);
        let nearest = sources
            .iter()
            .min_by_key(|&&(sr, sc, _)| {
                let (dr, dc) = (sr as isize - r, sc as isize - c);
                dr * dr + dc * dc
            })
            .map(|s| s.2);
        values[i] = nearest.unwrap_or(values[i]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::LatLon;
    use proptest::prelude::*;

    fn grid() -> GridSpec {
        GridSpec::new(
            LatLon::new(2.0, 0.0),
            LatLon::new(0.0, 0.0),
            LatLon::new(2.0, 2.0),
            LatLon::new(0.0, 2.0),
            2,
            2,
        )
        .unwrap()
    }

    fn at(lat: f64, lon: f64, value: f64) -> Reading {
        Reading { lat, lon, value }
    }

    #[test]
    fn mean_of_collisions() {
        let r = rasterize(&[at(1.5, 0.5, 10.0), at(1.6, 0.4, 20.0)], &grid(), Reduce::Mean);
        assert_eq!(r.values[0], 15.0);
        assert_eq!(r.populated(), 1);
    }

    #[test]
    fn sum_and_max() {
        let obs = [at(0.5, 1.5, 0.0), at(0.5, 1.5, 1.0)];
        assert_eq!(rasterize(&obs, &grid(), Reduce::Max).values[3], 1.0);
        assert_eq!(rasterize(&obs, &grid(), Reduce::Sum).values[3], 1.0);
        let frp = [at(0.5, 1.5, 100.0), at(0.5, 1.5, 50.0)];
        assert_eq!(rasterize(&frp, &grid(), Reduce::Sum).values[3], 150.0);
    }

    #[test]
    fn nothing_observed() {
        let r = rasterize(&[], &grid(), Reduce::Mean);
        assert!(r.presence.iter().all(|p| !p));
    }

    #[test]
    fn out_of_bounds_is_counted() {
        let r = rasterize(&[at(5.0, 5.0, 1.0), at(0.5, 0.5, 2.0)], &grid(), Reduce::Mean);
        assert_eq!(r.skipped, 1);
        assert_eq!(r.populated(), 1);
    }

    fn raster(values: &[f64], presence: &[bool]) -> Raster {
        Raster {
            rows: 1,
            cols: values.len(),
            values: values.to_vec(),
            presence: presence.to_vec(),
            skipped: 0,
        }
    }

    #[test]
    fn fill_rules() {
        let current = raster(&[4.0, 0.0, 0.0], &[true, false, false]);
        let history = [
            raster(&[1.0, 0.0, 0.0], &[true, false, false]),
            raster(&[0.0, 7.0, 0.0], &[false, true, false]),
            raster(&[0.0, 9.0, 0.0], &[false, true, false]),
        ];
        assert_eq!(fill_forward(&current, &history, -1.0), vec![4.0, 7.0, -1.0]);
    }

    proptest! {
        #[test]
        fn fill_never_invents_values(
            frames in proptest::collection::vec(
                proptest::collection::vec(proptest::option::of(-5i32..50), 6), 1..5),
        ) {
            let rasters: Vec<Raster> = frames.iter().map(|f| {
                raster(
                    &f.iter().map(|v| v.unwrap_or(0) as f64).collect::<Vec<_>>(),
                    &f.iter().map(Option::is_some).collect::<Vec<_>>(),
                )
            }).collect();
            let filled = fill_forward(&rasters[0], &rasters[1..], -1.0);
            for (i, v) in filled.iter().enumerate() {
                let seen = rasters.iter().any(|r| r.presence[i] && r.values[i] == *v);
                prop_assert!(seen || *v == -1.0);
            }
        }
    }
}
