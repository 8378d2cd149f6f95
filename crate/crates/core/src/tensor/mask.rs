use crate::error::{Error, Result};

/// Supervision density over an `H×W` grid.
///
/// Input-level masks are binary; after [`avgpool_mask`] values become
/// fractional but always stay inside `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl MaskGrid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "mask {height}×{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Mask(format!("value {bad} outside [0, 1]")));
        }
        Ok(MaskGrid {
            height,
            width,
            values,
        })
    }

    /// Binary mask; every value must be exactly 0 or 1.
    pub fn binary(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        let mask = MaskGrid::new(height, width, values)?;
        if !mask.is_binary() {
            return Err(Error::Mask("expected a binary mask".into()));
        }
        Ok(mask)
    }

    pub fn ones(height: usize, width: usize) -> Self {
        MaskGrid {
            height,
            width,
            values: vec![1.0; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        MaskGrid {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    /// Binary mask with ones at the given `(row, col)` cells.
    pub fn from_cells(height: usize, width: usize, cells: &[(usize, usize)]) -> Result<Self> {
        let mut values = vec![0.0; height * width];
        for &(r, c) in cells {
            if r >= height || c >= width {
                return Err(Error::Shape(format!(
                    "cell ({r}, {c}) outside {height}×{width}"
                )));
            }
            values[r * width + c] = 1.0;
        }
        Ok(MaskGrid {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    /// Fraction of cells with a nonzero mask.
    pub fn density(&self) -> f64 {
        self.count() as f64 / self.values.len() as f64
    }

    /// Row-major indices of nonzero cells.
    pub fn active_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
    }
}

/// Mean over the centred `k×k` window; out-of-bounds cells count as 0 and
/// the divisor is always `k²`.
pub fn avgpool_mask(mask: &MaskGrid, k: usize) -> Result<MaskGrid> {
    if k % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "pooling window must be odd, got {k}"
        )));
    }
    let (h, w) = (mask.height, mask.width);
    let pad = k / 2;
    let area = (k * k) as f64;

    // Separable box sum: rows first, then columns.
    let mut horiz = vec![0.0; h * w];
    for r in 0..h {
        let row = &mask.values[r * w..(r + 1) * w];
        for c in 0..w {
            let lo = c.saturating_sub(pad);
            let hi = (c + pad).min(w - 1);
            horiz[r * w + c] = row[lo..=hi].iter().sum();
        }
    }
    let mut values = vec![0.0; h * w];
    for r in 0..h {
        let lo = r.saturating_sub(pad);
        let hi = (r + pad).min(h - 1);
        for c in 0..w {
            let s: f64 = (lo..=hi).map(|rr| horiz[rr * w + c]).sum();
            values[r * w + c] = (s / area).clamp(0.0, 1.0);
        }
    }
    Ok(MaskGrid {
        height: h,
        width: w,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn checker() -> MaskGrid {
        MaskGrid::binary(3, 3, vec![1., 0., 1., 0., 1., 0., 1., 0., 1.]).unwrap()
    }

    #[test]
    fn checkerboard_center_is_five_ninths() {
        let pooled = avgpool_mask(&checker(), 3).unwrap();
        assert!((pooled.get(1, 1) - 5.0 / 9.0).abs() < 1e-15);
        // corner sees (0,0), (0,1), (1,0), (1,1) = 1 + 0 + 0 + 1
        assert!((pooled.get(0, 0) - 2.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn interior_of_ones_stays_one() {
        let m = MaskGrid::ones(9, 9);
        for k in [1, 3, 5, 7] {
            let pooled = avgpool_mask(&m, k).unwrap();
            assert_eq!(pooled.get(4, 4), 1.0);
        }
    }

    #[test]
    fn zeros_stay_zero() {
        let pooled = avgpool_mask(&MaskGrid::zeros(4, 5), 3).unwrap();
        assert!(pooled.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn even_window_rejected() {
        assert!(avgpool_mask(&checker(), 2).is_err());
    }

    #[test]
    fn binary_constructor_rejects_fractions() {
        assert!(MaskGrid::binary(1, 2, vec![0.5, 1.0]).is_err());
        assert!(MaskGrid::new(1, 2, vec![1.5, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn pooling_preserves_unit_interval(
            bits in proptest::collection::vec(any::<bool>(), 36),
            ks in proptest::collection::vec(prop_oneof![Just(1usize), Just(3), Just(5), Just(11)], 1..6),
        ) {
            let mut m = MaskGrid::new(6, 6, bits.iter().map(|&b| b as u8 as f64).collect()).unwrap();
            for k in ks {
                m = avgpool_mask(&m, k).unwrap();
                prop_assert!(m.values().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
