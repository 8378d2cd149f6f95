//! Sparsity-invariant convolution kernels.
//!
//! Layouts: features are `H×W×C` (channel fastest), kernels are
//! `k×k×Cin×Cout`, stride 1 with "same" zero padding. Window positions whose
//! mask is exactly zero are skipped outright, so values stored there never
//! enter the arithmetic.

use rayon::prelude::*;

use super::gemm::{gemm, View};
use super::Real;

/// Default stabilizer added to the mask sum in the normalization.
pub const DEFAULT_MASK_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl ConvGeometry {
    fn pad(&self) -> usize {
        self.k / 2
    }

    /// In-bounds `(first, last)` window offsets for output index `pos` along
    /// an axis of length `len`.
    #[inline]
    fn window(&self, pos: usize, len: usize) -> (usize, usize) {
        let pad = self.pad();
        let first = pad.saturating_sub(pos);
        let last = (len - 1 + pad - pos).min(self.k - 1);
        (first, last)
    }

    /// Window offsets `i` for which output `pos + pad - i` is in bounds, i.e.
    /// the outputs that read input index `pos`.
    #[inline]
    fn reverse_window(&self, pos: usize, len: usize) -> (usize, usize) {
        let pad = self.pad();
        ((pos + pad + 1).saturating_sub(len), (pos + pad).min(self.k - 1))
    }
}

/// Output pixels per matrix-product block. Fixed so results do not depend
/// on how many threads share the blocks.
const ROW_BLOCK: usize = 256;

/// Masks with fewer than one observed cell in this many take the direct
/// path, which only touches observed window positions.
const SPARSE_RATIO: usize = 8;

fn use_direct<T: Real>(mask: &[T]) -> bool {
    let nnz = mask.iter().filter(|&&m| m != T::zero()).count();
    nnz * SPARSE_RATIO < mask.len()
}

/// Returns the output volume and the per-pixel denominators `Σm + eps`.
pub(crate) fn forward<T: Real>(
    g: ConvGeometry,
    x: &[T],
    mask: &[T],
    kernel: &[T],
    bias: &[T],
    eps: T,
) -> (Vec<T>, Vec<T>) {
    if use_direct(mask) {
        forward_direct(g, x, mask, kernel, bias, eps)
    } else {
        forward_gemm(g, x, mask, kernel, bias, eps)
    }
}

/// `m·x` per pixel, with unobserved pixels left at zero.
fn masked_input<T: Real>(x: &[T], mask: &[T], cin: usize) -> Vec<T> {
    let mut xm = vec![T::zero(); x.len()];
    for ((dst, src), &mv) in xm.chunks_exact_mut(cin).zip(x.chunks_exact(cin)).zip(mask) {
        if mv != T::zero() {
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = mv * v;
            }
        }
    }
    xm
}

/// Fills rows `p0..p0 + n` of the unrolled input: row `p` holds the masked
/// input at each in-bounds window position of output pixel `p`, ordered
/// `(i, j, c)`, and zero for positions that are out of bounds or unobserved.
/// Every element of `cols` is written.
fn im2col<T: Real>(g: ConvGeometry, xm: &[T], mask: &[T], p0: usize, cols: &mut [T]) {
    let ConvGeometry { h, w, cin, k, .. } = g;
    let pad = g.pad();
    let width = k * k * cin;
    for (row, dst) in cols.chunks_exact_mut(width).enumerate() {
        let p = p0 + row;
        let (u, v) = (p / w, p % w);
        for i in 0..k {
            let r = (u + i).wrapping_sub(pad);
            for j in 0..k {
                let c = (v + j).wrapping_sub(pad);
                let out = &mut dst[(i * k + j) * cin..(i * k + j + 1) * cin];
                // Out-of-bounds indices wrapped to huge values above.
                if r < h && c < w && mask[r * w + c] != T::zero() {
                    let q = r * w + c;
                    out.copy_from_slice(&xm[q * cin..(q + 1) * cin]);
                } else {
                    out.fill(T::zero());
                }
            }
        }
    }
}

fn denominators<T: Real>(g: ConvGeometry, mask: &[T], eps: T) -> Vec<T> {
    let ConvGeometry { h, w, .. } = g;
    let pad = g.pad();
    (0..h * w)
        .map(|p| {
            let (u, v) = (p / w, p % w);
            let (i0, i1) = g.window(u, h);
            let (j0, j1) = g.window(v, w);
            let mut msum = T::zero();
            for i in i0..=i1 {
                let r = u + i - pad;
                for j in j0..=j1 {
                    msum = msum + mask[r * w + (v + j - pad)];
                }
            }
            msum + eps
        })
        .collect()
}

fn forward_gemm<T: Real>(
    g: ConvGeometry,
    x: &[T],
    mask: &[T],
    kernel: &[T],
    bias: &[T],
    eps: T,
) -> (Vec<T>, Vec<T>) {
    let ConvGeometry { h, w, cin, cout, k } = g;
    let width = k * k * cin;
    let den = denominators(g, mask, eps);
    let xm = masked_input(x, mask, cin);
    let mut out = vec![T::zero(); h * w * cout];
    out.par_chunks_mut(ROW_BLOCK * cout)
        .enumerate()
        .for_each_init(Vec::new, |cols, (b, block)| {
            let p0 = b * ROW_BLOCK;
            let n = block.len() / cout;
            cols.resize(n * width, T::zero());
            im2col(g, &xm, mask, p0, cols);
            gemm(
                View::row_major(cols, n, width),
                View::row_major(kernel, width, cout),
                block,
                false,
            );
            for (px, acc) in block.chunks_exact_mut(cout).enumerate() {
                let d = den[p0 + px];
                for (a, &b) in acc.iter_mut().zip(bias) {
                    let s = if d > T::zero() { *a / d } else { T::zero() };
                    *a = s + b;
                }
            }
        });
    (out, den)
}

fn forward_direct<T: Real>(
    g: ConvGeometry,
    x: &[T],
    mask: &[T],
    kernel: &[T],
    bias: &[T],
    eps: T,
) -> (Vec<T>, Vec<T>) {
    let ConvGeometry { h, w, cin, cout, k } = g;
    let pad = g.pad();
    let mut out = vec![T::zero(); h * w * cout];
    let mut den = vec![T::zero(); h * w];

    out.par_chunks_mut(w * cout)
        .zip(den.par_chunks_mut(w))
        .enumerate()
        .for_each(|(u, (out_row, den_row))| {
            let (i0, i1) = g.window(u, h);
            for v in 0..w {
                let (j0, j1) = g.window(v, w);
                let acc = &mut out_row[v * cout..(v + 1) * cout];
                let mut msum = T::zero();
                for i in i0..=i1 {
                    let r = u + i - pad;
                    for j in j0..=j1 {
                        let q = r * w + (v + j - pad);
                        let mv = mask[q];
                        if mv == T::zero() {
                            continue;
                        }
                        msum = msum + mv;
                        let xs = &x[q * cin..(q + 1) * cin];
                        let block = &kernel[(i * k + j) * cin * cout..(i * k + j + 1) * cin * cout];
                        for (c, &xv) in xs.iter().enumerate() {
                            let a = mv * xv;
                            let wr = &block[c * cout..(c + 1) * cout];
                            for (acc_o, &w_o) in acc.iter_mut().zip(wr) {
                                *acc_o = *acc_o + a * w_o;
                            }
                        }
                    }
                }
                let d = msum + eps;
                den_row[v] = d;
                for (acc_o, &b) in acc.iter_mut().zip(bias) {
                    let s = if d > T::zero() { *acc_o / d } else { T::zero() };
                    *acc_o = s + b;
                }
            }
        });
    (out, den)
}

pub(crate) struct ConvGrads<T> {
    pub x: Option<Vec<T>>,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

pub(crate) fn backward<T: Real>(
    g: ConvGeometry,
    x: &[T],
    mask: &[T],
    kernel: &[T],
    den: &[T],
    upstream: &[T],
    want_x: bool,
) -> ConvGrads<T> {
    let cout = g.cout;
    let mut scaled = upstream.to_vec();
    for (gp, &d) in scaled.chunks_exact_mut(cout).zip(den) {
        for v in gp {
            *v = if d > T::zero() { *v / d } else { T::zero() };
        }
    }

    let mut bias = vec![T::zero(); cout];
    for gp in upstream.chunks(cout) {
        for (b, &v) in bias.iter_mut().zip(gp) {
            *b = *b + v;
        }
    }

    let (kernel, x) = if use_direct(mask) {
        backward_direct(g, x, mask, kernel, &scaled, want_x)
    } else {
        backward_gemm(g, x, mask, kernel, &scaled, want_x)
    };
    ConvGrads { x, kernel, bias }
}

fn backward_gemm<T: Real>(
    g: ConvGeometry,
    x: &[T],
    mask: &[T],
    kernel: &[T],
    scaled: &[T],
    want_x: bool,
) -> (Vec<T>, Option<Vec<T>>) {
    let ConvGeometry { h, w, cin, cout, k } = g;
    let pad = g.pad();
    let width = k * k * cin;

    let xm = masked_input(x, mask, cin);
    // Per-block partial kernel gradients, summed in block order.
    let partials: Vec<Vec<T>> = scaled
        .par_chunks(ROW_BLOCK * cout)
        .enumerate()
        .map_init(Vec::new, |cols, (b, gblock)| {
            let n = gblock.len() / cout;
            cols.resize(n * width, T::zero());
            im2col(g, &xm, mask, b * ROW_BLOCK, cols);
            let mut part = vec![T::zero(); width * cout];
            gemm(
                View::transposed(cols, n, width),
                View::row_major(gblock, n, cout),
                &mut part,
                false,
            );
            part
        })
        .collect();
    let mut grad_kernel = vec![T::zero(); width * cout];
    for part in &partials {
        for (a, &b) in grad_kernel.iter_mut().zip(part) {
            *a = *a + b;
        }
    }

    let grad_x = want_x.then(|| {
        let mut dcols = vec![T::zero(); h * w * width];
        dcols
            .par_chunks_mut(ROW_BLOCK * width)
            .zip(scaled.par_chunks(ROW_BLOCK * cout))
            .for_each(|(dblock, gblock)| {
                let n = gblock.len() / cout;
                gemm(
                    View::row_major(gblock, n, cout),
                    View::transposed(kernel, width, cout),
                    dblock,
                    false,
                );
            });
        let mut gx = vec![T::zero(); h * w * cin];
        gx.par_chunks_mut(w * cin).enumerate().for_each(|(r, gx_row)| {
            for cc in 0..w {
                let mv = mask[r * w + cc];
                if mv == T::zero() {
                    continue;
                }
                let acc = &mut gx_row[cc * cin..(cc + 1) * cin];
                let (i0, i1) = g.reverse_window(r, h);
                let (j0, j1) = g.reverse_window(cc, w);
                for i in i0..=i1 {
                    let u = r + pad - i;
                    for j in j0..=j1 {
                        let p = u * w + (cc + pad - j);
                        let src = &dcols[p * width + (i * k + j) * cin..p * width + (i * k + j + 1) * cin];
                        for (a, &d) in acc.iter_mut().zip(src) {
                            *a = *a + d;
                        }
                    }
                }
                for a in acc.iter_mut() {
                    *a = *a * mv;
                }
            }
        });
        gx
    });
    (grad_kernel, grad_x)
}

fn backward_direct<T: Real>(
    g: ConvGeometry,
    x: &[T],
    mask: &[T],
    kernel: &[T],
    scaled: &[T],
    want_x: bool,
) -> (Vec<T>, Option<Vec<T>>) {
    let ConvGeometry { h, w, cin, cout, k } = g;
    let pad = g.pad();

    // One independent block per kernel offset, so no cross-thread reduction.
    let mut grad_kernel = vec![T::zero(); k * k * cin * cout];
    grad_kernel
        .par_chunks_mut(cin * cout)
        .enumerate()
        .for_each(|(ij, block)| {
            let (i, j) = (ij / k, ij % k);
            let rows = (pad.saturating_sub(i))..(h + pad - i).min(h);
            let cols = (pad.saturating_sub(j))..(w + pad - j).min(w);
            for u in rows {
                let r = u + i - pad;
                for v in cols.clone() {
                    let q = r * w + (v + j - pad);
                    let mv = mask[q];
                    if mv == T::zero() {
                        continue;
                    }
                    let gs = &scaled[(u * w + v) * cout..(u * w + v + 1) * cout];
                    let xs = &x[q * cin..(q + 1) * cin];
                    for (c, &xv) in xs.iter().enumerate() {
                        let a = mv * xv;
                        let br = &mut block[c * cout..(c + 1) * cout];
                        for (b, &go) in br.iter_mut().zip(gs) {
                            *b = *b + a * go;
                        }
                    }
                }
            }
        });

    let grad_x = want_x.then(|| {
        // Kernel transposed to k×k×Cout×Cin so the inner loop runs over Cin.
        let mut kt = vec![T::zero(); kernel.len()];
        for ij in 0..k * k {
            for c in 0..cin {
                for o in 0..cout {
                    kt[(ij * cout + o) * cin + c] = kernel[(ij * cin + c) * cout + o];
                }
            }
        }
        let mut gx = vec![T::zero(); h * w * cin];
        gx.par_chunks_mut(w * cin).enumerate().for_each(|(r, gx_row)| {
            for cc in 0..w {
                let mv = mask[r * w + cc];
                if mv == T::zero() {
                    continue;
                }
                let acc = &mut gx_row[cc * cin..(cc + 1) * cin];
                // Outputs p = q - (i - pad, j - pad) that read input q.
                let (i0, i1) = g.reverse_window(r, h);
                let (j0, j1) = g.reverse_window(cc, w);
                for i in i0..=i1 {
                    let u = r + pad - i;
                    for j in j0..=j1 {
                        let v = cc + pad - j;
                        let gs = &scaled[(u * w + v) * cout..(u * w + v + 1) * cout];
                        let block = &kt[(i * k + j) * cout * cin..(i * k + j + 1) * cout * cin];
                        for (o, &go) in gs.iter().enumerate() {
                            let wr = &block[o * cin..(o + 1) * cin];
                            for (a, &wv) in acc.iter_mut().zip(wr) {
                                *a = *a + go * wv;
                            }
                        }
                    }
                }
                for a in acc.iter_mut() {
                    *a = *a * mv;
                }
            }
        });
        gx
    });

    (grad_kernel, grad_x)
}
