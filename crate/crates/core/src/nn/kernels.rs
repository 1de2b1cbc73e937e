//! Dense kernels over feature-major batches.
//!
//! Samples are processed in register-resident blocks of [`LANES`]; every
//! reduction runs in a fixed order so results do not depend on batch
//! partitioning beyond the block size.

const LANES: usize = 16;

/// `y[o, :] = bias[o] + sum_i a[o, i] * x[i, :]` with `a` row-major
/// `(rows, cols)`, `x` of shape `(cols, len)` and `y` of shape `(rows, len)`.
pub(crate) fn affine(a: &[f64], bias: Option<&[f64]>, rows: usize, cols: usize, x: &[f64], y: &mut [f64], len: usize) {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert!(x.len() >= cols * len && y.len() >= rows * len);
    let blocks = len / LANES;
    for blk in 0..blocks {
        let s = blk * LANES;
        for o in 0..rows {
            let mut acc = [bias.map_or(0.0, |b| b[o]); LANES];
            for i in 0..cols {
                let w = a[o * cols + i];
                let xs: &[f64; LANES] = x[i * len + s..i * len + s + LANES].try_into().unwrap();
                for l in 0..LANES {
                    acc[l] += w * xs[l];
                }
            }
            y[o * len + s..o * len + s + LANES].copy_from_slice(&acc);
        }
    }
    for r in blocks * LANES..len {
        for o in 0..rows {
            let mut acc = bias.map_or(0.0, |b| b[o]);
            for i in 0..cols {
                acc += a[o * cols + i] * x[i * len + r];
            }
            y[o * len + r] = acc;
        }
    }
}

/// Accumulates `gw[o, i] += sum_r delta[o, r] * x[i, r]` and
/// `gb[o] += sum_r delta[o, r]`.
pub(crate) fn accumulate_outer(delta: &[f64], x: &[f64], rows: usize, cols: usize, len: usize, gw: &mut [f64], gb: &mut [f64]) {
    const W: usize = 8;
    let blocks = len / W;
    for o in 0..rows {
        let d = &delta[o * len..(o + 1) * len];
        let mut bias_acc = [0.0; W];
        for blk in 0..blocks {
            for l in 0..W {
                bias_acc[l] += d[blk * W + l];
            }
        }
        let mut tail: f64 = d[blocks * W..].iter().sum();
        gb[o] += reduce(bias_acc) + tail;

        let mut i = 0;
        while i < cols {
            let width = (cols - i).min(4);
            let mut acc = [[0.0; W]; 4];
            for blk in 0..blocks {
                let s = blk * W;
                let ds: &[f64; W] = d[s..s + W].try_into().unwrap();
                for (c, a) in acc.iter_mut().enumerate().take(width) {
                    let xs: &[f64; W] = x[(i + c) * len + s..(i + c) * len + s + W].try_into().unwrap();
                    for l in 0..W {
                        a[l] += ds[l] * xs[l];
                    }
                }
            }
            for (c, a) in acc.iter().enumerate().take(width) {
                tail = 0.0;
                for r in blocks * W..len {
                    tail += d[r] * x[(i + c) * len + r];
                }
                gw[o * cols + i + c] += reduce(*a) + tail;
            }
            i += width;
        }
    }
}

#[inline]
fn reduce(acc: [f64; 8]) -> f64 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}
