//! Slice-level numeric kernels shared by the tape's forward and backward
//! rules. Layouts are row-major: feature maps are `C×H×W`, kernels are
//! `Cout×Cin×k1×k2`.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k1: usize,
    pub k2: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    /// Output index range `[lo, hi)` along one axis for kernel tap `k`.
    #[inline]
    fn valid(k: usize, pad: usize, stride: usize, extent: usize, out: usize) -> (usize, usize) {
        // input index = o*stride + k - pad must lie in [0, extent)
        let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
        let hi = if extent + pad > k {
            ((extent + pad - k - 1) / stride + 1).min(out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

/// Unrolls `input` into a `(Cin·k1·k2)×(Hout·Wout)` matrix whose row
/// `(ci, ki, kj)` holds the input value under that tap for every output
/// position, zero where the tap falls in the padding.
pub fn im2col(g: &ConvGeom, input: &[f64]) -> Vec<f64> {
    let plane_in = g.h * g.w;
    let p = g.h_out * g.w_out;
    let mut col = vec![0.0; g.c_in * g.k1 * g.k2 * p];
    for ci in 0..g.c_in {
        let in_plane = &input[ci * plane_in..(ci + 1) * plane_in];
        for ki in 0..g.k1 {
            let (oi_lo, oi_hi) = ConvGeom::valid(ki, g.pad, g.stride, g.h, g.h_out);
            for kj in 0..g.k2 {
                let (oj_lo, oj_hi) = ConvGeom::valid(kj, g.pad, g.stride, g.w, g.w_out);
                let r = (ci * g.k1 + ki) * g.k2 + kj;
                let row = &mut col[r * p..(r + 1) * p];
                for oi in oi_lo..oi_hi {
                    let ii = oi * g.stride + ki - g.pad;
                    let in_row = &in_plane[ii * g.w..(ii + 1) * g.w];
                    let out_row = &mut row[oi * g.w_out..(oi + 1) * g.w_out];
                    for oj in oj_lo..oj_hi {
                        out_row[oj] = in_row[oj * g.stride + kj - g.pad];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub fn col2im(g: &ConvGeom, col: &[f64], d_in: &mut [f64]) {
    let plane_in = g.h * g.w;
    let p = g.h_out * g.w_out;
    for ci in 0..g.c_in {
        let din_plane = &mut d_in[ci * plane_in..(ci + 1) * plane_in];
        for ki in 0..g.k1 {
            let (oi_lo, oi_hi) = ConvGeom::valid(ki, g.pad, g.stride, g.h, g.h_out);
            for kj in 0..g.k2 {
                let (oj_lo, oj_hi) = ConvGeom::valid(kj, g.pad, g.stride, g.w, g.w_out);
                let r = (ci * g.k1 + ki) * g.k2 + kj;
                let row = &col[r * p..(r + 1) * p];
                for oi in oi_lo..oi_hi {
                    let ii = oi * g.stride + ki - g.pad;
                    let din_row = &mut din_plane[ii * g.w..(ii + 1) * g.w];
                    let src = &row[oi * g.w_out..(oi + 1) * g.w_out];
                    for oj in oj_lo..oj_hi {
                        din_row[oj * g.stride + kj - g.pad] += src[oj];
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let mut cx = x.chunks_exact(4);
    let mut cy = y.chunks_exact(4);
    for (a, b) in (&mut cx).zip(&mut cy) {
        for k in 0..4 {
            acc[k] += a[k] * b[k];
        }
    }
    let tail: f64 = cx.remainder().iter().zip(cy.remainder()).map(|(a, b)| a * b).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Cross-correlation; accumulates into `out` (caller zeroes it).
pub fn conv2d_forward(g: &ConvGeom, input: &[f64], kernel: &[f64], out: &mut [f64]) {
    conv2d_forward_col(g, &im2col(g, input), kernel, out);
}

/// [`conv2d_forward`] on an already unrolled input.
pub fn conv2d_forward_col(g: &ConvGeom, col: &[f64], kernel: &[f64], out: &mut [f64]) {
    let p = g.h_out * g.w_out;
    let rows = g.c_in * g.k1 * g.k2;
    for co in 0..g.c_out {
        let out_plane = &mut out[co * p..(co + 1) * p];
        let krow = &kernel[co * rows..(co + 1) * rows];
        for (r, &wgt) in krow.iter().enumerate() {
            if wgt != 0.0 {
                axpy(wgt, &col[r * p..(r + 1) * p], out_plane);
            }
        }
    }
}

/// Accumulates `∂L/∂input` given `∂L/∂out`.
pub fn conv2d_backward_input(g: &ConvGeom, d_out: &[f64], kernel: &[f64], d_in: &mut [f64]) {
    let p = g.h_out * g.w_out;
    let rows = g.c_in * g.k1 * g.k2;
    let mut dcol = vec![0.0; rows * p];
    for co in 0..g.c_out {
        let dout_plane = &d_out[co * p..(co + 1) * p];
        let krow = &kernel[co * rows..(co + 1) * rows];
        for (r, &wgt) in krow.iter().enumerate() {
            if wgt != 0.0 {
                axpy(wgt, dout_plane, &mut dcol[r * p..(r + 1) * p]);
            }
        }
    }
    col2im(g, &dcol, d_in);
}

/// Accumulates `∂L/∂kernel` given `∂L/∂out`.
pub fn conv2d_backward_kernel(g: &ConvGeom, d_out: &[f64], input: &[f64], d_kernel: &mut [f64]) {
    conv2d_backward_kernel_col(g, d_out, &im2col(g, input), d_kernel);
}

/// [`conv2d_backward_kernel`] on an already unrolled input.
pub fn conv2d_backward_kernel_col(g: &ConvGeom, d_out: &[f64], col: &[f64], d_kernel: &mut [f64]) {
    let p = g.h_out * g.w_out;
    let rows = g.c_in * g.k1 * g.k2;
    for co in 0..g.c_out {
        let dout_plane = &d_out[co * p..(co + 1) * p];
        if dout_plane.iter().all(|&x| x == 0.0) {
            continue;
        }
        let dk = &mut d_kernel[co * rows..(co + 1) * rows];
        for (r, d) in dk.iter_mut().enumerate() {
            *d += dot(dout_plane, &col[r * p..(r + 1) * p]);
        }
    }
}

/// Floor-mode max pooling. Returns the output buffer and, per output cell,
/// the flat input index of the first (row-major) maximum.
pub fn max_pool2d_forward(
    input: &[f64],
    (c, h, w): (usize, usize, usize),
    (p1, p2): (usize, usize),
    stride: usize,
    (h_out, w_out): (usize, usize),
) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(c * h_out * w_out);
    let mut arg = Vec::with_capacity(c * h_out * w_out);
    for ch in 0..c {
        let base = ch * h * w;
        for oi in 0..h_out {
            for oj in 0..w_out {
                let (i0, j0) = (oi * stride, oj * stride);
                let (best, idx) = window_max(input, base, w, i0..i0 + p1, j0..j0 + p2);
                out.push(best);
                arg.push(idx);
            }
        }
    }
    (out, arg)
}

/// Max pooling onto an exact `h_out×w_out` grid. Output row `i` covers input
/// rows `floor(i·H/h_out) .. ceil((i+1)·H/h_out)`, and likewise for columns,
/// so every input cell is covered and windows may overlap by one.
pub fn adaptive_max_pool2d_forward(
    input: &[f64],
    (c, h, w): (usize, usize, usize),
    (h_out, w_out): (usize, usize),
) -> (Vec<f64>, Vec<usize>) {
    let bounds = |o: usize, n_in: usize, n_out: usize| {
        let lo = o * n_in / n_out;
        let hi = ((o + 1) * n_in).div_ceil(n_out);
        lo..hi.max(lo + 1)
    };
    let mut out = Vec::with_capacity(c * h_out * w_out);
    let mut arg = Vec::with_capacity(c * h_out * w_out);
    for ch in 0..c {
        let base = ch * h * w;
        for oi in 0..h_out {
            for oj in 0..w_out {
                let (best, idx) =
                    window_max(input, base, w, bounds(oi, h, h_out), bounds(oj, w, w_out));
                out.push(best);
                arg.push(idx);
            }
        }
    }
    (out, arg)
}

#[inline]
fn window_max(
    input: &[f64],
    base: usize,
    w: usize,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
) -> (f64, usize) {
    let mut best = f64::NEG_INFINITY;
    let mut idx = base + rows.start * w + cols.start;
    for i in rows {
        for j in cols.clone() {
            let k = base + i * w + j;
            // strict comparison keeps the first maximum
            if input[k] > best {
                best = input[k];
                idx = k;
            }
        }
    }
    (best, idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(c_in: usize, h: usize, w: usize, c_out: usize, k: usize, stride: usize, pad: usize) -> ConvGeom {
        ConvGeom {
            c_in,
            h,
            w,
            c_out,
            k1: k,
            k2: k,
            stride,
            pad,
            h_out: (h + 2 * pad - k) / stride + 1,
            w_out: (w + 2 * pad - k) / stride + 1,
        }
    }

    /// Straightforward padded-input reference.
    fn naive(g: &ConvGeom, input: &[f64], kernel: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.c_out * g.h_out * g.w_out];
        for co in 0..g.c_out {
            for oi in 0..g.h_out {
                for oj in 0..g.w_out {
                    let mut acc = 0.0;
                    for ci in 0..g.c_in {
                        for ki in 0..g.k1 {
                            for kj in 0..g.k2 {
                                let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                                let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                                if ii < 0 || jj < 0 || ii >= g.h as isize || jj >= g.w as isize {
                                    continue;
                                }
                                acc += input[(ci * g.h + ii as usize) * g.w + jj as usize]
                                    * kernel[((co * g.c_in + ci) * g.k1 + ki) * g.k2 + kj];
                            }
                        }
                    }
                    out[(co * g.h_out + oi) * g.w_out + oj] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_reference_across_strides_and_padding() {
        let mut seed = 7u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        };
        for &(stride, pad, k) in &[(1, 0, 3), (1, 1, 3), (2, 0, 3), (2, 1, 3), (1, 2, 5), (3, 1, 2)] {
            let g = geom(2, 7, 6, 3, k, stride, pad);
            let input: Vec<f64> = (0..2 * 7 * 6).map(|_| next()).collect();
            let kernel: Vec<f64> = (0..3 * 2 * k * k).map(|_| next()).collect();
            let mut out = vec![0.0; g.c_out * g.h_out * g.w_out];
            conv2d_forward(&g, &input, &kernel, &mut out);
            let reference = naive(&g, &input, &kernel);
            for (a, b) in out.iter().zip(&reference) {
                assert!((a - b).abs() < 1e-12, "stride {stride} pad {pad}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn adaptive_pool_covers_exact_grid() {
        let input: Vec<f64> = (0..79 * 29).map(|x| x as f64).collect();
        let (out, arg) = adaptive_max_pool2d_forward(&input, (1, 79, 29), (38, 13));
        assert_eq!(out.len(), 38 * 13);
        // last window reaches the last input row/column
        assert_eq!(*arg.last().unwrap(), 79 * 29 - 1);
    }
}
