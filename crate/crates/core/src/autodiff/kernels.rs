//! Dense numeric kernels shared by forward and backward passes.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// `c = beta * c + a(m×k) · b(k×n)`, with optional transposition of either
/// operand (the stored layout of a transposed operand is k×m / n×k).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices have been checked to cover m×k, k×n and m×n elements
    // under the given strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2-D convolution on one image (channels × height × width).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds one image into a `(C·kh·kw) × (out_h·out_w)` patch matrix.
pub fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let ncols = g.col_cols();
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oh in 0..g.out_h {
                    let ih = (oh * g.sh + ki) as isize - g.pad_top as isize;
                    let drow = &mut dst[oh * g.out_w..(oh + 1) * g.out_w];
                    if ih < 0 || ih >= g.height as isize {
                        drow.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[ih as usize * g.width..(ih as usize + 1) * g.width];
                    for (ow, d) in drow.iter_mut().enumerate() {
                        let iw = (ow * g.sw + kj) as isize - g.pad_left as isize;
                        *d = if iw < 0 || iw >= g.width as isize {
                            0.0
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch columns back, accumulating into `x`.
pub fn col2im(cols: &[f64], g: &ConvGeom, x: &mut [f64]) {
    let ncols = g.col_cols();
    for c in 0..g.channels {
        let plane = &mut x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oh in 0..g.out_h {
                    let ih = (oh * g.sh + ki) as isize - g.pad_top as isize;
                    if ih < 0 || ih >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.width..(ih as usize + 1) * g.width];
                    let srow = &src[oh * g.out_w..(oh + 1) * g.out_w];
                    for (ow, s) in srow.iter().enumerate() {
                        let iw = (ow * g.sw + kj) as isize - g.pad_left as isize;
                        if iw >= 0 && iw < g.width as isize {
                            dst[iw as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

/// Real DFT of length `n` and its adjoints, backed by a complex FFT.
///
/// Forward: `X_k = Σ_t x_t e^{-2πi kt/n}` for `k = 0..=n/2`, stored as
/// `[re_0..re_{K-1}, im_0..im_{K-1}]` per frame.
pub struct RealDft {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl RealDft {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    pub fn bins(&self) -> usize {
        self.n / 2 + 1
    }

    /// `frame` has `n` samples, `out` has `2K` values.
    pub fn forward(&self, frame: &[f64], out: &mut [f64], buf: &mut Vec<Complex64>) {
        let k = self.bins();
        buf.clear();
        buf.extend(frame.iter().map(|&v| Complex64::new(v, 0.0)));
        self.fwd.process(buf);
        for i in 0..k {
            out[i] = buf[i].re;
            out[k + i] = buf[i].im;
        }
    }

    /// Adjoint of `forward`: `x_t = Σ_k gr_k cos θ − gi_k sin θ`, accumulated.
    pub fn forward_adjoint(&self, g: &[f64], out: &mut [f64], buf: &mut Vec<Complex64>) {
        let k = self.bins();
        buf.clear();
        buf.resize(self.n, Complex64::new(0.0, 0.0));
        for i in 0..k {
            buf[i] = Complex64::new(g[i], g[k + i]);
        }
        self.inv.process(buf);
        for (o, c) in out.iter_mut().zip(buf.iter()) {
            *o += c.re;
        }
    }

    /// Inverse real DFT (normalized by `1/n`), ignoring the imaginary parts
    /// of the DC and Nyquist bins.
    pub fn inverse(&self, spec: &[f64], out: &mut [f64], buf: &mut Vec<Complex64>) {
        let k = self.bins();
        let n = self.n;
        buf.clear();
        buf.resize(n, Complex64::new(0.0, 0.0));
        for i in 0..k {
            buf[i] = Complex64::new(spec[i], spec[k + i]);
        }
        buf[0].im = 0.0;
        if n % 2 == 0 {
            buf[n / 2].im = 0.0;
        }
        for i in k..n {
            buf[i] = buf[n - i].conj();
        }
        self.inv.process(buf);
        let scale = 1.0 / n as f64;
        for (o, c) in out.iter_mut().zip(buf.iter()) {
            *o = c.re * scale;
        }
    }

    /// Adjoint of `inverse`, accumulated into `out` (`2K` values).
    pub fn inverse_adjoint(&self, g: &[f64], out: &mut [f64], buf: &mut Vec<Complex64>) {
        let k = self.bins();
        let n = self.n;
        buf.clear();
        buf.extend(g.iter().map(|&v| Complex64::new(v, 0.0)));
        self.fwd.process(buf);
        let scale = 1.0 / n as f64;
        for i in 0..k {
            let edge = i == 0 || (n % 2 == 0 && i == n / 2);
            let w = if edge { scale } else { 2.0 * scale };
            out[i] += w * buf[i].re;
            if !edge {
                out[k + i] += w * buf[i].im;
            }
        }
    }
}
