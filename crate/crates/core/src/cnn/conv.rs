use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{block, channel_bias, init_bound, ComplexTensor};
use crate::autodiff::{Bound, Conv2dSpec, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Time-axis padding policy. Frequency is always padded symmetrically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingMode {
    /// Output frame `t` may look at input frames after `t`.
    Same,
    /// Only past frames are padded; no lookahead.
    CausalTime,
}

impl PaddingMode {
    /// `(past, future)` padding for a time kernel of width `kw`.
    fn time_pads(self, kw: usize) -> (usize, usize) {
        match self {
            PaddingMode::CausalTime => (kw - 1, 0),
            PaddingMode::Same => {
                let past = (kw - 1) / 2;
                (past, kw - 1 - past)
            }
        }
    }
}

/// Complex 2-D convolution over `B×C×F×T` inputs.
///
/// Computed as one real convolution of `[xr; xi]` with the block kernel
/// `[[Wr, −Wi], [Wi, Wr]]`.
#[derive(Clone, Debug)]
pub struct ComplexConv2d {
    pub w_real: ParamId,
    pub w_imag: ParamId,
    pub bias: Option<(ParamId, ParamId)>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: PaddingMode,
}

#[allow(clippy::too_many_arguments)]
fn register(
    store: &mut ParamStore,
    prefix: &str,
    w_shape: [usize; 4],
    fan_in: usize,
    bias_len: usize,
    bias: bool,
    rng: &mut impl Rng,
) -> (ParamId, ParamId, Option<(ParamId, ParamId)>) {
    let k = init_bound(fan_in);
    let wr = store.add_uniform(format!("{prefix}.w_real"), &w_shape, k, rng);
    let wi = store.add_uniform(format!("{prefix}.w_imag"), &w_shape, k, rng);
    let b = bias.then(|| {
        (
            store.add_uniform(format!("{prefix}.b_real"), &[bias_len], k, rng),
            store.add_uniform(format!("{prefix}.b_imag"), &[bias_len], k, rng),
        )
    });
    (wr, wi, b)
}

fn check_input(op: &'static str, x: &ComplexTensor, channels: usize) -> Result<Vec<usize>> {
    let s = x.shape();
    if s.len() != 4 || s[1] != channels {
        return Err(Error::shape(op, format!("input {s:?}, expected B×{channels}×F×T")));
    }
    Ok(s)
}

impl ComplexConv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: PaddingMode,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel.0 * kernel.1;
        let (w_real, w_imag, bias) = register(
            store,
            prefix,
            [out_channels, in_channels, kernel.0, kernel.1],
            fan_in,
            out_channels,
            bias,
            rng,
        );
        Self {
            w_real,
            w_imag,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn param_count(&self) -> usize {
        let w = 2 * self.out_channels * self.in_channels * self.kernel.0 * self.kernel.1;
        w + if self.bias.is_some() { 2 * self.out_channels } else { 0 }
    }

    /// Output frequency size for input size `f`.
    pub fn out_freq(&self, f: usize) -> usize {
        let pad = (self.kernel.0 - 1) / 2;
        (f + 2 * pad - self.kernel.0) / self.stride.0 + 1
    }

    pub fn forward(&self, p: &Bound, x: &ComplexTensor) -> Result<ComplexTensor> {
        check_input("complex_conv2d", x, self.in_channels)?;
        let g = x.graph();
        let (wr, wi) = (&p[self.w_real], &p[self.w_imag]);
        let w = block(g, wr, &wi.neg(), wi, wr, 0, 1)?;
        let fpad = (self.kernel.0 - 1) / 2;
        let (past, future) = self.padding.time_pads(self.kernel.1);
        let spec = Conv2dSpec {
            stride: self.stride,
            padding: (fpad, fpad, past, future),
        };
        let mut y = x.stacked(1)?.conv2d(&w, spec)?;
        if let Some((br, bi)) = self.bias {
            let b = g.concat(&[p[br].clone(), p[bi].clone()], 0)?;
            y = channel_bias(&y, &b)?;
        }
        ComplexTensor::unstack(&y, 1)
    }
}

/// Complex transposed convolution, the adjoint geometry of
/// [`ComplexConv2d`]. With frequency stride 2 and an odd kernel it maps `n`
/// bins to `2n − 1`; the time axis keeps its length.
#[derive(Clone, Debug)]
pub struct ComplexDeconv2d {
    pub w_real: ParamId,
    pub w_imag: ParamId,
    pub bias: Option<(ParamId, ParamId)>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: PaddingMode,
}

impl ComplexDeconv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: PaddingMode,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel.0 * kernel.1;
        let (w_real, w_imag, bias) = register(
            store,
            prefix,
            [in_channels, out_channels, kernel.0, kernel.1],
            fan_in,
            out_channels,
            bias,
            rng,
        );
        Self {
            w_real,
            w_imag,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn param_count(&self) -> usize {
        let w = 2 * self.out_channels * self.in_channels * self.kernel.0 * self.kernel.1;
        w + if self.bias.is_some() { 2 * self.out_channels } else { 0 }
    }

    pub fn out_freq(&self, f: usize) -> usize {
        let crop = (self.kernel.0 - 1) / 2;
        (f - 1) * self.stride.0 + self.kernel.0 - 2 * crop
    }

    pub fn forward(&self, p: &Bound, x: &ComplexTensor) -> Result<ComplexTensor> {
        check_input("complex_deconv2d", x, self.in_channels)?;
        let g = x.graph();
        let (wr, wi) = (&p[self.w_real], &p[self.w_imag]);
        let w = block(g, wr, wi, &wi.neg(), wr, 0, 1)?;
        let fcrop = (self.kernel.0 - 1) / 2;
        // The full transposed output has T + kw − 1 frames; keep the ones
        // aligned with the input, cropping the future for causal layers.
        let (past, future) = self.padding.time_pads(self.kernel.1);
        let (left, right) = (future, past);
        let spec = Conv2dSpec {
            stride: self.stride,
            padding: (fcrop, fcrop, left, right),
        };
        let mut y = x.stacked(1)?.conv_transpose2d(&w, spec)?;
        if let Some((br, bi)) = self.bias {
            let b = g.concat(&[p[br].clone(), p[bi].clone()], 0)?;
            y = channel_bias(&y, &b)?;
        }
        ComplexTensor::unstack(&y, 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, grad_check_params, Graph};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn sample(n: usize, seed: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + 1.0) * seed).sin()).collect()
    }

    /// Direct complex cross-correlation with explicit zero padding.
    #[allow(clippy::too_many_arguments)]
    fn naive_complex_conv(
        xr: &[f64],
        xi: &[f64],
        wr: &[f64],
        wi: &[f64],
        (b, ci, h, w): (usize, usize, usize, usize),
        (co, kh, kw): (usize, usize, usize),
        (sh, sw): (usize, usize),
        (pt, pb, pl, pr): (usize, usize, usize, usize),
    ) -> (Vec<f64>, Vec<f64>, usize, usize) {
        let oh = (h + pt + pb - kh) / sh + 1;
        let ow = (w + pl + pr - kw) / sw + 1;
        let mut yr = vec![0.0; b * co * oh * ow];
        let mut yi = yr.clone();
        for bi in 0..b {
            for o in 0..co {
                for y in 0..oh {
                    for x in 0..ow {
                        let (mut ar, mut ai) = (0.0, 0.0);
                        for c in 0..ci {
                            for u in 0..kh {
                                for v in 0..kw {
                                    let iy = (y * sh + u) as isize - pt as isize;
                                    let ix = (x * sw + v) as isize - pl as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let xi_ = ((bi * ci + c) * h + iy as usize) * w + ix as usize;
                                    let wi_ = ((o * ci + c) * kh + u) * kw + v;
                                    ar += wr[wi_] * xr[xi_] - wi[wi_] * xi[xi_];
                                    ai += wr[wi_] * xi[xi_] + wi[wi_] * xr[xi_];
                                }
                            }
                        }
                        let oi = ((bi * co + o) * oh + y) * ow + x;
                        yr[oi] = ar;
                        yi[oi] = ai;
                    }
                }
            }
        }
        (yr, yi, oh, ow)
    }

    #[test]
    fn matches_naive_complex_oracle() {
        for padding in [PaddingMode::Same, PaddingMode::CausalTime] {
            let mut store = ParamStore::new();
            let conv = ComplexConv2d::new(&mut store, "c", 2, 3, (5, 2), (2, 1), padding, false, &mut rng());
            let g = Graph::new();
            let p = store.bind(&g);
            let shape = [2, 2, 9, 4];
            let (xr, xi) = (sample(144, 0.37), sample(144, 0.91));
            let x = ComplexTensor::constant(&g, &shape, xr.clone(), xi.clone()).unwrap();
            let y = conv.forward(&p, &x).unwrap();
            let (past, future) = padding.time_pads(2);
            let (er, ei, oh, ow) = naive_complex_conv(
                &xr,
                &xi,
                store.get(conv.w_real).data(),
                store.get(conv.w_imag).data(),
                (2, 2, 9, 4),
                (3, 5, 2),
                (2, 1),
                (2, 2, past, future),
            );
            assert_eq!(y.shape(), vec![2, 3, oh, ow]);
            assert_eq!(oh, conv.out_freq(9));
            for (a, b) in y.re.value().iter().zip(&er).chain(y.im.value().iter().zip(&ei)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_imag_kernel_is_two_real_convolutions() {
        let mut store = ParamStore::new();
        let conv = ComplexConv2d::new(&mut store, "c", 1, 2, (3, 2), (1, 1), PaddingMode::Same, false, &mut rng());
        store.get_mut(conv.w_imag).data_mut().fill(0.0);
        let g = Graph::new();
        let p = store.bind(&g);
        let x = ComplexTensor::constant(&g, &[1, 1, 5, 3], sample(15, 0.3), sample(15, 0.8)).unwrap();
        let y = conv.forward(&p, &x).unwrap();
        let spec = Conv2dSpec {
            stride: (1, 1),
            padding: (1, 1, 0, 1),
        };
        let wr = &p[conv.w_real];
        assert_eq!(y.re.value(), x.re.conv2d(wr, spec).unwrap().value());
        assert_eq!(y.im.value(), x.im.conv2d(wr, spec).unwrap().value());
    }

    #[test]
    fn unit_imaginary_kernel_rotates() {
        let mut store = ParamStore::new();
        let conv = ComplexConv2d::new(&mut store, "c", 1, 1, (1, 1), (1, 1), PaddingMode::Same, false, &mut rng());
        store.get_mut(conv.w_real).data_mut()[0] = 0.0;
        store.get_mut(conv.w_imag).data_mut()[0] = 1.0;
        let g = Graph::new();
        let p = store.bind(&g);
        let x = ComplexTensor::constant(&g, &[1, 1, 4, 2], sample(8, 0.4), sample(8, 1.3)).unwrap();
        let y = conv.forward(&p, &x).unwrap();
        let neg_im: Vec<f64> = x.im.value().iter().map(|v| -v).collect();
        assert_eq!(y.re.value(), neg_im);
        assert_eq!(y.im.value(), x.re.value());
    }

    #[test]
    fn unit_deconv_is_identity() {
        let mut store = ParamStore::new();
        let d = ComplexDeconv2d::new(&mut store, "d", 1, 1, (1, 1), (1, 1), PaddingMode::Same, false, &mut rng());
        store.get_mut(d.w_real).data_mut()[0] = 1.0;
        store.get_mut(d.w_imag).data_mut()[0] = 0.0;
        let g = Graph::new();
        let p = store.bind(&g);
        let x = ComplexTensor::constant(&g, &[2, 1, 3, 4], sample(24, 0.2), sample(24, 0.6)).unwrap();
        let y = d.forward(&p, &x).unwrap();
        assert_eq!(y.re.value(), x.re.value());
        assert_eq!(y.im.value(), x.im.value());
    }

    #[test]
    fn deconv_with_zero_imag_is_two_real_deconvolutions() {
        let mut store = ParamStore::new();
        let d = ComplexDeconv2d::new(&mut store, "d", 2, 1, (5, 2), (2, 1), PaddingMode::CausalTime, false, &mut rng());
        store.get_mut(d.w_imag).data_mut().fill(0.0);
        let g = Graph::new();
        let p = store.bind(&g);
        let x = ComplexTensor::constant(&g, &[1, 2, 5, 3], sample(30, 0.5), sample(30, 0.2)).unwrap();
        let y = d.forward(&p, &x).unwrap();
        let spec = Conv2dSpec {
            stride: (2, 1),
            padding: (2, 2, 0, 1),
        };
        assert_eq!(y.re.value(), x.re.conv_transpose2d(&p[d.w_real], spec).unwrap().value());
        assert_eq!(y.im.value(), x.im.conv_transpose2d(&p[d.w_real], spec).unwrap().value());
    }

    #[test]
    fn encoder_decoder_shapes_restore() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let mut f = 129;
        let mut sizes = vec![f];
        let mut convs = Vec::new();
        for (i, (ci, co)) in [(1, 4), (4, 8), (8, 8)].into_iter().enumerate() {
            let c = ComplexConv2d::new(&mut store, &format!("e{i}"), ci, co, (5, 2), (2, 1), PaddingMode::CausalTime, true, &mut r);
            f = c.out_freq(f);
            sizes.push(f);
            convs.push(c);
        }
        assert_eq!(sizes, vec![129, 65, 33, 17]);
        let d = ComplexDeconv2d::new(&mut store, "d", 8, 4, (5, 2), (2, 1), PaddingMode::CausalTime, true, &mut r);
        for w in sizes.windows(2) {
            assert_eq!(d.out_freq(w[1]), w[0]);
        }
        let g = Graph::new();
        let p = store.bind(&g);
        let x = ComplexTensor::constant(&g, &[1, 1, 129, 6], sample(774, 0.1), sample(774, 0.7)).unwrap();
        let mut h = x;
        for c in &convs {
            h = c.forward(&p, &h).unwrap();
        }
        assert_eq!(h.shape(), vec![1, 8, 17, 6]);
        assert_eq!(d.forward(&p, &h).unwrap().shape(), vec![1, 4, 33, 6]);
    }

    #[test]
    fn complex_linearity_without_bias() {
        let mut store = ParamStore::new();
        let c = ComplexConv2d::new(&mut store, "c", 2, 2, (3, 2), (2, 1), PaddingMode::Same, false, &mut rng());
        let d = ComplexDeconv2d::new(&mut store, "d", 2, 2, (3, 2), (2, 1), PaddingMode::Same, false, &mut rng());
        let g = Graph::new();
        let p = store.bind(&g);
        let x = ComplexTensor::constant(&g, &[1, 2, 7, 3], sample(42, 0.3), sample(42, 0.9)).unwrap();
        let alpha = -1.7;
        for layer in 0..2 {
            let f = |x: &ComplexTensor| if layer == 0 { c.forward(&p, x) } else { d.forward(&p, x) };
            let a = f(&x.scale(alpha)).unwrap();
            let b = f(&x).unwrap().scale(alpha);
            for (u, v) in a.re.value().iter().zip(b.re.value()).chain(a.im.value().iter().zip(b.im.value())) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn causal_conv_ignores_future_frames() {
        let mut store = ParamStore::new();
        let c = ComplexConv2d::new(&mut store, "c", 1, 2, (5, 2), (2, 1), PaddingMode::CausalTime, true, &mut rng());
        let d = ComplexDeconv2d::new(&mut store, "d", 2, 1, (5, 2), (2, 1), PaddingMode::CausalTime, true, &mut rng());
        let run = |xr: Vec<f64>| {
            let g = Graph::new();
            let p = store.bind(&g);
            let x = ComplexTensor::constant(&g, &[1, 1, 9, 6], xr, sample(54, 0.4)).unwrap();
            d.forward(&p, &c.forward(&p, &x).unwrap()).unwrap().re.value()
        };
        let a = sample(54, 0.3);
        let mut b = a.clone();
        for f in 0..9 {
            b[f * 6 + 4] += 1.0;
            b[f * 6 + 5] -= 2.0;
        }
        let (ya, yb) = (run(a), run(b));
        for f in 0..9 {
            for t in 0..6 {
                let same = ya[f * 6 + t] == yb[f * 6 + t];
                assert_eq!(same, t < 4, "f {f} t {t}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for padding in [PaddingMode::Same, PaddingMode::CausalTime] {
            let mut store = ParamStore::new();
            let c = ComplexConv2d::new(&mut store, "c", 2, 2, (3, 2), (2, 1), padding, true, &mut rng());
            let d = ComplexDeconv2d::new(&mut store, "d", 2, 1, (3, 2), (2, 1), padding, true, &mut rng());
            let x0 = sample(2 * 2 * 5 * 3 * 2, 0.47);
            let net = |g: &Graph, store: &ParamStore, x: &crate::autodiff::Var| {
                let p = store.bind(g);
                let half = x.numel() / 2;
                let xr = x.slice(0, 0, half)?.reshape(&[2, 2, 5, 3])?;
                let xi = x.slice(0, half, half)?.reshape(&[2, 2, 5, 3])?;
                let h = c.forward(&p, &ComplexTensor::new(xr, xi)?)?;
                let y = d.forward(&p, &h)?;
                Ok(y.re.tanh().add(&y.im.square())?.sum())
            };
            let err = grad_check(|g, x| net(g, &store, x), &[x0.len()], &x0, 1e-5).unwrap();
            assert!(err < 1e-4, "input {err}");
            let errs = grad_check_params(
                &store,
                |g, p| {
                    let x = g.constant(&[x0.len()], x0.clone())?;
                    let half = x0.len() / 2;
                    let xr = x.slice(0, 0, half)?.reshape(&[2, 2, 5, 3])?;
                    let xi = x.slice(0, half, half)?.reshape(&[2, 2, 5, 3])?;
                    let y = d.forward(p, &c.forward(p, &ComplexTensor::new(xr, xi)?)?)?;
                    Ok(y.re.tanh().add(&y.im.square())?.sum())
                },
                1e-5,
            )
            .unwrap();
            assert_eq!(errs.len(), 8);
            for (name, err) in errs {
                assert!(err < 1e-4, "{name}: {err}");
            }
        }
    }
}
