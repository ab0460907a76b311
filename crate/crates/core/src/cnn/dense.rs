use rand::Rng;

use super::{block, init_bound, ComplexTensor};
use crate::autodiff::{Bound, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

/// Affine map `x·W + b` on the last axis of an `N×in` input.
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, prefix: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let k = init_bound(inputs);
        Self {
            w: store.add_uniform(format!("{prefix}.w"), &[inputs, outputs], k, rng),
            b: store.add_uniform(format!("{prefix}.b"), &[outputs], k, rng),
            inputs,
            outputs,
        }
    }

    pub fn param_count(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }

    pub fn forward(&self, p: &Bound, x: &Var) -> Result<Var> {
        x.matmul(&p[self.w])?.add(&p[self.b])
    }
}

/// Complex affine map on the last axis of `N×in` complex inputs.
#[derive(Clone, Debug)]
pub struct ComplexDense {
    pub w_real: ParamId,
    pub w_imag: ParamId,
    pub b_real: ParamId,
    pub b_imag: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl ComplexDense {
    pub fn new(store: &mut ParamStore, prefix: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let k = init_bound(inputs);
        Self {
            w_real: store.add_uniform(format!("{prefix}.w_real"), &[inputs, outputs], k, rng),
            w_imag: store.add_uniform(format!("{prefix}.w_imag"), &[inputs, outputs], k, rng),
            b_real: store.add_uniform(format!("{prefix}.b_real"), &[outputs], k, rng),
            b_imag: store.add_uniform(format!("{prefix}.b_imag"), &[outputs], k, rng),
            inputs,
            outputs,
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.outputs * (self.inputs + 1)
    }

    pub fn forward(&self, p: &Bound, x: &ComplexTensor) -> Result<ComplexTensor> {
        let s = x.shape();
        if s.len() != 2 || s[1] != self.inputs {
            return Err(Error::shape("complex_dense", format!("input {s:?}, expected N×{}", self.inputs)));
        }
        let g = x.graph();
        let (wr, wi) = (&p[self.w_real], &p[self.w_imag]);
        // [xr, xi] · [[Wr, Wi], [−Wi, Wr]] = [xr·Wr − xi·Wi, xr·Wi + xi·Wr]
        let w = block(g, wr, wi, &wi.neg(), wr, 0, 1)?;
        let b = g.concat(&[p[self.b_real].clone(), p[self.b_imag].clone()], 0)?;
        let y = x.stacked(1)?.matmul(&w)?.add(&b)?;
        ComplexTensor::unstack(&y, 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check_params, Graph};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn complex_dense_matches_complex_arithmetic() {
        let mut store = ParamStore::new();
        let d = ComplexDense::new(&mut store, "d", 3, 2, &mut ChaCha8Rng::seed_from_u64(1));
        let g = Graph::new();
        let p = store.bind(&g);
        let xr = [0.5, -1.0, 2.0];
        let xi = [1.5, 0.25, -0.75];
        let x = ComplexTensor::constant(&g, &[1, 3], xr.to_vec(), xi.to_vec()).unwrap();
        let y = d.forward(&p, &x).unwrap();
        let (wr, wi) = (store.get(d.w_real).data(), store.get(d.w_imag).data());
        for o in 0..2 {
            let (mut ar, mut ai) = (store.get(d.b_real).data()[o], store.get(d.b_imag).data()[o]);
            for i in 0..3 {
                ar += xr[i] * wr[i * 2 + o] - xi[i] * wi[i * 2 + o];
                ai += xr[i] * wi[i * 2 + o] + xi[i] * wr[i * 2 + o];
            }
            assert!((y.re.value()[o] - ar).abs() < 1e-12);
            assert!((y.im.value()[o] - ai).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let d = Dense::new(&mut store, "r", 3, 4, &mut rng);
        let c = ComplexDense::new(&mut store, "c", 4, 2, &mut rng);
        let errs = grad_check_params(
            &store,
            |g, p| {
                let x = g.constant(&[2, 3], vec![0.1, -0.4, 0.9, 1.2, 0.3, -0.8])?;
                let h = d.forward(p, &x)?.tanh();
                let z = c.forward(p, &ComplexTensor::new(h.clone(), h.scale(-0.5))?)?;
                Ok(z.re.square().add(&z.im.sigmoid())?.sum())
            },
            1e-5,
        )
        .unwrap();
        assert_eq!(errs.len(), 6);
        for (name, err) in errs {
            assert!(err < 1e-4, "{name}: {err}");
        }
    }
}
