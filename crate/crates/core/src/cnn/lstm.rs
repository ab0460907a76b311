use rand::Rng;

use super::{init_bound, ComplexTensor};
use crate::autodiff::{Bound, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

/// Single-direction LSTM with gate order (input, forget, cell, output).
#[derive(Clone, Debug)]
pub struct Lstm {
    /// `in × 4H`
    pub w_ih: ParamId,
    /// `H × 4H`
    pub w_hh: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, prefix: &str, inputs: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let k = init_bound(hidden);
        Self {
            w_ih: store.add_uniform(format!("{prefix}.w_ih"), &[inputs, 4 * hidden], k, rng),
            w_hh: store.add_uniform(format!("{prefix}.w_hh"), &[hidden, 4 * hidden], k, rng),
            b: store.add_uniform(format!("{prefix}.b"), &[4 * hidden], k, rng),
            inputs,
            hidden,
        }
    }

    pub fn param_count(&self) -> usize {
        4 * self.hidden * (self.inputs + self.hidden + 1)
    }

    /// Runs over a time-major `T×N×in` sequence from zero state, returning
    /// `T×N×H`. With `reverse` the sequence is consumed back to front and
    /// the outputs are stored at their original time index.
    pub fn forward(&self, p: &Bound, x: &Var, reverse: bool) -> Result<Var> {
        let s = x.shape();
        if s.len() != 3 || s[2] != self.inputs || s[0] == 0 {
            return Err(Error::shape("lstm", format!("input {s:?}, expected T×N×{}", self.inputs)));
        }
        let (t_len, n, h) = (s[0], s[1], self.hidden);
        let g = x.graph();
        let proj = x
            .reshape(&[t_len * n, self.inputs])?
            .matmul(&p[self.w_ih])?
            .add(&p[self.b])?;
        let w_hh = &p[self.w_hh];
        let mut hs: Vec<Option<Var>> = vec![None; t_len];
        let mut state: Option<(Var, Var)> = None;
        for step in 0..t_len {
            let t = if reverse { t_len - 1 - step } else { step };
            let mut gates = proj.slice(0, t * n, n)?;
            if let Some((h_prev, _)) = &state {
                gates = gates.add(&h_prev.matmul(w_hh)?)?;
            }
            let next = self.cell(&gates, state.as_ref())?;
            hs[t] = Some(next.0.clone());
            state = Some(next);
        }
        let hs: Vec<Var> = hs.into_iter().map(|v| v.expect("every step visited")).collect();
        g.concat(&hs, 0)?.reshape(&[t_len, n, h])
    }

    /// One step on `N×in` input from an optional `(h, c)` state.
    pub fn step(&self, p: &Bound, x: &Var, state: Option<&(Var, Var)>) -> Result<(Var, Var)> {
        let s = x.shape();
        if s.len() != 2 || s[1] != self.inputs {
            return Err(Error::shape("lstm", format!("step input {s:?}, expected N×{}", self.inputs)));
        }
        let mut gates = x.matmul(&p[self.w_ih])?.add(&p[self.b])?;
        if let Some((h_prev, _)) = state {
            gates = gates.add(&h_prev.matmul(&p[self.w_hh])?)?;
        }
        self.cell(&gates, state)
    }

    fn cell(&self, gates: &Var, state: Option<&(Var, Var)>) -> Result<(Var, Var)> {
        let h = self.hidden;
        let i = gates.slice(1, 0, h)?.sigmoid();
        let f = gates.slice(1, h, h)?.sigmoid();
        let c_hat = gates.slice(1, 2 * h, h)?.tanh();
        let o = gates.slice(1, 3 * h, h)?.sigmoid();
        let mut c = i.mul(&c_hat)?;
        if let Some((_, c_prev)) = state {
            c = c.add(&f.mul(c_prev)?)?;
        }
        Ok((o.mul(&c.tanh())?, c))
    }
}

/// Stacked complex LSTM. Each layer holds real LSTMs `L_r`, `L_i` (one pair
/// per direction) and computes `(L_r(x_r) − L_i(x_i)) + j(L_r(x_i) +
/// L_i(x_r))`; bidirectional layers concatenate both directions.
#[derive(Clone, Debug)]
pub struct ComplexLstm {
    /// Per layer, per direction: `(L_r, L_i)`.
    pub layers: Vec<Vec<(Lstm, Lstm)>>,
    pub bidirectional: bool,
    pub hidden: usize,
}

impl ComplexLstm {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        inputs: usize,
        hidden: usize,
        layers: usize,
        bidirectional: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let dirs = if bidirectional { 2 } else { 1 };
        let mut out = Vec::with_capacity(layers);
        let mut width = inputs;
        for l in 0..layers {
            let mut pairs = Vec::with_capacity(dirs);
            for d in 0..dirs {
                let name = if d == 0 { "fwd" } else { "bwd" };
                let lr = Lstm::new(store, &format!("{prefix}.{l}.{name}.real"), width, hidden, rng);
                let li = Lstm::new(store, &format!("{prefix}.{l}.{name}.imag"), width, hidden, rng);
                pairs.push((lr, li));
            }
            out.push(pairs);
            width = hidden * dirs;
        }
        Self {
            layers: out,
            bidirectional,
            hidden,
        }
    }

    pub fn output_size(&self) -> usize {
        self.hidden * if self.bidirectional { 2 } else { 1 }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flatten()
            .map(|(a, b)| a.param_count() + b.param_count())
            .sum()
    }

    /// `x` parts are time-major `T×N×in`.
    pub fn forward(&self, p: &Bound, x: &ComplexTensor) -> Result<ComplexTensor> {
        let mut cur = x.clone();
        for pairs in &self.layers {
            let n = cur.shape()[1];
            // real and imaginary inputs share one pass per real LSTM
            let both = cur.stacked(1)?;
            let mut dirs = Vec::with_capacity(pairs.len());
            for (d, (lr, li)) in pairs.iter().enumerate() {
                let reverse = d == 1;
                let r = lr.forward(p, &both, reverse)?;
                let i = li.forward(p, &both, reverse)?;
                let (r_of_re, r_of_im) = (r.slice(1, 0, n)?, r.slice(1, n, n)?);
                let (i_of_re, i_of_im) = (i.slice(1, 0, n)?, i.slice(1, n, n)?);
                dirs.push(ComplexTensor::new(r_of_re.sub(&i_of_im)?, r_of_im.add(&i_of_re)?)?);
            }
            cur = if dirs.len() == 1 {
                dirs.pop().expect("one direction")
            } else {
                ComplexTensor::concat(&dirs, 2)?
            };
        }
        Ok(cur)
    }
}
