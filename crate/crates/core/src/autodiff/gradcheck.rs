use super::graph::{Graph, Var};
use super::params::{Bound, ParamStore};
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences.
///
/// `f` builds the function on a fresh graph from a leaf holding `x`. The
/// result is `max_i |a_i − n_i| / max(1e-8, |a_i| + |n_i|)`.
pub fn grad_check<F>(f: F, shape: &[usize], x: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&Graph, &Var) -> Result<Var>,
{
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("grad_check input is not finite".into()));
    }
    let eval = |point: &[f64]| -> Result<f64> {
        let g = Graph::new();
        let v = g.constant(shape, point.to_vec())?;
        let y = f(&g, &v)?;
        if y.numel() != 1 {
            return Err(Error::Contract("grad_check function must be scalar".into()));
        }
        let out = y.item();
        if !out.is_finite() {
            return Err(Error::Numeric("non-finite function value".into()));
        }
        Ok(out)
    };

    let g = Graph::new();
    let leaf = g.variable(shape, x.to_vec())?;
    let y = f(&g, &leaf)?;
    let grads = y.backward()?;
    let zeros = vec![0.0; x.len()];
    let analytic = grads.get(&leaf).unwrap_or(&zeros).to_vec();
    if analytic.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite analytic gradient".into()));
    }

    let mut worst: f64 = 0.0;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = eval(&probe)?;
        probe[i] = x[i] - step;
        let down = eval(&probe)?;
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * step);
        let denom = (analytic[i].abs() + numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}

/// Runs [`grad_check`] for every learnable tensor of `store`, returning the
/// worst error per tensor name.
pub fn grad_check_params<F>(store: &ParamStore, f: F, step: f64) -> Result<Vec<(String, f64)>>
where
    F: Fn(&Graph, &Bound) -> Result<Var>,
{
    let mut out = Vec::new();
    for (i, (name, t)) in store.iter().enumerate() {
        let id = store.id_at(i);
        if !store.is_learnable(id) {
            continue;
        }
        let shape = t.shape().to_vec();
        let err = grad_check(
            |g, w| {
                let bound = store.bind_with(g, id, &w.reshape(&shape)?);
                f(g, &bound)
            },
            &[t.numel()],
            t.data(),
            step,
        )?;
        out.push((name.to_string(), err));
    }
    Ok(out)
}
