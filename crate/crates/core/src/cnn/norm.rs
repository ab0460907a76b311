use super::ComplexTensor;
use crate::autodiff::{Bound, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

/// Regularizer added to the covariance diagonal.
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// New value for a non-learnable buffer, produced by a training-mode pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BufferUpdate {
    pub id: ParamId,
    pub value: Vec<f64>,
}

impl BufferUpdate {
    pub fn apply(updates: &[BufferUpdate], store: &mut ParamStore) {
        for u in updates {
            let t = store.get_mut(u.id);
            t.data_mut().copy_from_slice(&u.value);
            t.quantize_f32();
        }
    }
}

/// Complex batch normalization with full 2×2 whitening per channel.
///
/// The centred pair `(x_r, x_i)` is multiplied by the inverse square root of
/// its covariance `V`, then by the symmetric `γ = [[γ_rr, γ_ri], [γ_ri,
/// γ_ii]]`, and shifted by `β`.
#[derive(Clone, Debug)]
pub struct ComplexBatchNorm {
    pub channels: usize,
    pub gamma_rr: ParamId,
    pub gamma_ri: ParamId,
    pub gamma_ii: ParamId,
    pub beta_real: ParamId,
    pub beta_imag: ParamId,
    pub running_mean_real: ParamId,
    pub running_mean_imag: ParamId,
    pub running_vrr: ParamId,
    pub running_vri: ParamId,
    pub running_vii: ParamId,
}

struct Stats {
    mr: Var,
    mi: Var,
    vrr: Var,
    vri: Var,
    vii: Var,
}

impl ComplexBatchNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Self {
        let c = [channels];
        let g = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            channels,
            gamma_rr: store.add_constant(format!("{prefix}.gamma_rr"), &c, g, true),
            gamma_ri: store.add_constant(format!("{prefix}.gamma_ri"), &c, 0.0, true),
            gamma_ii: store.add_constant(format!("{prefix}.gamma_ii"), &c, g, true),
            beta_real: store.add_constant(format!("{prefix}.beta_real"), &c, 0.0, true),
            beta_imag: store.add_constant(format!("{prefix}.beta_imag"), &c, 0.0, true),
            running_mean_real: store.add_constant(format!("{prefix}.running_mean_real"), &c, 0.0, false),
            running_mean_imag: store.add_constant(format!("{prefix}.running_mean_imag"), &c, 0.0, false),
            running_vrr: store.add_constant(format!("{prefix}.running_vrr"), &c, 1.0, false),
            running_vri: store.add_constant(format!("{prefix}.running_vri"), &c, 0.0, false),
            running_vii: store.add_constant(format!("{prefix}.running_vii"), &c, 1.0, false),
        }
    }

    pub fn param_count(&self) -> usize {
        5 * self.channels
    }

    fn per_channel(&self, v: &Var) -> Result<Var> {
        v.reshape(&[1, self.channels, 1, 1])
    }

    fn channel_mean(x: &Var) -> Result<Var> {
        x.mean_axis(0, true)?.mean_axis(2, true)?.mean_axis(3, true)
    }

    /// In training mode statistics come from the batch and running-average
    /// updates are appended to `updates`; otherwise the running buffers are
    /// used.
    pub fn forward(
        &self,
        p: &Bound,
        x: &ComplexTensor,
        training: bool,
        updates: &mut Vec<BufferUpdate>,
    ) -> Result<ComplexTensor> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::shape(
                "complex_batch_norm",
                format!("input {s:?}, expected B×{}×F×T", self.channels),
            ));
        }
        let stats = if training {
            if s[0] < 2 {
                return Err(Error::Contract(format!(
                    "complex batch norm needs batch ≥ 2 in training mode, got {}",
                    s[0]
                )));
            }
            let mr = Self::channel_mean(&x.re)?;
            let mi = Self::channel_mean(&x.im)?;
            let cr = x.re.sub(&mr)?;
            let ci = x.im.sub(&mi)?;
            let stats = Stats {
                vrr: Self::channel_mean(&cr.square())?,
                vri: Self::channel_mean(&cr.mul(&ci)?)?,
                vii: Self::channel_mean(&ci.square())?,
                mr,
                mi,
            };
            let pairs = [
                (self.running_mean_real, &stats.mr),
                (self.running_mean_imag, &stats.mi),
                (self.running_vrr, &stats.vrr),
                (self.running_vri, &stats.vri),
                (self.running_vii, &stats.vii),
            ];
            for (id, batch) in pairs {
                let old = p[id].value();
                let value = old
                    .iter()
                    .zip(batch.value())
                    .map(|(o, b)| (1.0 - BN_MOMENTUM) * o + BN_MOMENTUM * b)
                    .collect();
                updates.push(BufferUpdate { id, value });
            }
            stats
        } else {
            Stats {
                mr: self.per_channel(&p[self.running_mean_real])?,
                mi: self.per_channel(&p[self.running_mean_imag])?,
                vrr: self.per_channel(&p[self.running_vrr])?,
                vri: self.per_channel(&p[self.running_vri])?,
                vii: self.per_channel(&p[self.running_vii])?,
            }
        };
        let cr = x.re.sub(&stats.mr)?;
        let ci = x.im.sub(&stats.mi)?;
        let vrr = stats.vrr.add_scalar(BN_EPS);
        let vii = stats.vii.add_scalar(BN_EPS);
        let vri = stats.vri;
        // closed-form inverse square root of a 2×2 SPD matrix
        let det = vrr.mul(&vii)?.sub(&vri.square())?;
        let sq = det.sqrt();
        let t = vrr.add(&vii)?.add(&sq.scale(2.0))?.sqrt();
        let inv = sq.mul(&t)?.powf(-1.0);
        let wrr = vii.add(&sq)?.mul(&inv)?;
        let wii = vrr.add(&sq)?.mul(&inv)?;
        let wri = vri.neg().mul(&inv)?;
        let nr = wrr.mul(&cr)?.add(&wri.mul(&ci)?)?;
        let ni = wri.mul(&cr)?.add(&wii.mul(&ci)?)?;

        let grr = self.per_channel(&p[self.gamma_rr])?;
        let gri = self.per_channel(&p[self.gamma_ri])?;
        let gii = self.per_channel(&p[self.gamma_ii])?;
        let br = self.per_channel(&p[self.beta_real])?;
        let bi = self.per_channel(&p[self.beta_imag])?;
        let yr = grr.mul(&nr)?.add(&gri.mul(&ni)?)?.add(&br)?;
        let yi = gri.mul(&nr)?.add(&gii.mul(&ni)?)?.add(&bi)?;
        ComplexTensor::new(yr, yi)
    }
}
