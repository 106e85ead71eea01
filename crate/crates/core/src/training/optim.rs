//! AdamW with decoupled weight decay, learning-rate schedules and gradient
//! clipping.

use serde::{Deserialize, Serialize};
use sl_tensor::{Scalar, Tensor, TensorError};

use crate::error::{Result, SlError};

fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}
fn d_weight_decay() -> f64 {
    0.01
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamW {
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default = "d_weight_decay")]
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: d_beta1(),
            beta2: d_beta2(),
            eps: d_eps(),
            weight_decay: d_weight_decay(),
        }
    }
}

impl AdamW {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite();
        if !ok {
            return Err(SlError::config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// First and second moments per parameter tensor, kept in f64.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// One AdamW update:
/// `p ← p − lr·wd·p`, then `p ← p − lr·m̂ / (sqrt(v̂) + eps)` with
/// bias-corrected moments.
pub fn optimizer_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState,
    cfg: &AdamW,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(TensorError::Shape(format!("{} params but {} grads", params.len(), grads.len())).into());
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        state.v = state.m.clone();
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.dims() != g.dims() {
            return Err(TensorError::Shape(format!("param {k}: {:?} vs grad {:?}", p.dims(), g.dims())).into());
        }
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (i, (w, gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gi = gi.as_f64();
            let mut x = w.as_f64();
            x -= lr * cfg.weight_decay * x;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            x -= lr * mhat / (vhat.sqrt() + cfg.eps);
            *w = T::from_f64(x);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scheduler {
    CosineWarmRestarts { t0: usize, t_mult: usize, eta_min: f64 },
    StepDecay { step: usize, gamma: f64 },
    Constant,
}

impl Default for Scheduler {
    fn default() -> Self {
        Self::CosineWarmRestarts {
            t0: 10,
            t_mult: 2,
            eta_min: 0.0,
        }
    }
}

/// `η_min + ½(η₀ − η_min)(1 + cos(π·t_cur/T_i))`.
pub fn cosine_lr(base: f64, eta_min: f64, t_cur: f64, t_i: f64) -> f64 {
    eta_min + 0.5 * (base - eta_min) * (1.0 + (std::f64::consts::PI * t_cur / t_i).cos())
}

impl Scheduler {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::CosineWarmRestarts { t0, t_mult, eta_min } => t0 >= 1 && t_mult >= 1 && eta_min >= 0.0,
            Self::StepDecay { step, gamma } => step >= 1 && gamma > 0.0 && gamma.is_finite(),
            Self::Constant => true,
        };
        if !ok {
            return Err(SlError::config(format!("invalid scheduler {self:?}")));
        }
        Ok(())
    }

    /// Learning rate for 0-based `epoch`.
    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            Self::CosineWarmRestarts { t0, t_mult, eta_min } => {
                let (mut t_cur, mut t_i) = (epoch, t0);
                while t_cur >= t_i {
                    t_cur -= t_i;
                    t_i *= t_mult;
                }
                cosine_lr(base, eta_min, t_cur as f64, t_i as f64)
            }
            Self::StepDecay { step, gamma } => base * gamma.powi((epoch / step) as i32),
            Self::Constant => base,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    #[default]
    Norm,
    Value,
}

pub fn global_norm<T: Scalar>(grads: &[Tensor<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global L2 norm is at most `max_norm` and
/// returns the norm before clipping. The scale carries a 1e-6 relative
/// margin so rounding of the scaled values cannot push the norm back over.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = T::from_f64(max_norm / (norm * (1.0 + 1e-6)));
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Clamps every gradient element to `[-limit, limit]`.
pub fn clip_grad_value<T: Scalar>(grads: &mut [Tensor<T>], limit: f64) {
    let (lo, hi) = (T::from_f64(-limit), T::from_f64(limit));
    for g in grads.iter_mut() {
        g.data_mut().iter_mut().for_each(|v| *v = v.max(lo).min(hi));
    }
}
