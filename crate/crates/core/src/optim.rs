//! AdamW with decoupled weight decay, linear warmup and global-norm clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{decays, ModelConfig, ModelWeights};
use crate::numeric::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Peak rate held after warmup.
    Constant,
    /// Cosine decay from the peak to 10% of it at `total_steps`.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainHyperparams {
    pub peak_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub clip_norm: f64,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub total_steps: u64,
}

impl TrainHyperparams {
    /// Desk defaults: betas (0.9, 0.999), clip 1, peak 1e-3, no decay.
    pub fn desk() -> Self {
        Self {
            peak_lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            warmup_steps: 2000,
            clip_norm: 1.0,
            schedule: Schedule::Constant,
            batch_size: 32,
            total_steps: 40_000,
        }
    }

    /// The large-model settings as published, including the 0.1 peak rate.
    pub fn paper() -> Self {
        Self {
            peak_lr: 0.1,
            batch_size: 512,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("betas must lie in [0, 1)");
        }
        if !(self.peak_lr > 0.0) {
            return fail("peak_lr must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return fail("clip_norm must be positive");
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 {
            return fail("eps must be positive and weight_decay non-negative");
        }
        if self.batch_size == 0 || self.total_steps == 0 {
            return fail("batch_size and total_steps must be positive");
        }
        Ok(())
    }
}

/// Learning rate for update number `step`.
pub fn lr_at(step: u64, hp: &TrainHyperparams) -> f64 {
    if step < hp.warmup_steps {
        return hp.peak_lr * step as f64 / hp.warmup_steps as f64;
    }
    match hp.schedule {
        Schedule::Constant => hp.peak_lr,
        Schedule::Cosine => {
            let span = hp.total_steps.saturating_sub(hp.warmup_steps).max(1);
            let progress = ((step - hp.warmup_steps) as f64 / span as f64).min(1.0);
            let floor = 0.1 * hp.peak_lr;
            floor + (hp.peak_lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

/// Scales every gradient by `clip / g` when the global L2 norm `g` exceeds
/// `clip`. Returns `g` (before clipping).
pub fn clip_global_norm<T: Real>(grads: &mut ModelWeights<T>, clip: f64) -> Result<f64> {
    if !grads.all_finite() {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    let norm = grads.l2_norm();
    if !norm.is_finite() {
        return Err(Error::Numerical(format!("gradient norm is {norm}")));
    }
    if norm > clip {
        let scale = T::lit(clip / norm);
        for (_, t) in grads.named_mut() {
            for v in t.data_mut() {
                *v *= scale;
            }
        }
    }
    Ok(norm)
}

/// First and second moments plus the number of updates applied so far.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    pub m: ModelWeights<T>,
    pub v: ModelWeights<T>,
    pub step: u64,
}

impl<T: Real> OptimState<T> {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            m: ModelWeights::zeros(cfg),
            v: ModelWeights::zeros(cfg),
            step: 0,
        }
    }
}

/// One AdamW update of a single tensor at update number `t` (1-based):
/// `w ← w − lr·(m̂/(√v̂ + eps) + λ·w)` with bias-corrected moments.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update<T: Real>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: f64,
    hp: &TrainHyperparams,
    decay: bool,
) {
    let b1 = T::lit(hp.beta1);
    let b2 = T::lit(hp.beta2);
    let one = T::one();
    let bc1 = T::lit(1.0 - hp.beta1.powi(t as i32));
    let bc2 = T::lit(1.0 - hp.beta2.powi(t as i32));
    let lr = T::lit(lr);
    let eps = T::lit(hp.eps);
    let wd = if decay { T::lit(hp.weight_decay) } else { T::zero() };
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * param[i]);
    }
}

/// Applies one update to every tensor of `w` using `lr_at(state.step + 1)`.
/// Norm gains and the embedding are not decayed.
pub fn adamw_step<T: Real>(
    w: &mut ModelWeights<T>,
    grads: &ModelWeights<T>,
    state: &mut OptimState<T>,
    hp: &TrainHyperparams,
) -> Result<()> {
    let t = state.step + 1;
    let lr = lr_at(t, hp);
    let OptimState { m, v, .. } = state;
    for (((name, p), (_, g)), ((_, mt), (_, vt))) in w
        .named_mut()
        .into_iter()
        .zip(grads.named())
        .zip(m.named_mut().into_iter().zip(v.named_mut()))
    {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!("gradient for {name} has the wrong shape")));
        }
        adamw_update(p.data_mut(), g.data(), mt.data_mut(), vt.data_mut(), t, lr, hp, decays(&name));
    }
    if !w.all_finite() {
        return Err(Error::Numerical(format!("update {t} produced non-finite weights")));
    }
    state.step = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp() -> TrainHyperparams {
        TrainHyperparams {
            peak_lr: 0.1,
            weight_decay: 0.1,
            warmup_steps: 100,
            ..TrainHyperparams::desk()
        }
    }

    #[test]
    fn warmup_ramp() {
        let hp = hp();
        assert_eq!(lr_at(0, &hp), 0.0);
        assert!((lr_at(50, &hp) - 0.05).abs() < 1e-15);
        assert_eq!(lr_at(100, &hp), 0.1);
        assert_eq!(lr_at(10_000, &hp), 0.1);
        // continuity at the boundary
        assert!((lr_at(99, &hp) - lr_at(100, &hp)).abs() <= 0.1 / 100.0 + 1e-15);
    }

    #[test]
    fn cosine_ends_at_ten_percent() {
        let hp = TrainHyperparams {
            schedule: Schedule::Cosine,
            total_steps: 1100,
            ..hp()
        };
        assert!((lr_at(100, &hp) - 0.1).abs() < 1e-15);
        assert!((lr_at(1100, &hp) - 0.01).abs() < 1e-15);
        assert!((lr_at(5000, &hp) - 0.01).abs() < 1e-15);
        assert!(lr_at(600, &hp) < 0.1 && lr_at(600, &hp) > 0.01);
    }

    #[test]
    fn scalar_step_matches_hand_value() {
        let mut w = [1.0f64];
        let (mut m, mut v) = ([0.0], [0.0]);
        adamw_update(&mut w, &[0.5], &mut m, &mut v, 1, 0.1, &hp(), true);
        // m̂ = 0.5, v̂ = 0.25: w' = 1 − 0.1·(0.5/(0.5+1e-8) + 0.1)
        let want = 1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.1);
        assert!((w[0] - want).abs() < 1e-15);
        assert!((w[0] - 0.89).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let hp = TrainHyperparams {
            weight_decay: 0.0,
            ..hp()
        };
        let mut w = [0.7f64, -3.0];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        adamw_update(&mut w, &[0.0, 0.0], &mut m, &mut v, 1, 0.1, &hp, true);
        assert_eq!(w, [0.7, -3.0]);
    }

    #[test]
    fn zero_gradient_pure_decay() {
        let mut w = [2.0f64];
        let (mut m, mut v) = ([0.0], [0.0]);
        adamw_update(&mut w, &[0.0], &mut m, &mut v, 1, 0.1, &hp(), true);
        assert_eq!(w[0], 2.0 - 0.1 * 0.1 * 2.0);
    }

    #[test]
    fn clipping() {
        let cfg = ModelConfig {
            n_layers: 1,
            n_heads: 1,
            d_model: 2,
            d_ff: 2,
            vocab_size: 2,
            ctx_len: 2,
            ..ModelConfig::desk()
        };
        let mut g = ModelWeights::<f64>::zeros(&cfg);
        g.final_norm.data_mut().copy_from_slice(&[0.3, 0.4]);
        assert_eq!(clip_global_norm(&mut g, 1.0).unwrap(), 0.5);
        assert_eq!(g.final_norm.data(), &[0.3, 0.4]);

        g.final_norm.data_mut().copy_from_slice(&[1.2, 1.6]);
        assert_eq!(clip_global_norm(&mut g, 1.0).unwrap(), 2.0);
        assert_eq!(g.final_norm.data(), &[0.6, 0.8]);

        g.embed.data_mut()[0] = f64::INFINITY;
        assert!(clip_global_norm(&mut g, 1.0).is_err());
    }
}
