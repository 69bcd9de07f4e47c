//! Per-step rewards: adversarial style term, imitation kernels, energy penalty.

use serde::{Deserialize, Serialize};

use crate::error::{GripError, Result};
use crate::rotmath::{geodesic_angle, Vec3};
use crate::statediff::SimState;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub w_amp: f64,
    pub w_imit: f64,
    pub w_p: f64,
    pub w_theta: f64,
    pub w_v: f64,
    pub w_omega: f64,
    pub k_p: f64,
    pub k_theta: f64,
    pub k_v: f64,
    pub k_omega: f64,
    /// Power coefficient of the energy penalty.
    pub alpha: f64,
    /// Frames at the start of a rollout with no energy penalty.
    pub energy_warmup: usize,
    pub lambda_gp: f64,
    /// Discriminator window (frames).
    pub window: usize,
    pub gamma: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            w_amp: 0.5,
            w_imit: 0.5,
            w_p: 0.5,
            w_theta: 0.3,
            w_v: 0.1,
            w_omega: 0.1,
            k_p: 100.0,
            k_theta: 100.0,
            k_v: 10.0,
            k_omega: 0.1,
            alpha: 0.0005,
            energy_warmup: 3,
            lambda_gp: 5.0,
            window: 10,
            gamma: 0.99,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("reward.w_amp", self.w_amp),
            ("reward.w_imit", self.w_imit),
            ("reward.w_p", self.w_p),
            ("reward.w_theta", self.w_theta),
            ("reward.w_v", self.w_v),
            ("reward.w_omega", self.w_omega),
            ("reward.k_p", self.k_p),
            ("reward.k_theta", self.k_theta),
            ("reward.k_v", self.k_v),
            ("reward.k_omega", self.k_omega),
            ("reward.alpha", self.alpha),
            ("reward.lambda_gp", self.lambda_gp),
        ];
        for (key, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(GripError::InvalidConfig { key: key.into(), reason: format!("must be finite and >= 0, got {v}") });
            }
        }
        if self.window == 0 {
            return Err(GripError::InvalidConfig { key: "reward.window".into(), reason: "must be at least 1".into() });
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(GripError::InvalidConfig { key: "reward.gamma".into(), reason: "must lie in (0, 1]".into() });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub r_amp: f64,
    pub r_imit: f64,
    pub r_energy: f64,
    pub total: f64,
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `−log(1 − σ(logit))`, which is `softplus(logit)`.
pub fn amp_reward(logit: f64) -> f64 {
    softplus(logit)
}

/// Frobenius norm of per-joint vector differences.
fn frobenius(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>().sqrt()
}

pub fn imitation_reward(reference: &SimState, sim: &SimState, cfg: &RewardConfig) -> Result<f64> {
    let n = reference.joint_pos.len();
    for len in [reference.joint_rot.len(), reference.joint_linvel.len(), reference.joint_angvel.len()]
        .into_iter()
        .chain([sim.joint_pos.len(), sim.joint_rot.len(), sim.joint_linvel.len(), sim.joint_angvel.len()])
    {
        if len != n {
            return Err(GripError::LengthMismatch(len, n));
        }
    }
    let dp = frobenius(&reference.joint_pos, &sim.joint_pos);
    let dtheta = reference
        .joint_rot
        .iter()
        .zip(&sim.joint_rot)
        .map(|(a, b)| geodesic_angle(a, b).powi(2))
        .sum::<f64>()
        .sqrt();
    let dv = frobenius(&reference.joint_linvel, &sim.joint_linvel);
    let dw = frobenius(&reference.joint_angvel, &sim.joint_angvel);
    Ok(cfg.w_p * (-cfg.k_p * dp).exp()
        + cfg.w_theta * (-cfg.k_theta * dtheta).exp()
        + cfg.w_v * (-cfg.k_v * dv).exp()
        + cfg.w_omega * (-cfg.k_omega * dw).exp())
}

/// `−α·Σ|τ_i·ω_i|` over every joint axis, zero during the warm-up frames.
pub fn energy_penalty(torques: &[Vec3], angvel: &[Vec3], cfg: &RewardConfig, frame_index: usize) -> Result<f64> {
    if torques.len() != angvel.len() {
        return Err(GripError::LengthMismatch(torques.len(), angvel.len()));
    }
    if frame_index < cfg.energy_warmup {
        return Ok(0.0);
    }
    let power: f64 = torques.iter().zip(angvel).map(|(t, w)| t.component_mul(w).abs().sum()).sum();
    Ok(-cfg.alpha * power)
}

pub fn total_reward(r_amp: f64, r_imit: f64, r_energy: f64, cfg: &RewardConfig) -> RewardTerms {
    RewardTerms { r_amp, r_imit, r_energy, total: cfg.w_amp * r_amp + cfg.w_imit * r_imit + r_energy }
}

/// Minimized discriminator objective:
/// `mean softplus(fake) + mean softplus(−real) + λ_gp · mean ‖∇D(real)‖²`,
/// i.e. the negated log-likelihood `−[log(1−σ(fake)) + log σ(real)]` plus the penalty.
pub fn discriminator_loss(real_logits: &[f64], fake_logits: &[f64], grad_sq_norms_real: &[f64], cfg: &RewardConfig) -> Result<f64> {
    if real_logits.is_empty() || fake_logits.is_empty() {
        return Err(GripError::EmptySet);
    }
    if grad_sq_norms_real.len() != real_logits.len() {
        return Err(GripError::LengthMismatch(grad_sq_norms_real.len(), real_logits.len()));
    }
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&x| f(x)).sum::<f64>() / v.len() as f64;
    Ok(mean(fake_logits, &softplus) + mean(real_logits, &|x| softplus(-x)) + cfg.lambda_gp * mean(grad_sq_norms_real, &|x| x))
}
