//! Fall detection, recovery from the kinematic history, early termination.

use serde::{Deserialize, Serialize};

use super::model::GenState;
use super::sim::Simulator;
use crate::error::{GripError, Result};
use crate::kinnet::{HistoryBuffer, KinematicEstimate};
use crate::rotmath::Vec3;
use crate::skeleton::{locals_from_globals, KEY_ROOT, PARENTS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FallRecoveryConfig {
    /// Root height below which a fall is possible (m).
    pub tau_z: f64,
    /// Discriminator probability below which a fall is possible.
    pub tau_rho: f64,
    /// Frames of kinematic history replayed on recovery.
    pub buffer_len: usize,
    /// Per-joint position error that ends a training episode (m).
    pub tau_e: f64,
}

impl Default for FallRecoveryConfig {
    fn default() -> Self {
        FallRecoveryConfig { tau_z: 0.30, tau_rho: 0.7, buffer_len: 100, tau_e: 0.25 }
    }
}

impl FallRecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| Err(GripError::InvalidConfig { key: key.into(), reason: reason.into() });
        if !(self.tau_z > 0.0) {
            return bad("fall.tau_z", "must be positive");
        }
        if !(self.tau_rho > 0.0 && self.tau_rho < 1.0) {
            return bad("fall.tau_rho", "must lie in (0, 1)");
        }
        if self.buffer_len == 0 {
            return bad("fall.buffer_len", "must be positive");
        }
        if !(self.tau_e > 0.0) {
            return bad("fall.tau_e", "must be positive");
        }
        Ok(())
    }
}

pub fn detect_fall(root_height: f64, disc_prob: f64, cfg: &FallRecoveryConfig) -> bool {
    root_height < cfg.tau_z && disc_prob < cfg.tau_rho
}

pub fn early_termination(kin_positions: &[Vec3], sim_positions: &[Vec3], cfg: &FallRecoveryConfig) -> Result<bool> {
    if kin_positions.len() != sim_positions.len() {
        return Err(GripError::LengthMismatch(kin_positions.len(), sim_positions.len()));
    }
    Ok(kin_positions.iter().zip(sim_positions).any(|(a, b)| (a - b).norm() > cfg.tau_e))
}

/// One replayed frame of the kinematic segment.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplacementFrame {
    pub frame: usize,
    pub estimate: KinematicEstimate,
    /// Root position from the integrated root velocity (x, y); z is the reset height.
    pub root: Vec3,
}

#[derive(Clone, Debug)]
pub struct Recovery {
    pub state: GenState,
    pub segment: Vec<ReplacementFrame>,
}

/// Reset the humanoid from the last `n` buffered estimates.
///
/// `segment_start_root` is the simulated root position when the segment began.
/// The new root x, y are that position plus the integral of the buffered root
/// velocities; the pose is the newest estimate, lowered until its lowest contact
/// sphere rests on the terrain. Root linear velocity comes from the newest
/// estimate; all other velocities are zero.
pub fn recover(sim: &Simulator, buf: &HistoryBuffer, segment_start_root: &Vec3, n: usize, dt: f64) -> Result<Recovery> {
    let seg = buf.segment(n)?;
    let (_, latest) = seg.last().ok_or(GripError::Underflow { requested: n, available: 0 })?;
    latest.check_shape()?;
    let globals = latest.rotations()?;
    let locals = locals_from_globals(&globals, &PARENTS);
    if locals.len() != sim.model.len() {
        return Err(GripError::ShapeMismatch(format!("estimate has {} joints, model {}", locals.len(), sim.model.len())));
    }
    let mut root = *segment_start_root;
    let mut segment = Vec::with_capacity(seg.len());
    for (frame, est) in &seg {
        let v = est.v_key_at(KEY_ROOT);
        root.x += v.x * dt;
        root.y += v.y * dt;
        segment.push(ReplacementFrame { frame: *frame, estimate: est.clone(), root });
    }
    let mut state = GenState::rest(&sim.model, Vec3::new(root.x, root.y, 0.0));
    state.root_rot = locals[0];
    state.locals[1..].copy_from_slice(&locals[1..]);
    let z = -sim.lowest_clearance(&state);
    state.root_pos.z = z;
    let v = latest.v_key_at(KEY_ROOT);
    state.vel[..3].copy_from_slice(v.as_slice());
    for r in segment.iter_mut() {
        r.root.z = z;
    }
    Ok(Recovery { state, segment })
}
