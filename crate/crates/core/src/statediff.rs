//! Heading-aligned difference between the kinematic estimate and the simulated humanoid.
//!
//! With `h` the yaw-only heading of the simulated root:
//!
//! * `d_theta[j] = 6d(hᵀ · R_kin[j] · R_sim[j]ᵀ · h)` for the four IMU joints
//! * `d_v[i]     = hᵀ · (v_kin[i] − v_sim[key i])` for the six key joints
//! * `d_omega[j] = hᵀ · (ω_kin[j] − ω_sim[j])` for the four IMU joints
//! * `theta_leaf[j] = 6d(hᵀ · R_sim[j])`
//! * `d_p[j] = hᵀ · (p_kin[j] − (x_sim[j] − x_sim[root]))`, all 24 joints
//! * `p[j]   = hᵀ · p_kin[j]`
//!
//! Kinematic angular velocities are not part of the estimate; they are taken
//! from consecutive estimated orientations ([`leaf_angular_velocity`]).

use serde::{Deserialize, Serialize};

use crate::error::{GripError, Result};
use crate::kinnet::KinematicEstimate;
use crate::rotmath::{heading_rotation, rot6d_from_matrix, Rotation, Vec3, FORWARD_AXIS};
use crate::skeleton::{IMU_JOINTS, KEY_JOINTS, NUM_JOINTS, ROOT};

pub const D_THETA_WIDTH: usize = 6 * IMU_JOINTS.len();
pub const D_V_WIDTH: usize = 3 * KEY_JOINTS.len();
pub const D_OMEGA_WIDTH: usize = 3 * IMU_JOINTS.len();
pub const THETA_LEAF_WIDTH: usize = 6 * IMU_JOINTS.len();
pub const D_P_WIDTH: usize = 3 * NUM_JOINTS;
pub const P_WIDTH: usize = 3 * NUM_JOINTS;
pub const STATE_DIFF_WIDTH: usize = D_THETA_WIDTH + D_V_WIDTH + D_OMEGA_WIDTH + THETA_LEAF_WIDTH + D_P_WIDTH + P_WIDTH;

/// Global joint state of the simulated humanoid.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub joint_pos: Vec<Vec3>,
    pub joint_rot: Vec<Rotation>,
    pub joint_linvel: Vec<Vec3>,
    pub joint_angvel: Vec<Vec3>,
}

impl SimState {
    pub fn validate(&self) -> Result<()> {
        let n = NUM_JOINTS;
        if self.joint_pos.len() != n || self.joint_rot.len() != n || self.joint_linvel.len() != n || self.joint_angvel.len() != n {
            return Err(GripError::ShapeMismatch("sim state must hold 24 joints".into()));
        }
        if !self.joint_rot.iter().all(|r| r.is_valid()) {
            return Err(GripError::InvalidRotation("sim joint rotation".into()));
        }
        let finite = |v: &[Vec3]| v.iter().all(|x| x.iter().all(|c| c.is_finite()));
        if !(finite(&self.joint_pos) && finite(&self.joint_linvel) && finite(&self.joint_angvel)) {
            return Err(GripError::NumericalDivergence("non-finite sim state".into()));
        }
        Ok(())
    }

    pub fn root_pos(&self) -> Vec3 {
        self.joint_pos[ROOT]
    }

    pub fn root_rot(&self) -> Rotation {
        self.joint_rot[ROOT]
    }
}

/// Which blocks of the state difference are observed; the others are zeroed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationMask {
    /// Orientation terms: `d_theta`, `theta_leaf`.
    pub o: bool,
    /// Angular-velocity term: `d_omega`.
    pub a: bool,
    /// Linear-velocity term: `d_v`.
    pub v: bool,
    /// Position terms against the globally integrated kinematic root.
    pub j_glo: bool,
    /// Position terms in the root-relative frame.
    pub j_rel: bool,
}

impl Default for AblationMask {
    fn default() -> Self {
        AblationMask::full()
    }
}

impl AblationMask {
    pub fn full() -> Self {
        AblationMask { o: true, a: true, v: true, j_glo: false, j_rel: true }
    }

    /// `OA`, `OAV`, `OAVJglo` or `OAVJrel`.
    pub fn parse(s: &str) -> Result<Self> {
        let m = |o, a, v, j_glo, j_rel| AblationMask { o, a, v, j_glo, j_rel };
        match s {
            "OA" => Ok(m(true, true, false, false, false)),
            "OAV" => Ok(m(true, true, true, false, false)),
            "OAVJglo" => Ok(m(true, true, true, true, false)),
            "OAVJrel" => Ok(m(true, true, true, false, true)),
            _ => Err(GripError::InvalidConfig {
                key: "ablation".into(),
                reason: format!("expected OA, OAV, OAVJglo or OAVJrel, got {s:?}"),
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.o || self.a || self.v || self.j_glo || self.j_rel) {
            return Err(GripError::InvalidConfig { key: "ablation".into(), reason: "no block enabled".into() });
        }
        if self.j_glo && self.j_rel {
            return Err(GripError::InvalidConfig {
                key: "ablation".into(),
                reason: "J_glo and J_rel are alternatives".into(),
            });
        }
        Ok(())
    }

    fn positions(&self) -> bool {
        self.j_glo || self.j_rel
    }
}

/// Kinematic side of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct KinFrame<'a> {
    pub est: &'a KinematicEstimate,
    /// Global angular velocities of the four IMU joints (rad/s).
    pub leaf_angvel: [Vec3; 4],
    /// Root position obtained by integrating the estimated root velocity (used by `J_glo`).
    pub root_global: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateDifference {
    pub d_theta: Vec<f64>,
    pub d_v: Vec<f64>,
    pub d_omega: Vec<f64>,
    pub theta_leaf: Vec<f64>,
    pub d_p: Vec<f64>,
    pub p: Vec<f64>,
}

impl StateDifference {
    /// `d_theta ‖ d_v ‖ d_omega ‖ theta_leaf ‖ d_p ‖ p`.
    pub fn flatten(&self) -> Vec<f64> {
        [&self.d_theta[..], &self.d_v, &self.d_omega, &self.theta_leaf, &self.d_p, &self.p].concat()
    }
}

/// Spatial angular velocity of each IMU joint from two consecutive estimates.
pub fn leaf_angular_velocity(prev: &KinematicEstimate, cur: &KinematicEstimate, dt: f64) -> Result<[Vec3; 4]> {
    let mut out = [Vec3::zeros(); 4];
    for (k, &j) in IMU_JOINTS.iter().enumerate() {
        let (a, b) = (prev.theta_at(j)?, cur.theta_at(j)?);
        out[k] = (b * a.transpose()).log() / dt;
    }
    Ok(out)
}

fn push_vec(out: &mut Vec<f64>, v: &Vec3) {
    out.extend_from_slice(v.as_slice());
}

pub fn compute_state_difference(kin: &KinFrame, sim: &SimState, mask: &AblationMask) -> Result<StateDifference> {
    sim.validate()?;
    kin.est.check_shape()?;
    let h = heading_rotation(&sim.root_rot(), &FORWARD_AXIS);
    let ht = h.transpose();
    let mut d = StateDifference {
        d_theta: vec![0.0; D_THETA_WIDTH],
        d_v: vec![0.0; D_V_WIDTH],
        d_omega: vec![0.0; D_OMEGA_WIDTH],
        theta_leaf: vec![0.0; THETA_LEAF_WIDTH],
        d_p: vec![0.0; D_P_WIDTH],
        p: vec![0.0; P_WIDTH],
    };
    if mask.o {
        d.d_theta.clear();
        d.theta_leaf.clear();
        for &j in &IMU_JOINTS {
            let rk = kin.est.theta_at(j)?;
            let rs = sim.joint_rot[j];
            d.d_theta.extend(rot6d_from_matrix(&(ht * rk * rs.transpose() * h)).to_array());
            d.theta_leaf.extend(rot6d_from_matrix(&(ht * rs)).to_array());
        }
    }
    if mask.v {
        d.d_v.clear();
        for (i, &j) in KEY_JOINTS.iter().enumerate() {
            push_vec(&mut d.d_v, &(ht * (kin.est.v_key_at(i) - sim.joint_linvel[j])));
        }
    }
    if mask.a {
        d.d_omega.clear();
        for (k, &j) in IMU_JOINTS.iter().enumerate() {
            push_vec(&mut d.d_omega, &(ht * (kin.leaf_angvel[k] - sim.joint_angvel[j])));
        }
    }
    if mask.positions() {
        d.d_p.clear();
        d.p.clear();
        let root = sim.root_pos();
        for j in 0..NUM_JOINTS {
            let pk = kin.est.p_at(j);
            let diff = if mask.j_glo {
                kin.root_global + pk - sim.joint_pos[j]
            } else {
                pk - (sim.joint_pos[j] - root)
            };
            push_vec(&mut d.d_p, &(ht * diff));
            push_vec(&mut d.p, &(ht * pk));
        }
    }
    Ok(d)
}
