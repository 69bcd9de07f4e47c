//! Articulated rigid-body model: tree of bodies joined by 3-DoF ball joints on a
//! floating (or fixed) base.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{GripError, Result};
use crate::rotmath::{Rotation, Vec3};
use crate::skeleton::{self, NUM_JOINTS, PARENTS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactSphere {
    /// Centre in the body frame (m).
    pub center: Vec3,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub name: String,
    /// Parent body; the root's entry is ignored.
    pub parent: usize,
    /// Joint position in the parent frame (m).
    pub offset: Vec3,
    pub mass: f64,
    /// Centre of mass in the body frame (m).
    pub com: Vec3,
    /// Inertia about the centre of mass, body frame (kg·m²).
    pub inertia: Matrix3<f64>,
    /// Capsule radius (m); the capsule runs from the joint to twice the COM offset.
    pub radius: f64,
    pub kp: f64,
    pub kd: f64,
    /// Per-axis torque limit (N·m).
    pub torque_limit: f64,
    pub spheres: Vec<ContactSphere>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    /// Normal penalty stiffness per sphere (N/m).
    pub stiffness: f64,
    /// Normal penalty damping per sphere (N·s/m).
    pub damping: f64,
    /// Coulomb friction coefficient.
    pub friction: f64,
    /// Viscous tangential coefficient below the Coulomb cap (N·s/m).
    pub tangential_damping: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        ContactParams { stiffness: 3e4, damping: 3e2, friction: 0.9, tangential_damping: 5e3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanoidModel {
    pub bodies: Vec<Body>,
    pub contact: ContactParams,
    /// Rotor-style inertia added to every joint DoF (kg·m²).
    pub armature: f64,
    /// Pin the root in place (no root DoFs).
    pub fixed_base: bool,
    /// Bodies whose contact forces count as the left and right foot.
    pub foot_bodies: [usize; 2],
}

/// Solid cylinder inertia along `axis` of length `len`.
pub fn capsule_inertia(mass: f64, radius: f64, axis: &Vec3, len: f64) -> Matrix3<f64> {
    let u = if axis.norm() > 1e-9 { axis.normalize() } else { Vec3::z() };
    let i_axis = 0.5 * mass * radius * radius;
    let i_perp = mass * (3.0 * radius * radius + len * len) / 12.0;
    Matrix3::identity() * i_perp + (u * u.transpose()) * (i_axis - i_perp)
}

/// (mass kg, capsule radius m) per SMPL joint body.
const BODY_MASS_RADIUS: [(f64, f64); NUM_JOINTS] = [
    (10.0, 0.12),
    (8.0, 0.07),
    (8.0, 0.07),
    (6.0, 0.10),
    (3.5, 0.05),
    (3.5, 0.05),
    (6.0, 0.10),
    (1.0, 0.04),
    (1.0, 0.04),
    (6.0, 0.10),
    (0.3, 0.02),
    (0.3, 0.02),
    (1.5, 0.05),
    (1.5, 0.05),
    (1.5, 0.05),
    (5.0, 0.09),
    (2.0, 0.045),
    (2.0, 0.045),
    (1.3, 0.04),
    (1.3, 0.04),
    (0.5, 0.03),
    (0.5, 0.03),
    (0.2, 0.02),
    (0.2, 0.02),
];

pub const DEFAULT_KP: f64 = 300.0;
pub const DEFAULT_KD: f64 = 30.0;
pub const DEFAULT_TORQUE_LIMIT: f64 = 200.0;
/// Mass that maps to a gain scale of 1.
pub const GAIN_REFERENCE_MASS: f64 = 10.0;
pub const GAIN_SCALE_RANGE: (f64, f64) = (0.05, 8.0);

impl HumanoidModel {
    /// SMPL-topology humanoid of about 71 kg standing on a 4×3 sphere grid per foot.
    pub fn smpl_default() -> Self {
        let offsets = skeleton::rest_offsets();
        let mut bodies: Vec<Body> = (0..NUM_JOINTS)
            .map(|j| {
                let children: Vec<Vec3> = (1..NUM_JOINTS).filter(|&c| PARENTS[c] == j).map(|c| offsets[c]).collect();
                let tip = if children.is_empty() {
                    match j {
                        skeleton::HEAD => Vec3::new(0.0, 0.02, 0.18),
                        skeleton::LEFT_FOOT | skeleton::RIGHT_FOOT => Vec3::new(0.0, 0.06, 0.0),
                        _ => offsets[j].normalize() * 0.08,
                    }
                } else {
                    children.iter().sum::<Vec3>() / children.len() as f64
                };
                let (mass, radius) = BODY_MASS_RADIUS[j];
                Body {
                    name: skeleton::JOINT_NAMES[j].to_string(),
                    parent: PARENTS[j],
                    offset: offsets[j],
                    mass,
                    com: tip * 0.5,
                    inertia: capsule_inertia(mass, radius, &tip, tip.norm()),
                    radius,
                    kp: DEFAULT_KP,
                    kd: DEFAULT_KD,
                    torque_limit: DEFAULT_TORQUE_LIMIT,
                    spheres: Vec::new(),
                }
            })
            .collect();
        // foot soles: heel to ball, 2 cm spheres touching z = 0 at rest
        let sole = -(skeleton::ANKLE_HEIGHT - 0.02);
        for j in [skeleton::LEFT_ANKLE, skeleton::RIGHT_ANKLE] {
            for y in [-0.05, 0.01, 0.07, 0.13] {
                for x in [-0.035, 0.0, 0.035] {
                    bodies[j].spheres.push(ContactSphere { center: Vec3::new(x, y, sole), radius: 0.02 });
                }
            }
        }
        let mut add = |j: usize, c: Vec3, r: f64| bodies[j].spheres.push(ContactSphere { center: c, radius: r });
        add(0, Vec3::zeros(), 0.12);
        add(4, Vec3::zeros(), 0.05);
        add(5, Vec3::zeros(), 0.05);
        add(9, Vec3::zeros(), 0.11);
        add(15, Vec3::new(0.0, 0.02, 0.09), 0.1);
        add(18, Vec3::zeros(), 0.04);
        add(19, Vec3::zeros(), 0.04);
        add(20, Vec3::zeros(), 0.04);
        add(21, Vec3::zeros(), 0.04);
        let mut model = HumanoidModel {
            bodies,
            contact: ContactParams::default(),
            armature: 0.005,
            fixed_base: false,
            foot_bodies: [skeleton::LEFT_ANKLE, skeleton::RIGHT_ANKLE],
        };
        model.scale_gains(DEFAULT_KP, DEFAULT_KD);
        model
    }

    pub fn len(&self) -> usize {
        self.bodies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bodies.is_empty()
    }

    pub fn dof(&self) -> usize {
        6 + 3 * (self.bodies.len() - 1)
    }

    pub fn total_mass(&self) -> f64 {
        self.bodies.iter().map(|b| b.mass).sum()
    }

    pub fn subtree_mass(&self, j: usize) -> f64 {
        let mut mass = vec![0.0; self.len()];
        for b in (0..self.len()).rev() {
            mass[b] += self.bodies[b].mass;
            if b > 0 {
                let p = self.bodies[b].parent;
                mass[p] += mass[b];
            }
        }
        mass[j]
    }

    fn is_leg(&self, j: usize) -> bool {
        let mut k = j;
        while k != 0 {
            if k == self.foot_bodies[0] || k == self.foot_bodies[1] {
                return true;
            }
            k = self.bodies[k].parent;
        }
        // ancestors of a foot body are leg joints too
        self.foot_bodies.iter().any(|&f| {
            let mut a = f;
            while a != 0 {
                if a == j {
                    return true;
                }
                a = self.bodies[a].parent;
            }
            false
        })
    }

    /// Gain scale `clamp(M_j / 10 kg, 0.05, 8)`, where `M_j` is the mass a joint
    /// carries: its subtree for the upper body, everything else for the legs.
    pub fn gain_scale(&self, j: usize) -> f64 {
        let m = if self.is_leg(j) { self.total_mass() - self.subtree_mass(j) } else { self.subtree_mass(j) };
        (m / GAIN_REFERENCE_MASS).clamp(GAIN_SCALE_RANGE.0, GAIN_SCALE_RANGE.1)
    }

    pub fn scale_gains(&mut self, kp: f64, kd: f64) {
        for j in 1..self.len() {
            let s = self.gain_scale(j);
            self.bodies[j].kp = kp * s;
            self.bodies[j].kd = kd * s;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bodies.is_empty() {
            return Err(GripError::InvalidConfig { key: "model.bodies".into(), reason: "no bodies".into() });
        }
        for (j, b) in self.bodies.iter().enumerate() {
            let key = |f: &str| format!("model.bodies[{j}].{f}");
            if j > 0 && b.parent >= j {
                return Err(GripError::InvalidConfig { key: key("parent"), reason: "parent must precede child".into() });
            }
            if !(b.mass > 0.0) {
                return Err(GripError::InvalidConfig { key: key("mass"), reason: "must be positive".into() });
            }
            if j > 0 && !(b.kp >= 0.0 && b.kd >= 0.0) {
                return Err(GripError::InvalidConfig { key: key("kp"), reason: "gains must be non-negative".into() });
            }
            if !(b.torque_limit > 0.0) {
                return Err(GripError::InvalidConfig { key: key("torque_limit"), reason: "must be positive".into() });
            }
        }
        for f in self.foot_bodies {
            if f >= self.len() {
                return Err(GripError::InvalidConfig { key: "model.foot_bodies".into(), reason: format!("no body {f}") });
            }
        }
        Ok(())
    }
}

/// Generalized state. Velocities are `[root linear (world), root angular (world),
/// per joint angular velocity relative to the parent, child frame]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GenState {
    pub root_pos: Vec3,
    pub root_rot: Rotation,
    /// Local joint rotations; entry 0 is unused.
    pub locals: Vec<Rotation>,
    pub vel: Vec<f64>,
}

impl GenState {
    pub fn rest(model: &HumanoidModel, root_pos: Vec3) -> Self {
        GenState {
            root_pos,
            root_rot: Rotation::identity(),
            locals: vec![Rotation::identity(); model.len()],
            vel: vec![0.0; model.dof()],
        }
    }

    pub fn root_linvel(&self) -> Vec3 {
        Vec3::new(self.vel[0], self.vel[1], self.vel[2])
    }

    pub fn root_angvel(&self) -> Vec3 {
        Vec3::new(self.vel[3], self.vel[4], self.vel[5])
    }

    pub fn joint_vel(&self, j: usize) -> Vec3 {
        let k = 3 * (j + 1);
        Vec3::new(self.vel[k], self.vel[k + 1], self.vel[k + 2])
    }

    pub fn set_joint_vel(&mut self, j: usize, w: &Vec3) {
        let k = 3 * (j + 1);
        self.vel[k..k + 3].copy_from_slice(w.as_slice());
    }
}

/// World-frame kinematics of every body.
#[derive(Clone, Debug)]
pub struct BodyKinematics {
    pub x: Vec<Vec3>,
    pub r: Vec<Rotation>,
    pub v: Vec<Vec3>,
    pub w: Vec<Vec3>,
    /// Velocity-product accelerations of joint origins and bodies (zero joint accelerations).
    pub a_bias: Vec<Vec3>,
    pub alpha_bias: Vec<Vec3>,
}

pub fn body_kinematics(model: &HumanoidModel, s: &GenState) -> BodyKinematics {
    let n = model.len();
    let mut k = BodyKinematics {
        x: vec![s.root_pos; n],
        r: vec![s.root_rot; n],
        v: vec![s.root_linvel(); n],
        w: vec![s.root_angvel(); n],
        a_bias: vec![Vec3::zeros(); n],
        alpha_bias: vec![Vec3::zeros(); n],
    };
    for j in 1..n {
        let p = model.bodies[j].parent;
        let arm = k.r[p] * model.bodies[j].offset;
        k.x[j] = k.x[p] + arm;
        k.r[j] = k.r[p] * s.locals[j];
        let wr = k.r[j] * s.joint_vel(j);
        k.w[j] = k.w[p] + wr;
        k.v[j] = k.v[p] + k.w[p].cross(&arm);
        k.alpha_bias[j] = k.alpha_bias[p] + k.w[p].cross(&wr);
        k.a_bias[j] = k.a_bias[p] + k.alpha_bias[p].cross(&arm) + k.w[p].cross(&k.w[p].cross(&arm));
    }
    k
}
