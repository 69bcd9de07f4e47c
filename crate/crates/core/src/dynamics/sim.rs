//! Torque-driven forward dynamics on the generalized state.
//!
//! Each substep assembles the joint-space mass matrix from body Jacobians, adds
//! gravity and velocity-product forces, penalty contacts and joint actuation,
//! and solves for accelerations. PD gains and contact stiffness/damping enter
//! the solve implicitly (evaluated at the end-of-step velocity), which keeps
//! light distal bodies stable at 1 ms. Integration is semi-implicit Euler.

use nalgebra::{DMatrix, DVector, Matrix3};

use super::model::{body_kinematics, BodyKinematics, GenState, HumanoidModel};
use super::terrain::Terrain;
use crate::error::{GripError, Result};
use crate::rotmath::{skew, Rotation, Vec3, GRAVITY};
use crate::statediff::SimState;

pub const PHYSICS_DT: f64 = 1e-3;
/// Physics substeps per 100 Hz control step.
pub const SUBSTEPS: usize = 10;
/// Any generalized coordinate or velocity beyond this counts as divergence.
pub const DIVERGENCE_BOUND: f64 = 1e3;
const MAX_CLAMP_PASSES: usize = 4;

#[derive(Clone, Copy, Debug)]
pub enum Actuation<'a> {
    Passive,
    /// Joint torques in the child frame, one per body (entry 0 ignored).
    Torques(&'a [Vec3]),
    /// Target local rotations for stable PD, one per body (entry 0 ignored).
    PdTargets(&'a [Rotation]),
}

/// Explicit PD torque `kp·log(Lᵀ L*) − kd·ω`, clamped per axis to `limit`.
pub fn pd_torque(target: &Rotation, current: &Rotation, rel_angvel: &Vec3, kp: f64, kd: f64, limit: f64) -> Vec3 {
    let err = (current.transpose() * *target).log();
    (err * kp - rel_angvel * kd).map(|t| t.clamp(-limit, limit))
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub state: GenState,
    /// Applied joint torques averaged over the substeps (child frame).
    pub torques: Vec<Vec3>,
    /// Mean vertical contact force on each foot body (N).
    pub foot_force: [f64; 2],
    /// Deepest sphere penetration seen during the step (m).
    pub max_penetration: f64,
}

#[derive(Clone, Debug)]
pub struct SubstepInfo {
    pub torques: Vec<Vec3>,
    pub foot_force: [f64; 2],
    pub max_penetration: f64,
}

type Block = (usize, Matrix3<f64>, Matrix3<f64>);

#[derive(Clone, Debug)]
pub struct Simulator {
    pub model: HumanoidModel,
    pub terrain: Terrain,
    pub dt: f64,
    pub substeps: usize,
}

struct ContactRecord {
    foot: Option<usize>,
    blocks: Vec<Block>,
    stiffness: Matrix3<f64>,
    force: Vec3,
}

impl Simulator {
    pub fn new(model: HumanoidModel, terrain: Terrain) -> Result<Self> {
        model.validate()?;
        terrain.validate()?;
        Ok(Simulator { model, terrain, dt: PHYSICS_DT, substeps: SUBSTEPS })
    }

    pub fn control_dt(&self) -> f64 {
        self.dt * self.substeps as f64
    }

    /// Linear Jacobian blocks of world point `p` rigidly attached to body `b`,
    /// plus the body's angular blocks.
    fn point_blocks(&self, kin: &BodyKinematics, b: usize, p: &Vec3) -> Vec<Block> {
        let mut out = vec![(0, Matrix3::identity(), Matrix3::zeros()), (1, -skew(&(p - kin.x[0])), Matrix3::identity())];
        let mut k = b;
        while k != 0 {
            let rk = *kin.r[k].matrix();
            out.push((k + 1, -skew(&(p - kin.x[k])) * rk, rk));
            k = self.model.bodies[k].parent;
        }
        out
    }

    fn add_quadratic(m: &mut DMatrix<f64>, blocks: &[Block], lin: &Matrix3<f64>, ang: Option<&Matrix3<f64>>) {
        for (i, li, ai) in blocks {
            let lt = li.transpose() * lin;
            let at = ang.map(|a| ai.transpose() * a);
            for (j, lj, aj) in blocks {
                let mut blk = lt * lj;
                if let Some(at) = &at {
                    blk += at * aj;
                }
                let mut view = m.fixed_view_mut::<3, 3>(3 * i, 3 * j);
                view += blk;
            }
        }
    }

    fn add_wrench(q: &mut DVector<f64>, blocks: &[Block], force: &Vec3, torque: Option<&Vec3>) {
        for (i, li, ai) in blocks {
            let mut g = li.transpose() * force;
            if let Some(t) = torque {
                g += ai.transpose() * t;
            }
            let mut view = q.fixed_rows_mut::<3>(3 * i);
            view += g;
        }
    }

    fn block_velocity(blocks: &[Block], u: &DVector<f64>) -> Vec3 {
        blocks.iter().map(|(i, li, _)| li * u.fixed_rows::<3>(3 * i)).sum()
    }

    /// Advance one physics substep in place.
    pub fn substep(&self, s: &mut GenState, act: &Actuation) -> Result<SubstepInfo> {
        let model = &self.model;
        let nb = model.len();
        let n = model.dof();
        let dt = self.dt;
        check_actuation(act, nb)?;
        let kin = body_kinematics(model, s);
        let mut m = DMatrix::<f64>::zeros(n, n);
        let mut q = DVector::<f64>::zeros(n);

        for b in 0..nb {
            let body = &model.bodies[b];
            let rb = kin.r[b].matrix();
            let r_s = rb * body.com;
            let c = kin.x[b] + r_s;
            let blocks = self.point_blocks(&kin, b, &c);
            let i_w = rb * body.inertia * rb.transpose();
            Self::add_quadratic(&mut m, &blocks, &(Matrix3::identity() * body.mass), Some(&i_w));
            let w = kin.w[b];
            let a_c = kin.a_bias[b] + kin.alpha_bias[b].cross(&r_s) + w.cross(&w.cross(&r_s));
            let force = (GRAVITY - a_c) * body.mass;
            let torque = -(i_w * kin.alpha_bias[b] + w.cross(&(i_w * w)));
            Self::add_wrench(&mut q, &blocks, &force, Some(&torque));
        }
        for d in 6..n {
            m[(d, d)] += model.armature;
        }

        let cp = model.contact;
        let mut contacts = Vec::new();
        let mut max_pen = 0.0f64;
        for b in 0..nb {
            let foot = model.foot_bodies.iter().position(|&f| f == b);
            for sp in &model.bodies[b].spheres {
                let center = kin.x[b] + kin.r[b] * sp.center;
                let ground = self.terrain.height(center.x, center.y);
                let depth = ground - (center.z - sp.radius);
                if depth <= 0.0 {
                    continue;
                }
                max_pen = max_pen.max(depth);
                let point = Vec3::new(center.x, center.y, center.z - sp.radius);
                let vel = kin.v[b] + kin.w[b].cross(&(point - kin.x[b]));
                let fn_pred = cp.stiffness * depth - (cp.stiffness * dt + cp.damping) * vel.z;
                if fn_pred <= 0.0 {
                    continue;
                }
                let mut k_mat = Matrix3::zeros();
                k_mat[(2, 2)] = dt * (cp.stiffness * dt + cp.damping);
                let mut force = Vec3::new(0.0, 0.0, fn_pred);
                let vt = Vec3::new(vel.x, vel.y, 0.0);
                let speed = vt.norm();
                if cp.tangential_damping * speed <= cp.friction * fn_pred {
                    k_mat[(0, 0)] = dt * cp.tangential_damping;
                    k_mat[(1, 1)] = dt * cp.tangential_damping;
                    force -= vt * cp.tangential_damping;
                } else {
                    force -= vt * (cp.friction * fn_pred / speed);
                }
                let blocks = self.point_blocks(&kin, b, &point);
                Self::add_quadratic(&mut m, &blocks, &k_mat, None);
                Self::add_wrench(&mut q, &blocks, &force, None);
                contacts.push(ContactRecord { foot, blocks, stiffness: k_mat, force });
            }
        }

        let mut torques = vec![Vec3::zeros(); nb];
        // (kp·err − (kp·dt + kd)·ω, kp·dt² + kd·dt) per implicit PD axis
        let mut pd: Vec<Option<(f64, f64)>> = vec![None; n];
        match act {
            Actuation::Passive => {}
            Actuation::Torques(tau) => {
                for j in 1..nb {
                    let lim = model.bodies[j].torque_limit;
                    let t = tau[j].map(|x| x.clamp(-lim, lim));
                    torques[j] = t;
                    let mut view = q.fixed_rows_mut::<3>(3 * (j + 1));
                    view += t;
                }
            }
            Actuation::PdTargets(targets) => {
                for j in 1..nb {
                    let body = &model.bodies[j];
                    let err = (s.locals[j].transpose() * targets[j]).log();
                    let w = s.joint_vel(j);
                    for a in 0..3 {
                        let rhs = body.kp * err[a] - (body.kp * dt + body.kd) * w[a];
                        pd[3 * (j + 1) + a] = Some((rhs, body.kp * dt * dt + body.kd * dt));
                    }
                }
            }
        }

        let mut clamped: Vec<Option<f64>> = vec![None; n];
        let mut udot = DVector::zeros(n);
        for _ in 0..MAX_CLAMP_PASSES {
            let mut ms = m.clone();
            let mut qs = q.clone();
            for d in 6..n {
                match (clamped[d], pd[d]) {
                    (Some(t), _) => qs[d] += t,
                    (None, Some((rhs, diag))) => {
                        qs[d] += rhs;
                        ms[(d, d)] += diag;
                    }
                    _ => {}
                }
            }
            if model.fixed_base {
                for d in 0..6 {
                    ms.row_mut(d).fill(0.0);
                    ms.column_mut(d).fill(0.0);
                    ms[(d, d)] = 1.0;
                    qs[d] = 0.0;
                }
            }
            udot = solve_spd(ms, qs)?;
            let mut again = false;
            for d in 6..n {
                if let (None, Some((rhs, diag))) = (clamped[d], pd[d]) {
                    let lim = model.bodies[d / 3 - 1].torque_limit;
                    let t = rhs - diag * udot[d];
                    if t.abs() > lim {
                        clamped[d] = Some(lim.copysign(t));
                        again = true;
                    }
                }
            }
            if !again {
                break;
            }
        }
        if let Actuation::PdTargets(_) = act {
            for d in 6..n {
                let t = match (clamped[d], pd[d]) {
                    (Some(t), _) => t,
                    (None, Some((rhs, diag))) => rhs - diag * udot[d],
                    _ => 0.0,
                };
                torques[d / 3 - 1][d % 3] = t;
            }
        }

        let mut foot_force = [0.0; 2];
        for c in &contacts {
            if let Some(f) = c.foot {
                let a = Self::block_velocity(&c.blocks, &udot);
                foot_force[f] += (c.force.z - c.stiffness[(2, 2)] * a.z).max(0.0);
            }
        }

        for (v, a) in s.vel.iter_mut().zip(udot.iter()) {
            *v += dt * a;
        }
        if model.fixed_base {
            s.vel[..6].fill(0.0);
        }
        s.root_pos += s.root_linvel() * dt;
        s.root_rot = Rotation::exp(&(s.root_angvel() * dt)) * s.root_rot;
        for j in 1..nb {
            s.locals[j] = s.locals[j] * Rotation::exp(&(s.joint_vel(j) * dt));
        }
        check_divergence(s)?;
        Ok(SubstepInfo { torques, foot_force, max_penetration: max_pen })
    }

    /// Advance one control step (`substeps` physics substeps).
    pub fn step(&self, state: &GenState, act: &Actuation) -> Result<StepOutput> {
        let mut s = state.clone();
        let nb = self.model.len();
        let mut torques = vec![Vec3::zeros(); nb];
        let mut foot_force = [0.0; 2];
        let mut max_penetration = 0.0f64;
        for _ in 0..self.substeps {
            let info = self.substep(&mut s, act)?;
            for (acc, t) in torques.iter_mut().zip(&info.torques) {
                *acc += t / self.substeps as f64;
            }
            for f in 0..2 {
                foot_force[f] += info.foot_force[f] / self.substeps as f64;
            }
            max_penetration = max_penetration.max(info.max_penetration);
        }
        s.root_rot = s.root_rot.renormalized();
        for r in s.locals.iter_mut().skip(1) {
            *r = r.renormalized();
        }
        Ok(StepOutput { state: s, torques, foot_force, max_penetration })
    }

    /// Kinetic plus gravitational potential energy (J).
    pub fn energy(&self, s: &GenState) -> f64 {
        let kin = body_kinematics(&self.model, s);
        let mut e = 0.0;
        for (b, body) in self.model.bodies.iter().enumerate() {
            let rb = kin.r[b].matrix();
            let r_s = rb * body.com;
            let vc = kin.v[b] + kin.w[b].cross(&r_s);
            let i_w = rb * body.inertia * rb.transpose();
            e += 0.5 * body.mass * vc.norm_squared() + 0.5 * kin.w[b].dot(&(i_w * kin.w[b]));
            e -= body.mass * GRAVITY.dot(&(kin.x[b] + r_s));
            if b > 0 {
                e += 0.5 * self.model.armature * s.joint_vel(b).norm_squared();
            }
        }
        e
    }

    pub fn sim_state(&self, s: &GenState) -> SimState {
        let kin = body_kinematics(&self.model, s);
        SimState { joint_pos: kin.x, joint_rot: kin.r, joint_linvel: kin.v, joint_angvel: kin.w }
    }

    /// Lowest contact-sphere bottom relative to the terrain beneath it (m).
    pub fn lowest_clearance(&self, s: &GenState) -> f64 {
        let kin = body_kinematics(&self.model, s);
        let mut low = f64::INFINITY;
        for (b, body) in self.model.bodies.iter().enumerate() {
            for sp in &body.spheres {
                let c = kin.x[b] + kin.r[b] * sp.center;
                low = low.min(c.z - sp.radius - self.terrain.height(c.x, c.y));
            }
        }
        low
    }
}

fn check_actuation(act: &Actuation, nb: usize) -> Result<()> {
    let len = match act {
        Actuation::Passive => return Ok(()),
        Actuation::Torques(t) => t.len(),
        Actuation::PdTargets(t) => t.len(),
    };
    if len != nb {
        return Err(GripError::ShapeMismatch(format!("actuation for {len} bodies, model has {nb}")));
    }
    Ok(())
}

fn check_divergence(s: &GenState) -> Result<()> {
    let ok = |x: f64| x.is_finite() && x.abs() < DIVERGENCE_BOUND;
    if !(s.vel.iter().all(|&v| ok(v)) && s.root_pos.iter().all(|&v| ok(v))) {
        return Err(GripError::NumericalDivergence("simulator state left the finite range".into()));
    }
    Ok(())
}

fn solve_spd(m: DMatrix<f64>, q: DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.solve(&q));
    }
    m.lu()
        .solve(&q)
        .ok_or_else(|| GripError::NumericalDivergence("singular joint-space inertia".into()))
}
