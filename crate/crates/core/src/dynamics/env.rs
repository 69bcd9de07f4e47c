//! Closed-loop environment: kinematic estimate in, simulated humanoid out.
//!
//! Per frame: buffer the estimate, form the state difference against the
//! current simulated state, assemble the observation, query the policy, advance
//! the simulator one control step, score it, and recover on a detected fall.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::discriminator::Discriminator;
use super::fall::{detect_fall, early_termination, recover, FallRecoveryConfig};
use super::model::GenState;
use super::observation::{build_observation, self_observation, SELF_ROOT_HEIGHT, SELF_WIDTH};
use super::reward::{amp_reward, energy_penalty, imitation_reward, sigmoid, total_reward, RewardConfig, RewardTerms};
use super::sim::{Actuation, Simulator};
use super::terrain::sample_height_map;
use crate::error::{GripError, Result};
use crate::insole::SensorObservation;
use crate::kinnet::{HistoryBuffer, KinematicEstimate};
use crate::par::{self, Exec};
use crate::rotmath::{Rotation, Vec3};
use crate::skeleton::{locals_from_globals, KEY_ROOT, NUM_JOINTS, PARENTS};
use crate::statediff::{compute_state_difference, leaf_angular_velocity, AblationMask, KinFrame, SimState};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub reward: RewardConfig,
    pub fall: FallRecoveryConfig,
    pub mask: AblationMask,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        self.fall.validate()?;
        self.mask.validate()
    }
}

/// What the policy asks the simulator to do.
#[derive(Clone, Debug, PartialEq)]
pub enum PolicyAction {
    /// Target local rotations for the PD controllers (entry 0 ignored).
    PdTargets(Vec<Rotation>),
    Torques(Vec<Vec3>),
}

pub trait Policy {
    fn act(&mut self, observation: &[f64], estimate: &KinematicEstimate) -> Result<PolicyAction>;
}

/// Tracks the estimated full-body orientations with the PD controllers.
#[derive(Clone, Copy, Debug, Default)]
pub struct FixturePolicy;

impl Policy for FixturePolicy {
    fn act(&mut self, _observation: &[f64], estimate: &KinematicEstimate) -> Result<PolicyAction> {
        Ok(PolicyAction::PdTargets(locals_from_globals(&estimate.rotations()?, &PARENTS)))
    }
}

/// Applies no torque; the humanoid collapses.
#[derive(Clone, Copy, Debug, Default)]
pub struct LimpPolicy;

impl Policy for LimpPolicy {
    fn act(&mut self, _observation: &[f64], _estimate: &KinematicEstimate) -> Result<PolicyAction> {
        Ok(PolicyAction::Torques(vec![Vec3::zeros(); NUM_JOINTS]))
    }
}

/// Per-frame input to the environment.
#[derive(Clone, Debug)]
pub struct EnvInput {
    pub sensors: SensorObservation,
    pub estimate: KinematicEstimate,
    /// Reference motion for the imitation reward; derived from the estimate when absent.
    pub reference: Option<SimState>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub frame: usize,
    pub joint_pos: Vec<Vec3>,
    pub joint_rot: Vec<Rotation>,
    /// Vertical contact force per foot (N).
    pub foot_force: [f64; 2],
    pub reward: RewardTerms,
    pub disc_prob: f64,
    pub fell: bool,
    pub early_termination: bool,
    /// Output comes from the kinematic history instead of the simulator.
    pub replaced: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Rollout {
    pub frames: Vec<FrameRecord>,
    pub falls: usize,
}

impl Rollout {
    pub fn completed_without_fall(&self) -> bool {
        self.falls == 0
    }
}

/// Discriminator input: the last `window` self observations, oldest first.
pub fn discriminator_input_width(window: usize) -> usize {
    window * SELF_WIDTH
}

pub struct Env {
    pub sim: Simulator,
    pub state: GenState,
    pub cfg: EnvConfig,
    pub disc: Discriminator,
    buffer: HistoryBuffer,
    frame: usize,
    prev_estimate: Option<KinematicEstimate>,
    prev_reference: Option<SimState>,
    kin_root: Vec3,
    /// Simulated root position at the start of each recent frame.
    root_history: VecDeque<(usize, Vec3)>,
    self_window: VecDeque<Vec<f64>>,
}

impl Env {
    pub fn new(sim: Simulator, state: GenState, cfg: EnvConfig, disc: Discriminator) -> Result<Self> {
        cfg.validate()?;
        if sim.model.len() != NUM_JOINTS {
            return Err(GripError::ShapeMismatch(format!("environment needs a {NUM_JOINTS}-body humanoid")));
        }
        if disc.input_dim != discriminator_input_width(cfg.reward.window) {
            return Err(GripError::LayoutMismatch(format!(
                "discriminator takes {} inputs, window needs {}",
                disc.input_dim,
                discriminator_input_width(cfg.reward.window)
            )));
        }
        let kin_root = state.root_pos;
        Ok(Env {
            sim,
            state,
            buffer: HistoryBuffer::new(cfg.fall.buffer_len),
            cfg,
            disc,
            frame: 0,
            prev_estimate: None,
            prev_reference: None,
            kin_root,
            root_history: VecDeque::new(),
            self_window: VecDeque::new(),
        })
    }

    /// Standard setup: default humanoid standing at rest on `terrain`, fixture discriminator.
    pub fn standing(sim: Simulator, cfg: EnvConfig, seed: u64) -> Result<Self> {
        let z = crate::skeleton::rest_pelvis_height() + sim.terrain.height(0.0, 0.0);
        let state = GenState::rest(&sim.model, Vec3::new(0.0, 0.0, z));
        let width = discriminator_input_width(cfg.reward.window);
        let disc = Discriminator::fixture(width, width - SELF_WIDTH + SELF_ROOT_HEIGHT, seed)?;
        Env::new(sim, state, cfg, disc)
    }

    pub fn frame(&self) -> usize {
        self.frame
    }

    fn disc_input(&self) -> Vec<f64> {
        let w = self.cfg.reward.window;
        let mut out = Vec::with_capacity(w * SELF_WIDTH);
        let have = self.self_window.len();
        for k in 0..w {
            // pad the start of a rollout with the oldest frame
            let idx = (k + have).saturating_sub(w);
            out.extend_from_slice(&self.self_window[idx.min(have - 1)]);
        }
        out
    }

    fn kinematic_reference(&self, est: &KinematicEstimate) -> Result<SimState> {
        let rots = est.rotations()?;
        let pos: Vec<Vec3> = (0..NUM_JOINTS).map(|j| self.kin_root + est.p_at(j)).collect();
        let dt = self.sim.control_dt();
        let (linvel, angvel) = match &self.prev_reference {
            Some(prev) => (
                pos.iter().zip(&prev.joint_pos).map(|(a, b)| (a - b) / dt).collect(),
                rots.iter().zip(&prev.joint_rot).map(|(a, b)| (*a * b.transpose()).log() / dt).collect(),
            ),
            None => (vec![Vec3::zeros(); NUM_JOINTS], vec![Vec3::zeros(); NUM_JOINTS]),
        };
        Ok(SimState { joint_pos: pos, joint_rot: rots, joint_linvel: linvel, joint_angvel: angvel })
    }

    /// Advance one frame. Returns the record and, on recovery, the replayed segment.
    pub fn step(&mut self, input: &EnvInput, policy: &mut dyn Policy) -> Result<(FrameRecord, Option<Vec<FrameRecord>>)> {
        let t = self.frame;
        let dt = self.sim.control_dt();
        let est = &input.estimate;
        est.check_shape()?;
        self.buffer.push(t, est.clone())?;
        let leaf_angvel = match &self.prev_estimate {
            Some(prev) => {
                self.kin_root += est.v_key_at(KEY_ROOT) * dt;
                leaf_angular_velocity(prev, est, dt)?
            }
            None => [Vec3::zeros(); 4],
        };
        self.root_history.push_back((t, self.state.root_pos));
        while self.root_history.len() > self.cfg.fall.buffer_len {
            self.root_history.pop_front();
        }

        let sim_state = self.sim.sim_state(&self.state);
        let kin = KinFrame { est, leaf_angvel, root_global: self.kin_root };
        let diff = compute_state_difference(&kin, &sim_state, &self.cfg.mask)?;
        let hmap = sample_height_map(&self.sim.terrain, &self.state.root_pos, &self.state.root_rot);
        let obs = build_observation(&input.sensors, &diff, &sim_state, &hmap, &self.cfg.mask)?;

        let action = policy.act(&obs, est)?;
        let out = match &action {
            PolicyAction::PdTargets(targets) => self.sim.step(&self.state, &Actuation::PdTargets(targets))?,
            PolicyAction::Torques(tau) => self.sim.step(&self.state, &Actuation::Torques(tau))?,
        };
        self.state = out.state;
        let next = self.sim.sim_state(&self.state);

        self.self_window.push_back(self_observation(&next)?);
        while self.self_window.len() > self.cfg.reward.window {
            self.self_window.pop_front();
        }
        let logit = self.disc.logit(&self.disc_input())?;
        let rho = sigmoid(logit);
        let reference = match &input.reference {
            Some(r) => r.clone(),
            None => self.kinematic_reference(est)?,
        };
        let r_imit = imitation_reward(&reference, &next, &self.cfg.reward)?;
        let rel_w: Vec<Vec3> = (0..NUM_JOINTS).map(|j| if j == 0 { Vec3::zeros() } else { self.state.joint_vel(j) }).collect();
        let r_energy = energy_penalty(&out.torques, &rel_w, &self.cfg.reward, t)?;
        let reward = total_reward(amp_reward(logit), r_imit, r_energy, &self.cfg.reward);
        let kin_pos: Vec<Vec3> = (0..NUM_JOINTS).map(|j| self.kin_root + est.p_at(j)).collect();
        let early = early_termination(&kin_pos, &next.joint_pos, &self.cfg.fall)?;
        self.prev_reference = Some(reference);
        self.prev_estimate = Some(est.clone());

        let root = self.state.root_pos;
        let height = root.z - self.sim.terrain.height(root.x, root.y);
        let fell = detect_fall(height, rho, &self.cfg.fall);
        let mut record = FrameRecord {
            frame: t,
            joint_pos: next.joint_pos,
            joint_rot: next.joint_rot,
            foot_force: out.foot_force,
            reward,
            disc_prob: rho,
            fell,
            early_termination: early,
            replaced: false,
        };
        let mut replacement = None;
        if fell {
            // replay as much history as exists, up to the configured length
            let n = self.cfg.fall.buffer_len.min(self.buffer.len());
            let start = self.root_history.iter().find(|(f, _)| *f + n == t + 1).map(|(_, p)| *p).unwrap_or(self.root_history[0].1);
            let rec = recover(&self.sim, &self.buffer, &start, n, dt)?;
            let mut frames = Vec::with_capacity(rec.segment.len());
            for r in &rec.segment {
                let rots = r.estimate.rotations()?;
                let pos = (0..NUM_JOINTS).map(|j| r.root + r.estimate.p_at(j)).collect();
                frames.push(FrameRecord {
                    frame: r.frame,
                    joint_pos: pos,
                    joint_rot: rots,
                    foot_force: [0.0; 2],
                    reward,
                    disc_prob: rho,
                    fell: r.frame == t,
                    early_termination: false,
                    replaced: true,
                });
            }
            self.state = rec.state;
            self.kin_root = self.state.root_pos;
            self.self_window.clear();
            self.self_window.push_back(self_observation(&self.sim.sim_state(&self.state))?);
            self.prev_reference = None;
            if let Some(last) = frames.last() {
                record.joint_pos = last.joint_pos.clone();
                record.joint_rot = last.joint_rot.clone();
                record.replaced = true;
            }
            replacement = Some(frames);
        }
        self.frame += 1;
        Ok((record, replacement))
    }

    /// Run every input frame; recovered segments overwrite the earlier records.
    pub fn run(&mut self, inputs: &[EnvInput], policy: &mut dyn Policy) -> Result<Rollout> {
        let mut rollout = Rollout::default();
        for input in inputs {
            let (record, replacement) = self.step(input, policy)?;
            if record.fell {
                rollout.falls += 1;
            }
            rollout.frames.push(record);
            if let Some(seg) = replacement {
                let offset = rollout.frames[0].frame;
                for r in seg {
                    let fell = rollout.frames[r.frame - offset].fell;
                    let slot = &mut rollout.frames[r.frame - offset];
                    slot.joint_pos = r.joint_pos;
                    slot.joint_rot = r.joint_rot;
                    slot.foot_force = r.foot_force;
                    slot.replaced = true;
                    slot.fell = fell;
                }
            }
        }
        Ok(rollout)
    }
}

/// Independent environments advanced in parallel, each by its own policy.
pub fn collect_rollouts<P>(exec: Exec, jobs: &mut [(Env, Vec<EnvInput>, P)]) -> Vec<Result<Rollout>>
where
    P: Policy + Send,
{
    par::map_mut(exec, jobs, |(env, inputs, policy)| env.run(inputs, policy))
}
