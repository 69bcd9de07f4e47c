//! End-to-end stages behind the command-line tool: calibrate a raw bundle,
//! synchronize a sequence against its motion labels, estimate kinematics, track
//! them in simulation, and score the result.

use crate::calib::{
    calibrate_insole, calibrate_watch_strap, common_window, estimate_reference_frame,
    reference_vertical_accel, CalibratedImuStream, CalibrationContext, DeviceKind, InsoleTpose, Side,
};
use crate::dynamics::env::discriminator_input_width;
use crate::dynamics::{
    Discriminator, Env, EnvConfig, EnvInput, FixturePolicy, GenState, HumanoidModel, LimpPolicy, Policy,
    Rollout, Simulator, Terrain, SELF_WIDTH,
};
use crate::error::{GripError, Result};
use crate::insole::{extract_features, ImuSite, InsoleConfig, InsoleFeatures, SensorConfig};
use crate::io::{m3, rot, v3, EstimateFile, EstimateFrame, EstimateHeader, ImuSample, PipelineConfig, RawBundle, SequenceFile, SequenceFrame, SequenceHeader, SyncReport};
use crate::kinnet::{Estimator, KinematicEstimate, KinematicSource, NetworkSource, OracleEstimator};
use crate::metrics::{self, MetricReport, MotionSequence};
use crate::par::{self, Exec};
use crate::rotmath::{cross_correlation_offset, Vec3};
use crate::skeleton::{locals_from_globals, PARENTS, ROOT};

fn calibrate_device(raw: &RawBundle, k: usize, tpose: std::ops::Range<usize>) -> Result<CalibratedImuStream> {
    let dev = &raw.header.devices[k];
    let stream = raw.stream(k)?;
    let tpose_global = rot(&dev.tpose_global)?;
    match dev.kind {
        DeviceKind::Watch | DeviceKind::Strap => {
            let [f0, f1] = raw.header.floor_window;
            let g_to_r = estimate_reference_frame(&stream, f0..f1)?;
            let ctx = CalibrationContext::from_tpose(&stream, &g_to_r, Some(tpose), &tpose_global)?;
            calibrate_watch_strap(&stream, &ctx)
        }
        DeviceKind::InsoleLeft | DeviceKind::InsoleRight => {
            let side = if dev.kind == DeviceKind::InsoleLeft { Side::Left } else { Side::Right };
            let mount = dev
                .sensor_to_joint
                .as_ref()
                .ok_or_else(|| GripError::MissingContext(format!("{:?} has no sensor mounting", dev.site)))?;
            calibrate_insole(&stream, side, &rot(mount)?, Some(InsoleTpose { frame: tpose.start, joint_global: tpose_global }))
        }
        DeviceKind::Headset => Err(GripError::MissingContext("headset streams need SLAM and MoCap trajectories".into())),
    }
}

/// Calibrate every device and keep the worn part of the capture.
pub fn calibrate_bundle(raw: &RawBundle, insole: &InsoleConfig, exec: Exec) -> Result<SequenceFile> {
    raw.validate()?;
    let [t0, t1] = raw.header.tpose_window.ok_or_else(|| GripError::MissingContext("bundle has no T-pose window".into()))?;
    let ks: Vec<usize> = (0..raw.header.devices.len()).collect();
    let streams = par::map(exec, &ks, |&k| calibrate_device(raw, k, t0..t1)).into_iter().collect::<Result<Vec<_>>>()?;
    let start = raw.header.capture_start;
    let frames = raw.frames[start..]
        .iter()
        .enumerate()
        .map(|(t, f)| SequenceFrame {
            frame: t,
            imus: streams
                .iter()
                .map(|s| ImuSample { orientation: m3(&s.joint_orientation_g[start + t]), accel: v3(&s.accel_g[start + t]) })
                .collect(),
            insole: extract_features(&f.pressure, &raw.header.profile, insole),
            truth: f.truth.clone(),
            motion: f.motion.clone(),
        })
        .collect();
    let seq = SequenceFile {
        header: SequenceHeader {
            subject: raw.header.subject.clone(),
            frame_rate: raw.header.frame_rate,
            gravity_free: true,
            devices: raw.header.devices.iter().map(|d| d.site).collect(),
            terrain: raw.header.terrain.clone(),
        },
        frames,
    };
    seq.validate()?;
    Ok(seq)
}

/// Offsets of every device stream against the motion labels at its attachment
/// site. Flat streams are listed and left unshifted; the returned sequence is
/// trimmed to the window all shifted streams cover.
pub fn sync_sequence(seq: &SequenceFile, max_lag: usize, exec: Exec) -> Result<(SyncReport, SequenceFile)> {
    let motion = seq.motion()?.ok_or_else(|| GripError::MissingContext("sequence has no motion labels to sync against".into()))?;
    let sites = seq.header.devices.clone();
    let dt = 1.0 / seq.header.frame_rate;
    let results = par::map(exec, &sites, |site| -> Result<std::result::Result<i64, GripError>> {
        let path: Vec<Vec3> = motion.joint_pos.iter().map(|f| f[site.joint()]).collect();
        let reference = reference_vertical_accel(&path, dt)?;
        let stream = seq.stream(*site)?;
        match cross_correlation_offset(&reference, &stream.vertical_accel(), max_lag) {
            Ok(k) => Ok(Ok(k)),
            Err(e @ GripError::FlatSignal { .. }) => Ok(Err(e)),
            Err(e) => Err(e),
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut offsets = Vec::with_capacity(sites.len());
    let mut flat = Vec::new();
    for (site, r) in sites.iter().zip(results) {
        match r {
            Ok(k) => offsets.push(k),
            Err(_) => {
                flat.push(*site);
                offsets.push(0);
            }
        }
    }
    let lengths = vec![seq.len(); sites.len()];
    let window = common_window(&lengths, &offsets, seq.len());
    let foot = |site: ImuSite| sites.iter().position(|s| *s == site);
    let lag_of = |k: Option<usize>| k.map(|k| offsets[k]).unwrap_or(0);
    let (left, right) = (lag_of(foot(ImuSite::LeftFoot)), lag_of(foot(ImuSite::RightFoot)));
    let frames = (window.start..window.end)
        .enumerate()
        .map(|(i, t)| {
            let at = |lag: i64| &seq.frames[(t + lag) as usize];
            let reference = &seq.frames[t as usize];
            SequenceFrame {
                frame: i,
                imus: offsets.iter().enumerate().map(|(k, &lag)| at(lag).imus[k]).collect(),
                insole: InsoleFeatures { left: at(left).insole.left, right: at(right).insole.right },
                truth: reference.truth.clone(),
                motion: reference.motion.clone(),
            }
        })
        .collect();
    let synced = SequenceFile { header: seq.header.clone(), frames };
    let report = SyncReport { sites, offsets, window: [window.start, window.end], flat };
    Ok((report, synced))
}

/// Where kinematic estimates come from.
pub enum EstimateSource<'a> {
    /// Stored ground truth with optional Gaussian noise.
    Oracle { seed: u64 },
    Checkpoint(&'a Estimator),
}

pub fn estimate_sequence(seq: &SequenceFile, source: EstimateSource, cfg: &PipelineConfig) -> Result<EstimateFile> {
    let sensors = cfg.sensor_config()?;
    let obs = seq.sensor_observations(&sensors)?;
    let truth = seq.truth();
    let (name, estimates) = match source {
        EstimateSource::Oracle { seed } => {
            let truth = truth.ok_or_else(|| GripError::MissingContext("oracle mode needs stored ground truth".into()))?;
            let mut oracle = OracleEstimator::new(truth, cfg.noise, seed);
            ("oracle", obs.iter().enumerate().map(|(t, o)| oracle.estimate(t, o)).collect::<Result<Vec<_>>>()?)
        }
        EstimateSource::Checkpoint(est) => {
            check_sensor_width(est, &sensors)?;
            let first = truth
                .and_then(|t| t.into_iter().next())
                .ok_or_else(|| GripError::MissingContext("network mode needs the first frame's ground truth".into()))?;
            let mut net = NetworkSource::new(est, &first)?;
            ("checkpoint", obs.iter().enumerate().map(|(t, o)| net.estimate(t, o)).collect::<Result<Vec<_>>>()?)
        }
    };
    let file = EstimateFile {
        header: EstimateHeader { source: name.into(), sensors: cfg.sensors.clone() },
        frames: estimates.into_iter().enumerate().map(|(frame, estimate)| EstimateFrame { frame, estimate }).collect(),
    };
    file.validate()?;
    Ok(file)
}

/// Controller driving the simulated humanoid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyKind {
    /// PD tracking of the estimated orientations.
    Fixture,
    /// Zero torques.
    Limp,
}

impl PolicyKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fixture" => Ok(PolicyKind::Fixture),
            "limp" => Ok(PolicyKind::Limp),
            _ => Err(GripError::InvalidConfig { key: "policy".into(), reason: format!("expected fixture or limp, got {s:?}") }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Fixture => "fixture",
            PolicyKind::Limp => "limp",
        }
    }
}

/// Humanoid posed like `est`, at `root_xy`, lowered onto the terrain.
pub fn initial_state(sim: &Simulator, est: &KinematicEstimate, root_xy: [f64; 2]) -> Result<GenState> {
    let locals = locals_from_globals(&est.rotations()?, &PARENTS);
    let mut state = GenState::rest(&sim.model, Vec3::new(root_xy[0], root_xy[1], 0.0));
    state.root_rot = locals[0];
    state.locals[1..].copy_from_slice(&locals[1..]);
    state.root_pos.z = -sim.lowest_clearance(&state);
    Ok(state)
}

/// Closed-loop tracking of `estimates` with the fixture discriminator.
pub fn simulate_sequence(
    seq: &SequenceFile,
    estimates: &[KinematicEstimate],
    model: HumanoidModel,
    terrain: Terrain,
    cfg: &PipelineConfig,
    policy: PolicyKind,
    seed: u64,
) -> Result<Rollout> {
    if estimates.len() != seq.len() {
        return Err(GripError::LengthMismatch(estimates.len(), seq.len()));
    }
    let first = estimates.first().ok_or(GripError::EmptySet)?;
    let sensors = cfg.sensor_config()?;
    let obs = seq.sensor_observations(&sensors)?;
    let mut model = model;
    cfg.model.apply(&mut model);
    let sim = Simulator::new(model, terrain)?;
    let root_xy = match seq.frames[0].motion.as_ref() {
        Some(m) => [m.joint_pos[ROOT][0], m.joint_pos[ROOT][1]],
        None => [0.0, 0.0],
    };
    let state = initial_state(&sim, first, root_xy)?;
    let env_cfg = EnvConfig { reward: cfg.reward, fall: cfg.fall, mask: cfg.mask()? };
    let width = discriminator_input_width(env_cfg.reward.window);
    let disc = Discriminator::fixture(width, width - SELF_WIDTH + crate::dynamics::observation::SELF_ROOT_HEIGHT, seed)?;
    let mut env = Env::new(sim, state, env_cfg, disc)?;
    let inputs: Vec<EnvInput> =
        obs.into_iter().zip(estimates).map(|(sensors, e)| EnvInput { sensors, estimate: e.clone(), reference: None }).collect();
    let mut p: Box<dyn Policy> = match policy {
        PolicyKind::Fixture => Box::new(FixturePolicy),
        PolicyKind::Limp => Box::new(LimpPolicy),
    };
    env.run(&inputs, p.as_mut())
}

/// Metric report of `pred` against `gt`. Success rate is filled from
/// `fall_counts` when given.
pub fn evaluate_motion(
    pred: &MotionSequence,
    gt: &MotionSequence,
    terrain: &Terrain,
    segment_frames: usize,
    with_grf: bool,
    fall_counts: Option<&[usize]>,
    exec: Exec,
) -> Result<MetricReport> {
    let mut report = metrics::evaluate(pred, gt, terrain, segment_frames, with_grf, exec)?;
    if let Some(falls) = fall_counts {
        report.success_rate = Some(metrics::success_rate(falls)?);
    }
    report.validate()?;
    Ok(report)
}

/// Sensor configuration check shared by the estimate and simulate stages.
pub fn check_sensor_width(est: &Estimator, sensors: &SensorConfig) -> Result<()> {
    let want = sensors.width();
    let have = est.named_tensors()[0].2.len();
    if have != want {
        return Err(GripError::LayoutMismatch(format!("checkpoint expects {have} sensor inputs, configuration gives {want}")));
    }
    Ok(())
}
