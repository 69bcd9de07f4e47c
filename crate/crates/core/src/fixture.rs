//! Synthetic captures with full ground truth.
//!
//! Each fixture starts with a one-second static T-pose, then eases into its
//! motion: quiet standing, a sinusoidal walking gait, or three vertical jumps.
//! The generator produces both the ideal calibrated sequence and the raw device
//! bundle that calibrates back to it (watches and straps with random mounting
//! and reference frames, insoles with random mounting and a floor phase for the
//! orientation filter to settle). Per-device frame offsets can be planted to
//! exercise synchronization.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calib::{raw_floor_samples, raw_insole_from_motion, raw_watch_from_motion, synthesize_imu, DeviceKind, Side};
use crate::dynamics::HumanoidModel;
use crate::error::{GripError, Result};
use crate::insole::{extract_features, DeviceProfile, ImuSite, InsoleConfig, PressureFrame, CELLS_PER_FOOT};
use crate::io::{m3, motion_frame, v3, ImuSample, RawBundle, RawDevice, RawFrame, RawHeader, RawSample, SequenceFile, SequenceFrame, SequenceHeader};
use crate::kinnet::KinematicEstimate;
use crate::rotmath::{finite_diff_velocity, Rotation, TimeSeries3, Vec3, GRAVITY};
use crate::skeleton::{forward_kinematics, rest_offsets, ANKLE_HEIGHT, KEY_JOINTS, LEFT_ANKLE, NUM_JOINTS, PARENTS, RIGHT_ANKLE, ROOT};
use crate::{FRAME_DT, FRAME_RATE_HZ};

/// Static T-pose at the start of every capture.
pub const TPOSE_FRAMES: usize = 100;
/// Devices lying on the floor before they are put on (raw bundles only).
pub const FLOOR_FRAMES: usize = 300;
/// Offsets planted in the jump fixture for the wrist and foot devices.
pub const JUMP_SYNC_OFFSETS: [i64; 4] = [10, -5, 0, 25];
/// Number of jumps in the jump fixture.
pub const JUMP_COUNT: usize = 3;

const EASE_SECONDS: f64 = 1.0;
const STANCE_TOLERANCE: f64 = 0.002;
/// Height difference (m) over which the anchoring passes from one foot to the other.
const ANCHOR_BLEND: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureKind {
    Standing,
    Walking,
    Jump,
}

impl FixtureKind {
    pub fn default_frames(self) -> usize {
        match self {
            FixtureKind::Standing => 600,
            FixtureKind::Walking => 800,
            FixtureKind::Jump => 800,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FixtureKind::Standing => "standing",
            FixtureKind::Walking => "walking",
            FixtureKind::Jump => "jump",
        }
    }
}

impl FromStr for FixtureKind {
    type Err = GripError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standing" => Ok(FixtureKind::Standing),
            "walking" => Ok(FixtureKind::Walking),
            "jump" => Ok(FixtureKind::Jump),
            _ => Err(GripError::InvalidConfig { key: "kind".into(), reason: format!("expected standing, walking or jump, got {s:?}") }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixtureSpec {
    pub kind: FixtureKind,
    pub frames: usize,
    pub seed: u64,
    /// Per-device lag in frames, in [`ImuSite::ALL`] order; missing entries are 0.
    pub offsets: Vec<i64>,
}

impl FixtureSpec {
    /// Default length; the jump fixture gets the planted sync offsets.
    pub fn new(kind: FixtureKind, seed: u64) -> Self {
        let offsets = if kind == FixtureKind::Jump { JUMP_SYNC_OFFSETS.to_vec() } else { vec![] };
        FixtureSpec { kind, frames: kind.default_frames(), seed, offsets }
    }

    fn offset(&self, k: usize) -> i64 {
        self.offsets.get(k).copied().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fixture {
    /// Ideal calibrated capture, offsets applied to the device streams.
    pub sequence: SequenceFile,
    pub raw: RawBundle,
    pub offsets: Vec<i64>,
}

struct Params {
    heading: f64,
    amp: f64,
    phase: f64,
    cadence: f64,
    jump_height: f64,
}

impl Params {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        Params {
            heading: rng.random_range(-PI..PI),
            amp: rng.random_range(0.9..1.1),
            phase: rng.random_range(0.0..2.0 * PI),
            cadence: rng.random_range(0.85..1.0),
            jump_height: rng.random_range(0.10..0.14),
        }
    }
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Jump lift, root heading and local rotations at time `t`.
fn pose(kind: FixtureKind, t: f64, p: &Params) -> (f64, Rotation, Vec<Rotation>) {
    let t0 = TPOSE_FRAMES as f64 * FRAME_DT;
    let tau = t - t0;
    let e = smoothstep(tau / EASE_SECONDS);
    let mut locals = vec![Rotation::identity(); NUM_JOINTS];
    // arms come down from the T-pose
    locals[16] = Rotation::ry(-1.2 * e);
    locals[17] = Rotation::ry(1.2 * e);
    locals[18] = Rotation::rz(0.2 * e);
    locals[19] = Rotation::rz(-0.2 * e);
    let mut lift = 0.0;
    match kind {
        FixtureKind::Standing => {
            let w = 2.0 * PI * 0.25;
            locals[3] = Rotation::rx(0.03 * p.amp * e * (w * tau + p.phase).sin());
            locals[15] = Rotation::rx(0.05 * e * (2.0 * w * tau).sin());
            locals[16] = locals[16] * Rotation::rx(0.05 * e * (w * tau).sin());
        }
        FixtureKind::Walking => {
            let phi = 2.0 * PI * p.cadence * tau.max(0.0) + p.phase;
            let swing = 0.35 * p.amp * e * phi.sin();
            locals[1] = Rotation::rx(swing);
            locals[2] = Rotation::rx(-swing);
            let knee_l = -0.6 * e * ((1.0 + phi.cos()) / 2.0).powi(2);
            let knee_r = -0.6 * e * ((1.0 - phi.cos()) / 2.0).powi(2);
            locals[4] = Rotation::rx(knee_l);
            locals[5] = Rotation::rx(knee_r);
            // feet stay level
            locals[7] = Rotation::rx(-swing - knee_l);
            locals[8] = Rotation::rx(swing - knee_r);
            locals[16] = Rotation::rx(-0.3 * e * phi.sin()) * locals[16];
            locals[17] = Rotation::rx(0.3 * e * phi.sin()) * locals[17];
            locals[3] = Rotation::rz(0.05 * e * phi.sin());
        }
        FixtureKind::Jump => {
            let period = 1.5;
            let flight = 0.5;
            for k in 0..JUMP_COUNT {
                let start = EASE_SECONDS + 0.5 + period * k as f64;
                let s = (tau - start) / flight;
                if (0.0..=1.0).contains(&s) {
                    lift = p.jump_height * (PI * s).sin().powi(2);
                }
            }
        }
    }
    (lift, Rotation::rz(p.heading), locals)
}

struct Motion {
    pos: Vec<Vec<Vec3>>,
    rots: Vec<Vec<Rotation>>,
    contact: Vec<[bool; 2]>,
    grf: Vec<[f64; 2]>,
}

fn generate_motion(kind: FixtureKind, frames: usize, p: &Params) -> Result<Motion> {
    let offsets = rest_offsets();
    let mass = HumanoidModel::smpl_default().total_mass();
    let mut pos = Vec::with_capacity(frames);
    let mut rots = Vec::with_capacity(frames);
    let mut contact = Vec::with_capacity(frames);
    // the root travels so that the lower foot stays put; the two feet share the
    // anchoring smoothly around double support
    let mut travel = Vec3::zeros();
    let mut prev_feet: Option<[Vec3; 2]> = None;
    for t in 0..frames {
        let (lift, root_rot, locals) = pose(kind, t as f64 * FRAME_DT, p);
        let (flat_pos, _) = forward_kinematics(&Vec3::zeros(), &root_rot, &locals, &offsets, &PARENTS);
        let feet = [flat_pos[LEFT_ANKLE], flat_pos[RIGHT_ANKLE]];
        if let Some(prev) = prev_feet {
            let w_left = 1.0 / (1.0 + ((feet[0].z - feet[1].z) / ANCHOR_BLEND).exp());
            let slip = (prev[0] - feet[0]) * w_left + (prev[1] - feet[1]) * (1.0 - w_left);
            travel += Vec3::new(slip.x, slip.y, 0.0);
        }
        prev_feet = Some(feet);
        // lowest ankle at ankle height, then the jump lift on top
        let drop = feet[0].z.min(feet[1].z);
        let root = Vec3::new(travel.x, travel.y, ANKLE_HEIGHT - drop + lift);
        let (jp, jr) = forward_kinematics(&root, &root_rot, &locals, &offsets, &PARENTS);
        contact.push([LEFT_ANKLE, RIGHT_ANKLE].map(|a| jp[a].z - ANKLE_HEIGHT < STANCE_TOLERANCE));
        pos.push(jp);
        rots.push(jr);
    }
    let root_z: Vec<Vec3> = pos.iter().map(|f| Vec3::new(0.0, 0.0, f[ROOT].z)).collect();
    let root_acc = crate::rotmath::finite_diff_accel(&TimeSeries3::new(root_z, FRAME_DT)?)?.samples;
    let grf = contact
        .iter()
        .zip(&root_acc)
        .map(|(c, a)| {
            let n = c.iter().filter(|&&x| x).count();
            let total = (mass * (a.z - GRAVITY.z)).max(0.0);
            c.map(|x| if x && n > 0 { total / n as f64 } else { 0.0 })
        })
        .collect();
    Ok(Motion { pos, rots, contact, grf })
}

fn pressure(grf: [f64; 2]) -> PressureFrame {
    PressureFrame { left: [grf[0] / CELLS_PER_FOOT as f64; CELLS_PER_FOOT], right: [grf[1] / CELLS_PER_FOOT as f64; CELLS_PER_FOOT] }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation {
    let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    Rotation::from_axis_angle(&v, rng.random_range(0.0..PI))
}

fn device_kind(site: ImuSite) -> DeviceKind {
    match site {
        ImuSite::LeftWrist | ImuSite::RightWrist => DeviceKind::Watch,
        ImuSite::LeftFoot => DeviceKind::InsoleLeft,
        ImuSite::RightFoot => DeviceKind::InsoleRight,
        ImuSite::Pelvis | ImuSite::Head => DeviceKind::Strap,
    }
}

fn shifted<T: Clone>(v: &[T], lag: i64) -> Vec<T> {
    let n = v.len() as i64;
    (0..n).map(|t| v[(t - lag).clamp(0, n - 1) as usize].clone()).collect()
}

pub fn generate(spec: &FixtureSpec) -> Result<Fixture> {
    if spec.frames < TPOSE_FRAMES + 3 {
        return Err(GripError::SequenceTooShort { needed: TPOSE_FRAMES + 3, got: spec.frames });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let params = Params::draw(&mut rng);
    let m = generate_motion(spec.kind, spec.frames, &params)?;
    let n = spec.frames;
    let sites = ImuSite::ALL;
    let profile = DeviceProfile::default_grid();
    let insole_cfg = InsoleConfig::default();

    // ideal calibrated streams per device, each delayed by its planted offset
    let mut streams = Vec::with_capacity(sites.len());
    for (k, site) in sites.iter().enumerate() {
        let j = site.joint();
        let orient: Vec<Rotation> = m.rots.iter().map(|f| f[j]).collect();
        let path = TimeSeries3::new(m.pos.iter().map(|f| f[j]).collect(), FRAME_DT)?;
        let s = synthesize_imu(&orient, &path)?;
        let lag = spec.offset(k);
        streams.push((shifted(&s.joint_orientation_g, lag), shifted(&s.accel_g, lag)));
    }
    let foot_lag = [spec.offset(2), spec.offset(3)];
    let grf_l = shifted(&m.grf.iter().map(|g| g[0]).collect::<Vec<_>>(), foot_lag[0]);
    let grf_r = shifted(&m.grf.iter().map(|g| g[1]).collect::<Vec<_>>(), foot_lag[1]);
    let device_pressure: Vec<PressureFrame> = (0..n).map(|t| pressure([grf_l[t], grf_r[t]])).collect();

    let key_vel: Vec<Vec<Vec3>> = KEY_JOINTS
        .iter()
        .map(|&j| finite_diff_velocity(&m.pos.iter().map(|f| f[j]).collect::<Vec<_>>(), FRAME_DT))
        .collect();
    let mut frames = Vec::with_capacity(n);
    for t in 0..n {
        let v_key: Vec<Vec3> = key_vel.iter().map(|v| v[t]).collect();
        let contact = m.contact[t].map(|c| [c, c]);
        frames.push(SequenceFrame {
            frame: t,
            imus: streams.iter().map(|(r, a)| ImuSample { orientation: m3(&r[t]), accel: v3(&a[t]) }).collect(),
            insole: extract_features(&device_pressure[t], &profile, &insole_cfg),
            truth: Some(KinematicEstimate::from_pose(&m.pos[t], &m.rots[t], &v_key)?),
            motion: Some(motion_frame(&m.pos[t], &m.rots[t], contact, m.grf[t])),
        });
    }
    let subject = format!("{}-{}", spec.kind.name(), spec.seed);
    let sequence = SequenceFile {
        header: SequenceHeader {
            subject: subject.clone(),
            frame_rate: FRAME_RATE_HZ,
            gravity_free: true,
            devices: sites.to_vec(),
            terrain: Some(crate::dynamics::Terrain::flat()),
        },
        frames,
    };

    // raw bundle: floor phase, then the worn capture
    let total = FLOOR_FRAMES + n;
    let mut raw_devices = Vec::with_capacity(sites.len());
    let mut raw_streams = Vec::with_capacity(sites.len());
    for (k, site) in sites.iter().enumerate() {
        let kind = device_kind(*site);
        let (orient, accel) = &streams[k];
        let tpose_global = orient[0];
        match kind {
            DeviceKind::InsoleLeft | DeviceKind::InsoleRight => {
                let side = if kind == DeviceKind::InsoleLeft { Side::Left } else { Side::Right };
                let s_to_j = random_rotation(&mut rng);
                let mut o = vec![tpose_global; FLOOR_FRAMES];
                o.extend_from_slice(orient);
                let mut a = vec![Vec3::zeros(); FLOOR_FRAMES];
                a.extend_from_slice(accel);
                raw_streams.push(raw_insole_from_motion(side, &o, &a, &s_to_j, FRAME_DT));
                raw_devices.push(RawDevice { site: *site, kind, tpose_global: m3(&tpose_global), sensor_to_joint: Some(m3(&s_to_j)) });
            }
            _ => {
                let r_to_g = random_rotation(&mut rng);
                let j_to_s = random_rotation(&mut rng);
                let floor = raw_floor_samples(kind, &r_to_g, FLOOR_FRAMES, FRAME_DT);
                let worn = raw_watch_from_motion(kind, orient, accel, &r_to_g, &j_to_s, FRAME_DT);
                let mut s = floor;
                s.orientation_r.as_mut().expect("floor samples carry orientation").extend(worn.orientation_r.expect("watch samples carry orientation"));
                s.gyro.extend(worn.gyro);
                s.accel.extend(worn.accel);
                raw_streams.push(s);
                raw_devices.push(RawDevice { site: *site, kind, tpose_global: m3(&tpose_global), sensor_to_joint: None });
            }
        }
    }
    let standing_force = HumanoidModel::smpl_default().total_mass() * -GRAVITY.z / 2.0;
    let raw_frames = (0..total)
        .map(|i| {
            let capture = i.checked_sub(FLOOR_FRAMES);
            RawFrame {
                frame: i,
                devices: raw_streams
                    .iter()
                    .map(|s| RawSample {
                        orientation: s.orientation_r.as_ref().map(|o| m3(&o[i])),
                        gyro: v3(&s.gyro[i]),
                        accel: v3(&s.accel[i]),
                    })
                    .collect(),
                pressure: match capture {
                    Some(t) => device_pressure[t],
                    None => pressure([standing_force; 2]),
                },
                truth: capture.and_then(|t| sequence.frames[t].truth.clone()),
                motion: capture.and_then(|t| sequence.frames[t].motion.clone()),
            }
        })
        .collect();
    let raw = RawBundle {
        header: RawHeader {
            subject,
            frame_rate: FRAME_RATE_HZ,
            devices: raw_devices,
            floor_window: [0, FLOOR_FRAMES],
            tpose_window: Some([FLOOR_FRAMES, FLOOR_FRAMES + TPOSE_FRAMES / 2]),
            capture_start: FLOOR_FRAMES,
            profile,
            terrain: Some(crate::dynamics::Terrain::flat()),
        },
        frames: raw_frames,
    };
    let offsets = (0..sites.len()).map(|k| spec.offset(k)).collect();
    Ok(Fixture { sequence, raw, offsets })
}

/// Local minima of `signal` below `-threshold`, at least `gap` frames apart.
pub fn count_dips(signal: &[f64], threshold: f64, gap: usize) -> usize {
    let mut count = 0;
    let mut last: Option<usize> = None;
    for t in 1..signal.len().saturating_sub(1) {
        let v = signal[t];
        if v < -threshold && v <= signal[t - 1] && v <= signal[t + 1] && last.is_none_or(|l| t - l >= gap) {
            count += 1;
            last = Some(t);
        }
    }
    count
}
