//! On-disk formats and pipeline configuration.
//!
//! Every file is line-delimited JSON: a header line
//! `{"format": ..., "version": ..., "header": {...}}` followed by one record per
//! line. Floats are printed in shortest round-trip form, so reading a file and
//! writing it again reproduces the original bytes. Rotations are stored as
//! row-major 3×3 arrays and checked on load.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::calib::{CalibratedImuStream, DeviceKind, RawImuStream};
use crate::dynamics::{FallRecoveryConfig, FrameRecord, HumanoidModel, RewardConfig, RewardTerms, Rollout, Terrain};
use crate::error::{GripError, Result};
use crate::insole::{DeviceProfile, ImuFrame, ImuSite, InsoleConfig, InsoleFeatures, PressureFrame, SensorConfig, SensorObservation};
use crate::kinnet::{Estimator, KinematicEstimate, NoiseStd};
use crate::metrics::{MetricReport, MotionSequence, SEGMENT_FRAMES};
use crate::rotmath::{Rotation, Vec3};
use crate::statediff::AblationMask;
use crate::FRAME_RATE_HZ;

pub const FORMAT_VERSION: u32 = 1;

pub const SEQUENCE_FORMAT: &str = "grip.sequence";
pub const RAW_FORMAT: &str = "grip.raw";
pub const ESTIMATE_FORMAT: &str = "grip.estimate";
pub const CHECKPOINT_FORMAT: &str = "grip.checkpoint";
pub const ROLLOUT_FORMAT: &str = "grip.rollout";
pub const MODEL_FORMAT: &str = "grip.model";
pub const TERRAIN_FORMAT: &str = "grip.terrain";
pub const METRICS_FORMAT: &str = "grip.metrics";
pub const SYNC_FORMAT: &str = "grip.sync";

pub type V3 = [f64; 3];
/// Row-major rotation matrix.
pub type M3 = [f64; 9];

pub fn v3(v: &Vec3) -> V3 {
    [v.x, v.y, v.z]
}

pub fn vec3(a: &V3) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

pub fn m3(r: &Rotation) -> M3 {
    r.to_row_major()
}

pub fn rot(a: &M3) -> Result<Rotation> {
    Rotation::from_row_major(a)
}

#[derive(Serialize, Deserialize)]
struct Envelope<H> {
    format: String,
    version: u32,
    header: H,
}

#[derive(Deserialize)]
struct Tag {
    format: String,
    version: u32,
}

/// Format tag of the first line, without parsing the rest.
pub fn peek_format(text: &str) -> Result<String> {
    let first = text.lines().next().ok_or_else(|| GripError::Format("empty file".into()))?;
    let tag: Tag = serde_json::from_str(first).map_err(|e| GripError::Format(format!("line 1: {e}")))?;
    Ok(tag.format)
}

pub fn write_records<H: Serialize, R: Serialize>(format: &str, header: &H, records: &[R]) -> Result<String> {
    let mut out = serde_json::to_string(&Envelope { format: format.into(), version: FORMAT_VERSION, header })?;
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_records<H: DeserializeOwned, R: DeserializeOwned>(format: &str, text: &str) -> Result<(H, Vec<R>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| GripError::Format("empty file".into()))?;
    let tag: Tag = serde_json::from_str(first).map_err(|e| GripError::Format(format!("line 1: {e}")))?;
    if tag.format != format {
        return Err(GripError::Format(format!("expected a {format} file, found {}", tag.format)));
    }
    if tag.version != FORMAT_VERSION {
        return Err(GripError::Format(format!("{format} version {} is not supported (expected {FORMAT_VERSION})", tag.version)));
    }
    let env: Envelope<H> = serde_json::from_str(first).map_err(|e| GripError::Format(format!("line 1: {e}")))?;
    let records = lines
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| GripError::Format(format!("line {}: {e}", i + 1))))
        .collect::<Result<Vec<R>>>()?;
    Ok((env.header, records))
}

fn check_frame_rate(rate: f64) -> Result<()> {
    if rate != FRAME_RATE_HZ {
        return Err(GripError::Format(format!("frame rate {rate} Hz, expected {FRAME_RATE_HZ}")));
    }
    Ok(())
}

fn check_monotone(frames: impl Iterator<Item = usize>) -> Result<()> {
    let mut prev: Option<usize> = None;
    for f in frames {
        if prev.is_some_and(|p| f <= p) {
            return Err(GripError::Format(format!("frame index {f} does not increase")));
        }
        prev = Some(f);
    }
    Ok(())
}

// ---------------------------------------------------------------- sequence

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceHeader {
    pub subject: String,
    pub frame_rate: f64,
    /// Accelerations have gravity removed.
    pub gravity_free: bool,
    /// IMU order of every frame record.
    pub devices: Vec<ImuSite>,
    pub terrain: Option<Terrain>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub orientation: M3,
    pub accel: V3,
}

/// Ground-truth motion of one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionFrame {
    pub joint_pos: Vec<V3>,
    pub joint_rot: Vec<M3>,
    /// (forefoot, rearfoot) per foot.
    pub contact: [[bool; 2]; 2],
    pub grf: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceFrame {
    pub frame: usize,
    pub imus: Vec<ImuSample>,
    pub insole: InsoleFeatures,
    pub truth: Option<KinematicEstimate>,
    pub motion: Option<MotionFrame>,
}

/// Calibrated, synchronized capture with optional ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceFile {
    pub header: SequenceHeader,
    pub frames: Vec<SequenceFrame>,
}

impl SequenceFile {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        check_frame_rate(self.header.frame_rate)?;
        check_monotone(self.frames.iter().map(|f| f.frame))?;
        if let Some(t) = &self.header.terrain {
            t.validate()?;
        }
        let n_dev = self.header.devices.len();
        for f in &self.frames {
            if f.imus.len() != n_dev {
                return Err(GripError::Format(format!("frame {}: {} IMU samples for {n_dev} devices", f.frame, f.imus.len())));
            }
            for s in &f.imus {
                rot(&s.orientation).map_err(|e| GripError::Format(format!("frame {}: {e}", f.frame)))?;
            }
            if let Some(t) = &f.truth {
                t.check_shape()?;
            }
            if let Some(m) = &f.motion {
                if m.joint_pos.len() != m.joint_rot.len() {
                    return Err(GripError::Format(format!("frame {}: motion joint counts differ", f.frame)));
                }
                for r in &m.joint_rot {
                    rot(r).map_err(|e| GripError::Format(format!("frame {}: {e}", f.frame)))?;
                }
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        write_records(SEQUENCE_FORMAT, &self.header, &self.frames)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let (header, frames) = read_records(SEQUENCE_FORMAT, text)?;
        let s = SequenceFile { header, frames };
        s.validate()?;
        Ok(s)
    }

    fn device_index(&self, site: ImuSite) -> Result<usize> {
        self.header
            .devices
            .iter()
            .position(|d| *d == site)
            .ok_or_else(|| GripError::LayoutMismatch(format!("sequence has no {site:?} IMU")))
    }

    /// Calibrated stream of one device.
    pub fn stream(&self, site: ImuSite) -> Result<CalibratedImuStream> {
        let k = self.device_index(site)?;
        let (joint_orientation_g, accel_g) = self
            .frames
            .iter()
            .map(|f| Ok((rot(&f.imus[k].orientation)?, vec3(&f.imus[k].accel))))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Ok(CalibratedImuStream { joint_orientation_g, accel_g, dt: 1.0 / self.header.frame_rate })
    }

    /// Per-frame sensor observations for the given sensor subset.
    pub fn sensor_observations(&self, config: &SensorConfig) -> Result<Vec<SensorObservation>> {
        let sites = config.sites();
        let idx = sites.iter().map(|s| self.device_index(*s)).collect::<Result<Vec<_>>>()?;
        self.frames
            .iter()
            .map(|f| {
                let imus = sites
                    .iter()
                    .zip(&idx)
                    .map(|(&site, &k)| {
                        Ok(ImuFrame { site, orientation: rot(&f.imus[k].orientation)?, accel: vec3(&f.imus[k].accel) })
                    })
                    .collect::<Result<Vec<_>>>()?;
                crate::insole::build_sensor_observation(&imus, &f.insole, config)
            })
            .collect()
    }

    /// Stored kinematic truth, if every frame carries it.
    pub fn truth(&self) -> Option<Vec<KinematicEstimate>> {
        self.frames.iter().map(|f| f.truth.clone()).collect()
    }

    /// Stored motion labels, if every frame carries them.
    pub fn motion(&self) -> Result<Option<MotionSequence>> {
        let frames: Option<Vec<&MotionFrame>> = self.frames.iter().map(|f| f.motion.as_ref()).collect();
        match frames {
            None => Ok(None),
            Some(frames) => motion_sequence(&frames, 1.0 / self.header.frame_rate).map(Some),
        }
    }
}

pub fn motion_frame(pos: &[Vec3], rots: &[Rotation], contact: [[bool; 2]; 2], grf: [f64; 2]) -> MotionFrame {
    MotionFrame { joint_pos: pos.iter().map(v3).collect(), joint_rot: rots.iter().map(m3).collect(), contact, grf }
}

pub fn motion_sequence(frames: &[&MotionFrame], dt: f64) -> Result<MotionSequence> {
    let seq = MotionSequence {
        joint_pos: frames.iter().map(|m| m.joint_pos.iter().map(vec3).collect()).collect(),
        joint_rot: frames.iter().map(|m| m.joint_rot.iter().map(rot).collect::<Result<Vec<_>>>()).collect::<Result<_>>()?,
        contact: frames.iter().map(|m| m.contact).collect(),
        grf: frames.iter().map(|m| m.grf).collect(),
        dt,
    };
    seq.validate()?;
    Ok(seq)
}

// ---------------------------------------------------------------- raw bundle

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawDevice {
    pub site: ImuSite,
    pub kind: DeviceKind,
    /// Known global orientation of the carrying joint during the T-pose.
    pub tpose_global: M3,
    /// Sensor-to-foot-joint mounting (insoles only).
    pub sensor_to_joint: Option<M3>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    pub subject: String,
    pub frame_rate: f64,
    pub devices: Vec<RawDevice>,
    /// Frames with the watches and straps lying still on the floor, axes aligned with the global frame.
    pub floor_window: [usize; 2],
    /// Static T-pose frames after the devices are worn.
    pub tpose_window: Option<[usize; 2]>,
    /// First frame of the worn capture; earlier frames are dropped on calibration.
    pub capture_start: usize,
    pub profile: DeviceProfile,
    pub terrain: Option<Terrain>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub orientation: Option<M3>,
    pub gyro: V3,
    pub accel: V3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawFrame {
    pub frame: usize,
    pub devices: Vec<RawSample>,
    pub pressure: PressureFrame,
    pub truth: Option<KinematicEstimate>,
    pub motion: Option<MotionFrame>,
}

/// Uncalibrated recording as it comes off the devices.
#[derive(Clone, Debug, PartialEq)]
pub struct RawBundle {
    pub header: RawHeader,
    pub frames: Vec<RawFrame>,
}

impl RawBundle {
    pub fn validate(&self) -> Result<()> {
        check_frame_rate(self.header.frame_rate)?;
        check_monotone(self.frames.iter().map(|f| f.frame))?;
        let n_dev = self.header.devices.len();
        for d in &self.header.devices {
            rot(&d.tpose_global)?;
            if let Some(m) = &d.sensor_to_joint {
                rot(m)?;
            }
        }
        for f in &self.frames {
            if f.devices.len() != n_dev {
                return Err(GripError::Format(format!("frame {}: {} samples for {n_dev} devices", f.frame, f.devices.len())));
            }
            for s in &f.devices {
                if let Some(o) = &s.orientation {
                    rot(o).map_err(|e| GripError::Format(format!("frame {}: {e}", f.frame)))?;
                }
            }
            f.pressure.validate()?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        write_records(RAW_FORMAT, &self.header, &self.frames)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let (header, frames) = read_records(RAW_FORMAT, text)?;
        let b = RawBundle { header, frames };
        b.validate()?;
        Ok(b)
    }

    /// Raw stream of device `k`.
    pub fn stream(&self, k: usize) -> Result<RawImuStream> {
        let d = &self.header.devices[k];
        let orientation_r = self
            .frames
            .iter()
            .map(|f| f.devices[k].orientation.as_ref().map(rot).transpose())
            .collect::<Result<Option<Vec<_>>>>()?;
        Ok(RawImuStream {
            device_kind: d.kind,
            orientation_r,
            gyro: self.frames.iter().map(|f| vec3(&f.devices[k].gyro)).collect(),
            accel: self.frames.iter().map(|f| vec3(&f.devices[k].accel)).collect(),
            dt: 1.0 / self.header.frame_rate,
        })
    }
}

// ---------------------------------------------------------------- estimates

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateHeader {
    /// `oracle` or `checkpoint`.
    pub source: String,
    pub sensors: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateFrame {
    pub frame: usize,
    pub estimate: KinematicEstimate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateFile {
    pub header: EstimateHeader,
    pub frames: Vec<EstimateFrame>,
}

impl EstimateFile {
    pub fn validate(&self) -> Result<()> {
        check_monotone(self.frames.iter().map(|f| f.frame))?;
        for f in &self.frames {
            f.estimate.check_shape()?;
            f.estimate.rotations()?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        write_records(ESTIMATE_FORMAT, &self.header, &self.frames)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let (header, frames) = read_records(ESTIMATE_FORMAT, text)?;
        let e = EstimateFile { header, frames };
        e.validate()?;
        Ok(e)
    }

    pub fn estimates(&self) -> Vec<KinematicEstimate> {
        self.frames.iter().map(|f| f.estimate.clone()).collect()
    }
}

// ---------------------------------------------------------------- checkpoint

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub sensor_width: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn checkpoint_to_jsonl(est: &Estimator, hidden: usize) -> Result<String> {
    let tensors: Vec<TensorRecord> =
        est.named_tensors().into_iter().map(|(name, shape, data)| TensorRecord { name, shape, data }).collect();
    let sensor_width = tensors.first().map(|t| t.data.len()).unwrap_or(0);
    write_records(CHECKPOINT_FORMAT, &CheckpointHeader { sensor_width, hidden }, &tensors)
}

pub fn checkpoint_from_jsonl(text: &str) -> Result<Estimator> {
    let (h, tensors): (CheckpointHeader, Vec<TensorRecord>) = read_records(CHECKPOINT_FORMAT, text)?;
    let named: Vec<_> = tensors.into_iter().map(|t| (t.name, t.shape, t.data)).collect();
    Estimator::from_named_tensors(h.sensor_width, h.hidden, &named)
}

// ---------------------------------------------------------------- rollout

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutHeader {
    pub policy: String,
    pub frame_rate: f64,
    pub falls: usize,
    pub terrain: Option<Terrain>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutFrame {
    pub frame: usize,
    pub joint_pos: Vec<V3>,
    pub joint_rot: Vec<M3>,
    pub foot_force: [f64; 2],
    pub reward: RewardTerms,
    pub disc_prob: f64,
    pub fell: bool,
    pub early_termination: bool,
    pub replaced: bool,
}

impl From<&FrameRecord> for RolloutFrame {
    fn from(r: &FrameRecord) -> Self {
        RolloutFrame {
            frame: r.frame,
            joint_pos: r.joint_pos.iter().map(v3).collect(),
            joint_rot: r.joint_rot.iter().map(m3).collect(),
            foot_force: r.foot_force,
            reward: r.reward,
            disc_prob: r.disc_prob,
            fell: r.fell,
            early_termination: r.early_termination,
            replaced: r.replaced,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutFile {
    pub header: RolloutHeader,
    pub frames: Vec<RolloutFrame>,
}

impl RolloutFile {
    pub fn from_rollout(rollout: &Rollout, policy: &str, terrain: Option<Terrain>) -> Self {
        RolloutFile {
            header: RolloutHeader { policy: policy.into(), frame_rate: FRAME_RATE_HZ, falls: rollout.falls, terrain },
            frames: rollout.frames.iter().map(RolloutFrame::from).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_frame_rate(self.header.frame_rate)?;
        check_monotone(self.frames.iter().map(|f| f.frame))?;
        for f in &self.frames {
            for r in &f.joint_rot {
                rot(r).map_err(|e| GripError::Format(format!("frame {}: {e}", f.frame)))?;
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        write_records(ROLLOUT_FORMAT, &self.header, &self.frames)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let (header, frames) = read_records(ROLLOUT_FORMAT, text)?;
        let r = RolloutFile { header, frames };
        r.validate()?;
        Ok(r)
    }

    /// Simulated motion with contact labels from the foot forces.
    pub fn motion(&self, contact_threshold: f64) -> Result<MotionSequence> {
        let frames: Vec<MotionFrame> = self
            .frames
            .iter()
            .map(|f| {
                let c = |k: usize| f.foot_force[k] >= contact_threshold;
                MotionFrame {
                    joint_pos: f.joint_pos.clone(),
                    joint_rot: f.joint_rot.clone(),
                    contact: [[c(0), c(0)], [c(1), c(1)]],
                    grf: f.foot_force,
                }
            })
            .collect();
        motion_sequence(&frames.iter().collect::<Vec<_>>(), 1.0 / self.header.frame_rate)
    }
}

// ---------------------------------------------------------------- single-record files

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
struct Empty {}

fn write_single<T: Serialize>(format: &str, value: &T) -> Result<String> {
    write_records(format, &Empty {}, std::slice::from_ref(value))
}

fn read_single<T: DeserializeOwned>(format: &str, text: &str) -> Result<T> {
    let (_, mut records): (Empty, Vec<T>) = read_records(format, text)?;
    if records.len() != 1 {
        return Err(GripError::Format(format!("{format} file holds {} records, expected 1", records.len())));
    }
    Ok(records.remove(0))
}

pub fn model_to_jsonl(model: &HumanoidModel) -> Result<String> {
    write_single(MODEL_FORMAT, model)
}

pub fn model_from_jsonl(text: &str) -> Result<HumanoidModel> {
    let m: HumanoidModel = read_single(MODEL_FORMAT, text)?;
    m.validate()?;
    Ok(m)
}

pub fn terrain_to_jsonl(terrain: &Terrain) -> Result<String> {
    write_single(TERRAIN_FORMAT, terrain)
}

pub fn terrain_from_jsonl(text: &str) -> Result<Terrain> {
    let t: Terrain = read_single(TERRAIN_FORMAT, text)?;
    t.validate()?;
    Ok(t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsHeader {
    /// (column, unit) in report order.
    pub units: Vec<(String, String)>,
    pub segment_frames: usize,
    pub segments: usize,
}

pub fn metrics_to_jsonl(report: &MetricReport, segment_frames: usize, segments: usize) -> Result<String> {
    let units = MetricReport::COLUMNS.iter().map(|(n, u)| (n.to_string(), u.to_string())).collect();
    write_records(METRICS_FORMAT, &MetricsHeader { units, segment_frames, segments }, std::slice::from_ref(report))
}

pub fn metrics_from_jsonl(text: &str) -> Result<MetricReport> {
    let (_, mut records): (MetricsHeader, Vec<MetricReport>) = read_records(METRICS_FORMAT, text)?;
    if records.len() != 1 {
        return Err(GripError::Format(format!("metrics file holds {} reports", records.len())));
    }
    let r = records.remove(0);
    r.validate()?;
    Ok(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncReport {
    pub sites: Vec<ImuSite>,
    /// Frames each stream lags the motion reference.
    pub offsets: Vec<i64>,
    /// Common window in reference frames.
    pub window: [i64; 2],
    /// Streams with no usable vertical acceleration (offset reported as 0).
    pub flat: Vec<ImuSite>,
}

pub fn sync_to_jsonl(report: &SyncReport) -> Result<String> {
    write_single(SYNC_FORMAT, report)
}

pub fn sync_from_jsonl(text: &str) -> Result<SyncReport> {
    read_single(SYNC_FORMAT, text)
}

// ---------------------------------------------------------------- configuration

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Reference proportional gain before per-joint mass scaling (N·m/rad).
    pub kp: f64,
    /// Reference derivative gain (N·m·s/rad).
    pub kd: f64,
    pub friction: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kp: crate::dynamics::model::DEFAULT_KP,
            kd: crate::dynamics::model::DEFAULT_KD,
            friction: crate::dynamics::ContactParams::default().friction,
        }
    }
}

impl ModelConfig {
    pub fn apply(&self, model: &mut HumanoidModel) {
        model.scale_gains(self.kp, self.kd);
        model.contact.friction = self.friction;
    }
}

/// Every tunable of the pipeline, loaded from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// `<2..6>[+pressure]`.
    pub sensors: String,
    /// `OA`, `OAV`, `OAVJglo` or `OAVJrel`.
    pub ablation: String,
    pub segment_frames: usize,
    /// Largest offset searched when synchronizing (frames).
    pub max_lag: usize,
    /// Hidden width of each estimator stage.
    pub hidden: usize,
    pub insole: InsoleConfig,
    pub reward: RewardConfig,
    pub fall: FallRecoveryConfig,
    pub noise: NoiseStd,
    pub model: ModelConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            sensors: "4+pressure".into(),
            ablation: "OAVJrel".into(),
            segment_frames: SEGMENT_FRAMES,
            max_lag: 250,
            hidden: 32,
            insole: InsoleConfig::default(),
            reward: RewardConfig::default(),
            fall: FallRecoveryConfig::default(),
            noise: NoiseStd::default(),
            model: ModelConfig::default(),
        }
    }
}

fn invalid(key: &str, reason: impl Into<String>) -> GripError {
    GripError::InvalidConfig { key: key.into(), reason: reason.into() }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let key = msg
                .strip_prefix("unknown field `")
                .and_then(|r| r.split('`').next())
                .map(str::to_string)
                .unwrap_or_else(|| "config".into());
            invalid(&key, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| GripError::Format(e.to_string()))
    }

    pub fn sensor_config(&self) -> Result<SensorConfig> {
        SensorConfig::parse(&self.sensors)
    }

    pub fn mask(&self) -> Result<AblationMask> {
        AblationMask::parse(&self.ablation)
    }

    pub fn validate(&self) -> Result<()> {
        self.sensor_config()?;
        self.mask()?;
        if self.segment_frames < crate::metrics::MIN_SEGMENT_FRAMES {
            return Err(invalid("segment_frames", format!("must be at least {}", crate::metrics::MIN_SEGMENT_FRAMES)));
        }
        if self.max_lag == 0 {
            return Err(invalid("max_lag", "must be positive"));
        }
        if self.hidden == 0 {
            return Err(invalid("hidden", "must be positive"));
        }
        for (key, v) in [("insole.contact_threshold", self.insole.contact_threshold), ("insole.cop_min_force", self.insole.cop_min_force)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(key, format!("must be finite and >= 0, got {v}")));
            }
        }
        self.reward.validate()?;
        self.fall.validate()?;
        let n = &self.noise;
        for (key, v) in [("noise.p_leaf", n.p_leaf), ("noise.p", n.p), ("noise.theta", n.theta), ("noise.v_key", n.v_key)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(key, format!("must be finite and >= 0, got {v}")));
            }
        }
        let m = &self.model;
        for (key, v) in [("model.kp", m.kp), ("model.kd", m.kd), ("model.friction", m.friction)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(key, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}
