//! Device calibration, time synchronization and IMU synthesis.
//!
//! Frame notation follows `R_from_to`-style names in code: `r_to_g` maps raw
//! reference-frame coordinates into the global frame, `joint_to_sensor` maps
//! joint-frame coordinates into the sensor frame, and so on. All calibrated
//! accelerations are gravity-free: the accelerometer's specific force is
//! rotated into the global frame and `(0, 0, 9.81)` is removed.

use std::ops::Range;

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

use crate::error::{GripError, Result};
use crate::par::{self, Exec};
use crate::rotmath::{
    chordal_mean, cross_correlation_offset, finite_diff_accel, umeyama_align, Biquad, Rotation,
    SimilarityTransform, TimeSeries3, Vec3, GRAVITY,
};

/// Per-axis accelerometer variance bound for static windows, (m/s²)².
pub const STATIC_ACCEL_VARIANCE: f64 = 0.05;
/// Minimum length of a floor-placement window (frames).
pub const MIN_FLOOR_WINDOW: usize = 100;
/// Accelerometer time constant of the orientation filter (s).
pub const VQF_TAU_ACC: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Watch,
    Strap,
    InsoleLeft,
    InsoleRight,
    Headset,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawImuStream {
    pub device_kind: DeviceKind,
    /// Device orientation in its own reference frame (`sensor_to_r`); absent for insoles.
    pub orientation_r: Option<Vec<Rotation>>,
    /// Angular rate in the sensor frame (rad/s).
    pub gyro: Vec<Vec3>,
    /// Specific force in the sensor frame, gravity included (m/s²).
    pub accel: Vec<Vec3>,
    pub dt: f64,
}

impl RawImuStream {
    pub fn len(&self) -> usize {
        self.accel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accel.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationContext {
    pub ref_frame_r_to_g: Rotation,
    pub joint_to_sensor: Rotation,
    pub tpose_window: Range<usize>,
    pub tpose_joint_global: Rotation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibratedImuStream {
    pub joint_orientation_g: Vec<Rotation>,
    /// Global-frame, gravity-free acceleration (m/s²).
    pub accel_g: Vec<Vec3>,
    pub dt: f64,
}

impl CalibratedImuStream {
    pub fn len(&self) -> usize {
        self.accel_g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accel_g.is_empty()
    }

    pub fn vertical_accel(&self) -> Vec<f64> {
        self.accel_g.iter().map(|a| a.z).collect()
    }

    /// Frames `[start, end)` of the stream.
    pub fn slice(&self, range: Range<usize>) -> Self {
        CalibratedImuStream {
            joint_orientation_g: self.joint_orientation_g[range.clone()].to_vec(),
            accel_g: self.accel_g[range].to_vec(),
            dt: self.dt,
        }
    }
}

fn check_static(accel: &[Vec3]) -> Result<()> {
    let n = accel.len() as f64;
    let mean = accel.iter().fold(Vec3::zeros(), |m, a| m + a) / n;
    let var = accel
        .iter()
        .fold(Vec3::zeros(), |v, a| v + (a - mean).component_mul(&(a - mean)))
        / n;
    let worst = var.max();
    if worst >= STATIC_ACCEL_VARIANCE {
        return Err(GripError::StaticityViolation { variance: worst, bound: STATIC_ACCEL_VARIANCE });
    }
    Ok(())
}

fn window_orientations<'a>(stream: &'a RawImuStream, window: &Range<usize>) -> Result<&'a [Rotation]> {
    let rots = stream
        .orientation_r
        .as_ref()
        .ok_or_else(|| GripError::MissingContext(format!("{:?} stream has no orientation", stream.device_kind)))?;
    if window.is_empty() || window.end > stream.len() || window.end > rots.len() {
        return Err(GripError::MissingContext(format!(
            "window {window:?} outside stream of {} frames",
            stream.len()
        )));
    }
    Ok(&rots[window.clone()])
}

/// Orientation of the device's reference frame seen from the global frame
/// (`g_to_r`), estimated while the device lies still on the floor aligned with
/// the global axes. Invert it to get `r_to_g`.
pub fn estimate_reference_frame(stream: &RawImuStream, static_window: Range<usize>) -> Result<Rotation> {
    if static_window.len() < MIN_FLOOR_WINDOW {
        return Err(GripError::SequenceTooShort { needed: MIN_FLOOR_WINDOW, got: static_window.len() });
    }
    let rots = window_orientations(stream, &static_window)?;
    check_static(&stream.accel[static_window])?;
    chordal_mean(rots)
}

impl CalibrationContext {
    /// Build the context from the floor estimate (`g_to_r`) and a static T-pose window:
    /// `joint_to_sensor = (sensorT_to_r)⁻¹ · g_to_r · jointT_to_g`.
    pub fn from_tpose(
        stream: &RawImuStream,
        g_to_r: &Rotation,
        tpose_window: Option<Range<usize>>,
        tpose_joint_global: &Rotation,
    ) -> Result<Self> {
        let window = tpose_window.ok_or_else(|| GripError::MissingContext("no T-pose window".into()))?;
        let rots = window_orientations(stream, &window)?;
        check_static(&stream.accel[window.clone()])?;
        let sensor_t_to_r = chordal_mean(rots)?;
        let joint_to_sensor = sensor_t_to_r.transpose() * *g_to_r * *tpose_joint_global;
        Ok(CalibrationContext {
            ref_frame_r_to_g: g_to_r.transpose(),
            joint_to_sensor,
            tpose_window: window,
            tpose_joint_global: *tpose_joint_global,
        })
    }
}

/// Watch / strap path: `joint_to_g = r_to_g · sensor_to_r(t) · joint_to_sensor`,
/// `a_g = r_to_g · sensor_to_r(t) · a_s + gravity`.
pub fn calibrate_watch_strap(stream: &RawImuStream, ctx: &CalibrationContext) -> Result<CalibratedImuStream> {
    let rots = stream
        .orientation_r
        .as_ref()
        .ok_or_else(|| GripError::MissingContext(format!("{:?} stream has no orientation", stream.device_kind)))?;
    if ctx.tpose_window.is_empty() {
        return Err(GripError::MissingContext("empty T-pose window".into()));
    }
    if rots.len() != stream.accel.len() {
        return Err(GripError::ShapeMismatch(format!(
            "{} orientations vs {} accel samples",
            rots.len(),
            stream.accel.len()
        )));
    }
    let (joint_orientation_g, accel_g) = rots
        .iter()
        .zip(&stream.accel)
        .map(|(s_to_r, a_s)| {
            let s_to_g = ctx.ref_frame_r_to_g * *s_to_r;
            (s_to_g * ctx.joint_to_sensor, s_to_g * *a_s + GRAVITY)
        })
        .unzip();
    Ok(CalibratedImuStream { joint_orientation_g, accel_g, dt: stream.dt })
}

/// Gyro strapdown with accelerometer inclination correction (6-DoF, no
/// magnetometer, no bias estimation). Yaw is relative to the first sample.
#[derive(Clone, Debug)]
pub struct Vqf {
    dt: f64,
    gyro_quat: UnitQuaternion<f64>,
    acc_quat: UnitQuaternion<f64>,
    lp: Biquad,
    lp_state: [[f64; 2]; 3],
    initialized: bool,
}

impl Vqf {
    pub fn new(dt: f64, tau_acc: f64) -> Result<Self> {
        let cutoff = std::f64::consts::SQRT_2 / (2.0 * std::f64::consts::PI * tau_acc);
        Ok(Vqf {
            dt,
            gyro_quat: UnitQuaternion::identity(),
            acc_quat: UnitQuaternion::identity(),
            lp: Biquad::butterworth_lowpass(cutoff, dt)?,
            lp_state: [[0.0; 2]; 3],
            initialized: false,
        })
    }

    pub fn update(&mut self, gyro: &Vec3, accel: &Vec3) -> Rotation {
        // the first sample defines the starting attitude; rates act from the next one on
        if self.initialized {
            self.gyro_quat = self.gyro_quat * UnitQuaternion::from_scaled_axis(gyro * self.dt);
        }
        let acc_i = self.gyro_quat * accel;
        if !self.initialized {
            for k in 0..3 {
                self.lp_state[k] = self.lp.steady_state(acc_i[k]);
            }
            self.initialized = true;
        }
        let mut lp = Vec3::zeros();
        for k in 0..3 {
            lp[k] = self.lp.tick(acc_i[k], &mut self.lp_state[k]);
        }
        if lp.norm() > 1e-9 {
            let a = self.acc_quat * (lp / lp.norm());
            let w = ((a.z + 1.0) / 2.0).max(0.0).sqrt();
            let corr = if w > 1e-6 {
                UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, a.y / (2.0 * w), -a.x / (2.0 * w), 0.0))
            } else {
                // gravity measured pointing straight down: flip about x
                UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(0.0, 1.0, 0.0, 0.0))
            };
            self.acc_quat = corr * self.acc_quat;
        }
        Rotation::from_quaternion(&self.orientation())
    }

    pub fn orientation(&self) -> UnitQuaternion<f64> {
        self.acc_quat * self.gyro_quat
    }
}

/// Run the orientation filter over a whole stream.
pub fn vqf_track(gyro: &[Vec3], accel: &[Vec3], dt: f64) -> Result<Vec<Rotation>> {
    if !(dt > 0.0) {
        return Err(GripError::DegenerateInput(format!("dt must be positive, got {dt}")));
    }
    if gyro.len() != accel.len() {
        return Err(GripError::LengthMismatch(gyro.len(), accel.len()));
    }
    let mut f = Vqf::new(dt, VQF_TAU_ACC)?;
    Ok(gyro.iter().zip(accel).map(|(w, a)| f.update(w, a)).collect())
}

/// Sign flips that bring the left insole's mirrored sensor frame into the
/// right-handed convention (rates are pseudovectors, hence the different mask).
pub const LEFT_GYRO_SIGNS: [f64; 3] = [-1.0, 1.0, -1.0];
pub const LEFT_ACCEL_SIGNS: [f64; 3] = [1.0, -1.0, 1.0];

pub fn handedness_correct(side: Side, gyro: &Vec3, accel: &Vec3) -> (Vec3, Vec3) {
    match side {
        Side::Right => (*gyro, *accel),
        Side::Left => (
            gyro.component_mul(&Vec3::from(LEFT_GYRO_SIGNS)),
            accel.component_mul(&Vec3::from(LEFT_ACCEL_SIGNS)),
        ),
    }
}

/// T-pose anchor for an insole: frame index and the foot joint's global orientation there.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InsoleTpose {
    pub frame: usize,
    pub joint_global: Rotation,
}

/// Insole path: handedness correction, rotation into the joint frame, orientation
/// filter, then alignment `joint_to_g(t) = jointT_to_g · (jointT_to_vqf)⁻¹ · joint_to_vqf(t)`.
pub fn calibrate_insole(
    stream: &RawImuStream,
    side: Side,
    sensor_to_joint: &Rotation,
    tpose: Option<InsoleTpose>,
) -> Result<CalibratedImuStream> {
    let tpose = tpose.ok_or_else(|| GripError::MissingTpose(format!("{side:?} insole")))?;
    if tpose.frame >= stream.len() {
        return Err(GripError::MissingTpose(format!(
            "T-pose frame {} outside stream of {} frames",
            tpose.frame,
            stream.len()
        )));
    }
    if stream.gyro.len() != stream.accel.len() {
        return Err(GripError::LengthMismatch(stream.gyro.len(), stream.accel.len()));
    }
    let (gyro_j, accel_j): (Vec<Vec3>, Vec<Vec3>) = stream
        .gyro
        .iter()
        .zip(&stream.accel)
        .map(|(w, a)| {
            let (w, a) = handedness_correct(side, w, a);
            (sensor_to_joint * &w, sensor_to_joint * &a)
        })
        .unzip();
    let vqf = vqf_track(&gyro_j, &accel_j, stream.dt)?;
    let align = tpose.joint_global * vqf[tpose.frame].transpose();
    let (joint_orientation_g, accel_g) = vqf
        .iter()
        .zip(&accel_j)
        .map(|(r, a)| {
            let r_g = (align * *r).renormalized();
            (r_g, r_g * *a + GRAVITY)
        })
        .unzip();
    Ok(CalibratedImuStream { joint_orientation_g, accel_g, dt: stream.dt })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadsetExtrinsics {
    pub imu_to_device: Rotation,
    pub imu_to_cpf: Rotation,
    pub slam_device_orientation: Vec<Rotation>,
    pub slam_position: Vec<Vec3>,
}

/// Headset path. The SLAM world is aligned to the MoCap frame with a scaled
/// Procrustes fit of the device trajectory onto the MoCap CPF trajectory; the
/// orientation chain is `world_to_g · device_to_world · imu_to_device · imu_to_cpf`.
pub fn calibrate_headset(
    ext: &HeadsetExtrinsics,
    mocap_cpf_positions: &[Vec3],
    accel_i: &[Vec3],
    dt: f64,
) -> Result<(CalibratedImuStream, SimilarityTransform)> {
    let n = ext.slam_position.len();
    if mocap_cpf_positions.len() != n || ext.slam_device_orientation.len() != n || accel_i.len() != n {
        return Err(GripError::DegenerateTrajectory(format!(
            "trajectory lengths differ: slam {n}, mocap {}, orientations {}, accel {}",
            mocap_cpf_positions.len(),
            ext.slam_device_orientation.len(),
            accel_i.len()
        )));
    }
    let align = umeyama_align(&ext.slam_position, mocap_cpf_positions, true)
        .map_err(|e| GripError::DegenerateTrajectory(e.to_string()))?;
    let w_to_g = align.r;
    let (joint_orientation_g, accel_g) = ext
        .slam_device_orientation
        .iter()
        .zip(accel_i)
        .map(|(d_to_w, a)| {
            let imu_to_g = w_to_g * *d_to_w * ext.imu_to_device;
            (imu_to_g * ext.imu_to_cpf, imu_to_g * *a + GRAVITY)
        })
        .unzip();
    Ok((CalibratedImuStream { joint_orientation_g, accel_g, dt }, align))
}

/// Offsets of each stream relative to its reference, and the window of
/// reference time covered by every stream and reference.
#[derive(Clone, Debug, PartialEq)]
pub struct SyncResult {
    /// Positive: the stream lags the reference by this many frames.
    pub offsets: Vec<i64>,
    /// Common window in reference frame indices.
    pub window: Range<i64>,
}

impl SyncResult {
    /// Stream-local frame range matching the common window.
    pub fn stream_range(&self, stream: usize) -> Range<usize> {
        let k = self.offsets[stream];
        (self.window.start + k) as usize..(self.window.end + k) as usize
    }
}

/// Common window for streams of the given lengths shifted by `offsets`, against
/// references of length `ref_len`.
pub fn common_window(lengths: &[usize], offsets: &[i64], ref_len: usize) -> Range<i64> {
    let start = lengths.iter().zip(offsets).map(|(_, &k)| -k).fold(0i64, i64::max);
    let end = lengths.iter().zip(offsets).map(|(&n, &k)| n as i64 - k).fold(ref_len as i64, i64::min);
    start..end.max(start)
}

/// Synchronize each stream's vertical acceleration against the reference
/// vertical acceleration at the same attachment site.
pub fn synchronize(
    streams: &[CalibratedImuStream],
    references: &[Vec<f64>],
    max_lag: usize,
    exec: Exec,
) -> Result<SyncResult> {
    if streams.len() != references.len() {
        return Err(GripError::LengthMismatch(streams.len(), references.len()));
    }
    if streams.is_empty() {
        return Err(GripError::EmptySet);
    }
    let idx: Vec<usize> = (0..streams.len()).collect();
    let offsets = par::map(exec, &idx, |&i| {
        cross_correlation_offset(&references[i], &streams[i].vertical_accel(), max_lag)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let lengths: Vec<usize> = streams.iter().map(|s| s.len()).collect();
    let ref_len = references.iter().map(|r| r.len()).min().unwrap_or(0);
    let window = common_window(&lengths, &offsets, ref_len);
    Ok(SyncResult { offsets, window })
}

/// Reference vertical acceleration at an attachment site from MoCap positions.
pub fn reference_vertical_accel(site_positions: &[Vec3], dt: f64) -> Result<Vec<f64>> {
    let acc = finite_diff_accel(&TimeSeries3::new(site_positions.to_vec(), dt)?)?;
    Ok(acc.samples.iter().map(|a| a.z).collect())
}

/// IMU stream synthesized from motion labels: orientation passthrough and
/// gravity-free acceleration by second differences of the attachment point.
pub fn synthesize_imu(joint_orientations: &[Rotation], attachment_positions: &TimeSeries3) -> Result<CalibratedImuStream> {
    if joint_orientations.len() != attachment_positions.len() {
        return Err(GripError::ShapeMismatch(format!(
            "{} orientations vs {} positions",
            joint_orientations.len(),
            attachment_positions.len()
        )));
    }
    let acc = finite_diff_accel(attachment_positions)?;
    Ok(CalibratedImuStream {
        joint_orientation_g: joint_orientations.to_vec(),
        accel_g: acc.samples,
        dt: attachment_positions.dt,
    })
}

/// Body-frame angular rate sample `t` such that `R_t = R_{t-1} · exp(ω_t·dt)`.
/// Sample 0 repeats sample 1.
pub fn body_rates(rots: &[Rotation], dt: f64) -> Vec<Vec3> {
    let n = rots.len();
    let mut out = vec![Vec3::zeros(); n];
    for t in 1..n {
        out[t] = (rots[t - 1].transpose() * rots[t]).log() / dt;
    }
    if n > 1 {
        out[0] = out[1];
    }
    out
}

/// Raw watch/strap samples that a rigidly attached device would report for the
/// given joint motion (inverse of [`calibrate_watch_strap`]).
pub fn raw_watch_from_motion(
    kind: DeviceKind,
    joint_to_g: &[Rotation],
    accel_lin_g: &[Vec3],
    r_to_g: &Rotation,
    joint_to_sensor: &Rotation,
    dt: f64,
) -> RawImuStream {
    let s_to_r: Vec<Rotation> = joint_to_g
        .iter()
        .map(|j| r_to_g.transpose() * *j * joint_to_sensor.transpose())
        .collect();
    let accel = s_to_r
        .iter()
        .zip(accel_lin_g)
        .map(|(s, a)| (*r_to_g * *s).transpose() * (a - GRAVITY))
        .collect();
    let gyro = body_rates(&s_to_r, dt);
    RawImuStream { device_kind: kind, orientation_r: Some(s_to_r), gyro, accel, dt }
}

/// Raw samples of a device lying still on the floor aligned with the global axes.
pub fn raw_floor_samples(kind: DeviceKind, r_to_g: &Rotation, frames: usize, dt: f64) -> RawImuStream {
    let s_to_r = r_to_g.transpose();
    RawImuStream {
        device_kind: kind,
        orientation_r: Some(vec![s_to_r; frames]),
        gyro: vec![Vec3::zeros(); frames],
        accel: vec![-GRAVITY; frames],
        dt,
    }
}

/// Raw insole samples for a foot motion (inverse of [`calibrate_insole`]'s
/// sensor model, including the left-side mirroring).
pub fn raw_insole_from_motion(
    side: Side,
    joint_to_g: &[Rotation],
    accel_lin_g: &[Vec3],
    sensor_to_joint: &Rotation,
    dt: f64,
) -> RawImuStream {
    let rates = body_rates(joint_to_g, dt);
    let j_to_s = sensor_to_joint.transpose();
    let (gyro, accel) = joint_to_g
        .iter()
        .zip(accel_lin_g)
        .zip(&rates)
        .map(|((r, a), w)| {
            let a_j = r.transpose() * (a - GRAVITY);
            // sign masks are involutions, so the same correction maps back
            handedness_correct(side, &(j_to_s * *w), &(j_to_s * a_j))
        })
        .unzip();
    let kind = match side {
        Side::Left => DeviceKind::InsoleLeft,
        Side::Right => DeviceKind::InsoleRight,
    };
    RawImuStream { device_kind: kind, orientation_r: None, gyro, accel, dt }
}

/// Headset SLAM outputs and raw IMU acceleration for a CPF motion, given the
/// SLAM-to-MoCap similarity (inverse of [`calibrate_headset`]).
pub fn raw_headset_from_motion(
    cpf_to_g: &[Rotation],
    cpf_positions: &[Vec3],
    accel_lin_g: &[Vec3],
    imu_to_device: &Rotation,
    imu_to_cpf: &Rotation,
    slam_to_g: &SimilarityTransform,
) -> (HeadsetExtrinsics, Vec<Vec3>) {
    let w_to_g = slam_to_g.r;
    let slam_device_orientation: Vec<Rotation> = cpf_to_g
        .iter()
        .map(|c| w_to_g.transpose() * *c * imu_to_cpf.transpose() * imu_to_device.transpose())
        .collect();
    let slam_position = cpf_positions
        .iter()
        .map(|p| w_to_g.transpose() * (p - slam_to_g.t) / slam_to_g.s)
        .collect();
    let accel_i = slam_device_orientation
        .iter()
        .zip(accel_lin_g)
        .map(|(d, a)| (w_to_g * *d * *imu_to_device).transpose() * (a - GRAVITY))
        .collect();
    (
        HeadsetExtrinsics {
            imu_to_device: *imu_to_device,
            imu_to_cpf: *imu_to_cpf,
            slam_device_orientation,
            slam_position,
        },
        accel_i,
    )
}
