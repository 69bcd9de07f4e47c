//! Evaluation metrics over fixed-length segments.
//!
//! Units follow the usual reporting: positions in mm, rotations in degrees,
//! acceleration in m/s², foot sliding in m/s, penetration in mm, forces in N.
//! Each metric pools the frames of one segment; a sequence score is the mean
//! over its segments.

use serde::{Deserialize, Serialize};

use crate::dynamics::Terrain;
use crate::error::{GripError, Result};
use crate::par::{self, Exec};
use crate::rotmath::{finite_diff_accel, finite_diff_velocity, geodesic_angle, umeyama_align, Rotation, TimeSeries3, Vec3};
use crate::skeleton::{FOOT_POINTS, ROOT};

/// Evaluation segment length (frames).
pub const SEGMENT_FRAMES: usize = 500;
/// Shortest trailing segment still scored (the acceleration term needs 3 frames).
pub const MIN_SEGMENT_FRAMES: usize = 3;

const MM: f64 = 1000.0;

#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    pub joint_pos: Vec<Vec<Vec3>>,
    pub joint_rot: Vec<Vec<Rotation>>,
    /// Per frame, per foot (left, right): (forefoot, rearfoot) contact.
    pub contact: Vec<[[bool; 2]; 2]>,
    /// Vertical ground reaction force per foot (N).
    pub grf: Vec<[f64; 2]>,
    pub dt: f64,
}

impl MotionSequence {
    pub fn len(&self) -> usize {
        self.joint_pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint_pos.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        for len in [self.joint_rot.len(), self.contact.len(), self.grf.len()] {
            if len != n {
                return Err(GripError::LengthMismatch(len, n));
            }
        }
        if !(self.dt > 0.0) {
            return Err(GripError::DegenerateInput("dt must be positive".into()));
        }
        for (p, r) in self.joint_pos.iter().zip(&self.joint_rot) {
            if p.len() != r.len() || p.len() <= FOOT_POINTS[1] {
                return Err(GripError::ShapeMismatch("joint count".into()));
            }
            if !r.iter().all(|r| r.is_valid()) {
                return Err(GripError::InvalidRotation("motion sequence rotation".into()));
            }
        }
        Ok(())
    }

    /// Frames `range` as a new sequence.
    pub fn slice(&self, range: std::ops::Range<usize>) -> MotionSequence {
        MotionSequence {
            joint_pos: self.joint_pos[range.clone()].to_vec(),
            joint_rot: self.joint_rot[range.clone()].to_vec(),
            contact: self.contact[range.clone()].to_vec(),
            grf: self.grf[range].to_vec(),
            dt: self.dt,
        }
    }

    pub fn foot_in_contact(&self, t: usize, foot: usize) -> bool {
        self.contact[t][foot][0] || self.contact[t][foot][1]
    }
}

fn check_frames<T, U>(a: &[Vec<T>], b: &[Vec<U>]) -> Result<()> {
    if a.len() != b.len() {
        return Err(GripError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(GripError::EmptySet);
    }
    for (x, y) in a.iter().zip(b) {
        if x.len() != y.len() {
            return Err(GripError::LengthMismatch(x.len(), y.len()));
        }
    }
    Ok(())
}

fn mean_joint_distance(pred: &[Vec3], gt: &[Vec3]) -> f64 {
    pred.iter().zip(gt).map(|(a, b)| (a - b).norm()).sum::<f64>() / pred.len() as f64
}

/// Mean per-joint position error (mm).
pub fn mpjpe(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<f64> {
    check_frames(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(p, g)| mean_joint_distance(p, g)).sum::<f64>() / pred.len() as f64 * MM)
}

/// MPJPE after subtracting each frame's root position (mm).
pub fn pel_mpjpe(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<f64> {
    check_frames(pred, gt)?;
    let centre = |f: &Vec<Vec3>| f.iter().map(|p| p - f[ROOT]).collect::<Vec<_>>();
    let total: f64 = pred.iter().zip(gt).map(|(p, g)| mean_joint_distance(&centre(p), &centre(g))).sum();
    Ok(total / pred.len() as f64 * MM)
}

/// MPJPE after a per-frame similarity alignment of the prediction (mm).
pub fn pa_mpjpe(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<f64> {
    check_frames(pred, gt)?;
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let tf = umeyama_align(p, g, true)?;
        let aligned: Vec<Vec3> = p.iter().map(|x| tf.apply(x)).collect();
        total += mean_joint_distance(&aligned, g);
    }
    Ok(total / pred.len() as f64 * MM)
}

/// Mean per-joint geodesic rotation error (degrees).
pub fn mpjre(pred: &[Vec<Rotation>], gt: &[Vec<Rotation>]) -> Result<f64> {
    check_frames(pred, gt)?;
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| p.iter().zip(g).map(|(a, b)| geodesic_angle(a, b)).sum::<f64>() / p.len() as f64)
        .sum();
    Ok((total / pred.len() as f64).to_degrees())
}

/// Mean norm of the acceleration difference (m/s²) over joints and frames.
/// Accelerations are central second differences with replicated endpoints.
pub fn accel_error(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], dt: f64) -> Result<f64> {
    check_frames(pred, gt)?;
    let joints = pred[0].len();
    let track = |s: &[Vec<Vec3>], j: usize| -> Result<Vec<Vec3>> {
        Ok(finite_diff_accel(&TimeSeries3::new(s.iter().map(|f| f[j]).collect(), dt)?)?.samples)
    };
    let mut total = 0.0;
    for j in 0..joints {
        let (a, b) = (track(pred, j)?, track(gt, j)?);
        total += a.iter().zip(&b).map(|(x, y)| (x - y).norm()).sum::<f64>();
    }
    Ok(total / (joints * pred.len()) as f64)
}

/// Mean horizontal foot speed over contact frames (m/s); 0 without contact.
/// Contact labels come from `labels`, motion from `seq`.
pub fn foot_sliding(seq: &MotionSequence, labels: &MotionSequence) -> Result<f64> {
    if seq.len() != labels.len() {
        return Err(GripError::LengthMismatch(seq.len(), labels.len()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (foot, &j) in FOOT_POINTS.iter().enumerate() {
        let path: Vec<Vec3> = seq.joint_pos.iter().map(|f| f[j]).collect();
        let vel = finite_diff_velocity(&path, seq.dt);
        for (t, v) in vel.iter().enumerate() {
            if labels.foot_in_contact(t, foot) {
                total += v.xy().norm();
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Mean depth of the foot points below the terrain surface (mm), averaged over feet.
pub fn foot_penetration(seq: &MotionSequence, terrain: &Terrain) -> Result<f64> {
    if seq.is_empty() {
        return Err(GripError::EmptySet);
    }
    let mut total = 0.0;
    for &j in &FOOT_POINTS {
        let depth: f64 = seq.joint_pos.iter().map(|f| (terrain.height(f[j].x, f[j].y) - f[j].z).max(0.0)).sum();
        total += depth / seq.len() as f64;
    }
    Ok(total / FOOT_POINTS.len() as f64 * MM)
}

/// Root-mean-square vertical force error per foot, averaged over feet (N).
pub fn vgrf_error(pred: &[[f64; 2]], measured: &[[f64; 2]]) -> Result<f64> {
    if pred.len() != measured.len() {
        return Err(GripError::LengthMismatch(pred.len(), measured.len()));
    }
    if pred.is_empty() {
        return Err(GripError::EmptySet);
    }
    let mut total = 0.0;
    for foot in 0..2 {
        let mse = pred.iter().zip(measured).map(|(p, m)| (p[foot] - m[foot]).powi(2)).sum::<f64>() / pred.len() as f64;
        total += mse.sqrt();
    }
    Ok(total / 2.0)
}

/// Fraction of sequences completed with zero detected falls.
pub fn success_rate(fall_counts: &[usize]) -> Result<f64> {
    if fall_counts.is_empty() {
        return Err(GripError::EmptySet);
    }
    Ok(fall_counts.iter().filter(|&&f| f == 0).count() as f64 / fall_counts.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(rename = "MPJPE")]
    pub mpjpe: f64,
    #[serde(rename = "PEL-MPJPE")]
    pub pel_mpjpe: f64,
    #[serde(rename = "PA-MPJPE")]
    pub pa_mpjpe: f64,
    #[serde(rename = "MPJRE")]
    pub mpjre: f64,
    #[serde(rename = "Acc")]
    pub acc: f64,
    #[serde(rename = "FS")]
    pub fs: f64,
    #[serde(rename = "FP")]
    pub fp: f64,
    #[serde(rename = "vGRF")]
    pub vgrf: Option<f64>,
    #[serde(rename = "Succ. Rate")]
    pub success_rate: Option<f64>,
}

impl MetricReport {
    /// Column names and units in report order.
    pub const COLUMNS: [(&'static str, &'static str); 9] = [
        ("MPJPE", "mm"),
        ("PEL-MPJPE", "mm"),
        ("PA-MPJPE", "mm"),
        ("MPJRE", "deg"),
        ("Acc", "m/s^2"),
        ("FS", "m/s"),
        ("FP", "mm"),
        ("vGRF", "N"),
        ("Succ. Rate", "fraction"),
    ];

    pub fn validate(&self) -> Result<()> {
        let vals = [self.mpjpe, self.pel_mpjpe, self.pa_mpjpe, self.mpjre, self.acc, self.fs, self.fp, self.vgrf.unwrap_or(0.0)];
        if !vals.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            return Err(GripError::NumericalDivergence("metric outside [0, ∞)".into()));
        }
        if let Some(s) = self.success_rate {
            if !(0.0..=1.0).contains(&s) {
                return Err(GripError::NumericalDivergence(format!("success rate {s}")));
            }
        }
        Ok(())
    }
}

/// Segment boundaries: full `segment_frames` chunks plus a trailing chunk of at least 3 frames.
pub fn segments(len: usize, segment_frames: usize) -> Vec<std::ops::Range<usize>> {
    let seg = segment_frames.max(1);
    (0..len)
        .step_by(seg)
        .map(|s| s..(s + seg).min(len))
        .filter(|r| r.len() >= MIN_SEGMENT_FRAMES)
        .collect()
}

fn segment_report(pred: &MotionSequence, gt: &MotionSequence, terrain: &Terrain, with_grf: bool) -> Result<MetricReport> {
    Ok(MetricReport {
        mpjpe: mpjpe(&pred.joint_pos, &gt.joint_pos)?,
        pel_mpjpe: pel_mpjpe(&pred.joint_pos, &gt.joint_pos)?,
        pa_mpjpe: pa_mpjpe(&pred.joint_pos, &gt.joint_pos)?,
        mpjre: mpjre(&pred.joint_rot, &gt.joint_rot)?,
        acc: accel_error(&pred.joint_pos, &gt.joint_pos, pred.dt)?,
        fs: foot_sliding(pred, gt)?,
        fp: foot_penetration(pred, terrain)?,
        vgrf: if with_grf { Some(vgrf_error(&pred.grf, &gt.grf)?) } else { None },
        success_rate: None,
    })
}

/// Score `pred` against `gt` segment by segment and average the segment scores.
/// Contact labels for foot sliding come from `gt`; vGRF is reported when `with_grf`.
pub fn evaluate(
    pred: &MotionSequence,
    gt: &MotionSequence,
    terrain: &Terrain,
    segment_frames: usize,
    with_grf: bool,
    exec: Exec,
) -> Result<MetricReport> {
    pred.validate()?;
    gt.validate()?;
    if pred.len() != gt.len() {
        return Err(GripError::LengthMismatch(pred.len(), gt.len()));
    }
    let ranges = segments(pred.len(), segment_frames);
    if ranges.is_empty() {
        return Err(GripError::SequenceTooShort { needed: MIN_SEGMENT_FRAMES, got: pred.len() });
    }
    let reports = par::map(exec, &ranges, |r| segment_report(&pred.slice(r.clone()), &gt.slice(r.clone()), terrain, with_grf))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_report(&reports))
}

/// Arithmetic mean of segment reports (order-independent).
pub fn mean_report(reports: &[MetricReport]) -> MetricReport {
    let n = reports.len().max(1) as f64;
    let avg = |f: &dyn Fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let avg_opt = |f: &dyn Fn(&MetricReport) -> Option<f64>| {
        let vals: Vec<f64> = reports.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    MetricReport {
        mpjpe: avg(&|r| r.mpjpe),
        pel_mpjpe: avg(&|r| r.pel_mpjpe),
        pa_mpjpe: avg(&|r| r.pa_mpjpe),
        mpjre: avg(&|r| r.mpjre),
        acc: avg(&|r| r.acc),
        fs: avg(&|r| r.fs),
        fp: avg(&|r| r.fp),
        vgrf: avg_opt(&|r| r.vgrf),
        success_rate: avg_opt(&|r| r.success_rate),
    }
}
