//! Rotation, alignment and signal primitives.
//!
//! Frame convention everywhere in the crate: right-handed, z-up, gravity
//! `(0, 0, -9.81)` m/s², subject facing +y in the T-pose.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use crate::error::{GripError, Result};

pub type Vec3 = Vector3<f64>;

/// Gravity vector in the global frame.
pub const GRAVITY: Vec3 = Vec3::new(0.0, 0.0, -9.81);
/// Forward axis of the body in the global frame (T-pose faces +y).
pub const FORWARD_AXIS: Vec3 = Vec3::new(0.0, 1.0, 0.0);

const ROTATION_TOL: f64 = 1e-9;

/// Proper orthonormal 3×3 matrix.
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Rotation({:?})", self.to_row_major())
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Checked constructor: columns orthonormal and det = +1 within 1e-9.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(GripError::InvalidRotation("non-finite entry".into()));
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).amax();
        let det = m.determinant();
        if ortho > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(GripError::InvalidRotation(format!(
                "orthonormality error {ortho:e}, det {det}"
            )));
        }
        Ok(Rotation(m))
    }

    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Nearest rotation (Frobenius) to an arbitrary matrix, via SVD.
    pub fn project(m: &Matrix3<f64>) -> Result<Self> {
        let svd = m.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(GripError::DegenerateInput("SVD failed".into())),
        };
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            let imin = svd.singular_values.imin();
            d[(imin, imin)] = -1.0;
        }
        Ok(Rotation(u * d * v_t))
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        Self::exp(&(axis / n * angle))
    }

    /// Exponential map from a rotation vector.
    pub fn exp(v: &Vec3) -> Self {
        Rotation(*Rotation3::new(*v).matrix())
    }

    /// Logarithm map; returns the rotation vector with angle in `[0, π]`.
    pub fn log(&self) -> Vec3 {
        // quaternion route: the matrix form returns NaN when rounding pushes the trace past 3
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.0));
        let q = if q.w < 0.0 { UnitQuaternion::new_unchecked(-q.into_inner()) } else { q };
        q.scaled_axis()
    }

    pub fn rx(angle: f64) -> Self {
        Self::exp(&Vec3::new(angle, 0.0, 0.0))
    }

    pub fn ry(angle: f64) -> Self {
        Self::exp(&Vec3::new(0.0, angle, 0.0))
    }

    pub fn rz(angle: f64) -> Self {
        Self::exp(&Vec3::new(0.0, 0.0, angle))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    /// Re-orthonormalize after long products.
    pub fn renormalized(&self) -> Self {
        Self::project(&self.0).unwrap_or(*self)
    }

    pub fn to_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.0))
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>) -> Self {
        Rotation(*q.to_rotation_matrix().matrix())
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)], m[(0, 1)], m[(0, 2)],
            m[(1, 0)], m[(1, 1)], m[(1, 2)],
            m[(2, 0)], m[(2, 1)], m[(2, 2)],
        ]
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_row_slice(v))
    }

    pub fn is_valid(&self) -> bool {
        Self::from_matrix(self.0).is_ok()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<Vec3> for &Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<&Vec3> for &Rotation {
    type Output = Vec3;
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Cross-product matrix `[v]×`.
pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Continuous 6D rotation representation: the first two matrix columns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rot6D {
    pub a: Vec3,
    pub b: Vec3,
}

impl Rot6D {
    pub fn new(a: Vec3, b: Vec3) -> Self {
        Rot6D { a, b }
    }

    pub fn identity() -> Self {
        Rot6D { a: Vec3::x(), b: Vec3::y() }
    }

    /// `[a.x, a.y, a.z, b.x, b.y, b.z]`.
    pub fn to_array(&self) -> [f64; 6] {
        [self.a.x, self.a.y, self.a.z, self.b.x, self.b.y, self.b.z]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Rot6D {
            a: Vec3::new(v[0], v[1], v[2]),
            b: Vec3::new(v[3], v[4], v[5]),
        }
    }
}

/// Gram–Schmidt decoding of a 6D rotation.
pub fn matrix_from_rot6d(v: &Rot6D) -> Result<Rotation> {
    let na = v.a.norm();
    if !(na > 1e-12) {
        return Err(GripError::DegenerateInput(format!("rot6d first column norm {na:e}")));
    }
    let e1 = v.a / na;
    let b_perp = v.b - e1 * v.b.dot(&e1);
    let nb = b_perp.norm();
    if !(nb > 1e-12) {
        return Err(GripError::DegenerateInput("rot6d columns parallel".into()));
    }
    let e2 = b_perp / nb;
    let e3 = e1.cross(&e2);
    Ok(Rotation(Matrix3::from_columns(&[e1, e2, e3])))
}

pub fn rot6d_from_matrix(r: &Rotation) -> Rot6D {
    Rot6D {
        a: r.0.column(0).into_owned(),
        b: r.0.column(1).into_owned(),
    }
}

/// Geodesic distance on SO(3), in radians, in `[0, π]`.
pub fn geodesic_angle(a: &Rotation, b: &Rotation) -> f64 {
    // atan2 form stays accurate near zero, where acos loses half the digits
    let m = a.0.transpose() * b.0;
    let s = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm() / 2.0;
    let c = (m.trace() - 1.0) / 2.0;
    s.atan2(c)
}

/// Pure-yaw rotation carrying `forward_axis` onto the ground-plane projection
/// of `root * forward_axis`. `None` when that projection is shorter than 1e-6.
pub fn try_heading_rotation(root: &Rotation, forward_axis: &Vec3) -> Option<Rotation> {
    let f = root * forward_axis;
    let fh = Vec3::new(f.x, f.y, 0.0);
    let rh = Vec3::new(forward_axis.x, forward_axis.y, 0.0);
    if fh.norm() <= 1e-6 || rh.norm() <= 1e-6 {
        return None;
    }
    let yaw = (rh.x * fh.y - rh.y * fh.x).atan2(rh.dot(&fh));
    Some(Rotation::rz(yaw))
}

/// Heading (yaw) of a root orientation about the default forward axis.
/// Falls back to identity when the forward axis is near-vertical; use
/// [`HeadingTracker`] for the previous-frame fallback.
pub fn heading_rotation(root: &Rotation, forward_axis: &Vec3) -> Rotation {
    try_heading_rotation(root, forward_axis).unwrap_or_else(Rotation::identity)
}

/// Heading extraction that reuses the last valid heading when the forward
/// axis points (near-)vertically.
#[derive(Clone, Debug, Default)]
pub struct HeadingTracker {
    last: Option<Rotation>,
}

impl HeadingTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, root: &Rotation) -> Rotation {
        match try_heading_rotation(root, &FORWARD_AXIS) {
            Some(h) => {
                self.last = Some(h);
                h
            }
            None => self.last.unwrap_or_else(Rotation::identity),
        }
    }
}

/// `x ↦ s·R·x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityTransform {
    pub r: Rotation,
    pub t: Vec3,
    pub s: f64,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform { r: Rotation::identity(), t: Vec3::zeros(), s: 1.0 }
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.r * *x * self.s + self.t
    }

    /// Sum of squared residuals `Σ‖s·R·src + t − dst‖²`.
    pub fn residual(&self, src: &[Vec3], dst: &[Vec3]) -> f64 {
        src.iter().zip(dst).map(|(s, d)| (self.apply(s) - d).norm_squared()).sum()
    }
}

fn centroid(pts: &[Vec3]) -> Vec3 {
    pts.iter().fold(Vec3::zeros(), |acc, p| acc + p) / pts.len() as f64
}

/// Least-squares similarity (or rigid, when `with_scale` is false) transform
/// mapping `src` onto `dst` (Umeyama).
pub fn umeyama_align(src: &[Vec3], dst: &[Vec3], with_scale: bool) -> Result<SimilarityTransform> {
    if src.len() != dst.len() {
        return Err(GripError::DegenerateInput(format!(
            "point sets differ in length ({} vs {})",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(GripError::DegenerateInput(format!("need ≥ 3 points, got {}", src.len())));
    }
    let n = src.len() as f64;
    let mu_s = centroid(src);
    let mu_d = centroid(dst);

    let mut cov = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let sc = s - mu_s;
        let dc = d - mu_d;
        cov += dc * sc.transpose();
        scatter += sc * sc.transpose();
        var_s += sc.norm_squared();
    }
    cov /= n;
    var_s /= n;

    let mut sv = scatter.symmetric_eigenvalues().map(f64::abs).as_slice().to_vec();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 1e-24) || sv[1] <= 1e-12 * sv[0] {
        return Err(GripError::DegenerateInput("source points are collinear".into()));
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GripError::DegenerateInput("SVD failed".into())),
    };
    let mut d = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        let imin = svd.singular_values.imin();
        d[(imin, imin)] = -1.0;
    }
    let r = u * d * v_t;
    let s = if with_scale {
        (Matrix3::from_diagonal(&svd.singular_values) * d).trace() / var_s
    } else {
        1.0
    };
    let t = mu_d - r * mu_s * s;
    Ok(SimilarityTransform { r: Rotation(r), t, s })
}

/// Uniformly sampled 3-vector series.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries3 {
    pub samples: Vec<Vec3>,
    pub dt: f64,
}

impl TimeSeries3 {
    pub fn new(samples: Vec<Vec3>, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(GripError::DegenerateInput(format!("dt must be positive, got {dt}")));
        }
        if samples.is_empty() {
            return Err(GripError::SequenceTooShort { needed: 1, got: 0 });
        }
        Ok(TimeSeries3 { samples, dt })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Central second difference; the two endpoints copy their interior neighbour.
pub fn finite_diff_accel(pos: &TimeSeries3) -> Result<TimeSeries3> {
    let p = &pos.samples;
    let n = p.len();
    if n < 3 {
        return Err(GripError::SequenceTooShort { needed: 3, got: n });
    }
    let inv = 1.0 / (pos.dt * pos.dt);
    let mut out = Vec::with_capacity(n);
    out.push(Vec3::zeros());
    for t in 1..n - 1 {
        out.push((p[t + 1] - p[t] * 2.0 + p[t - 1]) * inv);
    }
    out[0] = out[1];
    out.push(out[n - 2]);
    Ok(TimeSeries3 { samples: out, dt: pos.dt })
}

/// Central first difference with one-sided differences at the ends.
pub fn finite_diff_velocity(pos: &[Vec3], dt: f64) -> Vec<Vec3> {
    let n = pos.len();
    match n {
        0 => vec![],
        1 => vec![Vec3::zeros()],
        _ => (0..n)
            .map(|t| {
                if t == 0 {
                    (pos[1] - pos[0]) / dt
                } else if t == n - 1 {
                    (pos[n - 1] - pos[n - 2]) / dt
                } else {
                    (pos[t + 1] - pos[t - 1]) / (2.0 * dt)
                }
            })
            .collect(),
    }
}

/// Second-order Butterworth low-pass section (bilinear transform with
/// pre-warping), direct form II transposed.
#[derive(Clone, Copy, Debug)]
pub struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    pub fn butterworth_lowpass(cutoff_hz: f64, dt: f64) -> Result<Self> {
        let nyquist = 0.5 / dt;
        if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) || !(dt > 0.0) {
            return Err(GripError::InvalidCutoff { cutoff_hz, dt });
        }
        let k = (std::f64::consts::PI * cutoff_hz * dt).tan();
        let sqrt2 = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + sqrt2 * k + k * k);
        let b0 = k * k * norm;
        Ok(Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - sqrt2 * k + k * k) * norm],
        })
    }

    /// Filter state that makes a constant input `x0` a fixed point.
    pub fn steady_state(&self, x0: f64) -> [f64; 2] {
        let z2 = (self.b[2] - self.a[1]) * x0;
        let z1 = (1.0 - self.b[0]) * x0;
        [z1, z2]
    }

    #[inline]
    pub fn tick(&self, x: f64, z: &mut [f64; 2]) -> f64 {
        let y = self.b[0] * x + z[0];
        z[0] = self.b[1] * x - self.a[0] * y + z[1];
        z[1] = self.b[2] * x - self.a[1] * y;
        y
    }

    fn run(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.steady_state(x[0]);
        x.iter().map(|&v| self.tick(v, &mut z)).collect()
    }

    /// Zero-phase forward–backward filtering with odd-reflection padding.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = 9.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let mut y = self.run(&ext);
        y.reverse();
        let mut y = self.run(&y);
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}

/// Default cutoff applied to IMU signals before estimation.
pub const DEFAULT_LOWPASS_HZ: f64 = 5.0;

/// Zero-phase second-order Butterworth low-pass on each axis.
pub fn lowpass(x: &TimeSeries3, cutoff_hz: f64) -> Result<TimeSeries3> {
    let bq = Biquad::butterworth_lowpass(cutoff_hz, x.dt)?;
    let axes: Vec<Vec<f64>> = (0..3)
        .map(|k| bq.filtfilt(&x.samples.iter().map(|v| v[k]).collect::<Vec<_>>()))
        .collect();
    let samples = (0..x.len()).map(|t| Vec3::new(axes[0][t], axes[1][t], axes[2][t])).collect();
    Ok(TimeSeries3 { samples, dt: x.dt })
}

fn variance(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// Lag `k` maximizing the normalized cross-correlation `Σ a[t]·b[t+k]` of the
/// zero-mean signals, searched over `|k| ≤ max_lag`. A positive result means
/// `b` lags `a` by `k` frames. Ties resolve to the smallest `|k|`.
pub fn cross_correlation_offset(a: &[f64], b: &[f64], max_lag: usize) -> Result<i64> {
    let min_len = a.len().min(b.len());
    if min_len <= max_lag {
        return Err(GripError::SequenceTooShort { needed: max_lag + 1, got: min_len });
    }
    for s in [a, b] {
        let v = variance(s);
        if !(v >= 1e-12) {
            return Err(GripError::FlatSignal { variance: v });
        }
    }
    let ma = a.iter().sum::<f64>() / a.len() as f64;
    let mb = b.iter().sum::<f64>() / b.len() as f64;
    let a0: Vec<f64> = a.iter().map(|v| v - ma).collect();
    let b0: Vec<f64> = b.iter().map(|v| v - mb).collect();
    let norm = (a0.iter().map(|v| v * v).sum::<f64>() * b0.iter().map(|v| v * v).sum::<f64>()).sqrt();

    let score = |k: i64| -> f64 {
        let (start, end) = ((-k).max(0), (a0.len() as i64).min(b0.len() as i64 - k));
        (start..end).map(|t| a0[t as usize] * b0[(t + k) as usize]).sum::<f64>() / norm
    };

    let mut best_lag = 0i64;
    let mut best = score(0);
    for m in 1..=max_lag as i64 {
        for k in [m, -m] {
            let s = score(k);
            if s > best {
                best = s;
                best_lag = k;
            }
        }
    }
    Ok(best_lag)
}

/// Chordal L2 mean: average the matrices, project back onto SO(3).
pub fn chordal_mean(rots: &[Rotation]) -> Result<Rotation> {
    if rots.is_empty() {
        return Err(GripError::EmptySet);
    }
    let sum = rots.iter().fold(Matrix3::zeros(), |acc, r| acc + r.0);
    Rotation::project(&(sum / rots.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    pub(crate) fn random_rotation(rng: &mut impl Rng) -> Rotation {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
        ));
        Rotation::from_quaternion(&q)
    }

    #[test]
    fn log_survives_rounding_past_identity() {
        let r = Rotation::from_matrix_unchecked(Matrix3::identity() * (1.0 + 1e-15));
        assert!(r.log().iter().all(|v| v.is_finite() && v.abs() < 1e-12));
        let pi = Rotation::rx(std::f64::consts::PI).log();
        assert!((pi.norm() - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn rot6d_fixed_points() {
        let r = matrix_from_rot6d(&Rot6D::identity()).unwrap();
        assert_eq!(r, Rotation::identity());
        let r = matrix_from_rot6d(&Rot6D::new(Vec3::new(2.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 0.0))).unwrap();
        assert_abs_diff_eq!(*r.matrix(), Matrix3::identity(), epsilon = 1e-15);
        let yaw = rot6d_from_matrix(&Rotation::rz(FRAC_PI_2));
        assert_abs_diff_eq!(yaw.a, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
        assert_abs_diff_eq!(yaw.b, Vec3::new(-1.0, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn rot6d_degenerate() {
        assert!(matches!(
            matrix_from_rot6d(&Rot6D::new(Vec3::zeros(), Vec3::y())),
            Err(GripError::DegenerateInput(_))
        ));
        assert!(matches!(
            matrix_from_rot6d(&Rot6D::new(Vec3::x(), Vec3::x() * 3.0)),
            Err(GripError::DegenerateInput(_))
        ));
    }

    #[test]
    fn rot6d_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let r = random_rotation(&mut rng);
            let back = matrix_from_rot6d(&rot6d_from_matrix(&r)).unwrap();
            assert!((back.matrix() - r.matrix()).amax() < 1e-12);
        }
    }

    #[test]
    fn geodesic_matches_quaternion_oracle() {
        assert_eq!(geodesic_angle(&Rotation::identity(), &Rotation::identity()), 0.0);
        assert_abs_diff_eq!(geodesic_angle(&Rotation::identity(), &Rotation::rz(FRAC_PI_2)), FRAC_PI_2, epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let a = random_rotation(&mut rng);
            let b = random_rotation(&mut rng);
            let qa = a.to_quaternion();
            let qb = b.to_quaternion();
            let oracle = 2.0 * qa.coords.dot(&qb.coords).abs().min(1.0).acos();
            assert_abs_diff_eq!(geodesic_angle(&a, &b), oracle, epsilon = 1e-9);
            let q = random_rotation(&mut rng);
            assert_abs_diff_eq!(geodesic_angle(&(q * a), &(q * b)), geodesic_angle(&a, &b), epsilon = 1e-9);
            assert_abs_diff_eq!(geodesic_angle(&b, &a), geodesic_angle(&a, &b), epsilon = 1e-12);
        }
    }

    #[test]
    fn heading_cases() {
        for deg in [-170.0f64, -45.0, 0.0, 30.0, 120.0] {
            let y = Rotation::rz(deg.to_radians());
            let h = heading_rotation(&y, &FORWARD_AXIS);
            assert!((h.matrix() - y.matrix()).amax() < 1e-12);
        }
        let h = heading_rotation(&Rotation::rx(0.4), &FORWARD_AXIS);
        assert!((h.matrix() - Matrix3::identity()).amax() < 1e-12);
        // compose-and-project oracle
        let r = Rotation::rz(30f64.to_radians()) * Rotation::rx(20f64.to_radians());
        let h = heading_rotation(&r, &FORWARD_AXIS);
        assert!(geodesic_angle(&h, &Rotation::rz(30f64.to_radians())) < 1e-9);
        // idempotence
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let r = random_rotation(&mut rng);
            let h = heading_rotation(&r, &FORWARD_AXIS);
            let hh = heading_rotation(&h, &FORWARD_AXIS);
            assert!((h.matrix() - hh.matrix()).amax() < 1e-12);
        }
    }

    #[test]
    fn heading_fallback_reuses_previous() {
        let mut tracker = HeadingTracker::new();
        let straight_up = Rotation::rx(FRAC_PI_2);
        assert_eq!(tracker.update(&straight_up), Rotation::identity());
        let yaw = Rotation::rz(0.7);
        tracker.update(&yaw);
        let h = tracker.update(&(yaw * straight_up));
        assert!(geodesic_angle(&h, &yaw) < 1e-12);
    }

    #[test]
    fn umeyama_recovers_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let src: Vec<Vec3> = (0..50)
            .map(|_| Vec3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()) * 2.0)
            .collect();
        let same = umeyama_align(&src, &src, true).unwrap();
        assert!(geodesic_angle(&same.r, &Rotation::identity()) < 1e-9);
        assert!(same.t.norm() < 1e-9 && (same.s - 1.0).abs() < 1e-9);

        let r = Rotation::rz(FRAC_PI_2);
        let dst: Vec<Vec3> = src.iter().map(|p| r * *p * 2.0 + Vec3::new(1.0, 0.0, 0.0)).collect();
        let est = umeyama_align(&src, &dst, true).unwrap();
        assert!((est.r.matrix() - r.matrix()).amax() < 1e-9);
        assert!((est.t - Vec3::new(1.0, 0.0, 0.0)).amax() < 1e-9);
        assert!((est.s - 2.0).abs() < 1e-9);

        let rigid = umeyama_align(&src, &dst, false).unwrap();
        assert_eq!(rigid.s, 1.0);
    }

    #[test]
    fn umeyama_rejects_collinear() {
        let pts = vec![Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), Vec3::new(2.0, 2.0, 2.0)];
        assert!(matches!(umeyama_align(&pts, &pts, true), Err(GripError::DegenerateInput(_))));
        assert!(umeyama_align(&pts[..2], &pts[..2], true).is_err());
    }

    #[test]
    fn umeyama_beats_random_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src: Vec<Vec3> = (0..20).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let dst: Vec<Vec3> = (0..20).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let best = umeyama_align(&src, &dst, true).unwrap().residual(&src, &dst);
        for _ in 0..100 {
            let cand = SimilarityTransform {
                r: random_rotation(&mut rng),
                t: Vec3::new(rng.random(), rng.random(), rng.random()) - Vec3::repeat(0.5),
                s: rng.random::<f64>() * 2.0 + 0.01,
            };
            assert!(best <= cand.residual(&src, &dst) + 1e-12);
        }
    }

    #[test]
    fn finite_differences() {
        let constant = TimeSeries3::new(vec![Vec3::new(1.0, 2.0, 3.0); 10], 0.01).unwrap();
        assert!(finite_diff_accel(&constant).unwrap().samples.iter().all(|a| a.norm() == 0.0));
        let ramp = TimeSeries3::new((0..10).map(|i| Vec3::repeat(i as f64 * 0.3)).collect(), 0.01).unwrap();
        assert!(finite_diff_accel(&ramp).unwrap().samples.iter().all(|a| a.norm() < 1e-9));

        let dt = 0.01;
        let pos: Vec<Vec3> = (0..200).map(|i| Vec3::new(0.0, 0.0, (2.0 * PI * i as f64 * dt).sin())).collect();
        let acc = finite_diff_accel(&TimeSeries3::new(pos, dt).unwrap()).unwrap();
        for i in 1..199 {
            let t = i as f64 * dt;
            let exact = -(2.0 * PI).powi(2) * (2.0 * PI * t).sin();
            assert!((acc.samples[i].z - exact).abs() <= 1e-2 * (2.0 * PI).powi(2));
        }
        let short = TimeSeries3::new(vec![Vec3::zeros(); 2], dt).unwrap();
        assert!(matches!(finite_diff_accel(&short), Err(GripError::SequenceTooShort { .. })));
    }

    fn amplitude(x: &[f64]) -> f64 {
        x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn lowpass_response() {
        let dt = 0.01;
        let constant = TimeSeries3::new(vec![Vec3::new(3.0, -1.0, 9.81); 300], dt).unwrap();
        let y = lowpass(&constant, 5.0).unwrap();
        for (a, b) in y.samples.iter().zip(&constant.samples) {
            assert!((a - b).amax() < 1e-9);
        }
        let n = 1000;
        let hf: Vec<Vec3> = (0..n).map(|i| Vec3::repeat((2.0 * PI * 40.0 * i as f64 * dt).sin())).collect();
        let y = lowpass(&TimeSeries3::new(hf, dt).unwrap(), 5.0).unwrap();
        let mid: Vec<f64> = y.samples[100..900].iter().map(|v| v.x).collect();
        assert!(amplitude(&mid) < 0.05);

        let mix: Vec<Vec3> = (0..n)
            .map(|i| {
                let t = i as f64 * dt;
                Vec3::repeat((2.0 * PI * t).sin() + (2.0 * PI * 40.0 * t).sin())
            })
            .collect();
        let y = lowpass(&TimeSeries3::new(mix, dt).unwrap(), 5.0).unwrap();
        // project the 1 Hz component over whole cycles in the interior
        let (s, e) = (100, 900);
        let (mut c_sin, mut c_cos) = (0.0, 0.0);
        for i in s..e {
            let w = 2.0 * PI * i as f64 * dt;
            c_sin += y.samples[i].x * w.sin();
            c_cos += y.samples[i].x * w.cos();
        }
        let amp = 2.0 * (c_sin * c_sin + c_cos * c_cos).sqrt() / (e - s) as f64;
        assert!((amp - 1.0).abs() < 0.05, "1 Hz amplitude {amp}");

        assert!(matches!(lowpass(&constant, 50.0), Err(GripError::InvalidCutoff { .. })));
        assert!(matches!(lowpass(&constant, 0.0), Err(GripError::InvalidCutoff { .. })));
    }

    fn pulse_train(n: usize, centers: &[usize]) -> Vec<f64> {
        (0..n)
            .map(|t| centers.iter().map(|&c| (-((t as f64 - c as f64) / 4.0).powi(2)).exp() * 20.0).sum())
            .collect()
    }

    fn shift(x: &[f64], k: i64) -> Vec<f64> {
        (0..x.len() as i64)
            .map(|t| {
                let s = t - k;
                if s >= 0 && (s as usize) < x.len() { x[s as usize] } else { 0.0 }
            })
            .collect()
    }

    #[test]
    fn xcorr_recovers_shifts() {
        let a = pulse_train(800, &[300, 360, 420]);
        assert_eq!(cross_correlation_offset(&a, &a, 100).unwrap(), 0);
        assert_eq!(cross_correlation_offset(&a, &shift(&a, 37), 100).unwrap(), 37);
        for k in -100..=100 {
            assert_eq!(cross_correlation_offset(&a, &shift(&a, k), 100).unwrap(), k);
        }
        let flat = vec![1.0; 800];
        assert!(matches!(cross_correlation_offset(&flat, &a, 10), Err(GripError::FlatSignal { .. })));
    }
}
