//! Plantar pressure features and the per-frame sensor observation.
//!
//! Each foot carries 16 pressure cells. Cell positions are given in a
//! midfoot-centred frame per foot (+x lateral, +y toward the toes). The
//! compact insole input is, per foot, `[grf, cop_x, cop_y, contact_fore,
//! contact_rear]`, left foot first.

use serde::{Deserialize, Serialize};

use crate::error::{GripError, Result};
use crate::rotmath::{Rotation, Vec3};

pub const CELLS_PER_FOOT: usize = 16;
/// Scalars in the insole block of an observation (2 feet × 5).
pub const INSOLE_WIDTH: usize = 10;
/// Scalars per IMU in a flattened observation: row-major rotation then acceleration.
pub const IMU_WIDTH: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InsoleConfig {
    /// Summed force in a region (N) at which that region counts as in contact.
    pub contact_threshold: f64,
    /// Total force (N) below which the centre of pressure is reported as (0, 0).
    pub cop_min_force: f64,
}

impl Default for InsoleConfig {
    fn default() -> Self {
        InsoleConfig { contact_threshold: 10.0, cop_min_force: 5.0 }
    }
}

/// Cell layout of a pair of insoles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    pub left: [[f64; 2]; CELLS_PER_FOOT],
    pub right: [[f64; 2]; CELLS_PER_FOOT],
}

impl DeviceProfile {
    /// 4×4 grid, 0.02 m lateral pitch and 0.06 m longitudinal pitch. Cell
    /// `k = 4·row + col`, rows from heel to toe, columns from medial to lateral.
    pub fn default_grid() -> Self {
        let xs = [-0.03, -0.01, 0.01, 0.03];
        let ys = [-0.09, -0.03, 0.03, 0.09];
        let mut cells = [[0.0; 2]; CELLS_PER_FOOT];
        for (row, y) in ys.iter().enumerate() {
            for (col, x) in xs.iter().enumerate() {
                cells[4 * row + col] = [*x, *y];
            }
        }
        DeviceProfile { name: "grid4x4".into(), left: cells, right: cells }
    }

    pub fn foot(&self, side: usize) -> &[[f64; 2]; CELLS_PER_FOOT] {
        if side == 0 {
            &self.left
        } else {
            &self.right
        }
    }
}

/// Raw cell forces (N) for both feet.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PressureFrame {
    pub left: [f64; CELLS_PER_FOOT],
    pub right: [f64; CELLS_PER_FOOT],
}

impl PressureFrame {
    pub fn foot(&self, side: usize) -> &[f64; CELLS_PER_FOOT] {
        if side == 0 {
            &self.left
        } else {
            &self.right
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in self.left.iter().chain(&self.right) {
            if !(c.is_finite() && *c >= 0.0) {
                return Err(GripError::DegenerateInput(format!("pressure cell value {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FootFeatures {
    /// Vertical force (N).
    pub grf: f64,
    /// Centre of pressure (m), midfoot-centred.
    pub cop: [f64; 2],
    pub contact_fore: bool,
    pub contact_rear: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InsoleFeatures {
    pub left: FootFeatures,
    pub right: FootFeatures,
}

impl InsoleFeatures {
    pub fn to_array(&self) -> [f64; INSOLE_WIDTH] {
        let f = |x: &FootFeatures| {
            [x.grf, x.cop[0], x.cop[1], x.contact_fore as u8 as f64, x.contact_rear as u8 as f64]
        };
        let (l, r) = (f(&self.left), f(&self.right));
        let mut out = [0.0; INSOLE_WIDTH];
        out[..5].copy_from_slice(&l);
        out[5..].copy_from_slice(&r);
        out
    }

    /// Either region of the foot in contact, left then right.
    pub fn in_contact(&self) -> [bool; 2] {
        [
            self.left.contact_fore || self.left.contact_rear,
            self.right.contact_fore || self.right.contact_rear,
        ]
    }
}

pub fn foot_features(cells: &[f64; CELLS_PER_FOOT], positions: &[[f64; 2]; CELLS_PER_FOOT], cfg: &InsoleConfig) -> FootFeatures {
    let mut grf = 0.0;
    let (mut mx, mut my) = (0.0, 0.0);
    let (mut fore, mut rear) = (0.0, 0.0);
    for (c, p) in cells.iter().zip(positions) {
        grf += c;
        mx += c * p[0];
        my += c * p[1];
        if p[1] >= 0.0 {
            fore += c;
        } else {
            rear += c;
        }
    }
    let cop = if grf >= cfg.cop_min_force { [mx / grf, my / grf] } else { [0.0, 0.0] };
    FootFeatures {
        grf,
        cop,
        contact_fore: fore >= cfg.contact_threshold,
        contact_rear: rear >= cfg.contact_threshold,
    }
}

pub fn extract_features(frame: &PressureFrame, profile: &DeviceProfile, cfg: &InsoleConfig) -> InsoleFeatures {
    InsoleFeatures {
        left: foot_features(&frame.left, &profile.left, cfg),
        right: foot_features(&frame.right, &profile.right, cfg),
    }
}

/// Attachment sites, in canonical observation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImuSite {
    LeftWrist,
    RightWrist,
    LeftFoot,
    RightFoot,
    Pelvis,
    Head,
}

impl ImuSite {
    pub const ALL: [ImuSite; 6] =
        [ImuSite::LeftWrist, ImuSite::RightWrist, ImuSite::LeftFoot, ImuSite::RightFoot, ImuSite::Pelvis, ImuSite::Head];

    /// Skeleton joint carrying the sensor.
    pub fn joint(self) -> usize {
        use crate::skeleton::*;
        match self {
            ImuSite::LeftWrist => LEFT_WRIST,
            ImuSite::RightWrist => RIGHT_WRIST,
            ImuSite::LeftFoot => LEFT_ANKLE,
            ImuSite::RightFoot => RIGHT_ANKLE,
            ImuSite::Pelvis => ROOT,
            ImuSite::Head => HEAD,
        }
    }
}

/// Which sensors feed the observation. The layout always reserves the slots of
/// the configured sites; a disabled pressure block is zero-filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub imu_count: usize,
    pub pressure: bool,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig { imu_count: 4, pressure: true }
    }
}

impl SensorConfig {
    pub fn new(imu_count: usize, pressure: bool) -> Result<Self> {
        if !(2..=6).contains(&imu_count) {
            return Err(GripError::InvalidConfig {
                key: "sensors.imu_count".into(),
                reason: format!("must be in 2..=6, got {imu_count}"),
            });
        }
        Ok(SensorConfig { imu_count, pressure })
    }

    /// Parse `"4"`, `"4+pressure"`, ...
    pub fn parse(s: &str) -> Result<Self> {
        let (n, pressure) = match s.strip_suffix("+pressure") {
            Some(n) => (n, true),
            None => (s, false),
        };
        let n: usize = n.trim().parse().map_err(|_| GripError::InvalidConfig {
            key: "sensors".into(),
            reason: format!("expected <2..6>[+pressure], got {s:?}"),
        })?;
        SensorConfig::new(n, pressure)
    }

    /// Sites in observation order. Two sensors are the feet; the wrists, pelvis
    /// and head join in that order.
    pub fn sites(&self) -> Vec<ImuSite> {
        use ImuSite::*;
        let order: &[ImuSite] = match self.imu_count {
            2 => &[LeftFoot, RightFoot],
            3 => &[LeftWrist, LeftFoot, RightFoot],
            4 => &[LeftWrist, RightWrist, LeftFoot, RightFoot],
            5 => &[LeftWrist, RightWrist, LeftFoot, RightFoot, Pelvis],
            _ => &ImuSite::ALL,
        };
        order.to_vec()
    }

    pub fn width(&self) -> usize {
        IMU_WIDTH * self.imu_count + INSOLE_WIDTH
    }
}

/// One calibrated IMU sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuFrame {
    pub site: ImuSite,
    pub orientation: Rotation,
    /// Global, gravity-free (m/s²).
    pub accel: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensorObservation {
    pub config: SensorConfig,
    pub imus: Vec<ImuFrame>,
    pub insole: [f64; INSOLE_WIDTH],
}

impl SensorObservation {
    /// Flattened layout: for each site in order, the row-major rotation (9) and
    /// acceleration (3), then the insole block (10).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.config.width());
        for f in &self.imus {
            out.extend_from_slice(&f.orientation.to_row_major());
            out.extend_from_slice(f.accel.as_slice());
        }
        out.extend_from_slice(&self.insole);
        out
    }
}

pub fn build_sensor_observation(
    imus: &[ImuFrame],
    feats: &InsoleFeatures,
    config: &SensorConfig,
) -> Result<SensorObservation> {
    let sites = config.sites();
    if imus.len() != sites.len() {
        return Err(GripError::LayoutMismatch(format!("expected {} IMUs, got {}", sites.len(), imus.len())));
    }
    for (f, s) in imus.iter().zip(&sites) {
        if f.site != *s {
            return Err(GripError::LayoutMismatch(format!("expected {s:?}, got {:?}", f.site)));
        }
    }
    Ok(SensorObservation {
        config: *config,
        imus: imus.to_vec(),
        insole: if config.pressure { feats.to_array() } else { [0.0; INSOLE_WIDTH] },
    })
}
