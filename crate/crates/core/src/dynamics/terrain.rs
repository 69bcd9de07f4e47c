//! Height-field terrain: a ground plane plus axis-aligned boxes, and the
//! heading-aligned height map around the root.

use serde::{Deserialize, Serialize};

use crate::error::{GripError, Result};
use crate::rotmath::{heading_rotation, Rotation, Vec3, FORWARD_AXIS};

/// Cells per side of the height map.
pub const HEIGHT_MAP_SIDE: usize = 25;
pub const HEIGHT_MAP_WIDTH: usize = HEIGHT_MAP_SIDE * HEIGHT_MAP_SIDE;
/// Side length of the sampled square (m).
pub const HEIGHT_MAP_EXTENT: f64 = 1.5;
/// Distance between neighbouring samples (m).
pub const HEIGHT_MAP_SPACING: f64 = HEIGHT_MAP_EXTENT / (HEIGHT_MAP_SIDE - 1) as f64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxObstacle {
    /// Footprint centre (x, y).
    pub center: [f64; 2],
    /// Footprint half extents (x, y).
    pub half_extents: [f64; 2],
    /// Top surface height (m).
    pub top: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Terrain {
    #[serde(default)]
    pub ground: f64,
    #[serde(default)]
    pub boxes: Vec<BoxObstacle>,
}

impl Terrain {
    pub fn flat() -> Self {
        Terrain::default()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, b) in self.boxes.iter().enumerate() {
            if !(b.half_extents[0] > 0.0 && b.half_extents[1] > 0.0) {
                return Err(GripError::InvalidConfig {
                    key: format!("terrain.boxes[{i}].half_extents"),
                    reason: "must be positive".into(),
                });
            }
        }
        Ok(())
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        self.boxes
            .iter()
            .filter(|b| (x - b.center[0]).abs() <= b.half_extents[0] && (y - b.center[1]).abs() <= b.half_extents[1])
            .map(|b| b.top)
            .fold(self.ground, f64::max)
    }
}

/// Heights relative to the ground under the root on a 25×25 grid, rows along the
/// heading's forward axis, columns along its right axis (column index fastest).
pub fn sample_height_map(terrain: &Terrain, root_pos: &Vec3, root_rot: &Rotation) -> Vec<f64> {
    let h = heading_rotation(root_rot, &FORWARD_AXIS);
    let spacing = HEIGHT_MAP_SPACING;
    let half = (HEIGHT_MAP_SIDE / 2) as f64;
    let base = terrain.height(root_pos.x, root_pos.y);
    let mut out = Vec::with_capacity(HEIGHT_MAP_WIDTH);
    for row in 0..HEIGHT_MAP_SIDE {
        for col in 0..HEIGHT_MAP_SIDE {
            let local = Vec3::new((col as f64 - half) * spacing, (row as f64 - half) * spacing, 0.0);
            let w = root_pos + h * local;
            out.push(terrain.height(w.x, w.y) - base);
        }
    }
    out
}
