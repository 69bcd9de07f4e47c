//! Policy observation `sen ‖ kin ‖ self ‖ env`.

use super::terrain::HEIGHT_MAP_WIDTH;
use crate::error::{GripError, Result};
use crate::insole::SensorObservation;
use crate::rotmath::{heading_rotation, rot6d_from_matrix, Vec3, FORWARD_AXIS};
use crate::skeleton::NUM_JOINTS;
use crate::statediff::{AblationMask, SimState, StateDifference, STATE_DIFF_WIDTH};

/// Per joint: position (3), 6D rotation (6), linear (3) and angular velocity (3).
pub const SELF_WIDTH: usize = 15 * NUM_JOINTS;
/// Index of the root height inside the self block.
pub const SELF_ROOT_HEIGHT: usize = 2;

/// Heading-aligned self state. Positions are relative to the root's ground
/// projection, so their z stays absolute.
pub fn self_observation(sim: &SimState) -> Result<Vec<f64>> {
    sim.validate()?;
    let ht = heading_rotation(&sim.root_rot(), &FORWARD_AXIS).transpose();
    let root = sim.root_pos();
    let ground = Vec3::new(root.x, root.y, 0.0);
    let mut out = Vec::with_capacity(SELF_WIDTH);
    for j in 0..NUM_JOINTS {
        out.extend_from_slice((ht * (sim.joint_pos[j] - ground)).as_slice());
        out.extend(rot6d_from_matrix(&(ht * sim.joint_rot[j])).to_array());
        out.extend_from_slice((ht * sim.joint_linvel[j]).as_slice());
        out.extend_from_slice((ht * sim.joint_angvel[j]).as_slice());
    }
    Ok(out)
}

/// State difference with the blocks the mask excludes set to zero.
pub fn masked_difference(diff: &StateDifference, mask: &AblationMask) -> Vec<f64> {
    let zero = |v: &[f64], on: bool| if on { v.to_vec() } else { vec![0.0; v.len()] };
    let pos = mask.j_glo || mask.j_rel;
    [
        zero(&diff.d_theta, mask.o),
        zero(&diff.d_v, mask.v),
        zero(&diff.d_omega, mask.a),
        zero(&diff.theta_leaf, mask.o),
        zero(&diff.d_p, pos),
        zero(&diff.p, pos),
    ]
    .concat()
}

pub fn observation_width(sensor_width: usize) -> usize {
    sensor_width + STATE_DIFF_WIDTH + SELF_WIDTH + HEIGHT_MAP_WIDTH
}

pub fn build_observation(
    sen: &SensorObservation,
    kin_diff: &StateDifference,
    sim: &SimState,
    hmap: &[f64],
    mask: &AblationMask,
) -> Result<Vec<f64>> {
    let sen_flat = sen.flatten();
    if sen_flat.len() != sen.config.width() {
        return Err(GripError::LayoutMismatch(format!("sensor block {} != {}", sen_flat.len(), sen.config.width())));
    }
    if hmap.len() != HEIGHT_MAP_WIDTH {
        return Err(GripError::LayoutMismatch(format!("height map has {} cells, expected {HEIGHT_MAP_WIDTH}", hmap.len())));
    }
    let kin = masked_difference(kin_diff, mask);
    if kin.len() != STATE_DIFF_WIDTH {
        return Err(GripError::LayoutMismatch(format!("state difference width {}", kin.len())));
    }
    let mut out = Vec::with_capacity(observation_width(sen_flat.len()));
    out.extend(sen_flat);
    out.extend(kin);
    out.extend(self_observation(sim)?);
    out.extend_from_slice(hmap);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{sample_height_map, GenState, HumanoidModel, Simulator, Terrain};
    use crate::insole::{build_sensor_observation, ImuFrame, InsoleFeatures, SensorConfig};
    use crate::kinnet::KinematicEstimate;
    use crate::rotmath::Rotation;
    use crate::statediff::{compute_state_difference, KinFrame};

    #[test]
    fn layout_width_depends_only_on_sensors() {
        let sim = Simulator::new(HumanoidModel::smpl_default(), Terrain::flat()).unwrap();
        let state = GenState::rest(&sim.model, Vec3::new(0.4, 1.0, 0.93));
        let s = sim.sim_state(&state);
        let est = KinematicEstimate::zeros();
        let mut rots = est.clone();
        for j in 0..NUM_JOINTS {
            rots.theta[6 * j..6 * j + 6].copy_from_slice(&crate::rotmath::Rot6D::identity().to_array());
        }
        let kin = KinFrame { est: &rots, leaf_angvel: [Vec3::zeros(); 4], root_global: Vec3::zeros() };
        for n in 2..=6 {
            let config = SensorConfig::new(n, n % 2 == 0).unwrap();
            let imus: Vec<ImuFrame> =
                config.sites().iter().map(|&site| ImuFrame { site, orientation: Rotation::identity(), accel: Vec3::zeros() }).collect();
            let sen = build_sensor_observation(&imus, &InsoleFeatures::default(), &config).unwrap();
            for mask in ["OA", "OAV", "OAVJglo", "OAVJrel"] {
                let mask = AblationMask::parse(mask).unwrap();
                let diff = compute_state_difference(&kin, &s, &mask).unwrap();
                let hmap = sample_height_map(&sim.terrain, &state.root_pos, &state.root_rot);
                let obs = build_observation(&sen, &diff, &s, &hmap, &mask).unwrap();
                assert_eq!(obs.len(), observation_width(12 * n + 10));
                assert!(obs[obs.len() - HEIGHT_MAP_WIDTH..].iter().all(|&v| v == 0.0));
                let kin_block = &obs[12 * n + 10..12 * n + 10 + STATE_DIFF_WIDTH];
                assert_eq!(kin_block.len(), 222);
                if !mask.v {
                    assert!(kin_block[24..42].iter().all(|&v| v == 0.0));
                }
            }
        }
        assert_eq!(observation_width(58), 1265);
        let sen = build_sensor_observation(&[], &InsoleFeatures::default(), &SensorConfig::new(4, true).unwrap());
        assert!(sen.is_err());
        let s_obs = self_observation(&s).unwrap();
        assert_eq!(s_obs.len(), SELF_WIDTH);
        assert!((s_obs[SELF_ROOT_HEIGHT] - 0.93).abs() < 1e-12 && s_obs[0] == 0.0);
    }

    #[test]
    fn short_height_map_is_rejected() {
        let sim = Simulator::new(HumanoidModel::smpl_default(), Terrain::flat()).unwrap();
        let state = GenState::rest(&sim.model, Vec3::new(0.0, 0.0, 0.93));
        let s = sim.sim_state(&state);
        let config = SensorConfig::new(2, false).unwrap();
        let imus: Vec<ImuFrame> =
            config.sites().iter().map(|&site| ImuFrame { site, orientation: Rotation::identity(), accel: Vec3::zeros() }).collect();
        let sen = build_sensor_observation(&imus, &InsoleFeatures::default(), &config).unwrap();
        let diff = crate::statediff::StateDifference {
            d_theta: vec![0.0; 24],
            d_v: vec![0.0; 18],
            d_omega: vec![0.0; 12],
            theta_leaf: vec![0.0; 24],
            d_p: vec![0.0; 72],
            p: vec![0.0; 72],
        };
        let err = build_observation(&sen, &diff, &s, &[0.0; 10], &AblationMask::full());
        assert!(matches!(err, Err(GripError::LayoutMismatch(_))));
    }
}
