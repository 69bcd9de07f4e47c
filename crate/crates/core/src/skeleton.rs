//! 24-joint SMPL topology and forward kinematics.

use crate::rotmath::{Rotation, Vec3};

pub const NUM_JOINTS: usize = 24;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2",
    "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot", "neck", "left_collar",
    "right_collar", "head", "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hand", "right_hand",
];

/// Parent of each joint; the root's entry is unused.
pub const PARENTS: [usize; NUM_JOINTS] = [
    0, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

pub const ROOT: usize = 0;
pub const LEFT_ANKLE: usize = 7;
pub const RIGHT_ANKLE: usize = 8;
pub const LEFT_FOOT: usize = 10;
pub const RIGHT_FOOT: usize = 11;
pub const HEAD: usize = 15;
pub const LEFT_WRIST: usize = 20;
pub const RIGHT_WRIST: usize = 21;

/// Joints carrying the four default IMUs: wrists L/R, feet L/R.
pub const IMU_JOINTS: [usize; 4] = [LEFT_WRIST, RIGHT_WRIST, LEFT_ANKLE, RIGHT_ANKLE];
/// Leaf joints: wrists L/R, feet L/R, head.
pub const LEAF_JOINTS: [usize; 5] = [LEFT_WRIST, RIGHT_WRIST, LEFT_ANKLE, RIGHT_ANKLE, HEAD];
/// Key joints: leaf joints followed by the root.
pub const KEY_JOINTS: [usize; 6] = [LEFT_WRIST, RIGHT_WRIST, LEFT_ANKLE, RIGHT_ANKLE, HEAD, ROOT];
/// Index of the root inside [`KEY_JOINTS`].
pub const KEY_ROOT: usize = 5;
/// Joints whose position is used as the foot point (left, right).
pub const FOOT_POINTS: [usize; 2] = [LEFT_FOOT, RIGHT_FOOT];

/// Rest offsets of each joint from its parent, parent frame (m).
/// x points to the subject's right, y forward, z up; arms in T-pose.
pub fn rest_offsets() -> [Vec3; NUM_JOINTS] {
    let v = Vec3::new;
    [
        v(0.0, 0.0, 0.0),
        v(-0.09, 0.0, -0.09),
        v(0.09, 0.0, -0.09),
        v(0.0, -0.02, 0.11),
        v(0.0, 0.0, -0.38),
        v(0.0, 0.0, -0.38),
        v(0.0, 0.0, 0.13),
        v(0.0, -0.02, -0.38),
        v(0.0, -0.02, -0.38),
        v(0.0, 0.0, 0.05),
        v(0.0, 0.13, -0.06),
        v(0.0, 0.13, -0.06),
        v(0.0, 0.0, 0.21),
        v(-0.07, 0.0, 0.12),
        v(0.07, 0.0, 0.12),
        v(0.0, 0.02, 0.09),
        v(-0.11, 0.0, 0.03),
        v(0.11, 0.0, 0.03),
        v(-0.26, 0.0, 0.0),
        v(0.26, 0.0, 0.0),
        v(-0.25, 0.0, 0.0),
        v(0.25, 0.0, 0.0),
        v(-0.08, 0.0, 0.0),
        v(0.08, 0.0, 0.0),
    ]
}

/// Height of the pelvis above the sole when standing in the rest pose.
pub fn rest_pelvis_height() -> f64 {
    let o = rest_offsets();
    -(o[1].z + o[4].z + o[7].z) + ANKLE_HEIGHT
}

/// Ankle joint height above the sole.
pub const ANKLE_HEIGHT: f64 = 0.08;

/// Global joint positions and orientations from root pose and local rotations
/// (`locals[0]` is ignored; `root_rot` takes its place).
pub fn forward_kinematics(
    root_pos: &Vec3,
    root_rot: &Rotation,
    locals: &[Rotation],
    offsets: &[Vec3],
    parents: &[usize],
) -> (Vec<Vec3>, Vec<Rotation>) {
    let n = offsets.len();
    let mut pos = vec![Vec3::zeros(); n];
    let mut rot = vec![Rotation::identity(); n];
    pos[0] = *root_pos;
    rot[0] = *root_rot;
    for j in 1..n {
        let p = parents[j];
        pos[j] = pos[p] + rot[p] * offsets[j];
        rot[j] = rot[p] * locals[j];
    }
    (pos, rot)
}

/// Local (parent-relative) rotations from global joint orientations.
pub fn locals_from_globals(globals: &[Rotation], parents: &[usize]) -> Vec<Rotation> {
    (0..globals.len())
        .map(|j| if j == 0 { globals[0] } else { globals[parents[j]].transpose() * globals[j] })
        .collect()
}
