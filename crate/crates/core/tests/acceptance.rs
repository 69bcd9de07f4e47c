//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::f64::consts::{LN_2, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use grip_core::calib::{
    calibrate_insole, calibrate_watch_strap, estimate_reference_frame, raw_floor_samples, raw_insole_from_motion,
    raw_watch_from_motion, reference_vertical_accel, synchronize, CalibratedImuStream, CalibrationContext, DeviceKind,
    InsoleTpose, Side,
};
use grip_core::dynamics::model::capsule_inertia;
use grip_core::dynamics::terrain::{HEIGHT_MAP_SIDE, HEIGHT_MAP_SPACING};
use grip_core::dynamics::{
    amp_reward, detect_fall, discriminator_loss, early_termination, energy_penalty, imitation_reward, recover,
    sample_height_map, total_reward, Actuation, Body, BoxObstacle, ContactSphere, Discriminator, FallRecoveryConfig,
    GenState, HumanoidModel, RewardConfig, Simulator, Terrain, HEIGHT_MAP_WIDTH,
};
use grip_core::fixture::{generate, FixtureKind, FixtureSpec};
use grip_core::io::PipelineConfig;
use grip_core::kinnet::{kin_loss, train, Estimator, HistoryBuffer, KinematicEstimate, TrainingSequence};
use grip_core::metrics::{self, MotionSequence};
use grip_core::par::Exec;
use grip_core::pipeline::{estimate_sequence, simulate_sequence, EstimateSource, PolicyKind};
use grip_core::rotmath::{
    finite_diff_accel, geodesic_angle, matrix_from_rot6d, rot6d_from_matrix, umeyama_align, TimeSeries3,
};
use grip_core::skeleton::{
    forward_kinematics, rest_offsets, FOOT_POINTS, IMU_JOINTS, KEY_JOINTS, KEY_ROOT, NUM_JOINTS, PARENTS, ROOT,
};
use grip_core::statediff::{compute_state_difference, AblationMask, KinFrame, SimState, STATE_DIFF_WIDTH};
use grip_core::{Rot6D, Rotation, Vec3};

const DT: f64 = 0.01;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn uniform_rotation(rng: &mut impl Rng) -> Rotation {
    let q = nalgebra::Quaternion::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    Rotation::from_quaternion(&nalgebra::UnitQuaternion::from_quaternion(q))
}

fn rand_vec(rng: &mut impl Rng, s: f64) -> Vec3 {
    Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
}

fn max_abs(m: &Matrix3<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

// ---------------------------------------------------------------- 1

/// Random sum-of-sinusoids joint motion with analytic linear acceleration.
fn smooth_motion(rng: &mut impl Rng, n: usize) -> (Vec<Rotation>, Vec<Vec3>) {
    let amp = [rng.random_range(0.2..1.0), rng.random_range(0.1..0.6), rng.random_range(0.1..0.6)];
    let freq = [rng.random_range(0.3..2.0), rng.random_range(0.3..2.0), rng.random_range(0.3..2.0)];
    let phase = [rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)];
    let base = uniform_rotation(rng);
    let lin = rand_vec(rng, 3.0);
    let rots = (0..n)
        .map(|i| {
            let t = i as f64 * DT;
            let a = |k: usize| amp[k] * (freq[k] * t + phase[k]).sin();
            Rotation::rz(a(0)) * Rotation::rx(a(1)) * Rotation::ry(a(2)) * base
        })
        .collect();
    let acc = (0..n)
        .map(|i| {
            let t = i as f64 * DT;
            Vec3::new(lin.x * (freq[0] * t).sin(), lin.y * (freq[1] * t).cos(), lin.z * (freq[2] * t + phase[0]).sin())
        })
        .collect();
    (rots, acc)
}

/// Still for `still` frames, then a random foot-like rocking motion that ramps in.
fn foot_motion(rng: &mut impl Rng, n: usize, still: usize) -> (Vec<Rotation>, Vec<Vec3>) {
    let f = rng.random_range(0.5..1.2);
    let pitch = rng.random_range(0.15..0.45);
    let roll = rng.random_range(0.0..0.15);
    let yaw_rate = rng.random_range(-0.3..0.3);
    let reach = rng.random_range(0.03..0.1);
    let heading = rng.random_range(-PI..PI);
    let phase = |i: usize| i.saturating_sub(still) as f64 * DT;
    let ramp = |t: f64| {
        let s = (t / 3.0).min(1.0);
        s * s * (3.0 - 2.0 * s)
    };
    let rots = (0..n)
        .map(|i| {
            let t = phase(i);
            let w = 2.0 * PI * f * t;
            Rotation::rz(heading + yaw_rate * t) * Rotation::rx(ramp(t) * pitch * w.sin()) * Rotation::ry(ramp(t) * roll * w.cos())
        })
        .collect();
    let pos: Vec<Vec3> = (0..n)
        .map(|i| {
            let t = phase(i);
            let w = 2.0 * PI * f * t;
            Vec3::new(0.0, reach * ramp(t) * w.sin(), 0.3 * reach * ramp(t) * (1.0 - w.cos()))
        })
        .collect();
    let acc = finite_diff_accel(&TimeSeries3::new(pos, DT).unwrap()).unwrap().samples;
    (rots, acc)
}

fn calibration_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut rot_err, mut acc_err, mut insole_err) = (0.0f64, 0.0f64, 0.0f64);
    for trial in 0..100 {
        let kind = if trial % 2 == 0 { DeviceKind::Watch } else { DeviceKind::Strap };
        let r_to_g = uniform_rotation(&mut rng);
        let joint_to_sensor = uniform_rotation(&mut rng);
        let tpose_global = uniform_rotation(&mut rng);
        let floor = raw_floor_samples(kind, &r_to_g, 150, DT);
        let tpose = raw_watch_from_motion(kind, &[tpose_global; 200], &[Vec3::zeros(); 200], &r_to_g, &joint_to_sensor, DT);
        let g_to_r = estimate_reference_frame(&floor, 0..150).map_err(|e| e.to_string())?;
        let ctx = CalibrationContext::from_tpose(&tpose, &g_to_r, Some(0..200), &tpose_global).map_err(|e| e.to_string())?;
        let (rots, acc) = smooth_motion(&mut rng, 400);
        let raw = raw_watch_from_motion(kind, &rots, &acc, &r_to_g, &joint_to_sensor, DT);
        let cal = calibrate_watch_strap(&raw, &ctx).map_err(|e| e.to_string())?;
        for t in 0..rots.len() {
            rot_err = rot_err.max(geodesic_angle(&cal.joint_orientation_g[t], &rots[t]));
            acc_err = acc_err.max((cal.accel_g[t] - acc[t]).norm());
        }

        let side = if trial % 2 == 0 { Side::Left } else { Side::Right };
        let still = 300;
        let (rots, acc) = foot_motion(&mut rng, 1000, still);
        let s_to_j = uniform_rotation(&mut rng);
        let raw = raw_insole_from_motion(side, &rots, &acc, &s_to_j, DT);
        let tp = InsoleTpose { frame: still - 1, joint_global: rots[still - 1] };
        let cal = calibrate_insole(&raw, side, &s_to_j, Some(tp)).map_err(|e| e.to_string())?;
        for t in still..rots.len() {
            insole_err = insole_err.max(geodesic_angle(&cal.joint_orientation_g[t], &rots[t]));
        }
    }
    ensure!(rot_err < 1e-6, "watch/strap orientation error {rot_err:e} rad");
    ensure!(acc_err < 1e-6, "watch/strap acceleration error {acc_err:e} m/s^2");
    ensure!(insole_err.to_degrees() < 1.0, "insole orientation error {:.3} deg", insole_err.to_degrees());
    Ok(format!(
        "max rot {rot_err:.1e} rad, max acc {acc_err:.1e} m/s^2, insole {:.3} deg",
        insole_err.to_degrees()
    ))
}

// ---------------------------------------------------------------- 2

/// Pelvis height with three sin² jumps at random times near the middle of the capture.
fn jump_pulses(rng: &mut impl Rng, n: usize) -> Vec<Vec3> {
    let starts: Vec<f64> = (0..3).map(|k| 4.5 + 1.2 * k as f64 + rng.random_range(0.0..0.4)).collect();
    let heights: Vec<f64> = (0..3).map(|_| rng.random_range(0.08..0.16)).collect();
    (0..n)
        .map(|i| {
            let t = i as f64 * DT;
            let mut z = 0.93;
            for (s, h) in starts.iter().zip(&heights) {
                let u = (t - s) / 0.5;
                if (0.0..=1.0).contains(&u) {
                    z += h * (PI * u).sin().powi(2);
                }
            }
            Vec3::new(0.0, 0.0, z)
        })
        .collect()
}

fn stream_from(vertical: &[f64]) -> CalibratedImuStream {
    CalibratedImuStream {
        joint_orientation_g: vec![Rotation::identity(); vertical.len()],
        accel_g: vertical.iter().map(|&a| Vec3::new(0.0, 0.0, a)).collect(),
        dt: DT,
    }
}

fn synchronization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let n = 1400;
    let (mut exact, mut noisy, mut worst) = (0, 0, 0i64);
    for _ in 0..100 {
        let reference = reference_vertical_accel(&jump_pulses(&mut rng, n), DT).map_err(|e| e.to_string())?;
        let lag: i64 = rng.random_range(-200..=200);
        let shifted: Vec<f64> = (0..n as i64).map(|t| reference[(t - lag).clamp(0, n as i64 - 1) as usize]).collect();
        let power = shifted.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let noise = Normal::new(0.0, (power / 100.0).sqrt()).unwrap();
        let with_noise: Vec<f64> = shifted.iter().map(|v| v + noise.sample(&mut rng)).collect();
        let refs = vec![reference.clone(), reference];
        let r = synchronize(&[stream_from(&shifted), stream_from(&with_noise)], &refs, 250, Exec::Parallel)
            .map_err(|e| e.to_string())?;
        exact += (r.offsets[0] == lag) as usize;
        noisy += ((r.offsets[1] - lag).abs() <= 1) as usize;
        worst = worst.max((r.offsets[1] - lag).abs());
    }
    ensure!(exact == 100, "noise-free exact recovery {exact}/100");
    ensure!(noisy == 100, "20 dB recovery within one frame {noisy}/100 (worst {worst})");
    Ok(format!("exact {exact}/100, 20 dB within +-1 frame {noisy}/100"))
}

// ---------------------------------------------------------------- 3

fn rot6d_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut round, mut ortho) = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let r = uniform_rotation(&mut rng);
        let back = matrix_from_rot6d(&rot6d_from_matrix(&r)).map_err(|e| e.to_string())?;
        round = round.max(max_abs(&(back.matrix() - r.matrix())));
        // arbitrary non-degenerate 6D input
        let v = Rot6D::new(rand_vec(&mut rng, 2.0), rand_vec(&mut rng, 2.0));
        if v.a.cross(&v.b).norm() > 1e-3 {
            let m = matrix_from_rot6d(&v).map_err(|e| e.to_string())?;
            ortho = ortho.max(max_abs(&(m.matrix().transpose() * m.matrix() - Matrix3::identity())));
            ortho = ortho.max((m.matrix().determinant() - 1.0).abs());
        }
    }
    ensure!(round <= 1e-12, "round trip error {round:e}");
    ensure!(ortho <= 1e-12, "orthonormality error {ortho:e}");
    Ok(format!("round trip {round:.1e}, orthonormality {ortho:.1e}"))
}

// ---------------------------------------------------------------- 4

fn procrustes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut err_r, mut err_t, mut err_s, mut pa) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let src: Vec<Vec3> = (0..50).map(|_| rand_vec(&mut rng, 1.0)).collect();
        let r = uniform_rotation(&mut rng);
        let t = rand_vec(&mut rng, 5.0);
        let s = rng.random_range(0.5..2.0);
        let dst: Vec<Vec3> = src.iter().map(|x| r * *x * s + t).collect();
        let tf = umeyama_align(&src, &dst, true).map_err(|e| e.to_string())?;
        err_r = err_r.max(max_abs(&(tf.r.matrix() - r.matrix())));
        err_t = err_t.max((tf.t - t).norm());
        err_s = err_s.max((tf.s - s).abs());
        pa = pa.max(metrics::pa_mpjpe(&[src.clone()], &[dst]).map_err(|e| e.to_string())?);
    }
    ensure!(err_r < 1e-9 && err_t < 1e-9 && err_s < 1e-9, "R {err_r:e}, t {err_t:e}, s {err_s:e}");
    ensure!(pa < 1e-9, "pa_mpjpe {pa:e} mm");
    Ok(format!("R {err_r:.1e}, t {err_t:.1e}, s {err_s:.1e}, PA-MPJPE {pa:.1e} mm"))
}

// ---------------------------------------------------------------- 5

fn random_sim(rng: &mut impl Rng) -> SimState {
    let locals: Vec<Rotation> = (0..NUM_JOINTS).map(|_| Rotation::exp(&rand_vec(rng, 0.6))).collect();
    let root_rot = Rotation::rz(rng.random_range(-PI..PI)) * Rotation::exp(&rand_vec(rng, 0.3));
    let (pos, rot) = forward_kinematics(&rand_vec(rng, 2.0), &root_rot, &locals, &rest_offsets(), &PARENTS);
    SimState {
        joint_pos: pos,
        joint_rot: rot,
        joint_linvel: (0..NUM_JOINTS).map(|_| rand_vec(rng, 1.0)).collect(),
        joint_angvel: (0..NUM_JOINTS).map(|_| rand_vec(rng, 2.0)).collect(),
    }
}

fn reward_constants() -> Outcome {
    let cfg = RewardConfig::default();
    let amp = amp_reward(0.0);
    ensure!((amp - LN_2).abs() < 1e-12, "amp_reward(0) = {amp}");
    let s = random_sim(&mut ChaCha8Rng::seed_from_u64(505));
    let imit = imitation_reward(&s, &s, &cfg).map_err(|e| e.to_string())?;
    let sum_w = cfg.w_p + cfg.w_theta + cfg.w_v + cfg.w_omega;
    ensure!((imit - sum_w).abs() < 1e-12, "imitation at zero error {imit} vs {sum_w}");
    let tau = [Vec3::new(2.0, -1.0, 0.0), Vec3::new(0.0, 0.0, 4.0)];
    let w = [Vec3::new(2.0, 3.0, 5.0), Vec3::new(1.0, 1.0, -0.75)];
    ensure!(cfg.alpha == 0.0005, "alpha {}", cfg.alpha);
    let e = energy_penalty(&tau, &w, &cfg, cfg.energy_warmup).map_err(|e| e.to_string())?;
    ensure!((e + 0.005).abs() < 1e-12, "energy penalty {e}");
    ensure!((cfg.w_amp, cfg.w_imit) == (0.5, 0.5), "weights {} {}", cfg.w_amp, cfg.w_imit);
    let terms = total_reward(0.8, 0.6, -0.1, &cfg);
    ensure!((terms.total - (0.5 * 0.8 + 0.5 * 0.6 - 0.1)).abs() < 1e-12, "total {}", terms.total);
    let no_gp = RewardConfig { lambda_gp: 0.0, ..cfg };
    let loss = discriminator_loss(&[0.0; 8], &[0.0; 8], &[0.0; 8], &no_gp).map_err(|e| e.to_string())?;
    ensure!((loss - 2.0 * LN_2).abs() < 1e-12, "discriminator loss {loss}");
    Ok(format!("ln2 {amp:.15}, sum w {imit}, energy {e}, disc loss {loss:.15}"))
}

// ---------------------------------------------------------------- 6

fn standing_estimate(v_root: Vec3) -> KinematicEstimate {
    let rots = vec![Rotation::identity(); NUM_JOINTS];
    let (pos, _) = forward_kinematics(&Vec3::zeros(), &Rotation::identity(), &rots, &rest_offsets(), &PARENTS);
    let mut v = vec![Vec3::zeros(); KEY_JOINTS.len()];
    v[KEY_ROOT] = v_root;
    KinematicEstimate::from_pose(&pos, &rots, &v).unwrap()
}

fn fall_machinery() -> Outcome {
    let cfg = FallRecoveryConfig::default();
    ensure!(cfg.tau_z == 0.30 && cfg.tau_rho == 0.7 && cfg.tau_e == 0.25, "thresholds {cfg:?}");
    let table = [
        (0.29, 0.69, true),
        (0.30, 0.69, false),
        (0.29, 0.70, false),
        (0.30, 0.70, false),
        (0.05, 0.01, true),
        (0.90, 0.01, false),
        (0.05, 0.99, false),
    ];
    for (h, rho, want) in table {
        ensure!(detect_fall(h, rho, &cfg) == want, "detect_fall({h}, {rho}) != {want}");
    }

    let sim = Simulator::new(HumanoidModel::smpl_default(), Terrain::flat()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let start = Vec3::new(0.4, -1.2, 0.2);
    let mut buf = HistoryBuffer::new(cfg.buffer_len);
    let mut vels = Vec::new();
    for t in 0..cfg.buffer_len {
        let v = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.0);
        vels.push(v);
        buf.push(t, standing_estimate(v)).map_err(|e| e.to_string())?;
    }
    let r = recover(&sim, &buf, &start, cfg.buffer_len, DT).map_err(|e| e.to_string())?;
    let expected = vels.iter().fold(start, |acc, v| acc + v * DT);
    let drift = (r.state.root_pos.xy() - expected.xy()).norm();
    ensure!(drift < 1e-12, "recovered root off by {drift:e} m");
    ensure!(r.segment.len() == cfg.buffer_len, "replacement of {} frames", r.segment.len());

    let a = vec![Vec3::zeros(); NUM_JOINTS];
    let mut at = a.clone();
    at[7].x = 0.25;
    let mut past = a.clone();
    past[7].x = 0.25 + 1e-12;
    let no = early_termination(&a, &at, &cfg).map_err(|e| e.to_string())?;
    let yes = early_termination(&a, &past, &cfg).map_err(|e| e.to_string())?;
    ensure!(!no && yes, "early termination at 0.25 m: {no}, just past: {yes}");
    Ok(format!("truth table {}/{} cases, root integral {drift:.1e} m, termination flips at 0.25 m", table.len(), table.len()))
}

// ---------------------------------------------------------------- 7

fn body(parent: usize, mass: f64, com: Vec3, spheres: Vec<ContactSphere>) -> Body {
    Body {
        name: "body".into(),
        parent,
        offset: Vec3::zeros(),
        mass,
        com,
        inertia: capsule_inertia(mass, 0.05, &com, 2.0 * com.norm()),
        radius: 0.05,
        kp: 0.0,
        kd: 0.0,
        torque_limit: 200.0,
        spheres,
    }
}

fn single(spheres: Vec<ContactSphere>) -> HumanoidModel {
    HumanoidModel {
        bodies: vec![body(0, 10.0, Vec3::zeros(), spheres)],
        contact: Default::default(),
        armature: 0.0,
        fixed_base: false,
        foot_bodies: [0, 0],
    }
}

fn simulator_physics() -> Outcome {
    let sim = Simulator::new(single(vec![]), Terrain::flat()).map_err(|e| e.to_string())?;
    let mut s = GenState::rest(&sim.model, Vec3::new(0.0, 0.0, 10.0));
    for _ in 0..1000 {
        sim.substep(&mut s, &Actuation::Passive).map_err(|e| e.to_string())?;
    }
    let fall = (s.root_pos.z - (10.0 - 0.5 * 9.81)).abs();
    ensure!(fall < 5e-3, "free fall error {fall} m");

    let pendulum = HumanoidModel {
        bodies: vec![body(0, 1.0, Vec3::zeros(), vec![]), body(0, 2.0, Vec3::new(0.5, 0.0, 0.0), vec![])],
        contact: Default::default(),
        armature: 0.0,
        fixed_base: true,
        foot_bodies: [0, 0],
    };
    let sim = Simulator::new(pendulum, Terrain { ground: -100.0, boxes: vec![] }).map_err(|e| e.to_string())?;
    let mut s = GenState::rest(&sim.model, Vec3::new(0.0, 0.0, 2.0));
    let e0 = sim.energy(&s);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        sim.substep(&mut s, &Actuation::Passive).map_err(|e| e.to_string())?;
        worst = worst.max((sim.energy(&s) - e0).abs());
    }
    // released horizontal: the swing exchanges m·g·l of energy
    let drift = worst / (2.0 * 9.81 * 0.5);
    ensure!(drift < 0.02, "pendulum energy drift {:.2}%", 100.0 * drift);

    let corners = [(-0.1, -0.1), (0.1, -0.1), (-0.1, 0.1), (0.1, 0.1)]
        .map(|(x, y)| ContactSphere { center: Vec3::new(x, y, -0.05), radius: 0.02 });
    let sim = Simulator::new(single(corners.to_vec()), Terrain::flat()).map_err(|e| e.to_string())?;
    let mut s = GenState::rest(&sim.model, Vec3::new(0.0, 0.0, 0.07));
    let mut pen = 0.0f64;
    for i in 0..5000 {
        let info = sim.substep(&mut s, &Actuation::Passive).map_err(|e| e.to_string())?;
        if i > 1000 {
            pen = pen.max(info.max_penetration);
        }
    }
    ensure!(pen <= 2e-3, "resting penetration {:.2} mm", 1e3 * pen);

    let spec = FixtureSpec { frames: 500, ..FixtureSpec::new(FixtureKind::Standing, 7) };
    let seq = generate(&spec).map_err(|e| e.to_string())?.sequence;
    let cfg = PipelineConfig::default();
    let est = estimate_sequence(&seq, EstimateSource::Oracle { seed: 0 }, &cfg).map_err(|e| e.to_string())?;
    let rollout = simulate_sequence(&seq, &est.estimates(), HumanoidModel::smpl_default(), Terrain::flat(), &cfg, PolicyKind::Fixture, 0)
        .map_err(|e| e.to_string())?;
    ensure!(rollout.frames.len() == 500, "rollout of {} frames", rollout.frames.len());
    let rate = metrics::success_rate(&[rollout.falls]).map_err(|e| e.to_string())?;
    ensure!(rate == 1.0, "standing success rate {rate} ({} falls)", rollout.falls);
    Ok(format!(
        "free fall {fall:.1e} m, pendulum drift {:.3}%, penetration {:.2} mm, standing success {rate}",
        100.0 * drift,
        1e3 * pen
    ))
}

// ---------------------------------------------------------------- 8

fn realized(sim: &SimState) -> (KinematicEstimate, [Vec3; 4], Vec3) {
    let v: Vec<Vec3> = KEY_JOINTS.iter().map(|&j| sim.joint_linvel[j]).collect();
    let est = KinematicEstimate::from_pose(&sim.joint_pos, &sim.joint_rot, &v).unwrap();
    (est, IMU_JOINTS.map(|j| sim.joint_angvel[j]), sim.root_pos())
}

fn yawed(sim: &SimState, q: &Rotation) -> SimState {
    SimState {
        joint_pos: sim.joint_pos.iter().map(|x| q * x).collect(),
        joint_rot: sim.joint_rot.iter().map(|r| *q * *r).collect(),
        joint_linvel: sim.joint_linvel.iter().map(|x| q * x).collect(),
        joint_angvel: sim.joint_angvel.iter().map(|x| q * x).collect(),
    }
}

fn state_difference() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    ensure!(STATE_DIFF_WIDTH == 222, "width constant {STATE_DIFF_WIDTH}");
    let masks = ["OA", "OAV", "OAVJglo", "OAVJrel"].map(|m| AblationMask::parse(m).unwrap());
    let (mut yaw_err, mut residual) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let sim = random_sim(&mut rng);
        let other = random_sim(&mut rng);
        let q = Rotation::rz(rng.random_range(-PI..PI));
        let (est, w, r) = realized(&other);
        let (est_q, w_q, r_q) = realized(&yawed(&other, &q));
        let sim_q = yawed(&sim, &q);
        for mask in &masks {
            let d = compute_state_difference(&KinFrame { est: &est, leaf_angvel: w, root_global: r }, &sim, mask)
                .map_err(|e| e.to_string())?
                .flatten();
            let d_q = compute_state_difference(&KinFrame { est: &est_q, leaf_angvel: w_q, root_global: r_q }, &sim_q, mask)
                .map_err(|e| e.to_string())?
                .flatten();
            ensure!(d.len() == 222 && d_q.len() == 222, "flattened width {}", d.len());
            yaw_err = d.iter().zip(&d_q).fold(yaw_err, |m, (a, b)| m.max((a - b).abs()));
        }
        let (est, w, r) = realized(&sim);
        for mask in [AblationMask::full(), masks[2]] {
            let d = compute_state_difference(&KinFrame { est: &est, leaf_angvel: w, root_global: r }, &sim, &mask)
                .map_err(|e| e.to_string())?;
            let id = Rot6D::identity().to_array();
            for k in 0..4 {
                for (a, b) in d.d_theta[6 * k..6 * k + 6].iter().zip(id) {
                    residual = residual.max((a - b).abs());
                }
            }
            residual = d.d_v.iter().chain(&d.d_omega).chain(&d.d_p).fold(residual, |m, x| m.max(x.abs()));
        }
    }
    ensure!(yaw_err < 1e-9, "common-yaw variation {yaw_err:e}");
    ensure!(residual < 1e-9, "realized residual {residual:e}");
    Ok(format!("width 222, yaw invariance {yaw_err:.1e}, realized residual {residual:.1e}"))
}

// ---------------------------------------------------------------- 9

/// Ground truth from random smooth poses; the prediction is a global
/// similarity of it plus joint noise, with perturbed rotations and forces.
fn metric_fixture(rng: &mut impl Rng) -> (MotionSequence, MotionSequence, Terrain) {
    let n = rng.random_range(30..90);
    let freq: Vec<f64> = (0..NUM_JOINTS).map(|_| rng.random_range(0.5..3.0)).collect();
    let axes: Vec<Vec3> = (0..NUM_JOINTS).map(|_| rand_vec(rng, 0.5)).collect();
    let heading = rng.random_range(-PI..PI);
    let speed = rand_vec(rng, 1.0).xy();
    let mut gt = MotionSequence { joint_pos: vec![], joint_rot: vec![], contact: vec![], grf: vec![], dt: DT };
    for i in 0..n {
        let t = i as f64 * DT;
        let locals: Vec<Rotation> = (0..NUM_JOINTS).map(|j| Rotation::exp(&(axes[j] * (freq[j] * t).sin()))).collect();
        let root = Vec3::new(speed.x * t, speed.y * t, 0.9 + 0.05 * (3.0 * t).sin());
        let (p, r) = forward_kinematics(&root, &Rotation::rz(heading), &locals, &rest_offsets(), &PARENTS);
        gt.joint_pos.push(p);
        gt.joint_rot.push(r);
        gt.contact.push([[rng.random_bool(0.5), rng.random_bool(0.3)], [rng.random_bool(0.5), rng.random_bool(0.3)]]);
        gt.grf.push([rng.random_range(0.0..700.0), rng.random_range(0.0..700.0)]);
    }
    let q = Rotation::rz(rng.random_range(-0.15..0.15));
    let shift = {
        let d = rand_vec(rng, 1.0);
        d / d.norm() * rng.random_range(0.3..1.0)
    };
    let scale = rng.random_range(0.95..1.05);
    let pred = MotionSequence {
        joint_pos: gt.joint_pos.iter().map(|f| f.iter().map(|x| q * *x * scale + shift + rand_vec(rng, 0.02)).collect()).collect(),
        joint_rot: gt
            .joint_rot
            .iter()
            .map(|f| {
                f.iter()
                    .map(|r| {
                        let axis = rand_vec(rng, 1.0);
                        Rotation::from_axis_angle(&axis, rng.random_range(0.05..0.8)) * *r
                    })
                    .collect()
            })
            .collect(),
        contact: gt.contact.clone(),
        grf: gt.grf.iter().map(|g| [g[0] + rng.random_range(-80.0..80.0), g[1] + rng.random_range(-80.0..80.0)]).collect(),
        dt: DT,
    };
    // a box under part of the path so some frames penetrate
    let c = pred.joint_pos[n / 2][FOOT_POINTS[0]];
    let terrain = Terrain {
        ground: rng.random_range(-0.05..0.0),
        boxes: vec![BoxObstacle { center: [c.x, c.y], half_extents: [0.3, 0.3], top: c.z + rng.random_range(0.0..0.05) }],
    };
    (pred, gt, terrain)
}

mod naive {
    use super::*;

    fn dist(a: &Vec3, b: &Vec3) -> f64 {
        ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt()
    }

    pub fn mpjpe(p: &[Vec<Vec3>], g: &[Vec<Vec3>]) -> f64 {
        let mut sum = 0.0;
        for t in 0..p.len() {
            let mut frame = 0.0;
            for j in 0..p[t].len() {
                frame += dist(&p[t][j], &g[t][j]);
            }
            sum += frame / p[t].len() as f64;
        }
        1000.0 * sum / p.len() as f64
    }

    pub fn pel_mpjpe(p: &[Vec<Vec3>], g: &[Vec<Vec3>]) -> f64 {
        let centre = |s: &[Vec<Vec3>]| -> Vec<Vec<Vec3>> { s.iter().map(|f| f.iter().map(|x| x - f[ROOT]).collect()).collect() };
        mpjpe(&centre(p), &centre(g))
    }

    /// Textbook similarity Procrustes via the SVD of the cross-covariance.
    pub fn pa_mpjpe(p: &[Vec<Vec3>], g: &[Vec<Vec3>]) -> f64 {
        let mut aligned = Vec::new();
        for (x, y) in p.iter().zip(g) {
            let n = x.len() as f64;
            let mx = x.iter().sum::<Vec3>() / n;
            let my = y.iter().sum::<Vec3>() / n;
            let mut cov = Matrix3::zeros();
            let mut var = 0.0;
            for (a, b) in x.iter().zip(y) {
                cov += (b - my) * (a - mx).transpose();
                var += (a - mx).norm_squared();
            }
            cov /= n;
            var /= n;
            let svd = cov.svd(true, true);
            let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
            let mut d = Matrix3::identity();
            if (u * vt).determinant() < 0.0 {
                d[(2, 2)] = -1.0;
            }
            let r = u * d * vt;
            let s = (svd.singular_values.component_mul(&d.diagonal())).sum() / var;
            aligned.push(x.iter().map(|a| r * (a - mx) * s + my).collect());
        }
        mpjpe(&aligned, g)
    }

    pub fn mpjre(p: &[Vec<Rotation>], g: &[Vec<Rotation>]) -> f64 {
        let mut sum = 0.0;
        for t in 0..p.len() {
            let mut frame = 0.0;
            for j in 0..p[t].len() {
                let m = p[t][j].matrix().transpose() * g[t][j].matrix();
                frame += ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
            }
            sum += frame / p[t].len() as f64;
        }
        (sum / p.len() as f64).to_degrees()
    }

    fn second_diff(track: &[Vec3], dt: f64) -> Vec<Vec3> {
        let n = track.len();
        let mut a: Vec<Vec3> = (0..n)
            .map(|t| {
                let t = t.clamp(1, n - 2);
                (track[t + 1] - 2.0 * track[t] + track[t - 1]) / (dt * dt)
            })
            .collect();
        a[0] = a[1];
        a[n - 1] = a[n - 2];
        a
    }

    pub fn accel(p: &[Vec<Vec3>], g: &[Vec<Vec3>], dt: f64) -> f64 {
        let joints = p[0].len();
        let mut sum = 0.0;
        for j in 0..joints {
            let ap = second_diff(&p.iter().map(|f| f[j]).collect::<Vec<_>>(), dt);
            let ag = second_diff(&g.iter().map(|f| f[j]).collect::<Vec<_>>(), dt);
            for t in 0..p.len() {
                sum += dist(&ap[t], &ag[t]);
            }
        }
        sum / (joints * p.len()) as f64
    }

    pub fn foot_sliding(p: &MotionSequence, labels: &MotionSequence) -> f64 {
        let n = p.len();
        let (mut sum, mut count) = (0.0, 0);
        for (foot, &j) in FOOT_POINTS.iter().enumerate() {
            for t in 0..n {
                if !(labels.contact[t][foot][0] || labels.contact[t][foot][1]) {
                    continue;
                }
                let v = match t {
                    0 => (p.joint_pos[1][j] - p.joint_pos[0][j]) / p.dt,
                    t if t == n - 1 => (p.joint_pos[t][j] - p.joint_pos[t - 1][j]) / p.dt,
                    t => (p.joint_pos[t + 1][j] - p.joint_pos[t - 1][j]) / (2.0 * p.dt),
                };
                sum += (v.x * v.x + v.y * v.y).sqrt();
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    fn height(terrain: &Terrain, x: f64, y: f64) -> f64 {
        let mut h = terrain.ground;
        for b in &terrain.boxes {
            let inside = (x - b.center[0]).abs() <= b.half_extents[0] && (y - b.center[1]).abs() <= b.half_extents[1];
            if inside && b.top > h {
                h = b.top;
            }
        }
        h
    }

    pub fn foot_penetration(p: &MotionSequence, terrain: &Terrain) -> f64 {
        let mut per_foot = 0.0;
        for &j in &FOOT_POINTS {
            let mut depth = 0.0;
            for f in &p.joint_pos {
                let d = height(terrain, f[j].x, f[j].y) - f[j].z;
                if d > 0.0 {
                    depth += d;
                }
            }
            per_foot += depth / p.len() as f64;
        }
        1000.0 * per_foot / 2.0
    }

    pub fn vgrf(p: &[[f64; 2]], g: &[[f64; 2]]) -> f64 {
        let mut sum = 0.0;
        for foot in 0..2 {
            let mut sq = 0.0;
            for t in 0..p.len() {
                sq += (p[t][foot] - g[t][foot]).powi(2);
            }
            sum += (sq / p.len() as f64).sqrt();
        }
        sum / 2.0
    }
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut worst = 0.0f64;
    let mut worst_name = "";
    for _ in 0..100 {
        let (pred, gt, terrain) = metric_fixture(&mut rng);
        let report = metrics::evaluate(&pred, &gt, &terrain, pred.len(), true, Exec::Sequential).map_err(|e| e.to_string())?;
        let pairs = [
            ("MPJPE", metrics::mpjpe(&pred.joint_pos, &gt.joint_pos), naive::mpjpe(&pred.joint_pos, &gt.joint_pos)),
            ("PEL-MPJPE", metrics::pel_mpjpe(&pred.joint_pos, &gt.joint_pos), naive::pel_mpjpe(&pred.joint_pos, &gt.joint_pos)),
            ("PA-MPJPE", metrics::pa_mpjpe(&pred.joint_pos, &gt.joint_pos), naive::pa_mpjpe(&pred.joint_pos, &gt.joint_pos)),
            ("MPJRE", metrics::mpjre(&pred.joint_rot, &gt.joint_rot), naive::mpjre(&pred.joint_rot, &gt.joint_rot)),
            ("Acc", metrics::accel_error(&pred.joint_pos, &gt.joint_pos, DT), naive::accel(&pred.joint_pos, &gt.joint_pos, DT)),
            ("FS", metrics::foot_sliding(&pred, &gt), naive::foot_sliding(&pred, &gt)),
            ("FP", metrics::foot_penetration(&pred, &terrain), naive::foot_penetration(&pred, &terrain)),
            ("vGRF", metrics::vgrf_error(&pred.grf, &gt.grf), naive::vgrf(&pred.grf, &gt.grf)),
        ];
        let mut values = Vec::new();
        for (name, got, want) in pairs {
            let got = got.map_err(|e| format!("{name}: {e}"))?;
            values.push((name, got));
            let err = (got - want).abs();
            if err > worst {
                worst = err;
                worst_name = name;
            }
        }
        let from_report = [
            report.mpjpe,
            report.pel_mpjpe,
            report.pa_mpjpe,
            report.mpjre,
            report.acc,
            report.fs,
            report.fp,
            report.vgrf.unwrap_or(f64::NAN),
        ];
        for ((name, got), r) in values.into_iter().zip(from_report) {
            ensure!((got - r).abs() <= 1e-9, "{name}: report {r} vs metric {got}");
        }
        ensure!(
            report.pa_mpjpe <= report.pel_mpjpe && report.pel_mpjpe <= report.mpjpe,
            "hierarchy violated: pa {} pel {} mpjpe {}",
            report.pa_mpjpe,
            report.pel_mpjpe,
            report.mpjpe
        );
    }
    ensure!(worst <= 1e-9, "{worst_name} differs from its oracle by {worst:e}");

    ensure!(HEIGHT_MAP_SPACING == 0.0625, "height map spacing {HEIGHT_MAP_SPACING}");
    ensure!(HEIGHT_MAP_WIDTH == 625 && HEIGHT_MAP_SIDE == 25, "height map cells {HEIGHT_MAP_WIDTH}");
    // a thin ridge three cells to the right of the root lights exactly one column
    let ridge = Terrain {
        ground: 0.0,
        boxes: vec![BoxObstacle { center: [3.0 * 0.0625, 0.0], half_extents: [0.01, 5.0], top: 0.2 }],
    };
    let map = sample_height_map(&ridge, &Vec3::new(0.0, 0.0, 0.9), &Rotation::identity());
    ensure!(map.len() == 625, "sampled {} cells", map.len());
    for (k, h) in map.iter().enumerate() {
        let expect = if k % HEIGHT_MAP_SIDE == HEIGHT_MAP_SIDE / 2 + 3 { 0.2 } else { 0.0 };
        ensure!(*h == expect, "cell {k}: {h}");
    }
    Ok(format!("100 fixtures, worst oracle gap {worst:.1e} ({worst_name}), hierarchy holds, grid 25x25 @ 0.0625 m"))
}

// ---------------------------------------------------------------- 10

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn learning_plumbing() -> Outcome {
    let spec = FixtureSpec { frames: 300, ..FixtureSpec::new(FixtureKind::Walking, 10) };
    let seq = generate(&spec).map_err(|e| e.to_string())?.sequence;
    let cfg = PipelineConfig::default();
    let sensors = cfg.sensor_config().map_err(|e| e.to_string())?;
    let obs: Vec<Vec<f64>> = seq.sensor_observations(&sensors).map_err(|e| e.to_string())?.iter().map(|o| o.flatten()).collect();
    let truth = seq.truth().ok_or("fixture without truth")?;

    // kin_loss gradient on a small network
    let (o4, t4) = (&obs[200..204], &truth[200..204]);
    let mut small = Estimator::new(sensors.width(), 4, 11);
    small.fit_normalization(o4);
    let (_, g) = small.loss_and_grad(o4, t4).map_err(|e| e.to_string())?;
    let h = 1e-5;
    let mut worst_kin = 0.0f64;
    let mut e = small.clone();
    for k in 0..e.params.len() {
        let x = e.params[k];
        e.params[k] = x + h;
        let up = e.loss_and_grad(o4, t4).map_err(|e| e.to_string())?.0;
        e.params[k] = x - h;
        let dn = e.loss_and_grad(o4, t4).map_err(|e| e.to_string())?.0;
        e.params[k] = x;
        worst_kin = worst_kin.max(rel_err(g[k], (up - dn) / (2.0 * h)));
    }
    ensure!(worst_kin < 1e-4, "kin_loss gradient relative error {worst_kin:e}");

    // fixture discriminator, input and parameter gradients
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let d = Discriminator::fixture(48, 2, 13).map_err(|e| e.to_string())?;
    let mut worst_disc = 0.0f64;
    for _ in 0..5 {
        let mut x: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
        x[2] = rng.random_range(0.3..1.0);
        let gx = d.input_gradient(&x).map_err(|e| e.to_string())?;
        for i in 0..x.len() {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (d.logit(&a).unwrap() - d.logit(&b).unwrap()) / (2.0 * h);
            worst_disc = worst_disc.max(rel_err(gx[i], fd));
        }
        let gp = d.param_gradient(&x).map_err(|e| e.to_string())?;
        let mut dp = d.clone();
        for k in 0..dp.params.len() {
            let p = dp.params[k];
            dp.params[k] = p + h;
            let up = dp.logit(&x).unwrap();
            dp.params[k] = p - h;
            let dn = dp.logit(&x).unwrap();
            dp.params[k] = p;
            worst_disc = worst_disc.max(rel_err(gp[k], (up - dn) / (2.0 * h)));
        }
    }
    ensure!(worst_disc < 1e-4, "discriminator gradient relative error {worst_disc:e}");

    // 200 Adam steps on a 50-frame window of the walking fixture
    let batch = [TrainingSequence { obs: obs[150..200].to_vec(), truth: truth[150..200].to_vec() }];
    let mut net = Estimator::new(sensors.width(), 32, 14);
    net.fit_normalization(&batch[0].obs);
    let history = train(&mut net, &batch, 200, 1e-2, Exec::Parallel).map_err(|e| e.to_string())?;
    let (first, last) = (history[0], *history.last().unwrap());
    let reduction = 1.0 - last / first;
    ensure!(reduction >= 0.9, "kin_loss {first:.4} -> {last:.4} ({:.1}% reduction)", 100.0 * reduction);
    let check = kin_loss(&net.run_sequence(&batch[0].obs, &batch[0].truth[0]).map_err(|e| e.to_string())?[0], &batch[0].truth[0])
        .map_err(|e| e.to_string())?;
    ensure!(check.is_finite(), "non-finite loss after training");
    Ok(format!(
        "kin_loss grad {worst_kin:.1e}, discriminator grad {worst_disc:.1e}, loss {first:.4} -> {last:.5} ({:.1}% reduction)",
        100.0 * reduction
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("calibration round trip", calibration_round_trip),
        ("synchronization", synchronization),
        ("rot6d round trip", rot6d_round_trip),
        ("procrustes", procrustes),
        ("reward constants", reward_constants),
        ("fall machinery", fall_machinery),
        ("simulator physics", simulator_physics),
        ("state difference", state_difference),
        ("metrics", metric_oracles),
        ("learning plumbing", learning_plumbing),
    ];
    let start = Instant::now();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {reason} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed in {:.1}s", criteria.len() - failed, criteria.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
