//! Staged recurrent kinematic estimator.
//!
//! Four single-layer LSTMs run in sequence each frame:
//!
//! | stage | input                    | output                 |
//! |-------|--------------------------|------------------------|
//! | LP    | obs                      | leaf positions, 5×3    |
//! | FP    | obs ‖ leaf positions     | joint positions, 24×3  |
//! | FA    | obs ‖ joint positions    | joint rotations, 24×6  |
//! | KV    | obs ‖ joint positions    | key velocities, 6×3    |
//!
//! Positions are root-relative but globally oriented, rotations are global
//! joint orientations in 6D form, velocities are global. Each stage's initial
//! `[h; c]` is a learned affine map of that stage's ground-truth output at the
//! first frame. Gradients are computed by hand (BPTT), end to end through the
//! stage chain.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{GripError, Result};
use crate::insole::SensorObservation;
use crate::par::{self, Exec};
use crate::rotmath::{matrix_from_rot6d, rot6d_from_matrix, Rotation, Vec3};
use crate::skeleton::{KEY_JOINTS, LEAF_JOINTS, NUM_JOINTS, ROOT};

pub const P_LEAF_WIDTH: usize = 3 * LEAF_JOINTS.len();
pub const P_WIDTH: usize = 3 * NUM_JOINTS;
pub const THETA_WIDTH: usize = 6 * NUM_JOINTS;
pub const V_KEY_WIDTH: usize = 3 * KEY_JOINTS.len();
pub const DEFAULT_HISTORY: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Lp,
    Fp,
    Fa,
    Kv,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Lp, Stage::Fp, Stage::Fa, Stage::Kv];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Lp => "lp",
            Stage::Fp => "fp",
            Stage::Fa => "fa",
            Stage::Kv => "kv",
        }
    }

    pub fn out_width(self) -> usize {
        match self {
            Stage::Lp => P_LEAF_WIDTH,
            Stage::Fp => P_WIDTH,
            Stage::Fa => THETA_WIDTH,
            Stage::Kv => V_KEY_WIDTH,
        }
    }

    /// Width of the upstream estimate appended to the observation.
    pub fn upstream_width(self) -> usize {
        match self {
            Stage::Lp => 0,
            Stage::Fp => P_LEAF_WIDTH,
            Stage::Fa | Stage::Kv => P_WIDTH,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicEstimate {
    pub p_leaf: Vec<f64>,
    pub p: Vec<f64>,
    /// Raw 6D blocks; decode with [`KinematicEstimate::theta_at`].
    pub theta: Vec<f64>,
    pub v_key: Vec<f64>,
}

impl KinematicEstimate {
    pub fn zeros() -> Self {
        KinematicEstimate {
            p_leaf: vec![0.0; P_LEAF_WIDTH],
            p: vec![0.0; P_WIDTH],
            theta: vec![0.0; THETA_WIDTH],
            v_key: vec![0.0; V_KEY_WIDTH],
        }
    }

    /// Build from global joint positions and orientations plus global key-joint velocities.
    pub fn from_pose(pos: &[Vec3], rots: &[Rotation], v_key: &[Vec3]) -> Result<Self> {
        if pos.len() != NUM_JOINTS || rots.len() != NUM_JOINTS || v_key.len() != KEY_JOINTS.len() {
            return Err(GripError::ShapeMismatch(format!(
                "pose with {} positions, {} rotations, {} key velocities",
                pos.len(),
                rots.len(),
                v_key.len()
            )));
        }
        let root = pos[ROOT];
        let p: Vec<f64> = pos.iter().flat_map(|x| (x - root).iter().copied().collect::<Vec<_>>()).collect();
        let p_leaf = LEAF_JOINTS.iter().flat_map(|&j| p[3 * j..3 * j + 3].to_vec()).collect();
        let theta = rots.iter().flat_map(|r| rot6d_from_matrix(r).to_array()).collect();
        let v_key = v_key.iter().flat_map(|v| v.iter().copied().collect::<Vec<_>>()).collect();
        Ok(KinematicEstimate { p_leaf, p, theta, v_key })
    }

    pub fn field(&self, stage: Stage) -> &[f64] {
        match stage {
            Stage::Lp => &self.p_leaf,
            Stage::Fp => &self.p,
            Stage::Fa => &self.theta,
            Stage::Kv => &self.v_key,
        }
    }

    pub fn field_mut(&mut self, stage: Stage) -> &mut Vec<f64> {
        match stage {
            Stage::Lp => &mut self.p_leaf,
            Stage::Fp => &mut self.p,
            Stage::Fa => &mut self.theta,
            Stage::Kv => &mut self.v_key,
        }
    }

    pub fn check_shape(&self) -> Result<()> {
        for s in Stage::ALL {
            if self.field(s).len() != s.out_width() {
                return Err(GripError::ShapeMismatch(format!(
                    "{} has {} values, expected {}",
                    s.name(),
                    self.field(s).len(),
                    s.out_width()
                )));
            }
        }
        Ok(())
    }

    pub fn p_leaf_at(&self, i: usize) -> Vec3 {
        Vec3::from_column_slice(&self.p_leaf[3 * i..3 * i + 3])
    }

    pub fn p_at(&self, j: usize) -> Vec3 {
        Vec3::from_column_slice(&self.p[3 * j..3 * j + 3])
    }

    pub fn v_key_at(&self, i: usize) -> Vec3 {
        Vec3::from_column_slice(&self.v_key[3 * i..3 * i + 3])
    }

    pub fn theta_at(&self, j: usize) -> Result<Rotation> {
        matrix_from_rot6d(&crate::rotmath::Rot6D::from_slice(&self.theta[6 * j..6 * j + 6]))
    }

    pub fn rotations(&self) -> Result<Vec<Rotation>> {
        (0..NUM_JOINTS).map(|j| self.theta_at(j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        Stage::ALL.iter().all(|s| self.field(*s).iter().all(|x| x.is_finite()))
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Sum over the four fields of the per-field mean squared error.
pub fn kin_loss(pred: &KinematicEstimate, truth: &KinematicEstimate) -> Result<f64> {
    pred.check_shape()?;
    truth.check_shape()?;
    Ok(Stage::ALL.iter().map(|s| mse(pred.field(*s), truth.field(*s))).sum())
}

/// Frame-averaged [`kin_loss`] over a sequence.
pub fn sequence_loss(pred: &[KinematicEstimate], truth: &[KinematicEstimate]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(GripError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(GripError::EmptySet);
    }
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        total += kin_loss(p, t)?;
    }
    Ok(total / pred.len() as f64)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `y += M x`, `M` row-major `rows × x.len()`.
fn gemv_acc(m: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = x.len();
    for (r, yr) in y.iter_mut().enumerate() {
        let row = &m[r * cols..(r + 1) * cols];
        *yr += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `x += Mᵀ y`.
fn gemv_t_acc(m: &[f64], y: &[f64], x: &mut [f64]) {
    let cols = x.len();
    for (r, yr) in y.iter().enumerate() {
        if *yr == 0.0 {
            continue;
        }
        let row = &m[r * cols..(r + 1) * cols];
        for (xc, a) in x.iter_mut().zip(row) {
            *xc += a * yr;
        }
    }
}

/// `M += y xᵀ`.
fn outer_acc(m: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, yr) in y.iter().enumerate() {
        if *yr == 0.0 {
            continue;
        }
        for (mc, xc) in m[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *mc += yr * xc;
        }
    }
}

/// Offsets of one stage's tensors in the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageLayout {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub offset: usize,
}

/// Tensor names and shapes of a stage, in storage order.
const TENSORS: [&str; 7] = ["w", "u", "b", "v", "d", "w_init", "b_init"];

impl StageLayout {
    fn shapes(&self) -> [(usize, usize); 7] {
        let (i, h, o) = (self.input, self.hidden, self.output);
        [(4 * h, i), (4 * h, h), (4 * h, 1), (o, h), (o, 1), (2 * h, o), (2 * h, 1)]
    }

    pub fn len(&self) -> usize {
        self.shapes().iter().map(|(r, c)| r * c).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn split<'a>(&self, all: &'a [f64]) -> [&'a [f64]; 7] {
        let mut rest = &all[self.offset..self.offset + self.len()];
        self.shapes().map(|(r, c)| {
            let (head, tail) = rest.split_at(r * c);
            rest = tail;
            head
        })
    }

    fn split_mut<'a>(&self, all: &'a mut [f64]) -> [&'a mut [f64]; 7] {
        let mut rest = &mut all[self.offset..self.offset + self.len()];
        self.shapes().map(|(r, c)| {
            let (head, tail) = std::mem::take(&mut rest).split_at_mut(r * c);
            rest = tail;
            head
        })
    }
}

/// Per-sequence recurrent state of all four stages.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenState {
    pub h: [Vec<f64>; 4],
    pub c: [Vec<f64>; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimator {
    pub sensor_width: usize,
    pub hidden: usize,
    pub obs_mean: Vec<f64>,
    pub obs_std: Vec<f64>,
    pub params: Vec<f64>,
    layout: [StageLayout; 4],
}

struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tc: Vec<f64>,
    h: Vec<f64>,
}

impl Estimator {
    /// Fresh estimator with uniform(±1/√hidden) LSTM weights and a small hidden-init projection.
    pub fn new(sensor_width: usize, hidden: usize, seed: u64) -> Self {
        let mut offset = 0;
        let layout = Stage::ALL.map(|s| {
            let l = StageLayout { input: sensor_width + s.upstream_width(), hidden, output: s.out_width(), offset };
            offset += l.len();
            l
        });
        let mut est = Estimator {
            sensor_width,
            hidden,
            obs_mean: vec![0.0; sensor_width],
            obs_std: vec![1.0; sensor_width],
            params: vec![0.0; offset],
            layout,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 1.0 / (hidden as f64).sqrt();
        for s in Stage::ALL {
            let l = est.layout[s.index()];
            let init_scale = 0.5 / (l.output as f64).sqrt();
            let parts = l.split_mut(&mut est.params);
            for (name, t) in TENSORS.iter().zip(parts) {
                let a = if name.ends_with("init") { init_scale } else { k };
                for x in t.iter_mut() {
                    *x = rng.random_range(-a..a);
                }
            }
        }
        est
    }

    pub fn layout(&self, stage: Stage) -> StageLayout {
        self.layout[stage.index()]
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Per-feature mean and standard deviation of the observations (std floored at 1e-6, else 1).
    pub fn fit_normalization(&mut self, frames: &[Vec<f64>]) {
        if frames.is_empty() {
            return;
        }
        let n = frames.len() as f64;
        for k in 0..self.sensor_width {
            let mean = frames.iter().map(|f| f[k]).sum::<f64>() / n;
            let var = frames.iter().map(|f| (f[k] - mean).powi(2)).sum::<f64>() / n;
            self.obs_mean[k] = mean;
            self.obs_std[k] = if var.sqrt() > 1e-6 { var.sqrt() } else { 1.0 };
        }
    }

    fn normalize(&self, obs: &[f64]) -> Result<Vec<f64>> {
        if obs.len() != self.sensor_width {
            return Err(GripError::ShapeMismatch(format!(
                "observation width {} but estimator expects {}",
                obs.len(),
                self.sensor_width
            )));
        }
        Ok(obs.iter().zip(&self.obs_mean).zip(&self.obs_std).map(|((x, m), s)| (x - m) / s).collect())
    }

    /// Stage input: normalized observation followed by the upstream estimate.
    pub fn compose_input(stage: Stage, obs_norm: &[f64], partial: &KinematicEstimate) -> Vec<f64> {
        let mut x = obs_norm.to_vec();
        match stage {
            Stage::Lp => {}
            Stage::Fp => x.extend_from_slice(&partial.p_leaf),
            Stage::Fa | Stage::Kv => x.extend_from_slice(&partial.p),
        }
        x
    }

    /// Hidden state from the first-frame ground truth, `[h0; c0] = W_init·y0 + b_init`.
    /// Called once per sequence.
    pub fn init_hidden(&self, first_frame_truth: &KinematicEstimate) -> Result<HiddenState> {
        first_frame_truth.check_shape()?;
        let mut h: [Vec<f64>; 4] = Default::default();
        let mut c: [Vec<f64>; 4] = Default::default();
        for s in Stage::ALL {
            let l = self.layout[s.index()];
            let p = l.split(&self.params);
            let mut hc = p[6].to_vec();
            gemv_acc(p[5], first_frame_truth.field(s), &mut hc);
            c[s.index()] = hc.split_off(l.hidden);
            h[s.index()] = hc;
        }
        Ok(HiddenState { h, c })
    }

    fn cell(&self, stage: Stage, x: Vec<f64>, h_prev: &[f64], c_prev: &[f64]) -> (StepCache, Vec<f64>) {
        let l = self.layout[stage.index()];
        let p = l.split(&self.params);
        let hd = l.hidden;
        let mut z = p[2].to_vec();
        gemv_acc(p[0], &x, &mut z);
        gemv_acc(p[1], h_prev, &mut z);
        let i: Vec<f64> = z[..hd].iter().map(|v| sigmoid(*v)).collect();
        let f: Vec<f64> = z[hd..2 * hd].iter().map(|v| sigmoid(*v)).collect();
        let g: Vec<f64> = z[2 * hd..3 * hd].iter().map(|v| v.tanh()).collect();
        let o: Vec<f64> = z[3 * hd..].iter().map(|v| sigmoid(*v)).collect();
        let c: Vec<f64> = (0..hd).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tc: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..hd).map(|k| o[k] * tc[k]).collect();
        let mut y = p[4].to_vec();
        gemv_acc(p[3], &h, &mut y);
        let cache = StepCache { x, h_prev: h_prev.to_vec(), c_prev: c_prev.to_vec(), i, f, g, o, tc, h };
        (cache, [y, c].concat())
    }

    /// One frame through all stages. Deterministic in (parameters, inputs, state).
    pub fn staged_forward(&self, obs: &[f64], state: &mut HiddenState) -> Result<KinematicEstimate> {
        let obs_norm = self.normalize(obs)?;
        let mut est = KinematicEstimate::zeros();
        for s in Stage::ALL {
            let k = s.index();
            let x = Self::compose_input(s, &obs_norm, &est);
            let (cache, mut yc) = self.cell(s, x, &state.h[k], &state.c[k]);
            let c = yc.split_off(s.out_width());
            *est.field_mut(s) = yc;
            state.h[k] = cache.h;
            state.c[k] = c;
        }
        Ok(est)
    }

    /// Run a whole sequence from the truth-initialized state.
    pub fn run_sequence(&self, obs: &[Vec<f64>], first_truth: &KinematicEstimate) -> Result<Vec<KinematicEstimate>> {
        let mut state = self.init_hidden(first_truth)?;
        obs.iter().map(|o| self.staged_forward(o, &mut state)).collect()
    }

    /// Forward a stage over a sequence of inputs from `[h0; c0]` (teacher forcing when
    /// `xs` carry ground-truth upstream values).
    fn stage_forward_seq(&self, stage: Stage, xs: Vec<Vec<f64>>, y0: &[f64]) -> (Vec<StepCache>, Vec<Vec<f64>>) {
        let l = self.layout[stage.index()];
        let p = l.split(&self.params);
        let mut hc = p[6].to_vec();
        gemv_acc(p[5], y0, &mut hc);
        let mut c = hc.split_off(l.hidden);
        let mut h = hc;
        let mut caches = Vec::with_capacity(xs.len());
        let mut ys = Vec::with_capacity(xs.len());
        for x in xs {
            let (cache, mut yc) = self.cell(stage, x, &h, &c);
            c = yc.split_off(l.output);
            h = cache.h.clone();
            caches.push(cache);
            ys.push(yc);
        }
        (caches, ys)
    }

    /// BPTT through one stage. Accumulates parameter gradients into `grad` and
    /// returns the gradient with respect to each input vector.
    fn stage_backward(&self, stage: Stage, caches: &[StepCache], dys: &[Vec<f64>], y0: &[f64], grad: &mut [f64]) -> Vec<Vec<f64>> {
        let l = self.layout[stage.index()];
        let p = l.split(&self.params);
        let g = l.split_mut(grad);
        let [gw, gu, gb, gv, gd, gwi, gbi] = g;
        let hd = l.hidden;
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        let mut dxs = vec![Vec::new(); caches.len()];
        for t in (0..caches.len()).rev() {
            let cc = &caches[t];
            let dy = &dys[t];
            outer_acc(gv, dy, &cc.h);
            for (a, b) in gd.iter_mut().zip(dy) {
                *a += b;
            }
            let mut dh = dh_next.clone();
            gemv_t_acc(p[3], dy, &mut dh);
            let mut dz = vec![0.0; 4 * hd];
            let mut dc_prev = vec![0.0; hd];
            for k in 0..hd {
                let d_o = dh[k] * cc.tc[k];
                let dc = dh[k] * cc.o[k] * (1.0 - cc.tc[k] * cc.tc[k]) + dc_next[k];
                let di = dc * cc.g[k];
                let dg = dc * cc.i[k];
                let df = dc * cc.c_prev[k];
                dc_prev[k] = dc * cc.f[k];
                dz[k] = di * cc.i[k] * (1.0 - cc.i[k]);
                dz[hd + k] = df * cc.f[k] * (1.0 - cc.f[k]);
                dz[2 * hd + k] = dg * (1.0 - cc.g[k] * cc.g[k]);
                dz[3 * hd + k] = d_o * cc.o[k] * (1.0 - cc.o[k]);
            }
            outer_acc(gw, &dz, &cc.x);
            outer_acc(gu, &dz, &cc.h_prev);
            for (a, b) in gb.iter_mut().zip(&dz) {
                *a += b;
            }
            let mut dx = vec![0.0; cc.x.len()];
            gemv_t_acc(p[0], &dz, &mut dx);
            dxs[t] = dx;
            let mut dhp = vec![0.0; hd];
            gemv_t_acc(p[1], &dz, &mut dhp);
            dh_next = dhp;
            dc_next = dc_prev;
        }
        let dhc = [dh_next, dc_next].concat();
        outer_acc(gwi, &dhc, y0);
        for (a, b) in gbi.iter_mut().zip(&dhc) {
            *a += b;
        }
        dxs
    }

    /// Frame-averaged loss of one sequence and its gradient with respect to all
    /// parameters, back-propagated end to end through the stage chain.
    pub fn loss_and_grad(&self, obs: &[Vec<f64>], truth: &[KinematicEstimate]) -> Result<(f64, Vec<f64>)> {
        if obs.len() != truth.len() {
            return Err(GripError::LengthMismatch(obs.len(), truth.len()));
        }
        if obs.is_empty() {
            return Err(GripError::EmptySet);
        }
        let t_len = obs.len();
        let obs_norm: Vec<Vec<f64>> = obs.iter().map(|o| self.normalize(o)).collect::<Result<_>>()?;
        let mut preds = vec![KinematicEstimate::zeros(); t_len];
        let mut caches: Vec<Vec<StepCache>> = Vec::new();
        for s in Stage::ALL {
            let xs: Vec<Vec<f64>> = (0..t_len).map(|t| Self::compose_input(s, &obs_norm[t], &preds[t])).collect();
            let (cache, ys) = self.stage_forward_seq(s, xs, truth[0].field(s));
            for (p, y) in preds.iter_mut().zip(ys) {
                *p.field_mut(s) = y;
            }
            caches.push(cache);
        }
        let loss = sequence_loss(&preds, truth)?;
        let mut grad = vec![0.0; self.params.len()];
        // upstream gradients flowing into LP and FP outputs
        let mut d_up: [Vec<Vec<f64>>; 2] = [vec![vec![0.0; P_LEAF_WIDTH]; t_len], vec![vec![0.0; P_WIDTH]; t_len]];
        for s in Stage::ALL.iter().rev() {
            let n = s.out_width() as f64 * t_len as f64;
            let dys: Vec<Vec<f64>> = (0..t_len)
                .map(|t| {
                    let mut d: Vec<f64> =
                        preds[t].field(*s).iter().zip(truth[t].field(*s)).map(|(a, b)| 2.0 * (a - b) / n).collect();
                    match s {
                        Stage::Lp => d.iter_mut().zip(&d_up[0][t]).for_each(|(a, b)| *a += b),
                        Stage::Fp => d.iter_mut().zip(&d_up[1][t]).for_each(|(a, b)| *a += b),
                        _ => {}
                    }
                    d
                })
                .collect();
            let dxs = self.stage_backward(*s, &caches[s.index()], &dys, truth[0].field(*s), &mut grad);
            let target = match s {
                Stage::Lp => None,
                Stage::Fp => Some(0),
                Stage::Fa | Stage::Kv => Some(1),
            };
            if let Some(k) = target {
                for t in 0..t_len {
                    for (a, b) in d_up[k][t].iter_mut().zip(&dxs[t][self.sensor_width..]) {
                        *a += b;
                    }
                }
            }
        }
        Ok((loss, grad))
    }

    /// Single-stage loss (MSE of that stage's field) under teacher forcing, and its
    /// gradient with respect to that stage's parameters (zero elsewhere).
    pub fn stage_loss_and_grad(&self, stage: Stage, obs: &[Vec<f64>], truth: &[KinematicEstimate]) -> Result<(f64, Vec<f64>)> {
        if obs.len() != truth.len() {
            return Err(GripError::LengthMismatch(obs.len(), truth.len()));
        }
        let t_len = obs.len();
        let xs: Vec<Vec<f64>> = obs
            .iter()
            .zip(truth)
            .map(|(o, tr)| Ok(Self::compose_input(stage, &self.normalize(o)?, tr)))
            .collect::<Result<_>>()?;
        let (caches, ys) = self.stage_forward_seq(stage, xs, truth[0].field(stage));
        let n = stage.out_width() as f64 * t_len as f64;
        let mut loss = 0.0;
        let dys: Vec<Vec<f64>> = ys
            .iter()
            .zip(truth)
            .map(|(y, tr)| {
                y.iter()
                    .zip(tr.field(stage))
                    .map(|(a, b)| {
                        loss += (a - b) * (a - b) / n;
                        2.0 * (a - b) / n
                    })
                    .collect()
            })
            .collect();
        let mut grad = vec![0.0; self.params.len()];
        self.stage_backward(stage, &caches, &dys, truth[0].field(stage), &mut grad);
        Ok((loss, grad))
    }

    /// Named tensors for checkpointing: `(name, [rows, cols], row-major data)`.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = vec![
            ("obs_mean".to_string(), vec![self.sensor_width], self.obs_mean.clone()),
            ("obs_std".to_string(), vec![self.sensor_width], self.obs_std.clone()),
        ];
        for s in Stage::ALL {
            let l = self.layout[s.index()];
            for ((name, t), (r, c)) in TENSORS.iter().zip(l.split(&self.params)).zip(l.shapes()) {
                out.push((format!("{}.{}", s.name(), name), vec![r, c], t.to_vec()));
            }
        }
        out
    }

    pub fn from_named_tensors(sensor_width: usize, hidden: usize, tensors: &[(String, Vec<usize>, Vec<f64>)]) -> Result<Self> {
        let mut est = Estimator::new(sensor_width, hidden, 0);
        let expected = est.named_tensors();
        if tensors.len() != expected.len() {
            return Err(GripError::ShapeMismatch(format!("{} tensors, expected {}", tensors.len(), expected.len())));
        }
        let mut flat = Vec::with_capacity(est.params.len());
        for ((name, shape, data), (en, es, _)) in tensors.iter().zip(&expected) {
            if name != en || shape != es || data.len() != shape.iter().product::<usize>() {
                return Err(GripError::ShapeMismatch(format!("tensor {name} {shape:?}, expected {en} {es:?}")));
            }
            match name.as_str() {
                "obs_mean" => est.obs_mean = data.clone(),
                "obs_std" => est.obs_std = data.clone(),
                _ => flat.extend_from_slice(data),
            }
        }
        est.params = flat;
        Ok(est)
    }
}

/// A training sequence: per-frame flattened observations and ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSequence {
    pub obs: Vec<Vec<f64>>,
    pub truth: Vec<KinematicEstimate>,
}

/// Mean loss and gradient over a batch. Per-sequence work runs through `exec`;
/// the reduction is sequential so both modes agree bitwise.
pub fn batch_loss_and_grad(est: &Estimator, batch: &[TrainingSequence], exec: Exec) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(GripError::EmptySet);
    }
    let parts = par::map(exec, batch, |s| est.loss_and_grad(&s.obs, &s.truth));
    let mut loss = 0.0;
    let mut grad = vec![0.0; est.params.len()];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            params[k] -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + self.eps);
        }
    }
}

/// Full-batch Adam; returns the loss before each step followed by the final loss.
pub fn train(est: &mut Estimator, batch: &[TrainingSequence], steps: usize, lr: f64, exec: Exec) -> Result<Vec<f64>> {
    let mut opt = Adam::new(est.params.len(), lr);
    let mut history = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let (loss, grad) = batch_loss_and_grad(est, batch, exec)?;
        history.push(loss);
        opt.step(&mut est.params, &grad);
    }
    history.push(batch_loss_and_grad(est, batch, exec)?.0);
    Ok(history)
}

/// Anything that yields one kinematic estimate per frame.
pub trait KinematicSource {
    fn estimate(&mut self, frame: usize, obs: &SensorObservation) -> Result<KinematicEstimate>;
}

/// Trained network with its per-sequence state. The state is initialized once,
/// at construction, from the first frame's ground truth.
pub struct NetworkSource<'a> {
    est: &'a Estimator,
    state: HiddenState,
}

impl<'a> NetworkSource<'a> {
    pub fn new(est: &'a Estimator, first_frame_truth: &KinematicEstimate) -> Result<Self> {
        Ok(NetworkSource { est, state: est.init_hidden(first_frame_truth)? })
    }

    pub fn state(&self) -> &HiddenState {
        &self.state
    }
}

impl KinematicSource for NetworkSource<'_> {
    fn estimate(&mut self, _frame: usize, obs: &SensorObservation) -> Result<KinematicEstimate> {
        self.est.staged_forward(&obs.flatten(), &mut self.state)
    }
}

/// Standard deviations of the oracle's Gaussian perturbations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseStd {
    pub p_leaf: f64,
    pub p: f64,
    /// Per-axis rotation-vector noise (rad).
    pub theta: f64,
    pub v_key: f64,
}

/// Ground truth served through the estimator interface, optionally perturbed.
pub struct OracleEstimator {
    truth: Vec<KinematicEstimate>,
    noise: NoiseStd,
    rng: ChaCha8Rng,
}

impl OracleEstimator {
    pub fn new(truth: Vec<KinematicEstimate>, noise: NoiseStd, seed: u64) -> Self {
        OracleEstimator { truth, noise, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn frame(&mut self, frame: usize) -> Result<KinematicEstimate> {
        let mut e = self
            .truth
            .get(frame)
            .cloned()
            .ok_or(GripError::Underflow { requested: frame + 1, available: self.truth.len() })?;
        let jitter = |rng: &mut ChaCha8Rng, v: &mut [f64], std: f64| {
            if std > 0.0 {
                let n = Normal::new(0.0, std).expect("positive std");
                v.iter_mut().for_each(|x| *x += n.sample(rng));
            }
        };
        jitter(&mut self.rng, &mut e.p_leaf, self.noise.p_leaf);
        jitter(&mut self.rng, &mut e.p, self.noise.p);
        jitter(&mut self.rng, &mut e.v_key, self.noise.v_key);
        if self.noise.theta > 0.0 {
            let n = Normal::new(0.0, self.noise.theta).expect("positive std");
            for j in 0..NUM_JOINTS {
                let r = e.theta_at(j)?;
                let w = Vec3::new(n.sample(&mut self.rng), n.sample(&mut self.rng), n.sample(&mut self.rng));
                let noisy = (r * Rotation::exp(&w)).renormalized();
                e.theta[6 * j..6 * j + 6].copy_from_slice(&rot6d_from_matrix(&noisy).to_array());
            }
        }
        Ok(e)
    }
}

impl KinematicSource for OracleEstimator {
    fn estimate(&mut self, frame: usize, _obs: &SensorObservation) -> Result<KinematicEstimate> {
        self.frame(frame)
    }
}

/// Fixed-capacity ring of recent estimates, ordered by frame index.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryBuffer {
    capacity: usize,
    entries: VecDeque<(usize, KinematicEstimate)>,
}

impl Default for HistoryBuffer {
    fn default() -> Self {
        HistoryBuffer::new(DEFAULT_HISTORY)
    }
}

impl HistoryBuffer {
    pub fn new(capacity: usize) -> Self {
        HistoryBuffer { capacity, entries: VecDeque::with_capacity(capacity) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Append frame `frame`; evicts the oldest entry when full. Frames must increase.
    pub fn push(&mut self, frame: usize, est: KinematicEstimate) -> Result<()> {
        if let Some((last, _)) = self.entries.back() {
            if frame <= *last {
                return Err(GripError::DegenerateInput(format!("frame {frame} pushed after {last}")));
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((frame, est));
        Ok(())
    }

    /// The most recent `n` entries, oldest first.
    pub fn segment(&self, n: usize) -> Result<Vec<(usize, KinematicEstimate)>> {
        if n > self.entries.len() {
            return Err(GripError::Underflow { requested: n, available: self.entries.len() });
        }
        Ok(self.entries.iter().skip(self.entries.len() - n).cloned().collect())
    }

    pub fn latest(&self) -> Option<&(usize, KinematicEstimate)> {
        self.entries.back()
    }
}
