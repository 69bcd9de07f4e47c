//! Logit-producing discriminator over windows of self observations.
//!
//! The trained adversarial prior is outside this crate; [`Discriminator`] is a
//! small tanh MLP with analytic input and parameter gradients, so the reward,
//! fall detection and loss plumbing run end to end. [`Discriminator::fixture`]
//! builds fixed weights whose dominant unit reads the newest root height.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::reward::{discriminator_loss, sigmoid, RewardConfig};
use crate::error::{GripError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    /// Per layer: weights (out × in, row-major) then biases; the last layer has one output.
    pub params: Vec<f64>,
}

struct Cache {
    /// Layer inputs; `acts[0]` is the network input.
    acts: Vec<Vec<f64>>,
    logit: f64,
}

impl Discriminator {
    pub fn new(input_dim: usize, hidden: Vec<usize>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = Self::dims_of(input_dim, &hidden);
        let mut params = Vec::new();
        for w in dims.windows(2) {
            let normal = Normal::new(0.0, 1.0 / (w[0] as f64).sqrt()).expect("positive std");
            params.extend((0..w[0] * w[1]).map(|_| normal.sample(&mut rng)));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Discriminator { input_dim, hidden, params }
    }

    /// Fixed network whose first hidden unit computes `tanh(5·(z − 0.6))` from the
    /// input at `height_index`, read out with weight 4; the remaining units are
    /// small random features. Upright heights give ρ ≈ 0.97, a body on the ground ρ ≈ 0.02.
    pub fn fixture(input_dim: usize, height_index: usize, seed: u64) -> Result<Self> {
        if height_index >= input_dim {
            return Err(GripError::ShapeMismatch(format!("height index {height_index} outside input of {input_dim}")));
        }
        let hidden = 16;
        let mut d = Discriminator::new(input_dim, vec![hidden], seed);
        for p in d.params.iter_mut() {
            *p *= 0.05;
        }
        let w1 = input_dim * hidden;
        d.params[..input_dim].fill(0.0);
        d.params[height_index] = 5.0;
        d.params[w1] = -3.0;
        let w2 = w1 + hidden;
        d.params[w2] = 4.0;
        d.params[w2 + hidden] = 0.0;
        Ok(d)
    }

    fn dims_of(input_dim: usize, hidden: &[usize]) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        dims
    }

    fn dims(&self) -> Vec<usize> {
        Self::dims_of(self.input_dim, &self.hidden)
    }

    pub fn param_count(&self) -> usize {
        self.dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(GripError::LayoutMismatch(format!("discriminator expects {} inputs, got {}", self.input_dim, x.len())));
        }
        if self.params.len() != self.param_count() {
            return Err(GripError::ShapeMismatch("discriminator parameter count".into()));
        }
        Ok(())
    }

    fn forward(&self, x: &[f64]) -> Cache {
        let dims = self.dims();
        let layers = dims.len() - 1;
        let mut acts = vec![x.to_vec()];
        let mut off = 0;
        let mut logit = 0.0;
        for l in 0..layers {
            let (n_in, n_out) = (dims[l], dims[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let input = &acts[l];
            let z: Vec<f64> = (0..n_out).map(|o| b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(input).map(|(a, b)| a * b).sum::<f64>()).collect();
            if l + 1 == layers {
                logit = z[0];
            } else {
                acts.push(z.iter().map(|v| v.tanh()).collect());
            }
        }
        Cache { acts, logit }
    }

    /// Back-propagate d(logit); returns (d/dinput, d/dparams).
    fn backward(&self, cache: &Cache) -> (Vec<f64>, Vec<f64>) {
        let dims = self.dims();
        let layers = dims.len() - 1;
        let mut offsets = vec![0; layers];
        for l in 1..layers {
            offsets[l] = offsets[l - 1] + dims[l - 1] * dims[l] + dims[l];
        }
        let mut grad = vec![0.0; self.params.len()];
        // gradient w.r.t. the pre-activation of layer l
        let mut delta = vec![1.0];
        for l in (0..layers).rev() {
            let (n_in, n_out) = (dims[l], dims[l + 1]);
            let off = offsets[l];
            let input = &cache.acts[l];
            let w = &self.params[off..off + n_in * n_out];
            for o in 0..n_out {
                for i in 0..n_in {
                    grad[off + o * n_in + i] += delta[o] * input[i];
                }
                grad[off + n_in * n_out + o] += delta[o];
            }
            let mut d_in = vec![0.0; n_in];
            for o in 0..n_out {
                for i in 0..n_in {
                    d_in[i] += w[o * n_in + i] * delta[o];
                }
            }
            if l > 0 {
                for (d, a) in d_in.iter_mut().zip(input) {
                    *d *= 1.0 - a * a;
                }
            }
            delta = d_in;
        }
        (delta, grad)
    }

    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.forward(x).logit)
    }

    /// Probability ρ = σ(D(x)) that the input is real motion.
    pub fn probability(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(x)?))
    }

    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(self.backward(&self.forward(x)).0)
    }

    pub fn param_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(self.backward(&self.forward(x)).1)
    }

    /// Discriminator objective on a batch, with the gradient penalty taken at the real samples.
    pub fn batch_loss(&self, real: &[Vec<f64>], fake: &[Vec<f64>], cfg: &RewardConfig) -> Result<f64> {
        let real_logits = real.iter().map(|x| self.logit(x)).collect::<Result<Vec<_>>>()?;
        let fake_logits = fake.iter().map(|x| self.logit(x)).collect::<Result<Vec<_>>>()?;
        let gsq = real
            .iter()
            .map(|x| self.input_gradient(x).map(|g| g.iter().map(|v| v * v).sum()))
            .collect::<Result<Vec<f64>>>()?;
        discriminator_loss(&real_logits, &fake_logits, &gsq, cfg)
    }
}
