//! Proximal policy optimization: a Gaussian actor and a separate critic, both
//! small tanh networks, trained with the clipped surrogate and GAE.

pub mod mlp;

use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::board::{BoardConfig, BoardState, Preset};
use crate::error::{Error, Result};
pub use mlp::Mlp;

pub const OBS_DIM: usize = 6;
pub const ACT_DIM: usize = 2;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Velocity (m/s) mapped to 1 before running normalization.
pub const VELOCITY_SCALE: f64 = 0.5;
const NORM_CLIP: f64 = 5.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub entropy_weight: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub horizon: usize,
    pub hidden_layout: Vec<usize>,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub init_log_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self::for_preset(Preset::Sim)
    }
}

impl PpoConfig {
    pub fn for_preset(preset: Preset) -> Self {
        let (entropy_weight, minibatch_size, horizon) = match preset {
            Preset::Sim => (0.02, 64, 512),
            Preset::Physical => (0.04, 128, 256),
        };
        Self {
            gamma: 0.995,
            gae_lambda: 0.95,
            clip_epsilon: 0.05,
            entropy_weight,
            learning_rate: 1e-3,
            epochs: 3,
            minibatch_size,
            horizon,
            hidden_layout: vec![64, 64],
            value_coef: 0.5,
            max_grad_norm: 0.5,
            init_log_std: -0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("ppo: {m}")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("discount must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_epsilon > 0.0) {
            return bad("clip_epsilon must be positive");
        }
        if !(self.learning_rate > 0.0) || self.entropy_weight < 0.0 || self.value_coef < 0.0 {
            return bad("learning rate must be positive and loss weights non-negative");
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.horizon == 0 {
            return bad("epochs, minibatch_size and horizon must be at least 1");
        }
        if self.hidden_layout.is_empty() || self.hidden_layout.contains(&0) {
            return bad("hidden_layout needs at least one non-empty layer");
        }
        if !(LOG_STD_MIN..=LOG_STD_MAX).contains(&self.init_log_std) {
            return bad("init_log_std outside the log-std clamp");
        }
        Ok(())
    }
}

/// Fixed pre-scaling of a board state into the policy's observation.
pub fn observation(state: &BoardState, cfg: &BoardConfig) -> [f64; OBS_DIM] {
    [
        state.ball_pos[0] / cfg.half_width,
        state.ball_pos[1] / cfg.half_height,
        state.ball_vel[0] / VELOCITY_SCALE,
        state.ball_vel[1] / VELOCITY_SCALE,
        state.tilt[0] / cfg.max_tilt,
        state.tilt[1] / cfg.max_tilt,
    ]
}

/// Running mean and variance of observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub count: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 1e-4,
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    /// Merges the moments of `batch` into the running moments.
    pub fn update(&mut self, batch: &[[f64; OBS_DIM]]) {
        if batch.is_empty() {
            return;
        }
        let n = batch.len() as f64;
        for k in 0..self.mean.len() {
            let m = batch.iter().map(|x| x[k]).sum::<f64>() / n;
            let v = batch.iter().map(|x| (x[k] - m).powi(2)).sum::<f64>() / n;
            let total = self.count + n;
            let delta = m - self.mean[k];
            self.mean[k] += delta * n / total;
            let m2 = self.var[k] * self.count + v * n + delta * delta * self.count * n / total;
            self.var[k] = m2 / total;
        }
        self.count += n;
    }

    pub fn normalize(&self, x: &[f64; OBS_DIM]) -> [f64; OBS_DIM] {
        let mut out = [0.0; OBS_DIM];
        for k in 0..OBS_DIM {
            out[k] = ((x[k] - self.mean[k]) / (self.var[k] + 1e-8).sqrt()).clamp(-NORM_CLIP, NORM_CLIP);
        }
        out
    }
}

/// Log-density of `x` under a diagonal Gaussian.
pub fn gaussian_log_prob(x: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((x, m), ls)| {
            let z = (x - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActOutput {
    /// Sampled action before clamping; clamp before sending it to the board.
    pub action: [f64; ACT_DIM],
    pub log_prob: f64,
    pub value: f64,
    pub mean: [f64; ACT_DIM],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub actor: Mlp,
    pub critic: Mlp,
    /// Unclamped log standard deviation per action dimension.
    pub log_std: Vec<f64>,
    pub obs_norm: RunningNorm,
}

impl Policy {
    pub fn new(cfg: &PpoConfig, rng: &mut ChaCha8Rng) -> Self {
        let layout = |out: usize| {
            let mut s = vec![OBS_DIM];
            s.extend(&cfg.hidden_layout);
            s.push(out);
            s
        };
        let gain = std::f64::consts::SQRT_2;
        Self {
            actor: Mlp::new(&layout(ACT_DIM), gain, 0.01, rng),
            critic: Mlp::new(&layout(1), gain, 1.0, rng),
            log_std: vec![cfg.init_log_std; ACT_DIM],
            obs_norm: RunningNorm::new(OBS_DIM),
        }
    }

    pub fn normalize(&self, raw: &[f64; OBS_DIM]) -> [f64; OBS_DIM] {
        self.obs_norm.normalize(raw)
    }

    pub fn log_std_clamped(&self) -> [f64; ACT_DIM] {
        [0, 1].map(|k| self.log_std[k].clamp(LOG_STD_MIN, LOG_STD_MAX))
    }

    pub fn mean_action(&self, obs: &[f64]) -> [f64; ACT_DIM] {
        let m = self.actor.forward(obs);
        [m[0], m[1]]
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        self.critic.forward(obs)[0]
    }

    /// Samples an action for a normalized observation.
    pub fn act(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> ActOutput {
        let mean = self.mean_action(obs);
        let ls = self.log_std_clamped();
        let mut action = [0.0; ACT_DIM];
        for k in 0..ACT_DIM {
            let z: f64 = StandardNormal.sample(rng);
            action[k] = mean[k] + ls[k].exp() * z;
        }
        ActOutput {
            action,
            log_prob: gaussian_log_prob(&action, &mean, &ls),
            value: self.value(obs),
            mean,
        }
    }

    /// The mean action, clamped to the command range.
    pub fn deterministic(&self, obs: &[f64]) -> [f64; ACT_DIM] {
        crate::board::clamp_command(self.mean_action(obs))
    }

    pub fn param_count(&self) -> usize {
        self.actor.params.len() + ACT_DIM + self.critic.params.len()
    }

    /// Actor weights, then log-stds, then critic weights.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend(&self.actor.params);
        v.extend(&self.log_std);
        v.extend(&self.critic.params);
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let a = self.actor.params.len();
        self.actor.params.copy_from_slice(&flat[..a]);
        self.log_std.copy_from_slice(&flat[a..a + ACT_DIM]);
        self.critic.params.copy_from_slice(&flat[a + ACT_DIM..]);
    }

    /// SHA-256 over parameters and normalization statistics.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self
            .flat_params()
            .iter()
            .chain(&self.obs_norm.mean)
            .chain(&self.obs_norm.var)
            .chain(std::iter::once(&self.obs_norm.count))
        {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Policy plus the configuration it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub ppo: PpoConfig,
    pub board: BoardConfig,
    pub policy: Policy,
    pub note: String,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.version != Self::VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", ckpt.version)));
        }
        Ok(ckpt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    /// Normalized observation the action was sampled for.
    pub obs: [f64; OBS_DIM],
    pub action: [f64; ACT_DIM],
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    /// The episode terminated after this step (no bootstrapping).
    pub done: bool,
}

/// One contiguous stretch of experience.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutBatch {
    pub steps: Vec<RolloutStep>,
    /// Critic value of the state after the last step, used unless it is done.
    pub last_value: f64,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Consecutive pieces of at most `size` steps, advantages and returns
    /// included. A trailing piece shorter than `min_len` joins its predecessor.
    pub fn chunks(&self, size: usize, min_len: usize) -> Vec<RolloutBatch> {
        let n = self.len();
        let mut bounds = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + size).min(n);
            bounds.push((start, end));
            start = end;
        }
        if bounds.len() > 1 && bounds.last().map(|(s, e)| e - s < min_len).unwrap_or(false) {
            let (_, e) = bounds.pop().expect("non-empty");
            bounds.last_mut().expect("non-empty").1 = e;
        }
        bounds
            .into_iter()
            .map(|(s, e)| RolloutBatch {
                steps: self.steps[s..e].to_vec(),
                last_value: if e < n { self.steps[e].value } else { self.last_value },
                advantages: self.advantages.get(s..e).map(<[f64]>::to_vec).unwrap_or_default(),
                returns: self.returns.get(s..e).map(<[f64]>::to_vec).unwrap_or_default(),
            })
            .collect()
    }
}

/// Generalized advantage estimation over the batch; returns = advantages +
/// values.
pub fn compute_gae(batch: &mut RolloutBatch, cfg: &PpoConfig) {
    let n = batch.len();
    let mut adv = vec![0.0; n];
    let mut gae = 0.0;
    for t in (0..n).rev() {
        let s = &batch.steps[t];
        let next_value = if t + 1 < n { batch.steps[t + 1].value } else { batch.last_value };
        let live = if s.done { 0.0 } else { 1.0 };
        let delta = s.reward + cfg.gamma * next_value * live - s.value;
        gae = delta + cfg.gamma * cfg.gae_lambda * live * gae;
        adv[t] = gae;
    }
    batch.returns = adv.iter().zip(&batch.steps).map(|(a, s)| a + s.value).collect();
    batch.advantages = adv;
}

/// Running standard deviation of discounted returns, used to rescale rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnScaler {
    pub gamma: f64,
    count: f64,
    mean: f64,
    m2: f64,
}

impl ReturnScaler {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            count: 0.0,
            mean: 0.0,
            m2: 0.0,
        }
    }

    pub fn std(&self) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            (self.m2 / self.count).sqrt().max(1e-8)
        }
    }

    /// Feeds one episode's rewards into the statistics and rescales them.
    pub fn scale_episode(&mut self, rewards: &mut [f64]) {
        let mut ret = 0.0;
        for r in rewards.iter() {
            ret = self.gamma * ret + r;
            self.count += 1.0;
            let d = ret - self.mean;
            self.mean += d / self.count;
            self.m2 += d * (ret - self.mean);
        }
        let s = self.std();
        rewards.iter_mut().for_each(|r| *r /= s);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

/// Adam moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub opts: Adam,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            opts: Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                step: 0,
            },
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        let o = &mut self.opts;
        o.step += 1;
        let c1 = 1.0 - o.beta1.powi(o.step as i32);
        let c2 = 1.0 - o.beta2.powi(o.step as i32);
        for i in 0..params.len() {
            self.m[i] = o.beta1 * self.m[i] + (1.0 - o.beta1) * grad[i];
            self.v[i] = o.beta2 * self.v[i] + (1.0 - o.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + o.eps);
        }
    }
}

/// One training sample as the loss sees it.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub obs: &'a [f64],
    pub action: &'a [f64],
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Mean over `samples` of `−min(ρA, clip(ρ)A) + c_v (V − R)²` minus the entropy
/// bonus. When `grad` is given, the gradient with respect to
/// [`Policy::flat_params`] is accumulated into it.
pub fn loss_and_grad(policy: &Policy, samples: &[Sample], cfg: &PpoConfig, mut grad: Option<&mut [f64]>) -> LossParts {
    let n = samples.len() as f64;
    let ls = policy.log_std_clamped();
    let ls_free: Vec<bool> = (0..ACT_DIM)
        .map(|k| policy.log_std[k] > LOG_STD_MIN && policy.log_std[k] < LOG_STD_MAX)
        .collect();
    let inv_var: Vec<f64> = ls.iter().map(|l| (-2.0 * l).exp()).collect();
    let entropy: f64 = ls.iter().map(|l| l + 0.5 + HALF_LN_2PI).sum();
    let a_len = policy.actor.params.len();
    let mut parts = LossParts {
        entropy,
        ..LossParts::default()
    };
    let mut acts = Vec::new();
    let mut cacts = Vec::new();
    for s in samples {
        policy.actor.forward_cached(s.obs, &mut acts);
        let mean = acts.last().expect("output").clone();
        let logp = gaussian_log_prob(s.action, &mean, &ls);
        let log_ratio = logp - s.old_log_prob;
        let ratio = log_ratio.exp();
        let clipped = ratio.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
        let surr1 = ratio * s.advantage;
        let surr2 = clipped * s.advantage;
        parts.policy -= surr1.min(surr2) / n;
        if (ratio - 1.0).abs() > cfg.clip_epsilon {
            parts.clip_fraction += 1.0 / n;
        }
        parts.approx_kl += ((ratio - 1.0) - log_ratio) / n;

        policy.critic.forward_cached(s.obs, &mut cacts);
        let v = cacts.last().expect("output")[0];
        parts.value += (v - s.ret).powi(2) / n;

        if let Some(g) = grad.as_deref_mut() {
            // d(policy loss)/d logp: nonzero only where the unclipped term is
            // the active minimum.
            let dlogp = if surr1 <= surr2 { -s.advantage * ratio / n } else { 0.0 };
            if dlogp != 0.0 {
                let mut dmean = [0.0; ACT_DIM];
                for k in 0..ACT_DIM {
                    let diff = s.action[k] - mean[k];
                    dmean[k] = dlogp * diff * inv_var[k];
                    if ls_free[k] {
                        g[a_len + k] += dlogp * (diff * diff * inv_var[k] - 1.0);
                    }
                }
                policy.actor.backward(&acts, &dmean, &mut g[..a_len]);
            }
            let dv = cfg.value_coef * 2.0 * (v - s.ret) / n;
            policy.critic.backward(&cacts, &[dv], &mut g[a_len + ACT_DIM..]);
        }
    }
    if let Some(g) = grad {
        for k in 0..ACT_DIM {
            if ls_free[k] {
                g[a_len + k] -= cfg.entropy_weight;
            }
        }
    }
    parts.total = parts.policy + cfg.value_coef * parts.value - cfg.entropy_weight * parts.entropy;
    parts
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub minibatches: usize,
    pub samples: usize,
}

/// `epochs` passes of shuffled minibatch Adam steps on the clipped objective.
/// Advantages are standardized over the whole batch first. A non-finite loss
/// restores the parameters and optimizer state from before the call and
/// returns an error.
pub fn update(
    policy: &mut Policy,
    adam: &mut AdamState,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    cfg.validate()?;
    let n = batch.len();
    if n < cfg.minibatch_size {
        return Err(Error::InvalidConfig(format!(
            "batch of {n} steps is smaller than the minibatch size {}",
            cfg.minibatch_size
        )));
    }
    if batch.advantages.len() != n || batch.returns.len() != n {
        return Err(Error::InvalidConfig("advantages and returns must be computed first".into()));
    }
    let mean = batch.advantages.iter().sum::<f64>() / n as f64;
    let std = (batch.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let adv: Vec<f64> = batch.advantages.iter().map(|a| (a - mean) / (std + 1e-8)).collect();

    let saved = (policy.clone(), adam.clone());
    let mut stats = UpdateStats {
        samples: n,
        ..UpdateStats::default()
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut params = policy.flat_params();
    let mut grad = vec![0.0; params.len()];
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for mb in order.chunks(cfg.minibatch_size) {
            let samples: Vec<Sample> = mb
                .iter()
                .map(|&i| Sample {
                    obs: &batch.steps[i].obs,
                    action: &batch.steps[i].action,
                    old_log_prob: batch.steps[i].log_prob,
                    advantage: adv[i],
                    ret: batch.returns[i],
                })
                .collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            let parts = loss_and_grad(policy, &samples, cfg, Some(&mut grad));
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !parts.total.is_finite() || !norm.is_finite() {
                *policy = saved.0;
                *adam = saved.1;
                return Err(Error::Numerical(format!(
                    "non-finite loss in PPO update (policy {}, value {})",
                    parts.policy, parts.value
                )));
            }
            if norm > cfg.max_grad_norm {
                let s = cfg.max_grad_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            adam.apply(&mut params, &grad, cfg.learning_rate);
            policy.set_flat_params(&params);
            stats.policy_loss += parts.policy;
            stats.value_loss += parts.value;
            stats.entropy += parts.entropy;
            stats.clip_fraction += parts.clip_fraction;
            stats.approx_kl += parts.approx_kl;
            stats.minibatches += 1;
        }
    }
    let m = stats.minibatches as f64;
    stats.policy_loss /= m;
    stats.value_loss /= m;
    stats.entropy /= m;
    stats.clip_fraction /= m;
    stats.approx_kl /= m;
    Ok(stats)
}
