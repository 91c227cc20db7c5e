//! Recurrent PPO: vectorized rollout collection, GAE, clipped surrogate with
//! hand-written gradients, and truncated BPTT over the rollout horizon with
//! stored initial recurrent states (reset at episode boundaries).
//!
//! Conventions: advantages are normalized once per iteration over the whole
//! rollout; minibatches split along the environment dimension so each one
//! backpropagates through its full horizon; all dones are terminal (the
//! trajectory end and the slip penalty both end the episode for real).

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grasp::GraspCandidate;
use crate::hand::{HandDescription, NUM_JOINTS};
use crate::physics::SimConfig;
use crate::task::TaskBundle;
use crate::trace::EpisodeTrace;

use super::env::{AdaptEnv, EnvConfig, OBS_DIM};
use super::net::{Adam, Module};
use super::normalizer::ObsNormalizer;
use super::policy::{Policy, RecurrentState};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub total_steps: usize,
    pub num_envs: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub lr: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> PpoConfig {
        PpoConfig {
            total_steps: 100_000,
            num_envs: 64,
            horizon: 128,
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            lr: 3e-4,
            epochs: 4,
            minibatches: 8,
            entropy_coef: 0.003,
            value_coef: 0.5,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::Validation(format!(
                "gamma and lambda must lie in (0, 1]: gamma={}, lambda={}",
                self.gamma, self.lambda
            )));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Validation(format!("clip must be positive: {}", self.clip)));
        }
        if self.num_envs == 0 || self.horizon == 0 || self.epochs == 0 || self.minibatches == 0 {
            return Err(Error::Validation(
                "envs, horizon, epochs, minibatches must be positive".into(),
            ));
        }
        if self.num_envs % self.minibatches != 0 {
            return Err(Error::Validation(format!(
                "minibatches ({}) must divide num_envs ({}) for recurrent slicing",
                self.minibatches, self.num_envs
            )));
        }
        if !(self.lr >= 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::Validation("lr must be >= 0 and grad_clip > 0".into()));
        }
        Ok(())
    }
}

/// Generalized advantage estimation for one environment's step sequence.
/// `dones[t]` marks a terminal after step t (no bootstrap across it).
/// Returns (advantages, returns) with `returns = advantages + values`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert_eq!(values.len(), n);
    assert_eq!(dones.len(), n);
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let mask = if dones[t] { 0.0 } else { 1.0 };
        let next_v = if t + 1 < n { values[t + 1] } else { last_value };
        let delta = rewards[t] + gamma * next_v * mask - values[t];
        acc = delta + gamma * lambda * mask * acc;
        adv[t] = acc;
    }
    let rets = adv.iter().zip(values.iter()).map(|(a, v)| a + v).collect();
    (adv, rets)
}

/// The clipped PPO ratio.
pub fn clip_ratio(ratio: f64, clip: f64) -> f64 {
    ratio.clamp(1.0 - clip, 1.0 + clip)
}

/// Per-sample clipped surrogate objective (to be maximized); the loss is its
/// negation. `-min(ratio * adv, clip_ratio(ratio) * adv)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    -(ratio * advantage).min(clip_ratio(ratio, clip) * advantage)
}

/// One minibatch of sequential rollout data: `T` steps over `B` envs.
#[derive(Clone, Debug)]
pub struct MinibatchData {
    pub obs: Vec<Array2<f64>>,
    pub actions: Vec<Array2<f64>>,
    pub old_log_probs: Vec<Array1<f64>>,
    pub advantages: Vec<Array1<f64>>,
    pub returns: Vec<Array1<f64>>,
    pub dones: Vec<Vec<bool>>,
    pub init_h: Array2<f64>,
    pub init_c: Array2<f64>,
}

impl MinibatchData {
    pub fn steps(&self) -> usize {
        self.obs.len()
    }

    pub fn envs(&self) -> usize {
        if self.obs.is_empty() {
            0
        } else {
            self.obs[0].nrows()
        }
    }

    pub fn samples(&self) -> usize {
        self.steps() * self.envs()
    }

    fn summary(&self) -> String {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut bad = 0usize;
        for arr in &self.obs {
            for &v in arr {
                if !v.is_finite() {
                    bad += 1;
                } else {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
        }
        let adv: Vec<f64> = self.advantages.iter().flatten().copied().collect();
        format!(
            "minibatch {}x{}: obs range [{lo:.3e}, {hi:.3e}], {bad} non-finite obs, \
             adv range [{:.3e}, {:.3e}]",
            self.steps(),
            self.envs(),
            adv.iter().copied().fold(f64::INFINITY, f64::min),
            adv.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Forward-only loss over a minibatch (used by the finite-difference check).
pub fn minibatch_loss(policy: &Policy, data: &MinibatchData, cfg: &PpoConfig) -> LossTerms {
    forward_minibatch(policy, data, cfg, false).0
}

/// Loss plus accumulated gradients (caller zeroes grads and steps the
/// optimizer). Non-finite losses abort with a diagnostic of the batch.
pub fn minibatch_loss_and_grad(
    policy: &mut Policy,
    data: &MinibatchData,
    cfg: &PpoConfig,
) -> Result<LossTerms> {
    let terms = run_minibatch_grad(policy, data, cfg);
    if !terms.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "PPO loss (policy {:.3e}, value {:.3e}); {}",
            terms.policy,
            terms.value,
            data.summary()
        )));
    }
    Ok(terms)
}

struct SampleGrads {
    /// dL/dmu per step [B, A].
    dmu: Vec<Array2<f64>>,
    /// dL/dvalue per step [B].
    dv: Vec<Array1<f64>>,
    /// dL/dlog_std, accumulated.
    dlog_std: Array1<f64>,
}

/// Shared forward pass: computes the loss and, when grads are requested, the
/// per-head gradients for the backward sweep.
fn forward_minibatch(
    policy: &Policy,
    data: &MinibatchData,
    cfg: &PpoConfig,
    want_grads: bool,
) -> (LossTerms, Option<SampleGrads>, Vec<super::policy::StepCache>) {
    let steps = data.steps();
    let envs = data.envs();
    let n = data.samples() as f64;
    let adim = policy.cfg.action_dim;

    let mut state = RecurrentState {
        h: data.init_h.clone(),
        c: data.init_c.clone(),
    };
    let mut caches = Vec::with_capacity(if want_grads { steps } else { 0 });
    let mut grads = want_grads.then(|| SampleGrads {
        dmu: Vec::with_capacity(steps),
        dv: Vec::with_capacity(steps),
        dlog_std: Array1::zeros(adim),
    });

    let mut policy_loss = 0.0;
    let mut value_loss = 0.0;
    let mut clipped = 0usize;
    let mut kl = 0.0;

    for t in 0..steps {
        let (out, next_state, cache) = policy.forward_step(&data.obs[t], &state);
        let mut dmu = Array2::zeros((envs, adim));
        let mut dv = Array1::zeros(envs);
        for b in 0..envs {
            let a_row = data.actions[t].row(b);
            let mu_row = out.mu.row(b);
            let mut lp = 0.0;
            for i in 0..adim {
                let s = policy.log_std[i];
                let z = (a_row[i] - mu_row[i]) / s.exp();
                lp += -0.5 * z * z - s - 0.5 * super::policy::LN_2PI;
            }
            let old = data.old_log_probs[t][b];
            let adv = data.advantages[t][b];
            let ratio = (lp - old).exp();
            policy_loss += clipped_surrogate(ratio, adv, cfg.clip) / n;
            kl += (old - lp) / n;
            if (ratio - 1.0).abs() > cfg.clip {
                clipped += 1;
            }

            let v = out.value[b];
            let ret = data.returns[t][b];
            value_loss += (v - ret) * (v - ret) / n;

            if let Some(g) = grads.as_mut() {
                // Gradient of the surrogate w.r.t. log-prob: active unless
                // the min picked the saturated clipped branch.
                let active = if adv >= 0.0 {
                    ratio <= 1.0 + cfg.clip
                } else {
                    ratio >= 1.0 - cfg.clip
                };
                let w = if active { -adv * ratio / n } else { 0.0 };
                for i in 0..adim {
                    let sig = policy.log_std[i].exp();
                    let z = (a_row[i] - mu_row[i]) / sig;
                    // dlp/dmu_i = z / sigma; dlp/dlog_std_i = z^2 - 1.
                    dmu[[b, i]] += w * z / sig;
                    g.dlog_std[i] += w * (z * z - 1.0);
                }
                dv[b] = cfg.value_coef * 2.0 * (v - ret) / n;
            }
        }
        if let Some(g) = grads.as_mut() {
            g.dmu.push(dmu);
            g.dv.push(dv);
            caches.push(cache);
        }
        state = next_state;
        state.reset_rows(&data.dones[t]);
    }

    let entropy = policy.entropy();
    if let Some(g) = grads.as_mut() {
        for v in g.dlog_std.iter_mut() {
            *v -= cfg.entropy_coef;
        }
    }
    let terms = LossTerms {
        policy: policy_loss,
        value: cfg.value_coef * value_loss,
        entropy,
        total: policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy,
        clip_fraction: clipped as f64 / n,
        approx_kl: kl,
    };
    (terms, grads, caches)
}

fn run_minibatch_grad(policy: &mut Policy, data: &MinibatchData, cfg: &PpoConfig) -> LossTerms {
    let (terms, grads, caches) = forward_minibatch(policy, data, cfg, true);
    let grads = grads.expect("gradients requested");
    let steps = data.steps();
    let envs = data.envs();
    let hidden = policy.cfg.lstm_hidden;

    let mut dh = Array2::zeros((envs, hidden));
    let mut dc = Array2::zeros((envs, hidden));
    for t in (0..steps).rev() {
        // State was zeroed after terminal steps, so no gradient crosses the
        // boundary from the future.
        for (b, &done) in data.dones[t].iter().enumerate() {
            if done {
                dh.row_mut(b).fill(0.0);
                dc.row_mut(b).fill(0.0);
            }
        }
        let (nh, nc) = policy.backward_step(
            &data.obs[t],
            &caches[t],
            &grads.dmu[t],
            &grads.dv[t],
            &dh,
            &dc,
        );
        dh = nh;
        dc = nc;
    }
    for (g, v) in policy.g_log_std.iter_mut().zip(grads.dlog_std.iter()) {
        *g += v;
    }
    terms
}

/// One rollout's worth of collected experience.
pub struct RolloutBuffer {
    pub obs: Vec<Array2<f64>>,
    pub actions: Vec<Array2<f64>>,
    pub log_probs: Vec<Array1<f64>>,
    pub values: Vec<Array1<f64>>,
    pub rewards: Vec<Vec<f64>>,
    pub dones: Vec<Vec<bool>>,
    pub initial_state: RecurrentState,
    pub last_values: Array1<f64>,
}

impl RolloutBuffer {
    /// Per-env GAE, flattened back into per-step arrays, plus whole-batch
    /// advantage normalization.
    pub fn compute_gae(&self, gamma: f64, lambda: f64) -> (Vec<Array1<f64>>, Vec<Array1<f64>>) {
        let steps = self.obs.len();
        let envs = self.obs[0].nrows();
        let mut adv = vec![Array1::zeros(envs); steps];
        let mut ret = vec![Array1::zeros(envs); steps];
        for b in 0..envs {
            let rewards: Vec<f64> = (0..steps).map(|t| self.rewards[t][b]).collect();
            let values: Vec<f64> = (0..steps).map(|t| self.values[t][b]).collect();
            let dones: Vec<bool> = (0..steps).map(|t| self.dones[t][b]).collect();
            let (a, r) = gae(&rewards, &values, &dones, self.last_values[b], gamma, lambda);
            for t in 0..steps {
                adv[t][b] = a[t];
                ret[t][b] = r[t];
            }
        }
        let n = (steps * envs) as f64;
        let mean: f64 = adv.iter().map(|a| a.sum()).sum::<f64>() / n;
        let var: f64 = adv
            .iter()
            .flat_map(|a| a.iter())
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        let std = var.sqrt().max(1e-8);
        for a in adv.iter_mut() {
            a.mapv_inplace(|v| (v - mean) / std);
        }
        (adv, ret)
    }

    fn slice_envs(&self, group: &[usize], adv: &[Array1<f64>], ret: &[Array1<f64>]) -> MinibatchData {
        let steps = self.obs.len();
        let select2 = |arr: &Array2<f64>| {
            let mut out = Array2::zeros((group.len(), arr.ncols()));
            for (i, &b) in group.iter().enumerate() {
                out.row_mut(i).assign(&arr.row(b));
            }
            out
        };
        let select1 = |arr: &Array1<f64>| {
            Array1::from_iter(group.iter().map(|&b| arr[b]))
        };
        MinibatchData {
            obs: (0..steps).map(|t| select2(&self.obs[t])).collect(),
            actions: (0..steps).map(|t| select2(&self.actions[t])).collect(),
            old_log_probs: (0..steps).map(|t| select1(&self.log_probs[t])).collect(),
            advantages: (0..steps).map(|t| select1(&adv[t])).collect(),
            returns: (0..steps).map(|t| select1(&ret[t])).collect(),
            dones: (0..steps)
                .map(|t| group.iter().map(|&b| self.dones[t][b]).collect())
                .collect(),
            init_h: select2(&self.initial_state.h),
            init_c: select2(&self.initial_state.c),
        }
    }
}

fn mix_seed(base: u64, env_idx: u64, episode: u64) -> u64 {
    // splitmix64 over the packed counters.
    let mut z = base
        .wrapping_add(env_idx.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(episode.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

struct EnvSlot {
    env: AdaptEnv,
    /// Reset attempts consumed so far; also indexes the grasp cycle.
    attempts: u64,
    finished: Vec<f64>,
}

/// Vectorized environments. Episode resets cycle deterministically through
/// the provided grasps and a seed stream derived from (seed, env, episode).
pub struct EnvPool {
    bundle: Arc<TaskBundle>,
    hand: Arc<HandDescription>,
    sim: SimConfig,
    env_cfg: EnvConfig,
    candidates: Arc<Vec<GraspCandidate>>,
    base_seed: u64,
    slots: Vec<EnvSlot>,
}

const RESET_RETRIES: u64 = 8;

impl EnvPool {
    pub fn new(
        bundle: Arc<TaskBundle>,
        hand: Arc<HandDescription>,
        sim: SimConfig,
        env_cfg: EnvConfig,
        candidates: Vec<GraspCandidate>,
        num_envs: usize,
        base_seed: u64,
    ) -> Result<EnvPool> {
        if candidates.is_empty() {
            return Err(Error::EmptyResult("no grasp candidates for training".into()));
        }
        let candidates = Arc::new(candidates);
        let mut slots = Vec::with_capacity(num_envs);
        for i in 0..num_envs {
            let mut attempts = 0;
            let env = Self::make_env(
                &bundle,
                &hand,
                &sim,
                &env_cfg,
                &candidates,
                base_seed,
                i as u64,
                &mut attempts,
            )?;
            slots.push(EnvSlot {
                env,
                attempts,
                finished: Vec::new(),
            });
        }
        Ok(EnvPool {
            bundle,
            hand,
            sim,
            env_cfg,
            candidates,
            base_seed,
            slots,
        })
    }

    /// Builds a fresh episode for one env slot, consuming one attempt per
    /// try so resets cycle through the grasps and the seed stream.
    #[allow(clippy::too_many_arguments)]
    fn make_env(
        bundle: &TaskBundle,
        hand: &Arc<HandDescription>,
        sim: &SimConfig,
        env_cfg: &EnvConfig,
        candidates: &[GraspCandidate],
        base_seed: u64,
        env_idx: u64,
        attempts: &mut u64,
    ) -> Result<AdaptEnv> {
        let mut last_err = None;
        for _ in 0..RESET_RETRIES {
            let attempt = *attempts;
            *attempts += 1;
            let candidate = &candidates[((env_idx + attempt) as usize) % candidates.len()];
            let seed = mix_seed(base_seed, env_idx, attempt);
            match AdaptEnv::new(bundle, hand.clone(), sim.clone(), candidate, *env_cfg, seed) {
                Ok(env) => return Ok(env),
                Err(e @ Error::ResetFailure(_)) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last_err.unwrap_or_else(|| Error::ResetFailure("exhausted reset retries".into())))
    }

    pub fn num_envs(&self) -> usize {
        self.slots.len()
    }

    /// Raw (unnormalized) observations, one row per env.
    pub fn raw_obs(&self) -> Vec<Vec<f64>> {
        self.slots.iter().map(|s| s.env.obs().to_vec()).collect()
    }

    /// Steps every env with its residual row; finished envs are reset in
    /// place (their returned obs belongs to the fresh episode).
    pub fn step(&mut self, residuals: &Array2<f64>) -> Result<(Vec<f64>, Vec<bool>)> {
        use rayon::prelude::*;
        let bundle = &self.bundle;
        let hand = &self.hand;
        let sim = &self.sim;
        let env_cfg = &self.env_cfg;
        let candidates = &self.candidates;
        let base_seed = self.base_seed;
        let outcomes: Vec<Result<(f64, bool)>> = self
            .slots
            .par_iter_mut()
            .enumerate()
            .map(|(i, slot)| {
                let row = residuals.row(i);
                let out = slot.env.step(row.as_slice().expect("contiguous row"))?;
                let done = out.done;
                let r = out.reward.total;
                if done {
                    let finished = slot.env.episode_return();
                    slot.finished.push(finished);
                    let mut attempts = slot.attempts;
                    slot.env = Self::make_env(
                        bundle,
                        hand,
                        sim,
                        env_cfg,
                        candidates,
                        base_seed,
                        i as u64,
                        &mut attempts,
                    )?;
                    slot.attempts = attempts;
                }
                Ok((r, done))
            })
            .collect();
        let mut rewards = Vec::with_capacity(self.slots.len());
        let mut dones = Vec::with_capacity(self.slots.len());
        for o in outcomes {
            let (r, d) = o?;
            rewards.push(r);
            dones.push(d);
        }
        Ok((rewards, dones))
    }

    /// Drains the returns of episodes that finished since the last call.
    pub fn drain_finished(&mut self) -> Vec<f64> {
        self.slots
            .iter_mut()
            .flat_map(|s| std::mem::take(&mut s.finished))
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterStats {
    pub iteration: usize,
    pub env_steps: usize,
    pub episodes: usize,
    pub mean_return: Option<f64>,
    pub loss: LossTerms,
    pub grad_norm: f64,
}

pub struct Trainer {
    pub policy: Policy,
    pub normalizer: ObsNormalizer,
    pub cfg: PpoConfig,
    pool: EnvPool,
    opt: Adam,
    state: RecurrentState,
    act_rng: ChaCha8Rng,
    env_steps: usize,
}

impl Trainer {
    pub fn new(
        bundle: Arc<TaskBundle>,
        hand: Arc<HandDescription>,
        sim: SimConfig,
        env_cfg: EnvConfig,
        candidates: Vec<GraspCandidate>,
        policy: Policy,
        cfg: PpoConfig,
    ) -> Result<Trainer> {
        cfg.validate()?;
        env_cfg.validate()?;
        policy.cfg.validate()?;
        if policy.cfg.obs_dim != OBS_DIM || policy.cfg.action_dim != NUM_JOINTS {
            return Err(Error::DimensionMismatch {
                context: "policy I/O for the adaptation environment".into(),
                expected: OBS_DIM,
                actual: policy.cfg.obs_dim,
            });
        }
        if (policy.cfg.max_residual - env_cfg.max_residual).abs() > 1e-12 {
            return Err(Error::Validation(format!(
                "policy max_residual ({}) must match env ({})",
                policy.cfg.max_residual, env_cfg.max_residual
            )));
        }
        let pool = EnvPool::new(
            bundle,
            hand,
            sim,
            env_cfg,
            candidates,
            cfg.num_envs,
            cfg.seed,
        )?;
        let state = policy.initial_state(cfg.num_envs);
        let normalizer = ObsNormalizer::new(policy.cfg.obs_dim);
        Ok(Trainer {
            opt: Adam::new(cfg.lr),
            act_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA5A5_5A5A_DEAD_BEEF),
            state,
            policy,
            normalizer,
            cfg,
            pool,
            env_steps: 0,
        })
    }

    fn normalized_obs(&self, raw: &[Vec<f64>]) -> Array2<f64> {
        let envs = raw.len();
        let dim = self.normalizer.dim();
        let mut obs = Array2::zeros((envs, dim));
        for (i, row) in raw.iter().enumerate() {
            let mut r = row.clone();
            self.normalizer.normalize(&mut r);
            obs.row_mut(i).assign(&Array1::from_vec(r));
        }
        obs
    }

    /// Collects one rollout; normalizer stats update only afterwards so the
    /// stored observations match what the policy consumed.
    fn collect(&mut self) -> Result<(RolloutBuffer, Vec<f64>)> {
        let horizon = self.cfg.horizon;
        let mut buffer = RolloutBuffer {
            obs: Vec::with_capacity(horizon),
            actions: Vec::with_capacity(horizon),
            log_probs: Vec::with_capacity(horizon),
            values: Vec::with_capacity(horizon),
            rewards: Vec::with_capacity(horizon),
            dones: Vec::with_capacity(horizon),
            initial_state: self.state.clone(),
            last_values: Array1::zeros(self.pool.num_envs()),
        };
        let mut pending_raw: Vec<Vec<f64>> = Vec::with_capacity(horizon * self.pool.num_envs());

        for _ in 0..horizon {
            let raw = self.pool.raw_obs();
            let obs = self.normalized_obs(&raw);
            pending_raw.extend(raw);

            let (out, next_state, _) = self.policy.forward_step(&obs, &self.state);
            let actions = self.policy.sample_actions(&out.mu, &mut self.act_rng, false);
            let log_probs = self.policy.log_prob(&out.mu, &actions);
            let residuals = actions.mapv(|a| a.tanh() * self.policy.cfg.max_residual);
            let (rewards, dones) = self.pool.step(&residuals)?;

            self.state = next_state;
            self.state.reset_rows(&dones);
            self.env_steps += self.pool.num_envs();

            buffer.obs.push(obs);
            buffer.actions.push(actions);
            buffer.log_probs.push(log_probs);
            buffer.values.push(out.value);
            buffer.rewards.push(rewards);
            buffer.dones.push(dones);
        }

        let raw = self.pool.raw_obs();
        let obs = self.normalized_obs(&raw);
        let (out, _, _) = self.policy.forward_step(&obs, &self.state);
        buffer.last_values = out.value;

        self.normalizer.update(&pending_raw);
        let finished = self.pool.drain_finished();
        Ok((buffer, finished))
    }

    fn update(&mut self, buffer: &RolloutBuffer, iteration: usize) -> Result<(LossTerms, f64)> {
        let (adv, ret) = buffer.compute_gae(self.cfg.gamma, self.cfg.lambda);
        let envs = self.pool.num_envs();
        let group_size = envs / self.cfg.minibatches;
        let mut order: Vec<usize> = (0..envs).collect();
        let mut last = LossTerms::default();
        let mut grad_norm_acc = 0.0;
        let mut updates = 0usize;
        for epoch in 0..self.cfg.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(
                mix_seed(self.cfg.seed, iteration as u64, epoch as u64) ^ 0x517C_C1B7_2722_0A95,
            );
            order.shuffle(&mut rng);
            for group in order.chunks(group_size) {
                let data = buffer.slice_envs(group, &adv, &ret);
                self.policy.zero_grad();
                last = minibatch_loss_and_grad(&mut self.policy, &data, &self.cfg)?;
                grad_norm_acc += self.policy.clip_grad_norm(self.cfg.grad_clip);
                self.opt.step(&mut self.policy);
                updates += 1;
            }
        }
        Ok((last, grad_norm_acc / updates.max(1) as f64))
    }

    /// Runs PPO until at least `cfg.total_steps` environment steps have been
    /// consumed, returning the per-iteration training curve.
    pub fn train(&mut self) -> Result<Vec<IterStats>> {
        let mut stats = Vec::new();
        let mut iteration = 0;
        while self.env_steps < self.cfg.total_steps {
            let (buffer, finished) = self.collect()?;
            let (loss, grad_norm) = self.update(&buffer, iteration)?;
            stats.push(IterStats {
                iteration,
                env_steps: self.env_steps,
                episodes: finished.len(),
                mean_return: if finished.is_empty() {
                    None
                } else {
                    Some(finished.iter().sum::<f64>() / finished.len() as f64)
                },
                loss,
                grad_norm,
            });
            iteration += 1;
        }
        // Evaluation and checkpoints read the stats as frozen from here on.
        Ok(stats)
    }
}

/// Rolls one episode with a policy (or the zero-residual baseline when
/// `policy` is `None`) and returns its trace. Deterministic mode uses the
/// action mean; otherwise actions are sampled from a stream derived from
/// `seed`.
#[allow(clippy::too_many_arguments)]
pub fn rollout_episode(
    policy: Option<(&Policy, &ObsNormalizer)>,
    bundle: &TaskBundle,
    hand: Arc<HandDescription>,
    sim: SimConfig,
    candidate: &GraspCandidate,
    env_cfg: EnvConfig,
    seed: u64,
    deterministic: bool,
) -> Result<EpisodeTrace> {
    let mut env = AdaptEnv::new(bundle, hand, sim, candidate, env_cfg, seed)?;
    match policy {
        None => {
            let zeros = [0.0; NUM_JOINTS];
            while !env.done() {
                env.step(&zeros)?;
            }
        }
        Some((p, norm)) => {
            if p.cfg.obs_dim != OBS_DIM {
                return Err(Error::DimensionMismatch {
                    context: "policy observation width".into(),
                    expected: OBS_DIM,
                    actual: p.cfg.obs_dim,
                });
            }
            let mut state = p.initial_state(1);
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5EED, 0));
            while !env.done() {
                let mut row = env.obs().to_vec();
                norm.normalize(&mut row);
                let obs =
                    Array2::from_shape_vec((1, row.len()), row).expect("obs shape");
                let (out, next, _) = p.forward_step(&obs, &state);
                let action = p.sample_actions(&out.mu, &mut rng, deterministic);
                let dq = p.residual(action.row(0).as_slice().expect("contiguous"));
                env.step(&dq)?;
                state = next;
            }
        }
    }
    Ok(env.trace())
}
