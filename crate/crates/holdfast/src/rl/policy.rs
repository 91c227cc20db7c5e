//! Recurrent actor-critic: LSTM core, tanh MLP trunk, Gaussian action head
//! with state-independent log-std, scalar value head. Actions are sampled in
//! pre-squash space; the environment interprets tanh(a) * max_residual as the
//! joint residual, while log-probs and entropy are computed on the Gaussian.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::net::{Linear, Lstm, LstmCache, Module};

pub const LN_2PI: f64 = 1.8378770664093453;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub lstm_hidden: usize,
    pub mlp: Vec<usize>,
    pub init_log_std: f64,
    /// Residual bound in rad per control tick.
    pub max_residual: f64,
    pub trunk_gain: f64,
    pub actor_gain: f64,
    pub critic_gain: f64,
}

impl Default for PolicyConfig {
    fn default() -> PolicyConfig {
        PolicyConfig {
            obs_dim: 56,
            action_dim: 16,
            lstm_hidden: 512,
            mlp: vec![512, 256],
            init_log_std: -1.0,
            max_residual: 0.05,
            trunk_gain: std::f64::consts::SQRT_2,
            actor_gain: 0.01,
            critic_gain: 1.0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.obs_dim == 0 || self.action_dim == 0 || self.lstm_hidden == 0 {
            return Err(crate::Error::Validation(
                "policy dimensions must be positive".into(),
            ));
        }
        if !(self.max_residual > 0.0) {
            return Err(crate::Error::Validation(format!(
                "max_residual must be positive, got {}",
                self.max_residual
            )));
        }
        Ok(())
    }
}

/// LSTM hidden/cell state, one row per environment.
#[derive(Clone, Debug)]
pub struct RecurrentState {
    pub h: Array2<f64>,
    pub c: Array2<f64>,
}

impl RecurrentState {
    pub fn zeros(batch: usize, hidden: usize) -> RecurrentState {
        RecurrentState {
            h: Array2::zeros((batch, hidden)),
            c: Array2::zeros((batch, hidden)),
        }
    }

    /// Zeroes the rows where `mask` is true (episode boundaries).
    pub fn reset_rows(&mut self, mask: &[bool]) {
        for (i, &done) in mask.iter().enumerate() {
            if done {
                self.h.row_mut(i).fill(0.0);
                self.c.row_mut(i).fill(0.0);
            }
        }
    }
}

/// Everything needed to rerun the backward pass for one step.
pub struct StepCache {
    lstm: LstmCache,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    /// acts[0] = new hidden state, acts[i+1] = tanh output of mlp[i].
    acts: Vec<Array2<f64>>,
}

pub struct StepOutput {
    pub mu: Array2<f64>,
    pub value: Array1<f64>,
}

#[derive(Clone, Debug)]
pub struct Policy {
    pub cfg: PolicyConfig,
    pub lstm: Lstm,
    pub mlp: Vec<Linear>,
    pub actor: Linear,
    pub critic: Linear,
    pub log_std: Array1<f64>,
    pub g_log_std: Array1<f64>,
}

impl Policy {
    pub fn new(cfg: PolicyConfig, seed: u64) -> Policy {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lstm = Lstm::new("lstm", cfg.obs_dim, cfg.lstm_hidden, &mut rng);
        let mut mlp = Vec::new();
        let mut prev = cfg.lstm_hidden;
        for (i, &width) in cfg.mlp.iter().enumerate() {
            mlp.push(Linear::new(
                &format!("mlp{i}"),
                prev,
                width,
                cfg.trunk_gain,
                &mut rng,
            ));
            prev = width;
        }
        let actor = Linear::new("actor", prev, cfg.action_dim, cfg.actor_gain, &mut rng);
        let critic = Linear::new("critic", prev, 1, cfg.critic_gain, &mut rng);
        let log_std = Array1::from_elem(cfg.action_dim, cfg.init_log_std);
        let g_log_std = Array1::zeros(cfg.action_dim);
        Policy {
            cfg,
            lstm,
            mlp,
            actor,
            critic,
            log_std,
            g_log_std,
        }
    }

    pub fn initial_state(&self, batch: usize) -> RecurrentState {
        RecurrentState::zeros(batch, self.cfg.lstm_hidden)
    }

    /// One forward step over a batch of observations [batch, obs_dim].
    pub fn forward_step(
        &self,
        obs: &Array2<f64>,
        state: &RecurrentState,
    ) -> (StepOutput, RecurrentState, StepCache) {
        let (h_new, c_new, lstm_cache) = self.lstm.step(obs, &state.h, &state.c);
        let mut acts = vec![h_new.clone()];
        for layer in &self.mlp {
            let x = layer.forward(acts.last().unwrap()).mapv(f64::tanh);
            acts.push(x);
        }
        let top = acts.last().unwrap();
        let mu = self.actor.forward(top);
        let value = self.critic.forward(top).column(0).to_owned();
        let cache = StepCache {
            lstm: lstm_cache,
            h_prev: state.h.clone(),
            c_prev: state.c.clone(),
            acts,
        };
        (
            StepOutput { mu, value },
            RecurrentState { h: h_new, c: c_new },
            cache,
        )
    }

    /// Backward through one step. `dmu` [batch, action], `dv` [batch],
    /// `dh_next`/`dc_next` are gradients flowing into this step's output
    /// state from the future. Returns gradients for the incoming state.
    pub fn backward_step(
        &mut self,
        obs: &Array2<f64>,
        cache: &StepCache,
        dmu: &Array2<f64>,
        dv: &Array1<f64>,
        dh_next: &Array2<f64>,
        dc_next: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>) {
        let top = cache.acts.last().unwrap();
        let dv2 = dv
            .clone()
            .into_shape_with_order((dv.len(), 1))
            .expect("dv reshape");
        let mut dx = self.actor.backward(top, dmu) + self.critic.backward(top, &dv2);
        for i in (0..self.mlp.len()).rev() {
            // d tanh(z) = 1 - tanh(z)^2, and acts[i+1] holds tanh(z).
            let dpre = &dx * &cache.acts[i + 1].mapv(|t| 1.0 - t * t);
            dx = self.mlp[i].backward(&cache.acts[i], &dpre);
        }
        let dh = &dx + dh_next;
        let (_dobs, dh_prev, dc_prev) =
            self.lstm
                .backward_step(&cache.lstm, obs, &cache.h_prev, &cache.c_prev, &dh, dc_next);
        (dh_prev, dc_prev)
    }

    /// Log-prob of pre-squash actions under N(mu, diag(exp(log_std))^2).
    pub fn log_prob(&self, mu: &Array2<f64>, actions: &Array2<f64>) -> Array1<f64> {
        let batch = mu.nrows();
        let mut out = Array1::zeros(batch);
        for b in 0..batch {
            let mut lp = 0.0;
            for i in 0..self.cfg.action_dim {
                let s = self.log_std[i];
                let z = (actions[[b, i]] - mu[[b, i]]) / s.exp();
                lp += -0.5 * z * z - s - 0.5 * LN_2PI;
            }
            out[b] = lp;
        }
        out
    }

    /// Differential entropy of the diagonal Gaussian (state independent).
    pub fn entropy(&self) -> f64 {
        self.log_std
            .iter()
            .map(|s| s + 0.5 * (LN_2PI + 1.0))
            .sum()
    }

    /// Samples pre-squash actions; `deterministic` returns the mean.
    pub fn sample_actions(
        &self,
        mu: &Array2<f64>,
        rng: &mut impl Rng,
        deterministic: bool,
    ) -> Array2<f64> {
        if deterministic {
            return mu.clone();
        }
        let mut a = mu.clone();
        for b in 0..a.nrows() {
            for i in 0..self.cfg.action_dim {
                let eps: f64 = rng.sample(StandardNormal);
                a[[b, i]] += self.log_std[i].exp() * eps;
            }
        }
        a
    }

    /// Maps a pre-squash action row to the bounded joint residual.
    pub fn residual(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .map(|a| a.tanh() * self.cfg.max_residual)
            .collect()
    }
}

impl Module for Policy {
    fn visit(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64])) {
        self.lstm.visit(f);
        for layer in &mut self.mlp {
            layer.visit(f);
        }
        self.actor.visit(f);
        self.critic.visit(f);
        f(
            "log_std",
            self.log_std.as_slice_mut().expect("standard layout"),
            self.g_log_std.as_slice_mut().expect("standard layout"),
        );
    }
}
