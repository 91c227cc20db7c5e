//! Running observation normalization (Welford over batches).
//!
//! Stats are updated only between rollouts: observations collected during a
//! rollout are normalized with the stats as of the rollout start, so the
//! buffered values stay consistent with the log-probs recorded alongside
//! them. A frozen normalizer (the eval/checkpoint state) never updates.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub mean: Vec<f64>,
    /// Running M2 aggregate (sum of squared deviations from the mean).
    pub m2: Vec<f64>,
    pub count: f64,
    pub frozen: bool,
    pub clip: f64,
}

impl ObsNormalizer {
    pub fn new(dim: usize) -> ObsNormalizer {
        ObsNormalizer {
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            count: 0.0,
            frozen: false,
            clip: 10.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self, i: usize) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            (self.m2[i] / self.count).sqrt().max(1e-8)
        }
    }

    /// Normalizes in place with the current stats.
    pub fn normalize(&self, obs: &mut [f64]) {
        assert_eq!(obs.len(), self.mean.len(), "obs dim mismatch");
        for i in 0..obs.len() {
            obs[i] = ((obs[i] - self.mean[i]) / self.std(i)).clamp(-self.clip, self.clip);
        }
    }

    /// Folds a batch of raw observations into the running stats.
    /// No-op when frozen.
    pub fn update(&mut self, batch: &[Vec<f64>]) {
        if self.frozen {
            return;
        }
        for obs in batch {
            assert_eq!(obs.len(), self.mean.len(), "obs dim mismatch");
            self.count += 1.0;
            for i in 0..obs.len() {
                let delta = obs[i] - self.mean[i];
                self.mean[i] += delta / self.count;
                self.m2[i] += delta * (obs[i] - self.mean[i]);
            }
        }
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }
}
