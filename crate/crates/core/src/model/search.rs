use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Activation, ModelConfig, ModelError, NormKind, OptimizerKind};
use crate::dataset::Task;
use crate::smiles::fnv1a64;

/// Sampling ranges for the random-search tuner. Integer ranges are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub h1: (usize, usize),
    pub h2_min: usize,
    pub h2_cap: usize,
    pub h3_min: usize,
    pub h3_cap: usize,
    pub num_layers: (usize, usize),
    pub heads: (usize, usize),
    pub dropout: (f64, f64),
    pub attention_dropout: (f64, f64),
    pub mlp_layers: (usize, usize),
    pub lr: (f64, f64),
    pub weight_decay: (f64, f64),
    pub epochs: (usize, usize),
    pub epoch_step: usize,
    pub desk_scale: bool,
}

impl SearchSpace {
    /// The full-size ranges.
    pub fn full() -> Self {
        Self {
            h1: (256, 512),
            h2_min: 64,
            h2_cap: 256,
            h3_min: 32,
            h3_cap: 128,
            num_layers: (2, 4),
            heads: (2, 8),
            dropout: (0.1, 0.5),
            attention_dropout: (0.0, 0.4),
            mlp_layers: (1, 3),
            lr: (1e-5, 1e-2),
            weight_decay: (1e-6, 1e-2),
            epochs: (300, 1500),
            epoch_step: 100,
            desk_scale: false,
        }
    }

    /// Widths divided by 8 and epochs by 10, for quick runs.
    pub fn desk() -> Self {
        Self {
            h1: (32, 64),
            h2_min: 8,
            h2_cap: 32,
            h3_min: 4,
            h3_cap: 16,
            epochs: (30, 150),
            epoch_step: 10,
            desk_scale: true,
            ..Self::full()
        }
    }

    fn multiple_in<R: Rng>(rng: &mut R, lo: usize, hi: usize, k: usize) -> Option<usize> {
        let first = lo.div_ceil(k);
        let last = hi / k;
        (first <= last).then(|| rng.gen_range(first..=last) * k)
    }

    fn log_uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
        rng.gen_range(lo.ln()..=hi.ln()).exp()
    }

    /// Draws one configuration. Hidden widths are multiples of the head count.
    pub fn sample<R: Rng>(&self, rng: &mut R, task: Task, seed: u64) -> ModelConfig {
        loop {
            let heads = rng.gen_range(self.heads.0..=self.heads.1);
            let h1 = rng.gen_range(self.h1.0..=self.h1.1);
            let Some(h2) = Self::multiple_in(rng, self.h2_min, self.h2_cap.min(h1), heads) else {
                continue;
            };
            let Some(h3) = Self::multiple_in(rng, self.h3_min, self.h3_cap.min(h2), heads) else {
                continue;
            };
            let steps = (self.epochs.1 - self.epochs.0) / self.epoch_step;
            let epochs = self.epochs.0 + rng.gen_range(0..=steps) * self.epoch_step;
            return ModelConfig {
                h1,
                h2,
                h3,
                num_layers: rng.gen_range(self.num_layers.0..=self.num_layers.1),
                heads,
                dropout_pre: rng.gen_range(self.dropout.0..=self.dropout.1),
                dropout_post: rng.gen_range(self.dropout.0..=self.dropout.1),
                dropout_mlp: rng.gen_range(self.dropout.0..=self.dropout.1),
                attention_dropout: rng
                    .gen_range(self.attention_dropout.0..=self.attention_dropout.1),
                mlp_layers: rng.gen_range(self.mlp_layers.0..=self.mlp_layers.1),
                activation: if rng.gen_bool(0.5) {
                    Activation::Relu
                } else {
                    Activation::Gelu
                },
                norm: match rng.gen_range(0..3) {
                    0 => NormKind::Graph,
                    1 => NormKind::Batch,
                    _ => NormKind::Layer,
                },
                optimizer: if rng.gen_bool(0.5) {
                    OptimizerKind::Adam
                } else {
                    OptimizerKind::AdamW
                },
                lr: Self::log_uniform(rng, self.lr),
                weight_decay: Self::log_uniform(rng, self.weight_decay),
                epochs,
                cosine_schedule: rng.gen_bool(0.5),
                task,
                seed,
                desk_scale: self.desk_scale,
            };
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub config: ModelConfig,
    /// `None` when the trial diverged or failed.
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: ModelConfig,
    pub best_val_loss: f64,
    pub trials: Vec<Trial>,
}

fn config_hash(c: &ModelConfig) -> u64 {
    fnv1a64(
        serde_json::to_string(c)
            .expect("config serializes")
            .as_bytes(),
    )
}

/// Samples `budget` configurations, evaluates them (in parallel) with
/// `objective`, and returns the lowest validation loss. Ties go to the
/// configuration with the smaller hash of its JSON form.
pub fn random_search<F>(
    space: &SearchSpace,
    budget: usize,
    task: Task,
    seed: u64,
    objective: F,
) -> Result<SearchResult, ModelError>
where
    F: Fn(&ModelConfig) -> Result<f64, ModelError> + Sync,
{
    if budget == 0 {
        return Err(ModelError::Config(
            "search budget must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs: Vec<ModelConfig> = (0..budget)
        .map(|i| space.sample(&mut rng, task, seed.wrapping_add(i as u64)))
        .collect();
    let trials: Vec<Trial> = configs
        .into_par_iter()
        .map(|config| {
            let val_loss = match objective(&config) {
                Ok(v) if v.is_finite() => Some(v),
                Ok(_) => None,
                Err(e) => {
                    log::warn!("trial failed: {e}");
                    None
                }
            };
            Trial { config, val_loss }
        })
        .collect();
    let best = trials
        .iter()
        .filter_map(|t| t.val_loss.map(|v| (v, config_hash(&t.config), t)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .ok_or(ModelError::AllTrialsDiverged)?;
    Ok(SearchResult {
        best: best.2.config.clone(),
        best_val_loss: best.0,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_respect_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for space in [SearchSpace::full(), SearchSpace::desk()] {
            for _ in 0..300 {
                let c = space.sample(&mut rng, Task::Classification, 0);
                c.validate().unwrap_or_else(|e| panic!("{e}: {c:?}"));
                assert!(c.h2 <= space.h2_cap.min(c.h1));
            }
        }
    }

    #[test]
    fn budget_one_returns_the_sample() {
        let r = random_search(&SearchSpace::desk(), 1, Task::Regression, 9, |c| Ok(c.lr)).unwrap();
        assert_eq!(r.trials.len(), 1);
        assert_eq!(r.best, r.trials[0].config);
    }

    #[test]
    fn fixed_seed_same_trials_and_divergence_excluded() {
        let f = |c: &ModelConfig| {
            if c.heads.is_multiple_of(2) {
                Err(ModelError::Diverged {
                    epoch: 0,
                    loss: f64::NAN,
                })
            } else {
                Ok(c.weight_decay)
            }
        };
        let a = random_search(&SearchSpace::desk(), 12, Task::Classification, 1, f).unwrap();
        let b = random_search(&SearchSpace::desk(), 12, Task::Classification, 1, f).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.best.heads % 2, 1);
        let all_bad = random_search(&SearchSpace::desk(), 3, Task::Classification, 1, |_| {
            Err(ModelError::Diverged {
                epoch: 0,
                loss: f64::NAN,
            })
        });
        assert!(matches!(all_bad, Err(ModelError::AllTrialsDiverged)));
    }
}
