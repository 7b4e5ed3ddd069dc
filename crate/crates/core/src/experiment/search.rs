//! Seeded random search over the GraphSAGE hyperparameters.

use rand::distr::{Distribution, Uniform};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperparameterSpace {
    pub hidden_units: Vec<usize>,
    pub embedding_dims: Vec<usize>,
    /// Sampled log-uniformly.
    pub learning_rate: (f64, f64),
    pub weight_decay: (f64, f64),
    pub dropout: (f64, f64),
}

impl Default for HyperparameterSpace {
    fn default() -> Self {
        HyperparameterSpace {
            hidden_units: vec![512, 1024],
            embedding_dims: vec![8, 16, 32, 64, 128],
            learning_rate: (1e-8, 1e-1),
            weight_decay: (0.0, 0.1),
            dropout: (0.0, 0.4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialParams {
    pub hidden_units: usize,
    pub embedding_dim: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
}

fn within((lo, hi): (f64, f64), x: f64) -> bool {
    x >= lo && x <= hi
}

impl HyperparameterSpace {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if self.hidden_units.is_empty() || self.embedding_dims.is_empty() {
            return Err(Error::Config(
                "hyperparameter choices must be non-empty".into(),
            ));
        }
        if self.hidden_units.contains(&0) || self.embedding_dims.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !ordered(self.learning_rate) || self.learning_rate.0 <= 0.0 {
            return Err(Error::Config(
                "learning-rate range must be positive and ordered".into(),
            ));
        }
        if !ordered(self.weight_decay) || self.weight_decay.0 < 0.0 {
            return Err(Error::Config(
                "weight-decay range must be non-negative and ordered".into(),
            ));
        }
        if !ordered(self.dropout) || self.dropout.0 < 0.0 || self.dropout.1 >= 1.0 {
            return Err(Error::Config("dropout range must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TrialParams {
        let uniform = |(lo, hi): (f64, f64), rng: &mut R| {
            if lo == hi {
                lo
            } else {
                Uniform::new_inclusive(lo, hi)
                    .expect("validated range")
                    .sample(rng)
            }
        };
        let hidden_units = *self.hidden_units.choose(rng).expect("non-empty");
        let embedding_dim = *self.embedding_dims.choose(rng).expect("non-empty");
        let (lo, hi) = self.learning_rate;
        let learning_rate = uniform((lo.ln(), hi.ln()), rng).exp().clamp(lo, hi);
        let weight_decay = uniform(self.weight_decay, rng);
        let dropout = uniform(self.dropout, rng);
        TrialParams {
            hidden_units,
            embedding_dim,
            learning_rate,
            weight_decay,
            dropout,
        }
    }

    pub fn contains(&self, p: &TrialParams) -> bool {
        self.hidden_units.contains(&p.hidden_units)
            && self.embedding_dims.contains(&p.embedding_dim)
            && within(self.learning_rate, p.learning_rate)
            && within(self.weight_decay, p.weight_decay)
            && within(self.dropout, p.dropout)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub seed: u64,
    pub params: TrialParams,
    pub val_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    /// Index into `trials` of the highest validation score (first on ties).
    pub best: usize,
    pub trials: Vec<TrialRecord>,
}

impl SearchResult {
    pub fn best_trial(&self) -> &TrialRecord {
        &self.trials[self.best]
    }
}

/// Draws `budget` trials from `space`, scores each with `objective(params,
/// trial_seed)` and returns the argmax. Trials are drawn up front so the
/// sequence depends only on `seed`; scoring may run in parallel.
pub fn hyperparameter_search<F>(
    space: &HyperparameterSpace,
    budget: usize,
    seed: u64,
    objective: F,
) -> Result<SearchResult>
where
    F: Fn(&TrialParams, u64) -> Result<f64> + Sync,
{
    space.validate()?;
    if budget == 0 {
        return Err(Error::Config("search budget must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drawn: Vec<(TrialParams, u64)> = (0..budget)
        .map(|_| (space.sample(&mut rng), rng.random()))
        .collect();
    let trials = drawn
        .into_par_iter()
        .enumerate()
        .map(|(index, (params, trial_seed))| {
            let val_f1 = objective(&params, trial_seed)?;
            Ok(TrialRecord {
                index,
                seed: trial_seed,
                params,
                val_f1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, t) in trials.iter().enumerate() {
        if t.val_f1 > trials[best].val_f1 {
            best = i;
        }
    }
    Ok(SearchResult { best, trials })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_one_returns_single_trial() {
        let r =
            hyperparameter_search(&HyperparameterSpace::default(), 1, 3, |_, _| Ok(0.4)).unwrap();
        assert_eq!(r.trials.len(), 1);
        assert_eq!(r.best, 0);
    }

    #[test]
    fn samples_stay_in_range() {
        let space = HyperparameterSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..2000 {
            let p = space.sample(&mut rng);
            assert!(space.contains(&p), "{p:?}");
        }
    }

    #[test]
    fn reproducible_sequence_and_argmax() {
        let space = HyperparameterSpace::default();
        let score = |p: &TrialParams, _: u64| Ok(p.dropout);
        let a = hyperparameter_search(&space, 10, 42, score).unwrap();
        let b = hyperparameter_search(&space, 10, 42, score).unwrap();
        assert_eq!(a, b);
        let max = a.trials.iter().map(|t| t.val_f1).fold(f64::MIN, f64::max);
        assert_eq!(a.best_trial().val_f1, max);
    }

    #[test]
    fn zero_budget_rejected() {
        assert!(
            hyperparameter_search(&HyperparameterSpace::default(), 0, 0, |_, _| Ok(0.0)).is_err()
        );
    }
}
