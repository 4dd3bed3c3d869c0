//! Backward attribute elimination with a cross-validated least-squares scorer.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Cohort;
use crate::error::{Error, Result};
use crate::models::{CenteredMoments, LEAST_SQUARES_DAMPING};

pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaeConfig {
    /// Largest tolerated rise in CV MAE (mg/week) for one removal.
    pub epsilon: f64,
    pub folds: usize,
    pub seed: u64,
}

impl Default for BaeConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            folds: DEFAULT_FOLDS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub feature: usize,
    pub name: String,
    pub cv_mae_after_removal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaeRound {
    /// CV MAE of the subset before this round.
    pub current_cv_mae: f64,
    /// `(feature, cv_mae_without_it)` for every removable feature, by index.
    pub candidates: Vec<(usize, f64)>,
    /// Feature removed this round; `None` on the round that stopped the search.
    pub removed: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaeResult {
    pub kept: Vec<usize>,
    pub kept_names: Vec<String>,
    pub removed: Vec<Removal>,
    pub trace: Vec<BaeRound>,
    pub config: BaeConfig,
}

/// Fold assignment and per-fold training moments, shared by every subset score.
struct CrossValidator {
    x: Array2<f64>,
    y: Vec<f64>,
    /// `folds[f]` lists the rows held out in fold `f`.
    folds: Vec<Vec<usize>>,
    moments: Vec<CenteredMoments>,
}

impl CrossValidator {
    fn new(train: &Cohort, folds: usize, seed: u64) -> Result<Self> {
        if folds < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
        }
        let n = train.len();
        if n < folds {
            return Err(Error::TooFewRecords { needed: folds, got: n });
        }
        let x = train.design_all();
        let y = train.targets();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut held = vec![Vec::new(); folds];
        for (pos, &row) in order.iter().enumerate() {
            held[pos % folds].push(row);
        }
        for f in &mut held {
            f.sort_unstable();
        }
        let moments = held
            .iter()
            .map(|out| {
                let mut keep = vec![true; n];
                out.iter().for_each(|&r| keep[r] = false);
                let rows: Vec<usize> = (0..n).filter(|&r| keep[r]).collect();
                let fx = x.select(ndarray::Axis(0), &rows);
                let fy: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
                CenteredMoments::new(fx.view(), &fy)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            x,
            y,
            folds: held,
            moments,
        })
    }

    /// Pooled out-of-fold MAE of least squares on `subset`.
    fn score(&self, subset: &[usize]) -> Result<f64> {
        if subset.is_empty() {
            return Err(Error::InvalidArgument("feature subset is empty".into()));
        }
        let mut total = 0.0;
        for (held, moments) in self.folds.iter().zip(&self.moments) {
            let model = moments.solve(subset, LEAST_SQUARES_DAMPING)?;
            for &r in held {
                let row = self.x.row(r);
                let pred = model.beta + model.alpha.iter().zip(subset).map(|(a, &c)| a * row[c]).sum::<f64>();
                total += (pred - self.y[r]).abs();
            }
        }
        Ok(total / self.y.len() as f64)
    }
}

/// K-fold cross-validated MAE of least squares restricted to `subset`.
pub fn subset_score(train: &Cohort, subset: &[usize], folds: usize, seed: u64) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("feature subset is empty".into()));
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= train.dim()) {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            got: bad + 1,
        });
    }
    CrossValidator::new(train, folds, seed)?.score(subset)
}

/// Greedy backward elimination over the non-protected features.
///
/// Each round scores every single removal and drops the one with the lowest
/// CV MAE (ties go to the lower index). The search stops when that best score
/// exceeds the current score by more than `epsilon`, or when removing would
/// leave no features.
pub fn backward_attribute_elimination(train: &Cohort, protected: &[usize], config: &BaeConfig) -> Result<BaeResult> {
    if !(config.epsilon >= 0.0) {
        return Err(Error::InvalidArgument("epsilon must be non-negative".into()));
    }
    let d = train.dim();
    let names = train.catalog.names();
    let mut kept: Vec<usize> = (0..d).collect();
    let mut removed = Vec::new();
    let mut trace = Vec::new();
    let finish = |kept: Vec<usize>, removed, trace| BaeResult {
        kept_names: kept.iter().map(|&i| names[i].to_string()).collect(),
        kept,
        removed,
        trace,
        config: config.clone(),
    };
    if kept.iter().all(|i| protected.contains(i)) {
        return Ok(finish(kept, removed, trace));
    }

    let cv = CrossValidator::new(train, config.folds, config.seed)?;
    let mut current = cv.score(&kept)?;
    while kept.len() > 1 {
        let candidates: Vec<usize> = kept.iter().copied().filter(|i| !protected.contains(i)).collect();
        if candidates.is_empty() {
            break;
        }
        let scores = candidates
            .par_iter()
            .map(|&c| {
                let subset: Vec<usize> = kept.iter().copied().filter(|&i| i != c).collect();
                cv.score(&subset).map(|s| (c, s))
            })
            .collect::<Result<Vec<_>>>()?;
        let &(best, best_score) = scores
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .expect("candidates non-empty");
        let accept = best_score <= current + config.epsilon;
        trace.push(BaeRound {
            current_cv_mae: current,
            candidates: scores,
            removed: accept.then_some(best),
        });
        if !accept {
            break;
        }
        kept.retain(|&i| i != best);
        removed.push(Removal {
            feature: best,
            name: names[best].to_string(),
            cv_mae_after_removal: best_score,
        });
        current = best_score;
    }
    Ok(finish(kept, removed, trace))
}
