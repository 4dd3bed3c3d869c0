use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{MlpModel, DEFAULT_HIDDEN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without held-out improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub hidden: usize,
    /// Fraction of the (shuffled) training rows monitored for early stopping.
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            max_epochs: 500,
            patience: 20,
            seed: 0,
            hidden: DEFAULT_HIDDEN,
            holdout_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_epochs == 0 || self.patience == 0 || self.patience > self.max_epochs {
            return bad("need 1 <= patience <= max_epochs");
        }
        if self.hidden == 0 {
            return bad("hidden width must be at least 1");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Per-row training loss.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// `(pred - y)^2`
    Mse { targets: &'a [f64] },
    /// `(1 - lambda) (pred - y)^2 + lambda (pred - s)^2`
    Distill {
        targets: &'a [f64],
        soft: &'a [f64],
        lambda: f64,
    },
}

impl Objective<'_> {
    pub fn len(&self) -> usize {
        match self {
            Objective::Mse { targets } => targets.len(),
            Objective::Distill { targets, .. } => targets.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The constant prediction minimizing the loss over `rows`.
    pub(crate) fn mean_target(&self, rows: &[usize]) -> f64 {
        let sum: f64 = match *self {
            Objective::Distill { targets, soft, lambda } if lambda > 0.0 => rows
                .iter()
                .map(|&i| (1.0 - lambda) * targets[i] + lambda * soft[i])
                .sum(),
            Objective::Mse { targets } | Objective::Distill { targets, .. } => rows.iter().map(|&i| targets[i]).sum(),
        };
        sum / rows.len() as f64
    }

    fn validate(&self) -> Result<()> {
        if let Objective::Distill { targets, soft, lambda } = self {
            if soft.len() != targets.len() {
                return Err(Error::DimensionMismatch {
                    expected: targets.len(),
                    got: soft.len(),
                });
            }
            if !(0.0..=1.0).contains(lambda) {
                return Err(Error::InvalidArgument(format!(
                    "lambda must lie in [0, 1], got {lambda}"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn loss(&self, i: usize, pred: f64) -> f64 {
        match *self {
            Objective::Mse { targets } => {
                let r = pred - targets[i];
                r * r
            }
            Objective::Distill { targets, soft, lambda } => {
                let r = pred - targets[i];
                let q = pred - soft[i];
                (1.0 - lambda) * (r * r) + lambda * (q * q)
            }
        }
    }

    #[inline]
    pub fn derivative(&self, i: usize, pred: f64) -> f64 {
        match *self {
            Objective::Mse { targets } => 2.0 * (pred - targets[i]),
            Objective::Distill { targets, soft, lambda } => {
                2.0 * ((1.0 - lambda) * (pred - targets[i]) + lambda * (pred - soft[i]))
            }
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(len: usize, config: &TrainConfig) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr: config.learning_rate,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Rows used for fitting and for early stopping, derived from the seed.
///
/// The held-out slice is the last `round(holdout_fraction * n)` rows of a
/// seeded shuffle. Tiny inputs that cannot spare a slice monitor the
/// training rows instead.
pub fn holdout_split(n: usize, config: &TrainConfig) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut shuffle_rng(config.seed));
    let held = (config.holdout_fraction * n as f64).round() as usize;
    if held == 0 || held >= n {
        return (order.clone(), order);
    }
    let fit = order[..n - held].to_vec();
    let monitor = order[n - held..].to_vec();
    (fit, monitor)
}

fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Mini-batch Adam on `objective`, returning the best held-out epoch.
pub fn train_mlp(x: ArrayView2<f64>, objective: &Objective, config: &TrainConfig) -> Result<MlpModel> {
    config.validate()?;
    objective.validate()?;
    let (n, d) = x.dim();
    if n == 0 {
        return Err(Error::TooFewRecords { needed: 1, got: 0 });
    }
    if objective.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: objective.len(),
        });
    }
    let x = x.as_standard_layout();
    let flat = x.as_slice().expect("standard layout");
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("training inputs are not finite".into()));
    }

    let mut model = MlpModel::new(d, config.hidden, config.seed)?;
    let (mut fit_rows, monitor_rows) = holdout_split(n, config);
    // Start the output at the best constant so the hidden units fit deviations.
    let b2 = model.params.len() - 1;
    model.params[b2] = objective.mean_target(&fit_rows);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);

    let mut adam = Adam::new(model.params.len(), config);
    let mut grad = vec![0.0; model.params.len()];
    let mut hidden_buf = vec![0.0; config.hidden];
    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        fit_rows.shuffle(&mut rng);
        for batch in fit_rows.chunks(config.batch_size) {
            model.accumulate_gradient(
                flat,
                batch,
                |i, pred| objective.derivative(i, pred),
                &mut grad,
                &mut hidden_buf,
            );
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            adam.step(&mut model.params, &grad);
        }
        let loss = mean_loss(&model, flat, d, &monitor_rows, objective);
        if !loss.is_finite() || !model.all_finite() {
            return Err(Error::Divergence { epoch });
        }
        if loss < best_loss {
            best_loss = loss;
            best.params.copy_from_slice(&model.params);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(best)
}

fn mean_loss(model: &MlpModel, x: &[f64], d: usize, rows: &[usize], objective: &Objective) -> f64 {
    let total: f64 = rows
        .iter()
        .map(|&i| objective.loss(i, model.forward_unchecked(&x[i * d..(i + 1) * d])))
        .sum();
    total / rows.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn linear_data(n: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let y = x
            .rows()
            .into_iter()
            .map(|r| 2.0 * r[0] - 1.0 * r[1] + 0.5 * r[2] + 3.0)
            .collect();
        (x, y)
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            patience: 600,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            adam_beta1: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn distill_loss_reduces_to_mse_at_zero_lambda() {
        let y = [3.0, -1.0];
        let s = [100.0, 7.0];
        let mse = Objective::Mse { targets: &y };
        let dist = Objective::Distill {
            targets: &y,
            soft: &s,
            lambda: 0.0,
        };
        for i in 0..2 {
            for pred in [-2.5, 0.0, 4.25] {
                assert_eq!(mse.loss(i, pred).to_bits(), dist.loss(i, pred).to_bits());
                assert_eq!(mse.derivative(i, pred).to_bits(), dist.derivative(i, pred).to_bits());
            }
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let (x, y) = linear_data(120, 1);
        let config = TrainConfig {
            max_epochs: 30,
            patience: 5,
            seed: 4,
            ..Default::default()
        };
        let obj = Objective::Mse { targets: &y };
        let a = train_mlp(x.view(), &obj, &config).unwrap();
        let b = train_mlp(x.view(), &obj, &config).unwrap();
        assert_eq!(a, b);
        let c = train_mlp(x.view(), &obj, &config.with_seed(5)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn divergence_names_epoch() {
        let (x, mut y) = linear_data(40, 2);
        y.iter_mut().for_each(|v| *v *= 1e300);
        let config = TrainConfig {
            learning_rate: 1e6,
            max_epochs: 5,
            patience: 5,
            ..Default::default()
        };
        let err = train_mlp(x.view(), &Objective::Mse { targets: &y }, &config).unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 1 }), "{err:?}");
    }

    #[test]
    fn holdout_is_a_partition() {
        let config = TrainConfig::default();
        let (fit, monitor) = holdout_split(95, &config);
        assert_eq!(monitor.len(), 10);
        let mut all: Vec<usize> = fit.iter().chain(&monitor).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..95).collect::<Vec<_>>());
        let (fit, monitor) = holdout_split(3, &config);
        assert_eq!(fit, monitor);
    }

    #[test]
    fn rejects_out_of_range_lambda() {
        let (x, y) = linear_data(10, 3);
        let obj = Objective::Distill {
            targets: &y,
            soft: &y,
            lambda: 1.5,
        };
        assert!(train_mlp(x.view(), &obj, &TrainConfig::default()).is_err());
    }
}
