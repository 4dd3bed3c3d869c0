#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use privdistill::dataset::{generate_synthetic, split_cohorts, Cohort, SyntheticData, SyntheticSpec};
use privdistill::distillation::DistillationConfig;
use privdistill::evaluation::run_seeds;
use privdistill::models::TrainConfig;

pub struct Fixture {
    pub data: SyntheticData,
    pub train: Cohort,
    pub valid: Cohort,
    pub train_seed: u64,
}

/// Synthetic cohort split the way run 0 of `seed` splits it.
pub fn synthetic(spec: &SyntheticSpec, seed: u64) -> Fixture {
    let data = generate_synthetic(spec, seed).unwrap();
    let catalog = data.catalog().unwrap();
    let (split_seed, train_seed) = run_seeds(seed, 0);
    let (train, valid) = split_cohorts(&data.records, &catalog, 0.65, split_seed).unwrap();
    Fixture {
        data,
        train,
        valid,
        train_seed,
    }
}

pub fn small_spec(n: usize) -> SyntheticSpec {
    SyntheticSpec {
        n,
        ..Default::default()
    }
}

/// Short training for tests that check plumbing rather than accuracy.
pub fn quick_config(seed: u64, epochs: usize) -> DistillationConfig {
    DistillationConfig {
        train: TrainConfig {
            max_epochs: epochs,
            patience: epochs.min(20),
            hidden: 8,
            ..TrainConfig::default().with_seed(seed)
        },
        ..Default::default()
    }
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_privdistill"))
}

pub fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(cwd)
        .env_remove("PRIVDISTILL_OUT")
        .env_remove("PRIVDISTILL_JOBS")
        .output()
        .expect("binary runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub mod oracles {
    use nalgebra::DMatrix;
    use ndarray::Array2;
    use privdistill::models::MlpModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Minimum-norm affine fit through the SVD pseudo-inverse of the centered design.
    pub fn pinv_fit(x: &Array2<f64>, y: &[f64]) -> (Vec<f64>, f64) {
        let (n, d) = x.dim();
        let means: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let xc = DMatrix::from_fn(n, d, |i, j| x[[i, j]] - means[j]);
        let yc = DMatrix::from_fn(n, 1, |i, _| y[i] - y_mean);
        let beta = xc.pseudo_inverse(1e-10).unwrap() * yc;
        let coef: Vec<f64> = beta.iter().copied().collect();
        let intercept = y_mean - coef.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
        (coef, intercept)
    }

    /// An exactly collinear instance: column 2 = 2·col0 − col1.
    pub fn collinear_instance(seed: u64) -> (Array2<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 60;
        let mut x = Array2::zeros((n, 3));
        for i in 0..n {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            x[[i, 0]] = a;
            x[[i, 1]] = b;
            x[[i, 2]] = 2.0 * a - b;
        }
        let y = (0..n)
            .map(|i| 1.5 + 3.0 * x[[i, 0]] - x[[i, 1]] + rng.random_range(-0.1..0.1))
            .collect();
        (x, y)
    }

    pub const STEP: f64 = 1e-5;
    /// Pre-activations closer to the ReLU kink than this could cross it under
    /// a STEP perturbation, where the numeric derivative is meaningless.
    pub const KINK_MARGIN: f64 = 1e-3;
    /// Denominator floor: gradients below it are compared absolutely, since
    /// rounding in the difference quotient is ~1e-11 whatever their size.
    pub const FLOOR: f64 = 1e-3;

    fn mse(model: &MlpModel, x: &Array2<f64>, y: &[f64]) -> f64 {
        x.rows()
            .into_iter()
            .zip(y)
            .map(|(r, t)| (model.forward(r.as_slice().unwrap()).unwrap() - t).powi(2))
            .sum::<f64>()
            / y.len() as f64
    }

    fn min_pre_activation(model: &MlpModel, x: &Array2<f64>) -> f64 {
        let (d, h) = (model.input_dim(), model.hidden());
        let mut lowest = f64::INFINITY;
        for r in x.rows() {
            for k in 0..h {
                let pre = (0..d).map(|j| model.params[k * d + j] * r[j]).sum::<f64>() + model.params[h * d + k];
                lowest = lowest.min(pre.abs());
            }
        }
        lowest
    }

    /// Largest relative error between analytic and central-difference
    /// gradients over `models` random MLPs with d ≤ 5, h ≤ 4. Draws whose
    /// pre-activations sit on the kink are redrawn.
    pub fn gradient_check(models: usize, seed: u64) -> (f64, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut worst, mut checked, mut redrawn) = (0.0f64, 0, 0);
        while checked < models {
            let d = rng.random_range(1..=5);
            let h = rng.random_range(1..=4);
            let n = rng.random_range(1..=6);
            let mut model = MlpModel::new(d, h, rng.random()).unwrap();
            for p in &mut model.params {
                *p += rng.random_range(-0.5..0.5);
            }
            let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            if min_pre_activation(&model, &x) < KINK_MARGIN {
                redrawn += 1;
                continue;
            }
            checked += 1;
            let analytic = model.gradient(x.view(), &y).unwrap();
            for p in 0..model.params.len() {
                let mut plus = model.clone();
                plus.params[p] += STEP;
                let mut minus = model.clone();
                minus.params[p] -= STEP;
                let numeric = (mse(&plus, &x, &y) - mse(&minus, &x, &y)) / (2.0 * STEP);
                let a = analytic.values[p];
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR));
            }
        }
        (worst, redrawn)
    }
}
