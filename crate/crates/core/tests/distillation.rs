mod common;

use std::time::Instant;

use ndarray::Array2;
use privdistill::dataset::{FeatureCategory, PerCategory, SyntheticSpec};
use privdistill::distillation::{train_distilled, train_plain, train_privileged, BundleSet, DistillationConfig};
use privdistill::evaluation::mae;
use privdistill::models::{train_mlp, LinearModel, Objective, RegressionModel, TrainConfig};
use privdistill::profiles::{default_catalog, train_on_demand, Disclosure};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn lambda_zero_is_plain_training_for_every_profile() {
    let fx = common::synthetic(&common::small_spec(400), 9);
    let mut config = common::quick_config(fx.train_seed, 15);
    config.lambda = 0.0;
    for profile in &default_catalog(&fx.train.catalog).unwrap().profiles {
        if !profile.has_redactions() {
            continue;
        }
        let privileged = RegressionModel::Mlp(train_privileged(&fx.train, profile, &config).unwrap());
        let distilled = train_distilled(&fx.train, profile, &privileged, &config).unwrap();
        let plain = train_plain(&fx.train, &profile.visible(fx.train.dim()), &config.train).unwrap();
        assert_eq!(distilled.params, plain.params, "{}", profile.name);
    }
}

#[test]
fn full_imitation_of_a_constant_teacher_predicts_the_constant() {
    let fx = common::synthetic(&common::small_spec(600), 2);
    let catalog = default_catalog(&fx.train.catalog).unwrap();
    let profile = catalog.get("no-genotypic").unwrap();
    let teacher = RegressionModel::Linear(LinearModel {
        alpha: vec![0.0; fx.train.dim()],
        beta: 20.0,
    });
    let config = DistillationConfig {
        lambda: 1.0,
        ..common::quick_config(fx.train_seed, 300)
    };
    let student = RegressionModel::Mlp(train_distilled(&fx.train, profile, &teacher, &config).unwrap());
    let preds = student
        .predict_rows(fx.valid.design(&profile.visible(fx.valid.dim())).view())
        .unwrap();
    let worst = preds.iter().map(|p| (p - 20.0).abs()).fold(0.0, f64::max);
    assert!(worst < 1.0, "largest deviation from the teacher constant: {worst}");
}

#[test]
fn mlp_fits_noiseless_linear_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (n, d) = (800, 4);
    let coef = [3.0, -2.0, 1.0, 0.5];
    let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.5..1.5));
    let y: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|r| 30.0 + r.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    // A constant predictor's error is the oracle scale.
    let mean = y.iter().sum::<f64>() / n as f64;
    let baseline = mae(&vec![mean; n], &y).unwrap();
    let model = train_mlp(x.view(), &Objective::Mse { targets: &y }, &TrainConfig::default()).unwrap();
    let preds = RegressionModel::Mlp(model).predict_rows(x.view()).unwrap();
    let fit = mae(&preds, &y).unwrap();
    assert!(fit < 0.1 * baseline, "train MAE {fit} vs constant {baseline}");
}

#[test]
fn synthetic_privileged_signal_has_the_requested_correlation() {
    for rho in [0.0, 0.5, 0.8] {
        let spec = SyntheticSpec {
            n: 20_000,
            rho,
            ..Default::default()
        };
        let data = privdistill::dataset::generate_synthetic(&spec, 1).unwrap();
        let r = pearson(&data.visible_signal, &data.privileged_signal);
        assert!((r - rho).abs() < 0.02, "rho {rho}: sample correlation {r}");
    }
}

#[test]
fn on_demand_profiles_are_added_once() {
    let fx = common::synthetic(&common::small_spec(300), 6);
    let mut set = BundleSet::new((*fx.train.catalog).clone(), fx.train.standardizer.clone(), Vec::new());
    let mut config = common::quick_config(fx.train_seed, 5);
    config.lambda_grid = vec![0.0, 1.0];
    let x = &fx.valid.records[0].x;
    let disclosure = Disclosure::from_vector(x, &[0, 3, 31, 32]);
    let (i, added) = train_on_demand(&mut set, &fx.train, &fx.valid, &disclosure, &config).unwrap();
    assert!(added);
    assert_eq!(set.bundles.len(), 1);
    assert_eq!(set.bundles[i].profile.visible(fx.train.dim()), [0, 3, 31, 32]);
    let again = train_on_demand(&mut set, &fx.train, &fx.valid, &disclosure, &config).unwrap();
    assert_eq!(again, (i, false));
    assert_eq!(set.bundles.len(), 1);
    let p = set.predict(&disclosure).unwrap();
    assert!(p.exact && p.weekly_dose_mg.is_finite());
}

#[test]
fn on_demand_training_at_five_thousand_by_sixty_five_takes_under_a_minute() {
    let spec = SyntheticSpec {
        n: 5000,
        counts: PerCategory {
            demographic: 6,
            background: 56,
            phenotypic: 1,
            genotypic: 2,
        },
        ..Default::default()
    };
    let fx = common::synthetic(&spec, 12);
    assert_eq!(fx.train.dim(), 65);
    let mut set = BundleSet::new((*fx.train.catalog).clone(), fx.train.standardizer.clone(), Vec::new());
    let config = DistillationConfig {
        train: TrainConfig::default().with_seed(fx.train_seed),
        ..Default::default()
    };
    let genes = fx.train.catalog.indices_in(FeatureCategory::Genotypic);
    let shown: Vec<usize> = (0..65).filter(|i| !genes.contains(i) && i % 7 != 0).collect();
    let disclosure = Disclosure::from_vector(&fx.valid.records[0].x, &shown);
    let start = Instant::now();
    train_on_demand(&mut set, &fx.train, &fx.valid, &disclosure, &config).unwrap();
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
}
