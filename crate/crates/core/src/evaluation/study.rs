use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate_model, EvalReport};
use crate::dataset::{split_cohorts, FeatureCatalog, RawRecord};
use crate::distillation::{sweep_lambda, train_plain, DistillationConfig, PrivilegedInputs};
use crate::error::{Error, Result};
use crate::models::{fit_least_squares, RegressionModel};
use crate::profiles::{Profile, ProfileCatalog};

/// XOR mask turning a split seed into the training seed of the same run.
pub const TRAIN_SEED_MASK: u64 = 0x5851_f42d_4c95_7f2d;

/// Split and training seeds of run `j`: the split uses `base + j`, training
/// uses that value XOR [`TRAIN_SEED_MASK`].
pub fn run_seeds(base_seed: u64, run: usize) -> (u64, u64) {
    let split = base_seed.wrapping_add(run as u64);
    (split, split ^ TRAIN_SEED_MASK)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    /// Fraction of patients in the training cohort.
    pub split_ratio: f64,
    pub runs: usize,
    pub base_seed: u64,
    pub distillation: DistillationConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            split_ratio: 0.65,
            runs: 10,
            base_seed: 0,
            distillation: DistillationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    NonRedactedLinear,
    NonRedactedMlp,
    PartiallyRedacted,
    Distilled,
}

impl Arm {
    pub fn label(self) -> &'static str {
        match self {
            Arm::NonRedactedLinear => "non-redacted linear",
            Arm::NonRedactedMlp => "non-redacted MLP",
            Arm::PartiallyRedacted => "partially-redacted",
            Arm::Distilled => "distilled",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mae: f64,
    pub mape: f64,
    pub under_pct: f64,
    pub within_pct: f64,
    pub over_pct: f64,
}

impl MetricSummary {
    fn columns(reports: &[EvalReport]) -> [Vec<f64>; 5] {
        [
            reports.iter().map(|r| r.mae).collect(),
            reports.iter().map(|r| r.mape).collect(),
            reports.iter().map(|r| r.safety.under_pct).collect(),
            reports.iter().map(|r| r.safety.within_pct).collect(),
            reports.iter().map(|r| r.safety.over_pct).collect(),
        ]
    }

    fn from_fn(reports: &[EvalReport], f: fn(&[f64]) -> f64) -> Self {
        let [mae, mape, under, within, over] = Self::columns(reports);
        Self {
            mae: f(&mae),
            mape: f(&mape),
            under_pct: f(&under),
            within_pct: f(&within),
            over_pct: f(&over),
        }
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1); zero for a single value.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: Arm,
    /// Profile name, or "all features" for the non-redacted arms.
    pub profile: String,
    pub per_run: Vec<EvalReport>,
    /// λ chosen in each run (distilled arm only).
    pub lambdas: Vec<f64>,
    pub mean: MetricSummary,
    pub std: MetricSummary,
}

impl ArmResult {
    fn new(arm: Arm, profile: String, per_run: Vec<EvalReport>, lambdas: Vec<f64>) -> Self {
        Self {
            mean: MetricSummary::from_fn(&per_run, mean),
            std: MetricSummary::from_fn(&per_run, sample_std),
            arm,
            profile,
            per_run,
            lambdas,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub runs: usize,
    pub base_seed: u64,
    pub arms: Vec<ArmResult>,
}

impl StudyResult {
    pub fn arm(&self, arm: Arm, profile: &str) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.arm == arm && a.profile == profile)
    }
}

pub const ALL_FEATURES_LABEL: &str = "all features";

struct RunOutput {
    linear: EvalReport,
    mlp: EvalReport,
    /// Per profile: (partially-redacted, distilled, chosen λ).
    profiles: Vec<(EvalReport, EvalReport, f64)>,
}

fn one_run(
    raw: &[RawRecord],
    catalog: &FeatureCatalog,
    profiles: &ProfileCatalog,
    config: &StudyConfig,
    run: usize,
) -> Result<RunOutput> {
    let (split_seed, train_seed) = run_seeds(config.base_seed, run);
    let (train, valid) = split_cohorts(raw, catalog, config.split_ratio, split_seed)?;
    let mut dist = config.distillation.clone();
    dist.train.seed = train_seed;
    let public = Profile::from_features("all", "all", vec![], catalog.dim())?;
    let all: Vec<usize> = (0..catalog.dim()).collect();

    let linear = RegressionModel::Linear(fit_least_squares(train.design_all().view(), &train.targets())?);
    let mlp = RegressionModel::Mlp(train_plain(&train, &all, &dist.train)?);
    let shared = (dist.privileged_inputs == PrivilegedInputs::AllFeatures).then_some(&mlp);

    let per_profile = profiles
        .profiles
        .iter()
        .map(|p| {
            let out = sweep_lambda(&train, &valid, p, &dist, shared)?;
            let (_, partial) = out
                .partial
                .ok_or_else(|| Error::InvalidArgument("the study's lambda grid must include 0".into()))?;
            Ok((partial, out.best.metrics, out.best.lambda))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunOutput {
        linear: evaluate_model(&linear, &valid, &public)?,
        mlp: evaluate_model(&mlp, &valid, &public)?,
        profiles: per_profile,
    })
}

/// Repeat the full comparison over `config.runs` seeded splits.
pub fn run_study(
    raw: &[RawRecord],
    catalog: &FeatureCatalog,
    profiles: &ProfileCatalog,
    config: &StudyConfig,
) -> Result<StudyResult> {
    if config.runs == 0 {
        return Err(Error::InvalidArgument("a study needs at least one run".into()));
    }
    config.distillation.validate()?;
    let outputs = (0..config.runs)
        .into_par_iter()
        .map(|j| one_run(raw, catalog, profiles, config, j))
        .collect::<Result<Vec<_>>>()?;

    let mut arms = vec![
        ArmResult::new(
            Arm::NonRedactedLinear,
            ALL_FEATURES_LABEL.into(),
            outputs.iter().map(|o| o.linear.clone()).collect(),
            vec![],
        ),
        ArmResult::new(
            Arm::NonRedactedMlp,
            ALL_FEATURES_LABEL.into(),
            outputs.iter().map(|o| o.mlp.clone()).collect(),
            vec![],
        ),
    ];
    for (k, p) in profiles.profiles.iter().enumerate() {
        arms.push(ArmResult::new(
            Arm::PartiallyRedacted,
            p.name.clone(),
            outputs.iter().map(|o| o.profiles[k].0.clone()).collect(),
            vec![0.0; outputs.len()],
        ));
        arms.push(ArmResult::new(
            Arm::Distilled,
            p.name.clone(),
            outputs.iter().map(|o| o.profiles[k].1.clone()).collect(),
            outputs.iter().map(|o| o.profiles[k].2).collect(),
        ));
    }
    Ok(StudyResult {
        runs: config.runs,
        base_seed: config.base_seed,
        arms,
    })
}

/// Profile × {MAE, MAPE} table.
pub fn write_accuracy_csv<W: Write>(result: &StudyResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["profile", "model", "mae_mean", "mae_std", "mape_mean", "mape_std"])?;
    for a in &result.arms {
        w.write_record([
            a.profile.clone(),
            a.arm.label().to_string(),
            format!("{:.4}", a.mean.mae),
            format!("{:.4}", a.std.mae),
            format!("{:.4}", a.mean.mape),
            format!("{:.4}", a.std.mape),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Profile × {under, within, over} table; under risks clots/stroke, over risks bleeding.
pub fn write_safety_csv<W: Write>(result: &StudyResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "profile",
        "model",
        "under_pct_mean",
        "under_pct_std",
        "within_pct_mean",
        "within_pct_std",
        "over_pct_mean",
        "over_pct_std",
    ])?;
    for a in &result.arms {
        w.write_record([
            a.profile.clone(),
            a.arm.label().to_string(),
            format!("{:.4}", a.mean.under_pct),
            format!("{:.4}", a.std.under_pct),
            format!("{:.4}", a.mean.within_pct),
            format!("{:.4}", a.std.within_pct),
            format!("{:.4}", a.mean.over_pct),
            format!("{:.4}", a.std.over_pct),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};
    use crate::models::TrainConfig;
    use crate::profiles::default_catalog;

    fn quick_config(runs: usize) -> StudyConfig {
        StudyConfig {
            runs,
            base_seed: 5,
            distillation: DistillationConfig {
                lambda_grid: vec![0.0, 0.5],
                train: TrainConfig {
                    max_epochs: 10,
                    patience: 3,
                    hidden: 6,
                    ..Default::default()
                },
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn std_conventions() {
        assert_eq!(sample_std(&[4.0]), 0.0);
        assert!((sample_std(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-12);
        assert_eq!(mean(&[1.0, 2.0, 6.0]), 3.0);
    }

    #[test]
    fn seeds_are_fixed_arithmetic() {
        assert_eq!(run_seeds(10, 3).0, 13);
        assert_eq!(run_seeds(10, 3).1, 13 ^ TRAIN_SEED_MASK);
    }

    #[test]
    fn public_only_study_collapses_arms() {
        let data = generate_synthetic(
            &SyntheticSpec {
                n: 150,
                ..Default::default()
            },
            2,
        )
        .unwrap();
        let features = data.catalog().unwrap();
        let profiles = default_catalog(&features).unwrap().select(&["public".into()]).unwrap();
        let config = quick_config(1);
        let a = run_study(&data.records, &features, &profiles, &config).unwrap();
        let b = run_study(&data.records, &features, &profiles, &config).unwrap();
        assert_eq!(a, b);
        let mlp = &a.arm(Arm::NonRedactedMlp, ALL_FEATURES_LABEL).unwrap().per_run;
        let partial = &a.arm(Arm::PartiallyRedacted, "Public patient").unwrap().per_run;
        let distilled = &a.arm(Arm::Distilled, "Public patient").unwrap().per_run;
        assert_eq!(mlp, partial);
        assert_eq!(mlp, distilled);
        assert_eq!(a.arms[0].std.mae, 0.0);

        let mut csv = Vec::new();
        write_accuracy_csv(&a, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 5);
    }

    #[test]
    fn grid_without_zero_is_rejected() {
        let data = generate_synthetic(
            &SyntheticSpec {
                n: 120,
                ..Default::default()
            },
            2,
        )
        .unwrap();
        let features = data.catalog().unwrap();
        let profiles = default_catalog(&features)
            .unwrap()
            .select(&["no-genotypic".into()])
            .unwrap();
        let mut config = quick_config(1);
        config.distillation.lambda_grid = vec![0.5];
        assert!(run_study(&data.records, &features, &profiles, &config).is_err());
        config.runs = 0;
        assert!(run_study(&data.records, &features, &profiles, &config).is_err());
    }
}
