//! Privileged models, soft targets, the imitation loss and the λ sweep.

use std::fs;
use std::path::Path;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Cohort, FeatureCatalog, StandardizationParams};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_model, evaluate_predictions, EvalReport};
use crate::models::{
    config_digest, train_mlp, MlpModel, Objective, RegressionModel, SavedModel, TrainConfig, MODEL_FORMAT_VERSION,
};
use crate::profiles::{assign_profile, parse_pairs, Disclosure, FeatureSource, Profile, ProfileCatalog};

/// Which columns the privileged model reads.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivilegedInputs {
    /// Every feature, redacted or not.
    #[default]
    AllFeatures,
    /// Only the profile's redacted features.
    RedactedOnly,
}

impl std::str::FromStr for PrivilegedInputs {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all_features" | "all-features" => Ok(Self::AllFeatures),
            "redacted_only" | "redacted-only" => Ok(Self::RedactedOnly),
            _ => Err(Error::InvalidArgument(format!(
                "privileged inputs must be all_features or redacted_only, got `{s}`"
            ))),
        }
    }
}

pub fn default_lambda_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillationConfig {
    /// Imitation weight for single-λ training.
    pub lambda: f64,
    pub lambda_grid: Vec<f64>,
    /// Divisor of soft targets; only the tempered reference path uses it.
    pub temperature: f64,
    pub privileged_inputs: PrivilegedInputs,
    pub train: TrainConfig,
}

impl Default for DistillationConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            lambda_grid: default_lambda_grid(),
            temperature: 1.0,
            privileged_inputs: PrivilegedInputs::AllFeatures,
            train: TrainConfig::default(),
        }
    }
}

impl DistillationConfig {
    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        if self.lambda_grid.is_empty() {
            return Err(Error::InvalidArgument("lambda grid is empty".into()));
        }
        for &l in &self.lambda_grid {
            check_lambda(l)?;
        }
        if self.lambda_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("lambda grid must be strictly ascending".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        self.train.validate()
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )))
    }
}

/// Per-example imitation loss `(1 - λ)(pred - y)² + λ(pred - s)²`.
pub fn distillation_loss(pred: f64, y: f64, s: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    let obj = Objective::Distill {
        targets: &[y],
        soft: &[s],
        lambda,
    };
    Ok(obj.loss(0, pred))
}

/// Columns the privileged model reads for `profile`.
pub fn privileged_columns(profile: &Profile, dim: usize, mode: PrivilegedInputs) -> Result<Vec<usize>> {
    match mode {
        PrivilegedInputs::AllFeatures => Ok((0..dim).collect()),
        PrivilegedInputs::RedactedOnly if profile.has_redactions() => Ok(profile.redacted_features.clone()),
        PrivilegedInputs::RedactedOnly => Err(Error::InvalidArgument(format!(
            "profile `{}` redacts nothing, so a redacted-only privileged model has no inputs",
            profile.name
        ))),
    }
}

/// Plain squared-loss MLP on the given columns.
pub fn train_plain(train: &Cohort, columns: &[usize], config: &TrainConfig) -> Result<MlpModel> {
    let y = train.targets();
    train_mlp(train.design(columns).view(), &Objective::Mse { targets: &y }, config)
}

/// MLP with access to the profile's redacted features.
pub fn train_privileged(train: &Cohort, profile: &Profile, config: &DistillationConfig) -> Result<MlpModel> {
    let columns = privileged_columns(profile, train.dim(), config.privileged_inputs)?;
    train_plain(train, &columns, &config.train)
}

/// `privileged(x*) / T` for every row of `x_star`.
pub fn soft_targets(privileged: &RegressionModel, x_star: ArrayView2<f64>, temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut s = privileged.predict_rows(x_star)?;
    if temperature != 1.0 {
        s.iter_mut().for_each(|v| *v /= temperature);
    }
    Ok(s)
}

fn training_soft_targets(
    train: &Cohort,
    profile: &Profile,
    privileged: &RegressionModel,
    config: &DistillationConfig,
    temperature: f64,
) -> Result<Vec<f64>> {
    let columns = privileged_columns(profile, train.dim(), config.privileged_inputs)?;
    if privileged.input_dim() != columns.len() {
        return Err(Error::DimensionMismatch {
            expected: columns.len(),
            got: privileged.input_dim(),
        });
    }
    soft_targets(privileged, train.design(&columns).view(), temperature)
}

fn fit_imitation(
    train: &Cohort,
    visible: &[usize],
    soft: &[f64],
    lambda: f64,
    config: &TrainConfig,
) -> Result<MlpModel> {
    let y = train.targets();
    let objective = Objective::Distill {
        targets: &y,
        soft,
        lambda,
    };
    train_mlp(train.design(visible).view(), &objective, config)
}

/// Distilled MLP on non-redacted inputs at `config.lambda`, imitating the
/// privileged model's raw predictions.
pub fn train_distilled(
    train: &Cohort,
    profile: &Profile,
    privileged: &RegressionModel,
    config: &DistillationConfig,
) -> Result<MlpModel> {
    config.validate()?;
    let soft = training_soft_targets(train, profile, privileged, config, 1.0)?;
    fit_imitation(
        train,
        &profile.visible(train.dim()),
        &soft,
        config.lambda,
        &config.train,
    )
}

/// Reference path with soft targets divided by `config.temperature`.
///
/// Kept to demonstrate that tempered targets pull regression outputs toward
/// zero; production training uses [`train_distilled`].
pub fn train_distilled_tempered(
    train: &Cohort,
    profile: &Profile,
    privileged: &RegressionModel,
    config: &DistillationConfig,
) -> Result<MlpModel> {
    config.validate()?;
    let soft = training_soft_targets(train, profile, privileged, config, config.temperature)?;
    fit_imitation(
        train,
        &profile.visible(train.dim()),
        &soft,
        config.lambda,
        &config.train,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub report: EvalReport,
}

/// A profile's trained pair and the λ chosen for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistilledBundle {
    pub profile: Profile,
    pub visible_features: Vec<usize>,
    pub privileged_inputs: PrivilegedInputs,
    pub privileged_features: Vec<usize>,
    pub privileged: RegressionModel,
    pub distilled: RegressionModel,
    pub lambda: f64,
    /// Validation metrics of `distilled`.
    pub metrics: EvalReport,
    pub sweep: Vec<SweepPoint>,
    pub config_digest: String,
}

impl DistilledBundle {
    pub fn validate(&self) -> Result<()> {
        self.privileged.validate()?;
        self.distilled.validate()?;
        if self.distilled.input_dim() != self.visible_features.len() {
            return Err(Error::ModelFormat(format!(
                "profile `{}`: distilled model takes {} inputs but the profile shows {} features",
                self.profile.name,
                self.distilled.input_dim(),
                self.visible_features.len()
            )));
        }
        if self.privileged.input_dim() != self.privileged_features.len() {
            return Err(Error::ModelFormat(format!(
                "profile `{}`: privileged model input size does not match its feature list",
                self.profile.name
            )));
        }
        if self.visible_features.iter().any(|&i| self.profile.is_redacted(i)) {
            return Err(Error::ModelFormat(format!(
                "profile `{}`: distilled model lists a redacted feature",
                self.profile.name
            )));
        }
        Ok(())
    }

    /// Predict from a patient's values, reading only non-redacted indices.
    pub fn predict<S: FeatureSource + ?Sized>(&self, source: &S) -> Result<f64> {
        let x = self
            .visible_features
            .iter()
            .map(|&i| {
                source.feature(i).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "profile `{}` needs feature {i}, which was not disclosed",
                        self.profile.name
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.distilled.predict(&x)
    }

    /// The distilled model in the standalone model file format.
    pub fn saved_model(&self, features: &FeatureCatalog, standardizer: &StandardizationParams) -> Result<SavedModel> {
        SavedModel::new(
            self.distilled.clone(),
            self.visible_features
                .iter()
                .map(|&i| features.features[i].name.clone())
                .collect(),
            standardizer.subset(&self.visible_features),
            self.config_digest.clone(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub points: Vec<SweepPoint>,
    pub best: DistilledBundle,
    /// λ = 0 model, when the grid contains 0.
    pub partial: Option<(RegressionModel, EvalReport)>,
}

/// Train one distilled model per grid λ against a single privileged model
/// and keep the one with the lowest validation MAE (ties to the smaller λ).
///
/// A profile that redacts nothing has nothing to distill; it yields a single
/// λ = 0 point whose model also serves as its own privileged model. In
/// all-features mode `shared_privileged` must be plain training on all
/// features under `config.train`, so it is reused for that point.
pub fn sweep_lambda(
    train: &Cohort,
    valid: &Cohort,
    profile: &Profile,
    config: &DistillationConfig,
    shared_privileged: Option<&RegressionModel>,
) -> Result<SweepOutcome> {
    config.validate()?;
    let dim = train.dim();
    let visible = profile.visible(dim);
    let digest = config_digest(config);
    let truths = valid.targets();

    if !profile.has_redactions() {
        let wrapped = match shared_privileged {
            Some(m) if config.privileged_inputs == PrivilegedInputs::AllFeatures => m.clone(),
            _ => RegressionModel::Mlp(train_plain(train, &visible, &config.train)?),
        };
        let report = evaluate_model(&wrapped, valid, profile)?;
        let points = vec![SweepPoint {
            lambda: 0.0,
            report: report.clone(),
        }];
        return Ok(SweepOutcome {
            best: DistilledBundle {
                profile: profile.clone(),
                visible_features: visible.clone(),
                privileged_inputs: config.privileged_inputs,
                privileged_features: visible,
                privileged: wrapped.clone(),
                distilled: wrapped.clone(),
                lambda: 0.0,
                metrics: report.clone(),
                sweep: points.clone(),
                config_digest: digest,
            },
            points,
            partial: Some((wrapped, report)),
        });
    }

    let privileged_features = privileged_columns(profile, dim, config.privileged_inputs)?;
    let privileged = match shared_privileged {
        Some(m) => m.clone(),
        None => RegressionModel::Mlp(train_privileged(train, profile, config)?),
    };
    let soft = training_soft_targets(train, profile, &privileged, config, 1.0)?;
    let x_valid = valid.design(&visible);

    let mut trained = config
        .lambda_grid
        .par_iter()
        .map(|&lambda| {
            let model = fit_imitation(train, &visible, &soft, lambda, &config.train)?;
            let preds = RegressionModel::Mlp(model.clone()).predict_rows(x_valid.view())?;
            let report = evaluate_predictions(&preds, &truths)?;
            Ok((lambda, model, report))
        })
        .collect::<Result<Vec<_>>>()?;
    trained.sort_by(|a, b| a.0.total_cmp(&b.0));

    let best_index = (0..trained.len())
        .min_by(|&a, &b| trained[a].2.mae.total_cmp(&trained[b].2.mae).then(a.cmp(&b)))
        .expect("grid non-empty");
    let points: Vec<SweepPoint> = trained
        .iter()
        .map(|(lambda, _, report)| SweepPoint {
            lambda: *lambda,
            report: report.clone(),
        })
        .collect();
    let partial = trained
        .iter()
        .find(|t| t.0 == 0.0)
        .map(|(_, m, r)| (RegressionModel::Mlp(m.clone()), r.clone()));
    let (lambda, model, report) = trained.swap_remove(best_index);
    Ok(SweepOutcome {
        best: DistilledBundle {
            profile: profile.clone(),
            visible_features: visible,
            privileged_inputs: config.privileged_inputs,
            privileged_features,
            privileged,
            distilled: RegressionModel::Mlp(model),
            lambda,
            metrics: report,
            sweep: points.clone(),
            config_digest: digest,
        },
        points,
        partial,
    })
}

/// Every trained profile of a run plus what `predict` needs to encode input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSet {
    pub format_version: u32,
    pub catalog: FeatureCatalog,
    pub standardizer: StandardizationParams,
    pub bundles: Vec<DistilledBundle>,
    /// Input columns removed by feature selection; disclosures of them are ignored.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub deselected: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub profile: String,
    pub exact: bool,
    pub weekly_dose_mg: f64,
}

impl BundleSet {
    pub fn new(catalog: FeatureCatalog, standardizer: StandardizationParams, bundles: Vec<DistilledBundle>) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            catalog,
            standardizer,
            bundles,
            deselected: Vec::new(),
        }
    }

    /// Parse `name=value,...` against this set's catalog, skipping
    /// deselected features.
    pub fn parse_disclosure(&self, text: &str) -> Result<Disclosure> {
        let pairs = parse_pairs(text)?;
        let kept: Vec<(&str, &str)> = pairs
            .into_iter()
            .filter(|(name, _)| !self.deselected.iter().any(|d| d == name))
            .collect();
        Disclosure::from_pairs(&kept, &self.catalog, &self.standardizer)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported bundle format version {}",
                self.format_version
            )));
        }
        if self.standardizer.dim() != self.catalog.dim() {
            return Err(Error::ModelFormat("standardizer does not match the catalog".into()));
        }
        for b in &self.bundles {
            b.validate()?;
        }
        self.profile_catalog().map(|_| ())
    }

    pub fn profile_catalog(&self) -> Result<ProfileCatalog> {
        ProfileCatalog::new(
            self.catalog.dim(),
            self.bundles.iter().map(|b| b.profile.clone()).collect(),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundles serialize")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: Self = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        set.validate()?;
        Ok(set)
    }

    /// Assign the disclosure to a trained profile and predict a weekly dose.
    pub fn predict(&self, disclosure: &Disclosure) -> Result<Prediction> {
        let assignment = assign_profile(&self.profile_catalog()?, disclosure)?;
        let bundle = &self.bundles[assignment.index];
        Ok(Prediction {
            profile: bundle.profile.name.clone(),
            exact: assignment.exact,
            weekly_dose_mg: bundle.predict(disclosure)?,
        })
    }
}
