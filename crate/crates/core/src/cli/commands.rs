use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;

use super::config::{RunConfig, RUN_CONFIG_FILE};
use crate::dataset::{
    generate_synthetic, load_and_validate, split_cohorts, Cohort, FeatureCatalog, FeatureCategory, LoadedData,
    StandardizationParams,
};
use crate::distillation::{sweep_lambda, train_plain, BundleSet, PrivilegedInputs, SweepPoint};
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate_model, run_seeds, run_study, write_accuracy_csv, write_safety_csv, DoseClass, EvalReport,
};
use crate::feature_selection::{backward_attribute_elimination, BaeResult};
use crate::models::{fit_least_squares, RegressionModel};
use crate::profiles::{default_catalog, train_on_demand, Profile, ProfileCatalog};

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn risk_labels() -> BTreeMap<&'static str, &'static str> {
    BTreeMap::from([
        ("under", DoseClass::Under.risk_label()),
        ("within", DoseClass::WithinWindow.risk_label()),
        ("over", DoseClass::Over.risk_label()),
    ])
}

fn load(cfg: &RunConfig) -> Result<LoadedData> {
    let (data, schema) = cfg.data_paths()?;
    let loaded = load_and_validate(data, schema)?;
    match &cfg.features {
        None => Ok(loaded),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let bae: BaeResult = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
            loaded.restrict(&bae.kept_names)
        }
    }
}

fn split(cfg: &RunConfig, loaded: &LoadedData) -> Result<(Cohort, Cohort)> {
    let (split_seed, _) = run_seeds(cfg.seed, 0);
    split_cohorts(&loaded.records, &loaded.catalog, cfg.split_ratio, split_seed)
}

fn profiles_for(cfg: &RunConfig, features: &FeatureCatalog) -> Result<ProfileCatalog> {
    let catalog = default_catalog(features)?;
    if cfg.profiles.iter().any(|p| p.eq_ignore_ascii_case("all")) {
        Ok(catalog)
    } else {
        catalog.select(&cfg.profiles)
    }
}

pub fn synth(cfg: &RunConfig) -> Result<String> {
    let spec = cfg.synthetic.clone().unwrap_or_default();
    let data = generate_synthetic(&spec, cfg.seed)?;
    create_dir(&cfg.out)?;
    let data_path = cfg.out.join("data.csv");
    let schema_path = cfg.out.join("schema.json");
    data.write_csv(create_file(&data_path)?)?;
    fs::write(&schema_path, data.schema_json() + "\n").map_err(|e| Error::io(&schema_path, e))?;
    let mut written = cfg.clone();
    written.data = Some(data_path.clone());
    written.schema = Some(schema_path);
    written.write()?;
    Ok(format!(
        "wrote {} synthetic patients with {} features to {}",
        data.records.len(),
        data.schema.features.len(),
        data_path.display()
    ))
}

#[derive(Serialize)]
struct PrepareReport<'a> {
    records: usize,
    dropped_missing_target: usize,
    dropped_missing_features: usize,
    n_train: usize,
    n_valid: usize,
    catalog: &'a FeatureCatalog,
    standardizer: &'a StandardizationParams,
}

pub fn prepare(cfg: &RunConfig) -> Result<String> {
    let loaded = load(cfg)?;
    let (train, valid) = split(cfg, &loaded)?;
    create_dir(&cfg.out)?;
    write_json(
        &cfg.out.join("prepare.json"),
        &PrepareReport {
            records: loaded.records.len(),
            dropped_missing_target: loaded.dropped_missing_target,
            dropped_missing_features: loaded.dropped_missing_features,
            n_train: train.len(),
            n_valid: valid.len(),
            catalog: &loaded.catalog,
            standardizer: &train.standardizer,
        },
    )?;
    if cfg.dump_encoded {
        train.write_csv(create_file(&cfg.out.join("encoded_train.csv"))?)?;
        valid.write_csv(create_file(&cfg.out.join("encoded_valid.csv"))?)?;
    }
    cfg.write()?;
    Ok(format!(
        "{} patients ({} dropped for a missing dose, {} for missing features), {} features: {} train / {} validation",
        loaded.records.len(),
        loaded.dropped_missing_target,
        loaded.dropped_missing_features,
        loaded.catalog.dim(),
        train.len(),
        valid.len()
    ))
}

pub fn select_features(cfg: &RunConfig) -> Result<String> {
    let loaded = load(cfg)?;
    let (train, _) = split(cfg, &loaded)?;
    let protected = loaded.catalog.indices_in(FeatureCategory::Genotypic);
    let result = backward_attribute_elimination(&train, &protected, &cfg.bae)?;
    create_dir(&cfg.out)?;
    write_json(&cfg.out.join("bae.json"), &result)?;
    cfg.write()?;
    let removed: Vec<&str> = result.removed.iter().map(|r| r.name.as_str()).collect();
    Ok(format!(
        "kept {} of {} features; removed: {}",
        result.kept.len(),
        loaded.catalog.dim(),
        if removed.is_empty() {
            "none".to_string()
        } else {
            removed.join(", ")
        }
    ))
}

#[derive(Serialize)]
struct MaskJson<'a> {
    name: &'a str,
    slug: &'a str,
    redacted_features: Vec<&'a str>,
    disclosed_features: Vec<&'a str>,
}

pub fn list_profiles(data: Option<&Path>, schema: Option<&Path>, model: Option<&Path>, json: bool) -> Result<String> {
    let (features, catalog) = match (model, data, schema) {
        (Some(m), _, _) => {
            let set = BundleSet::load(m)?;
            let catalog = set.profile_catalog()?;
            (set.catalog, catalog)
        }
        (None, Some(d), Some(s)) => {
            let loaded = load_and_validate(d, s)?;
            let catalog = default_catalog(&loaded.catalog)?;
            (loaded.catalog, catalog)
        }
        _ => {
            return Err(Error::InvalidArgument(
                "`profiles list` needs --model, or --data and --schema".into(),
            ))
        }
    };
    if !json {
        return Ok(catalog.render_table(&features).trim_end().to_string());
    }
    let names = features.names();
    let masks: Vec<MaskJson> = catalog
        .profiles
        .iter()
        .map(|p| MaskJson {
            name: &p.name,
            slug: &p.slug,
            redacted_features: p.redacted_features.iter().map(|&i| names[i]).collect(),
            disclosed_features: p.visible(features.dim()).iter().map(|&i| names[i]).collect(),
        })
        .collect();
    Ok(serde_json::to_string_pretty(&masks).expect("masks serialize"))
}

#[derive(Serialize)]
struct ProfileSummary {
    profile: String,
    lambda: f64,
    distilled: EvalReport,
    partially_redacted: Option<EvalReport>,
    sweep: Vec<SweepPoint>,
}

#[derive(Serialize)]
struct TrainReport {
    n_train: usize,
    n_valid: usize,
    dropped_missing_target: usize,
    dropped_missing_features: usize,
    non_redacted_linear: EvalReport,
    non_redacted_mlp: EvalReport,
    profiles: Vec<ProfileSummary>,
    risk_labels: BTreeMap<&'static str, &'static str>,
}

struct Trained {
    set: BundleSet,
    report: TrainReport,
}

fn train_profiles(cfg: &RunConfig, loaded: &LoadedData, profiles: &ProfileCatalog) -> Result<Trained> {
    let (train, valid) = split(cfg, loaded)?;
    let dist = cfg.distillation();
    dist.validate()?;
    let dim = train.dim();
    let everything = Profile::from_features("all", "all", vec![], dim)?;
    let all: Vec<usize> = (0..dim).collect();
    let linear = RegressionModel::Linear(fit_least_squares(train.design_all().view(), &train.targets())?);
    let mlp = RegressionModel::Mlp(train_plain(&train, &all, &dist.train)?);
    let shared = (dist.privileged_inputs == PrivilegedInputs::AllFeatures).then_some(&mlp);

    let mut bundles = Vec::new();
    let mut summaries = Vec::new();
    for p in &profiles.profiles {
        let out = sweep_lambda(&train, &valid, p, &dist, shared)?;
        log::info!(
            "{}: λ = {} with validation MAE {:.3}",
            p.name,
            out.best.lambda,
            out.best.metrics.mae
        );
        summaries.push(ProfileSummary {
            profile: p.name.clone(),
            lambda: out.best.lambda,
            distilled: out.best.metrics.clone(),
            partially_redacted: out.partial.map(|(_, r)| r),
            sweep: out.points,
        });
        bundles.push(out.best);
    }
    Ok(Trained {
        set: BundleSet {
            deselected: loaded.deselected.clone(),
            ..BundleSet::new(loaded.catalog.clone(), train.standardizer.clone(), bundles)
        },
        report: TrainReport {
            n_train: train.len(),
            n_valid: valid.len(),
            dropped_missing_target: loaded.dropped_missing_target,
            dropped_missing_features: loaded.dropped_missing_features,
            non_redacted_linear: evaluate_model(&linear, &valid, &everything)?,
            non_redacted_mlp: evaluate_model(&mlp, &valid, &everything)?,
            profiles: summaries,
            risk_labels: risk_labels(),
        },
    })
}

pub fn train(cfg: &RunConfig) -> Result<String> {
    let loaded = load(cfg)?;
    let profiles = profiles_for(cfg, &loaded.catalog)?;
    let trained = train_profiles(cfg, &loaded, &profiles)?;
    create_dir(&cfg.out)?;
    trained.set.save(&cfg.out.join("bundles.json"))?;
    write_json(&cfg.out.join("report.json"), &trained.report)?;
    cfg.write()?;
    let best = trained
        .report
        .profiles
        .iter()
        .map(|p| format!("{} MAE {:.2}", p.profile, p.distilled.mae))
        .collect::<Vec<_>>()
        .join("; ");
    Ok(format!(
        "trained {} profile(s) into {}: {best}",
        trained.set.bundles.len(),
        cfg.out.join("bundles.json").display()
    ))
}

pub fn sweep(cfg: &RunConfig) -> Result<String> {
    let loaded = load(cfg)?;
    let profiles = profiles_for(cfg, &loaded.catalog)?;
    if profiles.len() != 1 {
        return Err(Error::InvalidArgument("`sweep` takes exactly one --profile".into()));
    }
    let trained = train_profiles(cfg, &loaded, &profiles)?;
    let summary = &trained.report.profiles[0];
    let bundle = &trained.set.bundles[0];
    create_dir(&cfg.out)?;

    let path = cfg.out.join("sweep.csv");
    let mut w = csv::Writer::from_writer(create_file(&path)?);
    w.write_record(["profile", "lambda", "mae", "mape", "sw", "under", "over"])?;
    for point in &summary.sweep {
        let r = &point.report;
        w.write_record([
            summary.profile.clone(),
            format!("{}", point.lambda),
            format!("{:.4}", r.mae),
            format!("{:.4}", r.mape),
            format!("{:.4}", r.safety.within_pct),
            format!("{:.4}", r.safety.under_pct),
            format!("{:.4}", r.safety.over_pct),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    trained.set.save(&cfg.out.join("best_bundle.json"))?;
    bundle
        .saved_model(&trained.set.catalog, &trained.set.standardizer)?
        .save(&cfg.out.join("best_model.json"))?;
    cfg.write()?;
    Ok(format!(
        "{}: {} λ values, best λ = {} (validation MAE {:.3}); wrote {}",
        summary.profile,
        summary.sweep.len(),
        bundle.lambda,
        bundle.metrics.mae,
        path.display()
    ))
}

pub fn evaluate(cfg: &RunConfig) -> Result<String> {
    let loaded = load(cfg)?;
    let profiles = profiles_for(cfg, &loaded.catalog)?;
    let result = run_study(&loaded.records, &loaded.catalog, &profiles, &cfg.study())?;
    create_dir(&cfg.out)?;

    #[derive(Serialize)]
    struct StudyReport<'a> {
        #[serde(flatten)]
        result: &'a crate::evaluation::StudyResult,
        risk_labels: BTreeMap<&'static str, &'static str>,
    }
    write_json(
        &cfg.out.join("study.json"),
        &StudyReport {
            result: &result,
            risk_labels: risk_labels(),
        },
    )?;
    write_accuracy_csv(&result, create_file(&cfg.out.join("accuracy.csv"))?)?;
    write_safety_csv(&result, create_file(&cfg.out.join("safety.csv"))?)?;
    cfg.write()?;
    let mlp = &result.arms[1];
    Ok(format!(
        "{} run(s), {} arms; non-redacted MLP MAE {:.2} ± {:.2}; wrote {}",
        result.runs,
        result.arms.len(),
        mlp.mean.mae,
        mlp.std.mae,
        cfg.out.join("study.json").display()
    ))
}

fn retrain_context(model: &Path) -> Result<(RunConfig, LoadedData)> {
    let dir = model.parent().unwrap_or_else(|| Path::new("."));
    let cfg = RunConfig::load(&dir.join(RUN_CONFIG_FILE))?;
    let loaded = load(&cfg)?;
    Ok((cfg, loaded))
}

pub fn predict(model: &Path, disclose: &str, on_demand: bool, json: bool) -> Result<String> {
    let mut set = BundleSet::load(model)?;
    let disclosure = set.parse_disclosure(disclose)?;
    let mut prediction = set.predict(&disclosure);
    let needs_training = match &prediction {
        Err(Error::NoFeasibleProfile) => true,
        Ok(p) => !p.exact,
        Err(_) => false,
    };
    if on_demand && needs_training {
        let (cfg, loaded) = retrain_context(model)?;
        let (train, valid) = split(&cfg, &loaded)?;
        if train.standardizer != set.standardizer {
            return Err(Error::InvalidArgument(
                "run_config.json beside the model does not reproduce its training split".into(),
            ));
        }
        let (_, added) = train_on_demand(&mut set, &train, &valid, &disclosure, &cfg.distillation())?;
        if added {
            set.save(model)?;
        }
        prediction = set.predict(&disclosure);
    }
    let prediction = prediction?;
    if json {
        return Ok(serde_json::to_string(&prediction).expect("prediction serializes"));
    }
    Ok(format!(
        "profile: {} ({}); predicted weekly dose: {:.2} mg/week",
        prediction.profile,
        if prediction.exact {
            "exact match"
        } else {
            "closest feasible"
        },
        prediction.weekly_dose_mg
    ))
}
