//! Accuracy metrics, the ±20% dose safety window, and the multi-split study.

mod study;

use serde::{Deserialize, Serialize};

use crate::dataset::Cohort;
use crate::error::{Error, Result};
use crate::models::RegressionModel;
use crate::profiles::Profile;

pub use study::{
    mean, run_seeds, run_study, sample_std, write_accuracy_csv, write_safety_csv, Arm, ArmResult, MetricSummary,
    StudyConfig, StudyResult, ALL_FEATURES_LABEL, TRAIN_SEED_MASK,
};

/// The safety window is `[0.8 truth, 1.2 truth]`.
pub const WINDOW_LOWER: f64 = 0.8;
pub const WINDOW_UPPER: f64 = 1.2;

fn check_pair(preds: &[f64], truths: &[f64]) -> Result<()> {
    if preds.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            got: preds.len(),
        });
    }
    if truths.is_empty() {
        return Err(Error::InvalidArgument("metrics need at least one prediction".into()));
    }
    Ok(())
}

fn check_truth(truth: f64) -> Result<()> {
    if truth > 0.0 && truth.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "true dose must be positive, got {truth}"
        )))
    }
}

/// Mean absolute error, in the units of the inputs.
pub fn mae(preds: &[f64], truths: &[f64]) -> Result<f64> {
    check_pair(preds, truths)?;
    let total: f64 = preds.iter().zip(truths).map(|(p, t)| (p - t).abs()).sum();
    Ok(total / truths.len() as f64)
}

/// Mean absolute percentage error, in percent.
pub fn mape(preds: &[f64], truths: &[f64]) -> Result<f64> {
    check_pair(preds, truths)?;
    let mut total = 0.0;
    for (p, &t) in preds.iter().zip(truths) {
        check_truth(t)?;
        total += (p - t).abs() / t;
    }
    Ok(100.0 * total / truths.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DoseClass {
    Under,
    WithinWindow,
    Over,
}

impl DoseClass {
    /// Clinical consequence of landing in this class.
    pub fn risk_label(self) -> &'static str {
        match self {
            DoseClass::Under => "clot/stroke risk",
            DoseClass::WithinWindow => "within safety window",
            DoseClass::Over => "bleeding risk",
        }
    }
}

/// Both window bounds are inclusive.
pub fn classify_dose(pred: f64, truth: f64) -> Result<DoseClass> {
    check_truth(truth)?;
    if pred.is_nan() {
        return Err(Error::Numeric("predicted dose is NaN".into()));
    }
    let lower = WINDOW_LOWER * truth;
    let upper = WINDOW_UPPER * truth;
    Ok(if pred < lower {
        DoseClass::Under
    } else if pred > upper {
        DoseClass::Over
    } else {
        DoseClass::WithinWindow
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyPartition {
    pub under: usize,
    pub within: usize,
    pub over: usize,
    pub under_pct: f64,
    pub within_pct: f64,
    pub over_pct: f64,
}

impl SafetyPartition {
    pub fn from_predictions(preds: &[f64], truths: &[f64]) -> Result<Self> {
        check_pair(preds, truths)?;
        let (mut under, mut within, mut over) = (0, 0, 0);
        for (&p, &t) in preds.iter().zip(truths) {
            match classify_dose(p, t)? {
                DoseClass::Under => under += 1,
                DoseClass::WithinWindow => within += 1,
                DoseClass::Over => over += 1,
            }
        }
        let n = truths.len() as f64;
        Ok(Self {
            under,
            within,
            over,
            under_pct: 100.0 * under as f64 / n,
            within_pct: 100.0 * within as f64 / n,
            over_pct: 100.0 * over as f64 / n,
        })
    }

    pub fn n(&self) -> usize {
        self.under + self.within + self.over
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae: f64,
    pub mape: f64,
    pub n: usize,
    pub safety: SafetyPartition,
}

pub fn evaluate_predictions(preds: &[f64], truths: &[f64]) -> Result<EvalReport> {
    Ok(EvalReport {
        mae: mae(preds, truths)?,
        mape: mape(preds, truths)?,
        n: truths.len(),
        safety: SafetyPartition::from_predictions(preds, truths)?,
    })
}

/// Score `model` on `valid`, feeding it only the profile's non-redacted columns.
pub fn evaluate_model(model: &RegressionModel, valid: &Cohort, profile: &Profile) -> Result<EvalReport> {
    let visible = profile.visible(valid.dim());
    let preds = model.predict_rows(valid.design(&visible).view())?;
    evaluate_predictions(&preds, &valid.targets())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[10.0, 20.0], &[12.0, 16.0]).unwrap(), 3.0);
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn mape_examples() {
        assert!((mape(&[9.0], &[10.0]).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(mape(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert!(mape(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_dose(40.0, 35.0).unwrap(), DoseClass::WithinWindow);
        assert_eq!(classify_dose(42.0, 35.0).unwrap(), DoseClass::WithinWindow);
        assert_eq!(classify_dose(28.0, 35.0).unwrap(), DoseClass::WithinWindow);
        assert_eq!(classify_dose(27.9, 35.0).unwrap(), DoseClass::Under);
        assert_eq!(classify_dose(42.1, 35.0).unwrap(), DoseClass::Over);
        assert!(classify_dose(1.0, 0.0).is_err());
        assert_eq!(DoseClass::Over.risk_label(), "bleeding risk");
    }

    #[test]
    fn report_examples() {
        let truths = [20.0, 35.0, 50.0];
        let perfect = evaluate_predictions(&truths, &truths).unwrap();
        assert_eq!(perfect.mae, 0.0);
        assert_eq!(perfect.safety.within_pct, 100.0);
        let high: Vec<f64> = truths.iter().map(|t| 1.3 * t).collect();
        assert_eq!(evaluate_predictions(&high, &truths).unwrap().safety.over_pct, 100.0);
    }

    proptest! {
        #[test]
        fn partition_counts_and_percentages(
            pairs in prop::collection::vec((0.0f64..200.0, 1.0f64..100.0), 1..200)
        ) {
            let (preds, truths): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let s = SafetyPartition::from_predictions(&preds, &truths).unwrap();
            prop_assert_eq!(s.n(), truths.len());
            prop_assert!((s.under_pct + s.within_pct + s.over_pct - 100.0).abs() < 1e-9);
        }

        #[test]
        fn mae_is_translation_and_permutation_consistent(
            pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..50),
            shift in -20.0f64..20.0,
        ) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let base = mae(&p, &t).unwrap();
            let ps: Vec<f64> = p.iter().map(|v| v + shift).collect();
            let ts: Vec<f64> = t.iter().map(|v| v + shift).collect();
            prop_assert!((mae(&ps, &ts).unwrap() - base).abs() < 1e-9);
            let rp: Vec<f64> = p.iter().rev().copied().collect();
            let rt: Vec<f64> = t.iter().rev().copied().collect();
            prop_assert!((mae(&rp, &rt).unwrap() - base).abs() < 1e-9);
        }
    }
}
