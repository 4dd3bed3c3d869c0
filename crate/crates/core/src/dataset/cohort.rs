use std::io::Write;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureCatalog, RawRecord};
use crate::error::{Error, Result};

/// An encoded, standardized patient.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    pub x: Vec<f64>,
    /// Weekly dose in natural units; never standardized.
    pub y: f64,
}

/// Per-column shift and scale, fit on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    #[serde(with = "crate::models::bits::vec")]
    pub means: Vec<f64>,
    #[serde(with = "crate::models::bits::vec")]
    pub stds: Vec<f64>,
}

impl StandardizationParams {
    /// Column means and population standard deviations of `rows`.
    pub fn fit(rows: &[&[f64]], catalog: &FeatureCatalog) -> Result<Self> {
        let d = catalog.dim();
        if rows.is_empty() {
            return Err(Error::TooFewRecords { needed: 1, got: 0 });
        }
        let n = rows.len() as f64;
        let mut means = vec![0.0; d];
        for row in rows {
            check_dim(d, row.len())?;
            for (m, v) in means.iter_mut().zip(row.iter()) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);

        let mut stds = vec![0.0; d];
        for row in rows {
            for ((s, m), v) in stds.iter_mut().zip(&means).zip(row.iter()) {
                *s += (v - m) * (v - m);
            }
        }
        for (j, s) in stds.iter_mut().enumerate() {
            *s = (*s / n).sqrt();
            if !s.is_finite() || *s <= 1e-12 * means[j].abs().max(1.0) {
                return Err(Error::ZeroVariance {
                    column: catalog.features[j].name.clone(),
                });
            }
        }
        Ok(Self { means, stds })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn apply(&self, x: &mut [f64]) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        for ((v, m), s) in x.iter_mut().zip(&self.means).zip(&self.stds) {
            *v = (*v - m) / s;
        }
        Ok(())
    }

    pub fn apply_one(&self, index: usize, value: f64) -> f64 {
        (value - self.means[index]) / self.stds[index]
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            means: indices.iter().map(|&i| self.means[i]).collect(),
            stds: indices.iter().map(|&i| self.stds[i]).collect(),
        }
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// A set of patients sharing one catalog and standardizer.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub records: Vec<PatientRecord>,
    pub catalog: Arc<FeatureCatalog>,
    pub standardizer: StandardizationParams,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.catalog.dim()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.y).collect()
    }

    /// Row-major design matrix over the given columns, in the given order.
    pub fn design(&self, columns: &[usize]) -> Array2<f64> {
        let mut data = Vec::with_capacity(self.len() * columns.len());
        for r in &self.records {
            data.extend(columns.iter().map(|&c| r.x[c]));
        }
        Array2::from_shape_vec((self.len(), columns.len()), data).expect("shape matches by construction")
    }

    pub fn design_all(&self) -> Array2<f64> {
        let all: Vec<usize> = (0..self.dim()).collect();
        self.design(&all)
    }

    /// Same patients, restricted to a feature subset.
    pub fn select_features(&self, indices: &[usize]) -> Result<Cohort> {
        let catalog = Arc::new(self.catalog.subset(indices)?);
        let records = self
            .records
            .iter()
            .map(|r| PatientRecord {
                id: r.id.clone(),
                x: indices.iter().map(|&i| r.x[i]).collect(),
                y: r.y,
            })
            .collect();
        Ok(Cohort {
            records,
            catalog,
            standardizer: self.standardizer.subset(indices),
        })
    }

    pub fn subset_rows(&self, rows: &[usize]) -> Cohort {
        Cohort {
            records: rows.iter().map(|&i| self.records[i].clone()).collect(),
            catalog: Arc::clone(&self.catalog),
            standardizer: self.standardizer.clone(),
        }
    }

    /// Encoded cohort as CSV for inspection: id, features..., target.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string()];
        header.extend(self.catalog.features.iter().map(|f| f.name.clone()));
        header.push("weekly_dose_mg".to_string());
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.id.clone()];
            row.extend(r.x.iter().map(|v| v.to_string()));
            row.push(r.y.to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Map a raw record's labels through the catalog; no standardization.
pub fn encode_record(record: &RawRecord, catalog: &FeatureCatalog) -> Result<Vec<f64>> {
    check_dim(catalog.dim(), record.values.len())?;
    catalog
        .features
        .iter()
        .zip(&record.values)
        .map(|(f, v)| f.encode(v))
        .collect()
}

/// Encode every record, fit the standardizer on rows flagged in `fit_on`,
/// and apply it to all rows.
pub fn encode_and_standardize(
    raw: &[RawRecord],
    catalog: &FeatureCatalog,
    fit_on: &[bool],
) -> Result<(Cohort, StandardizationParams)> {
    check_dim(raw.len(), fit_on.len())?;
    let encoded = raw
        .iter()
        .map(|r| encode_record(r, catalog))
        .collect::<Result<Vec<_>>>()?;
    let fit_rows: Vec<&[f64]> = encoded
        .iter()
        .zip(fit_on)
        .filter(|(_, &f)| f)
        .map(|(x, _)| x.as_slice())
        .collect();
    let params = StandardizationParams::fit(&fit_rows, catalog)?;
    let records = raw
        .iter()
        .zip(encoded)
        .map(|(r, mut x)| {
            params.apply(&mut x)?;
            Ok(PatientRecord {
                id: r.id.clone(),
                x,
                y: r.target,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cohort = Cohort {
        records,
        catalog: Arc::new(catalog.clone()),
        standardizer: params.clone(),
    };
    Ok((cohort, params))
}

/// Seeded partition of `0..n` into sorted (train, valid) index lists;
/// the training side holds `round(ratio * n)` rows.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    if n < 2 {
        return Err(Error::TooFewRecords { needed: 2, got: n });
    }
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = order[..n_train].to_vec();
    let mut valid = order[n_train..].to_vec();
    train.sort_unstable();
    valid.sort_unstable();
    Ok((train, valid))
}

/// Random train/validation split; the standardizer is fit on the training side.
pub fn split_cohorts(raw: &[RawRecord], catalog: &FeatureCatalog, ratio: f64, seed: u64) -> Result<(Cohort, Cohort)> {
    let (train_idx, valid_idx) = split_indices(raw.len(), ratio, seed)?;
    let mut fit_on = vec![false; raw.len()];
    for &i in &train_idx {
        fit_on[i] = true;
    }
    let (all, _) = encode_and_standardize(raw, catalog, &fit_on)?;
    Ok((all.subset_rows(&train_idx), all.subset_rows(&valid_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Feature, FeatureCategory, FeatureKind, RawValue};
    use proptest::prelude::*;

    fn numeric_catalog(d: usize) -> FeatureCatalog {
        FeatureCatalog::new(
            (0..d)
                .map(|j| Feature {
                    name: format!("f{j}"),
                    category: FeatureCategory::Background,
                    kind: FeatureKind::Numeric,
                    levels: vec![],
                })
                .collect(),
        )
        .unwrap()
    }

    fn raw(values: &[f64]) -> Vec<RawRecord> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| RawRecord {
                id: format!("r{i}"),
                row: i + 1,
                values: vec![RawValue::Numeric(v)],
                target: 10.0 + i as f64,
            })
            .collect()
    }

    #[test]
    fn standardize_one_two_three() {
        let (cohort, params) = encode_and_standardize(&raw(&[1.0, 2.0, 3.0]), &numeric_catalog(1), &[true; 3]).unwrap();
        assert!((params.means[0] - 2.0).abs() < 1e-15);
        assert!((params.stds[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let xs: Vec<f64> = cohort.records.iter().map(|r| r.x[0]).collect();
        for (got, want) in xs.iter().zip([-1.224744871391589, 0.0, 1.224744871391589]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        // targets stay in dose units
        assert_eq!(cohort.records[2].y, 12.0);
    }

    #[test]
    fn standardized_column_is_a_fixed_point() {
        let col = [-1.224744871391589, 0.0, 1.224744871391589];
        let (cohort, _) = encode_and_standardize(&raw(&col), &numeric_catalog(1), &[true; 3]).unwrap();
        for (r, want) in cohort.records.iter().zip(col) {
            assert!((r.x[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn categorical_codes_then_standardized() {
        let catalog = FeatureCatalog::new(vec![Feature {
            name: "grade".into(),
            category: FeatureCategory::Demographic,
            kind: FeatureKind::Categorical,
            levels: vec!["A".into(), "B".into()],
        }])
        .unwrap();
        let records: Vec<RawRecord> = ["A", "B", "A"]
            .iter()
            .enumerate()
            .map(|(i, l)| RawRecord {
                id: i.to_string(),
                row: i + 1,
                values: vec![RawValue::Label(l.to_string())],
                target: 1.0,
            })
            .collect();
        let codes: Vec<f64> = records.iter().map(|r| encode_record(r, &catalog).unwrap()[0]).collect();
        assert_eq!(codes, vec![0.0, 1.0, 0.0]);
        let (cohort, params) = encode_and_standardize(&records, &catalog, &[true; 3]).unwrap();
        let mean = 1.0 / 3.0;
        let std = (2.0f64 / 9.0).sqrt();
        for (r, c) in cohort.records.iter().zip(codes) {
            assert!((r.x[0] - (c - mean) / std).abs() < 1e-12);
        }
        assert!((params.means[0] - mean).abs() < 1e-15);
    }

    #[test]
    fn constant_column_rejected() {
        let err = encode_and_standardize(&raw(&[4.0, 4.0, 4.0]), &numeric_catalog(1), &[true; 3]).unwrap_err();
        assert!(matches!(err, Error::ZeroVariance { column } if column == "f0"));
    }

    #[test]
    fn unseen_label_at_transform() {
        let catalog = FeatureCatalog::new(vec![Feature {
            name: "grade".into(),
            category: FeatureCategory::Demographic,
            kind: FeatureKind::Categorical,
            levels: vec!["A".into()],
        }])
        .unwrap();
        let rec = RawRecord {
            id: "x".into(),
            row: 1,
            values: vec![RawValue::Label("Z".into())],
            target: 1.0,
        };
        assert!(matches!(encode_record(&rec, &catalog), Err(Error::UnseenLabel { .. })));
    }

    #[test]
    fn split_sizes() {
        let (t, v) = split_indices(1877, 0.65, 3).unwrap();
        assert_eq!((t.len(), v.len()), (1220, 657));
        let (t, v) = split_indices(4, 0.5, 9).unwrap();
        assert_eq!((t.len(), v.len()), (2, 2));
        assert!(matches!(split_indices(1, 0.5, 0), Err(Error::TooFewRecords { .. })));
        assert!(split_indices(10, 1.0, 0).is_err());
        assert!(split_indices(10, 0.0, 0).is_err());
    }

    #[test]
    fn split_is_seed_deterministic() {
        assert_eq!(split_indices(100, 0.7, 5).unwrap(), split_indices(100, 0.7, 5).unwrap());
        assert_ne!(split_indices(100, 0.7, 5).unwrap(), split_indices(100, 0.7, 6).unwrap());
    }

    #[test]
    fn split_fits_standardizer_on_train_only() {
        let values: Vec<f64> = (0..20).map(|i| (i * i) as f64).collect();
        let records = raw(&values);
        let (train, valid) = split_cohorts(&records, &numeric_catalog(1), 0.6, 11).unwrap();
        assert_eq!(train.standardizer, valid.standardizer);
        let mean: f64 = train.records.iter().map(|r| r.x[0]).sum::<f64>() / train.len() as f64;
        assert!(mean.abs() < 1e-9);
        let vmean: f64 = valid.records.iter().map(|r| r.x[0]).sum::<f64>() / valid.len() as f64;
        assert!(vmean.abs() > 1e-6);
    }

    proptest! {
        #[test]
        fn split_partitions_input(n in 2usize..300, ratio in 0.05f64..0.95, seed in any::<u64>()) {
            let (t, v) = split_indices(n, ratio, seed).unwrap();
            let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert!(!t.is_empty() && !v.is_empty());
        }

        #[test]
        fn training_columns_are_standard(
            rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 5..60)
        ) {
            let catalog = numeric_catalog(3);
            let records: Vec<RawRecord> = rows.iter().enumerate().map(|(i, r)| RawRecord {
                id: i.to_string(), row: i + 1,
                values: r.iter().map(|&v| RawValue::Numeric(v)).collect(),
                target: 1.0,
            }).collect();
            let flags = vec![true; records.len()];
            if let Ok((cohort, _)) = encode_and_standardize(&records, &catalog, &flags) {
                let n = cohort.len() as f64;
                for j in 0..3 {
                    let mean = cohort.records.iter().map(|r| r.x[j]).sum::<f64>() / n;
                    let var = cohort.records.iter().map(|r| (r.x[j] - mean).powi(2)).sum::<f64>() / n;
                    prop_assert!(mean.abs() < 1e-9);
                    prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}
