//! Seeded generator for warfarin-shaped cohorts.
//!
//! Visible categories contribute a linear signal `v`. The privileged
//! category carries a latent `g = rho * v / sd(v) + sqrt(1 - rho^2) * e`,
//! observed only through jittered three-level genotype-like labels. The
//! target adds an interaction of the first two visible features and
//! Gaussian noise, then is shifted so every dose is at least `min_dose`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{build_catalog, FeatureCatalog, FeatureCategory, FeatureDecl, FeatureKind, RawRecord, RawValue, Schema};
use crate::error::{Error, Result};

/// Tertile cut of a standard normal.
const TERTILE: f64 = 0.430_727_299_295_457_5;
const GENOTYPE_LABELS: [&str; 3] = ["AA", "AB", "BB"];
const GROUP_LABELS: [&str; 3] = ["group_a", "group_b", "group_c"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerCategory<T> {
    pub demographic: T,
    pub background: T,
    pub phenotypic: T,
    pub genotypic: T,
}

impl<T: Copy> PerCategory<T> {
    pub fn get(&self, category: FeatureCategory) -> T {
        match category {
            FeatureCategory::Demographic => self.demographic,
            FeatureCategory::Background => self.background,
            FeatureCategory::Phenotypic => self.phenotypic,
            FeatureCategory::Genotypic => self.genotypic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub counts: PerCategory<usize>,
    /// Effect size per category; the privileged category's entry scales `g`.
    pub weights: PerCategory<f64>,
    pub privileged_category: FeatureCategory,
    /// Correlation between the privileged latent and the visible signal.
    pub rho: f64,
    pub privileged_jitter: f64,
    pub nonlinearity: f64,
    pub noise_std: f64,
    /// Extra pure-noise background columns, named `noise_<k>`.
    pub noise_features: usize,
    pub base_dose: f64,
    pub min_dose: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 1877,
            counts: PerCategory {
                demographic: 6,
                background: 24,
                phenotypic: 1,
                genotypic: 2,
            },
            weights: PerCategory {
                demographic: 5.0,
                background: 6.0,
                phenotypic: 2.0,
                genotypic: 6.0,
            },
            privileged_category: FeatureCategory::Genotypic,
            rho: 0.8,
            privileged_jitter: 0.3,
            nonlinearity: 6.0,
            noise_std: 8.0,
            noise_features: 0,
            base_dose: 35.0,
            min_dose: 5.0,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n < 2 {
            return bad(format!("synthetic n must be at least 2, got {}", self.n));
        }
        if !(self.rho.is_finite() && self.rho.abs() <= 1.0) {
            return bad(format!("rho must lie in [-1, 1], got {}", self.rho));
        }
        let finite = [
            self.privileged_jitter,
            self.nonlinearity,
            self.noise_std,
            self.base_dose,
            self.min_dose,
        ];
        if finite.iter().any(|v| !v.is_finite()) || self.noise_std < 0.0 || self.privileged_jitter < 0.0 {
            return bad("synthetic spec has a non-finite or negative scale".into());
        }
        if FeatureCategory::ALL.iter().any(|&c| !self.weights.get(c).is_finite()) {
            return bad("synthetic weights must be finite".into());
        }
        if FeatureCategory::ALL.iter().map(|&c| self.counts.get(c)).sum::<usize>() == 0 {
            return bad("synthetic spec declares no features".into());
        }
        if self.min_dose <= 0.0 {
            return bad(format!("min_dose {} would emit non-positive doses", self.min_dose));
        }
        Ok(())
    }

    fn feature_prefix(category: FeatureCategory) -> &'static str {
        match category {
            FeatureCategory::Demographic => "demo",
            FeatureCategory::Background => "bg",
            FeatureCategory::Phenotypic => "pheno",
            FeatureCategory::Genotypic => "geno",
        }
    }
}

/// Generated table plus the latent signals behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub schema: Schema,
    pub records: Vec<RawRecord>,
    pub visible_signal: Vec<f64>,
    pub privileged_signal: Vec<f64>,
}

impl SyntheticData {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![self.schema.id.clone().unwrap_or_else(|| "patient_id".into())];
        header.extend(self.schema.features.iter().map(|f| f.name.clone()));
        header.push(self.schema.target.clone());
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.id.clone()];
            row.extend(r.values.iter().map(|v| match v {
                RawValue::Numeric(x) => x.to_string(),
                RawValue::Label(l) => l.clone(),
            }));
            row.push(r.target.to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Catalog as `load_and_validate` would build it from the written files.
    pub fn catalog(&self) -> Result<FeatureCatalog> {
        build_catalog(&self.schema, &self.records)
    }

    pub fn schema_json(&self) -> String {
        serde_json::to_string_pretty(&self.schema).expect("schema serializes")
    }
}

#[derive(Clone, Copy)]
enum Column {
    Numeric,
    Group,
    Binary,
    Genotype,
    Noise,
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Column plan in catalog order.
    let mut decls = Vec::new();
    let mut plan: Vec<(Column, FeatureCategory, f64)> = Vec::new();
    for category in FeatureCategory::ALL {
        let count = spec.counts.get(category);
        let privileged = category == spec.privileged_category;
        let norm = (1..=count).map(|k| 1.0 / (k * k) as f64).sum::<f64>().sqrt();
        for j in 0..count {
            let coef = if privileged {
                0.0
            } else {
                spec.weights.get(category) / ((j + 1) as f64 * norm)
            };
            let column = if privileged {
                Column::Genotype
            } else if category == FeatureCategory::Phenotypic {
                Column::Binary
            } else if category == FeatureCategory::Demographic && j == 0 {
                Column::Group
            } else {
                Column::Numeric
            };
            let kind = match column {
                Column::Numeric | Column::Noise => FeatureKind::Numeric,
                _ => FeatureKind::Categorical,
            };
            decls.push(FeatureDecl {
                name: format!("{}_{j}", SyntheticSpec::feature_prefix(category)),
                category,
                kind,
            });
            plan.push((column, category, coef));
        }
        if category == FeatureCategory::Background {
            for k in 0..spec.noise_features {
                decls.push(FeatureDecl {
                    name: format!("noise_{k}"),
                    category,
                    kind: FeatureKind::Numeric,
                });
                plan.push((Column::Noise, category, 0.0));
            }
        }
    }
    let schema = Schema {
        target: "weekly_dose_mg".into(),
        target_unit: Default::default(),
        id: Some("patient_id".into()),
        features: decls,
    };

    let visible_sd = plan.iter().map(|(_, _, c)| c * c).sum::<f64>().sqrt();
    if visible_sd == 0.0 && spec.rho != 0.0 {
        return Err(Error::InvalidArgument(
            "rho is non-zero but the visible signal is empty".into(),
        ));
    }
    let privileged_weight = spec.weights.get(spec.privileged_category);
    let interaction: Vec<usize> = plan
        .iter()
        .enumerate()
        .filter(|(_, (col, cat, _))| *cat != spec.privileged_category && !matches!(col, Column::Noise))
        .map(|(i, _)| i)
        .take(2)
        .collect();
    let cut = TERTILE * (1.0 + spec.privileged_jitter * spec.privileged_jitter).sqrt();
    let residual = (1.0 - spec.rho * spec.rho).max(0.0).sqrt();

    let mut values: Vec<Vec<RawValue>> = Vec::with_capacity(spec.n);
    let mut doses = Vec::with_capacity(spec.n);
    let mut visible_signal = Vec::with_capacity(spec.n);
    let mut privileged_signal = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        // Unit-variance numeric view of each visible column.
        let mut units = vec![0.0; plan.len()];
        let mut row = vec![RawValue::Numeric(0.0); plan.len()];
        for (j, (column, _, _)) in plan.iter().enumerate() {
            match column {
                Column::Numeric | Column::Noise => {
                    let u: f64 = rng.sample(StandardNormal);
                    units[j] = u;
                    row[j] = RawValue::Numeric(u);
                }
                Column::Group => {
                    let level = rng.random_range(0..3usize);
                    units[j] = (level as f64 - 1.0) * 1.5f64.sqrt();
                    row[j] = RawValue::Label(GROUP_LABELS[level].into());
                }
                Column::Binary => {
                    let yes = rng.random_bool(0.5);
                    units[j] = if yes { 1.0 } else { -1.0 };
                    row[j] = RawValue::Label(if yes { "yes" } else { "no" }.into());
                }
                Column::Genotype => {}
            }
        }
        let v: f64 = plan.iter().zip(&units).map(|((_, _, c), u)| c * u).sum();
        let e: f64 = rng.sample(StandardNormal);
        let scaled = if visible_sd > 0.0 { v / visible_sd } else { 0.0 };
        let g = spec.rho * scaled + residual * e;
        for (j, (column, _, _)) in plan.iter().enumerate() {
            if let Column::Genotype = column {
                let jitter: f64 = rng.sample(StandardNormal);
                let z = g + spec.privileged_jitter * jitter;
                let level = if z < -cut {
                    0
                } else if z <= cut {
                    1
                } else {
                    2
                };
                row[j] = RawValue::Label(GENOTYPE_LABELS[level].into());
            }
        }
        let cross = match interaction.as_slice() {
            [a, b] => units[*a] * units[*b],
            _ => 0.0,
        };
        let noise: f64 = rng.sample(StandardNormal);
        let y = spec.base_dose + v + privileged_weight * g + spec.nonlinearity * cross + spec.noise_std * noise;
        values.push(row);
        doses.push(y);
        visible_signal.push(v);
        privileged_signal.push(g);
    }

    let lowest = doses.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = (spec.min_dose - lowest).max(0.0);
    let records: Vec<RawRecord> = values
        .into_iter()
        .zip(&doses)
        .enumerate()
        .map(|(i, (values, &y))| RawRecord {
            id: format!("s{:05}", i + 1),
            row: i + 1,
            values,
            target: y + shift,
        })
        .collect();
    if records.iter().any(|r| !(r.target > 0.0 && r.target.is_finite())) {
        return Err(Error::InvalidArgument(
            "synthetic spec produced non-positive doses".into(),
        ));
    }

    Ok(SyntheticData {
        schema,
        records,
        visible_signal,
        privileged_signal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n: 50,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_bytes() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        generate_synthetic(&small(), 7).unwrap().write_csv(&mut a).unwrap();
        generate_synthetic(&small(), 7).unwrap().write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        generate_synthetic(&small(), 8).unwrap().write_csv(&mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn mirrored_layout_has_33_features() {
        let data = generate_synthetic(&small(), 1).unwrap();
        assert_eq!(data.schema.features.len(), 33);
        let count = |c| data.schema.features.iter().filter(|f| f.category == c).count();
        assert_eq!(count(FeatureCategory::Demographic), 6);
        assert_eq!(count(FeatureCategory::Background), 24);
        assert_eq!(count(FeatureCategory::Phenotypic), 1);
        assert_eq!(count(FeatureCategory::Genotypic), 2);
    }

    #[test]
    fn doses_are_positive() {
        let spec = SyntheticSpec {
            n: 500,
            base_dose: -50.0,
            ..Default::default()
        };
        let data = generate_synthetic(&spec, 3).unwrap();
        let low = data.records.iter().map(|r| r.target).fold(f64::INFINITY, f64::min);
        assert!((low - spec.min_dose).abs() < 1e-9);
    }

    #[test]
    fn non_positive_floor_is_rejected() {
        let spec = SyntheticSpec {
            min_dose: 0.0,
            ..small()
        };
        assert!(generate_synthetic(&spec, 0).is_err());
    }

    #[test]
    fn noise_columns_are_declared() {
        let spec = SyntheticSpec {
            noise_features: 2,
            ..small()
        };
        let data = generate_synthetic(&spec, 0).unwrap();
        assert_eq!(data.schema.features.len(), 35);
        assert!(data.schema.features.iter().any(|f| f.name == "noise_1"));
    }

    #[test]
    fn generated_table_reparses() {
        let data = generate_synthetic(&small(), 4).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let loaded = crate::dataset::parse_records(buf.as_slice(), &data.schema).unwrap();
        assert_eq!(loaded.records, data.records);
    }
}
