//! Patient tables: schema-driven CSV ingestion, categorical encoding,
//! standardization, cohort splits and a synthetic generator.

mod cohort;
mod synthetic;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cohort::{
    encode_and_standardize, encode_record, split_cohorts, split_indices, Cohort, PatientRecord, StandardizationParams,
};
pub use synthetic::{generate_synthetic, PerCategory, SyntheticData, SyntheticSpec};

/// Cell values treated as missing.
const MISSING_TOKENS: &[&str] = &["", "NA", "na", "N/A", "NaN", "nan", "null", "NULL"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureCategory {
    Demographic,
    Background,
    Phenotypic,
    Genotypic,
}

impl FeatureCategory {
    pub const ALL: [FeatureCategory; 4] = [
        FeatureCategory::Demographic,
        FeatureCategory::Background,
        FeatureCategory::Phenotypic,
        FeatureCategory::Genotypic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureCategory::Demographic => "demographic",
            FeatureCategory::Background => "background",
            FeatureCategory::Phenotypic => "phenotypic",
            FeatureCategory::Genotypic => "genotypic",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            FeatureCategory::Demographic => "Demographic",
            FeatureCategory::Background => "Background",
            FeatureCategory::Phenotypic => "Phenotypic",
            FeatureCategory::Genotypic => "Genotypic",
        }
    }
}

impl fmt::Display for FeatureCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Categorical,
    Numeric,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DoseUnit {
    #[default]
    Weekly,
    /// Converted to weekly on ingestion (x7).
    Daily,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDecl {
    pub name: String,
    pub category: FeatureCategory,
    pub kind: FeatureKind,
}

/// Sidecar description of a patient CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub target: String,
    #[serde(default)]
    pub target_unit: DoseUnit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub features: Vec<FeatureDecl>,
}

impl Schema {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: Schema = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Schema("no features declared".into()));
        }
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("feature `{}` declared twice", f.name)));
            }
        }
        if seen.contains(self.target.as_str()) {
            return Err(Error::Schema(format!(
                "target `{}` is also declared as a feature",
                self.target
            )));
        }
        if let Some(id) = &self.id {
            if seen.contains(id.as_str()) || *id == self.target {
                return Err(Error::Schema(format!("id column `{id}` collides")));
            }
        }
        Ok(())
    }
}

/// One column of the encoded feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub category: FeatureCategory,
    pub kind: FeatureKind,
    /// Sorted observed labels; a label's code is its position.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
}

impl Feature {
    pub fn encode_label(&self, label: &str) -> Result<u32> {
        self.levels
            .binary_search_by(|l| l.as_str().cmp(label))
            .map(|i| i as u32)
            .map_err(|_| Error::UnseenLabel {
                column: self.name.clone(),
                label: label.to_string(),
            })
    }

    pub fn decode_label(&self, code: u32) -> Option<&str> {
        self.levels.get(code as usize).map(String::as_str)
    }

    pub fn encoding_map(&self) -> Vec<(&str, u32)> {
        self.levels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i as u32))
            .collect()
    }

    /// Parse a user-supplied value (label or number) into its numeric code.
    pub fn encode_text(&self, text: &str) -> Result<f64> {
        let text = text.trim();
        match self.kind {
            FeatureKind::Categorical => self.encode_label(text).map(f64::from),
            FeatureKind::Numeric => parse_number(text).ok_or_else(|| Error::Unparseable {
                row: 0,
                column: self.name.clone(),
                value: text.to_string(),
            }),
        }
    }

    pub fn encode(&self, value: &RawValue) -> Result<f64> {
        match (self.kind, value) {
            (FeatureKind::Numeric, RawValue::Numeric(v)) => Ok(*v),
            (FeatureKind::Categorical, RawValue::Label(l)) => self.encode_label(l).map(f64::from),
            (FeatureKind::Categorical, RawValue::Numeric(v)) => self.encode_label(&v.to_string()).map(f64::from),
            (FeatureKind::Numeric, RawValue::Label(l)) => Err(Error::Unparseable {
                row: 0,
                column: self.name.clone(),
                value: l.clone(),
            }),
        }
    }
}

/// Ordered feature list; its order is the column order of every encoded vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCatalog {
    pub features: Vec<Feature>,
}

impl FeatureCatalog {
    pub fn new(features: Vec<Feature>) -> Result<Self> {
        let mut seen = HashSet::new();
        for f in &features {
            if !seen.insert(f.name.clone()) {
                return Err(Error::Schema(format!("duplicate feature `{}`", f.name)));
            }
        }
        Ok(Self { features })
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn indices_in(&self, category: FeatureCategory) -> Vec<usize> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.category == category)
            .map(|(i, _)| i)
            .collect()
    }

    /// Catalog restricted to `indices`, kept in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let features = indices
            .iter()
            .map(|&i| {
                self.features.get(i).cloned().ok_or(Error::DimensionMismatch {
                    expected: self.dim(),
                    got: i + 1,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(features)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawValue {
    Numeric(f64),
    Label(String),
}

/// A validated but unencoded row.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub id: String,
    /// 1-based data row in the source file.
    pub row: usize,
    pub values: Vec<RawValue>,
    /// Weekly dose, mg/week.
    pub target: f64,
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub catalog: FeatureCatalog,
    pub records: Vec<RawRecord>,
    pub dropped_missing_target: usize,
    pub dropped_missing_features: usize,
    /// Features dropped by [`LoadedData::restrict`].
    pub deselected: Vec<String>,
}

impl LoadedData {
    /// Keep only the named features, in catalog order.
    pub fn restrict(&self, names: &[String]) -> Result<LoadedData> {
        for n in names {
            if self.catalog.index_of(n).is_none() {
                return Err(Error::UnknownFeature(n.clone()));
            }
        }
        let keep: Vec<usize> = (0..self.catalog.dim())
            .filter(|&i| names.contains(&self.catalog.features[i].name))
            .collect();
        if keep.is_empty() {
            return Err(Error::InvalidArgument("feature restriction keeps nothing".into()));
        }
        let records = self
            .records
            .iter()
            .map(|r| RawRecord {
                values: keep.iter().map(|&i| r.values[i].clone()).collect(),
                ..r.clone()
            })
            .collect();
        let mut deselected = self.deselected.clone();
        deselected.extend(
            (0..self.catalog.dim())
                .filter(|i| !keep.contains(i))
                .map(|i| self.catalog.features[i].name.clone()),
        );
        Ok(LoadedData {
            catalog: self.catalog.subset(&keep)?,
            records,
            dropped_missing_target: self.dropped_missing_target,
            dropped_missing_features: self.dropped_missing_features,
            deselected,
        })
    }
}

pub fn load_and_validate(data_path: &Path, schema_path: &Path) -> Result<LoadedData> {
    let schema = Schema::from_path(schema_path)?;
    let file = File::open(data_path).map_err(|e| Error::io(data_path, e))?;
    parse_records(file, &schema)
}

fn is_missing(cell: &str) -> bool {
    MISSING_TOKENS.contains(&cell.trim())
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Validate a CSV stream against `schema` and build the catalog from observed labels.
pub fn parse_records<R: Read>(reader: R, schema: &Schema) -> Result<LoadedData> {
    schema.validate()?;
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = csv.headers()?.iter().map(str::to_string).collect();

    let mut position: HashMap<&str, usize> = HashMap::new();
    for (i, col) in header.iter().enumerate() {
        let declared = *col == schema.target
            || schema.id.as_deref() == Some(col.as_str())
            || schema.features.iter().any(|f| f.name == *col);
        if !declared {
            return Err(Error::UnknownColumn { column: col.clone() });
        }
        if position.insert(col.as_str(), i).is_some() {
            return Err(Error::Schema(format!("column `{col}` appears twice in the header")));
        }
    }
    let lookup = |name: &str| {
        position.get(name).copied().ok_or_else(|| Error::MissingColumn {
            column: name.to_string(),
        })
    };
    let target_col = lookup(&schema.target)?;
    let id_col = schema.id.as_deref().map(lookup).transpose()?;
    let feature_cols = schema
        .features
        .iter()
        .map(|f| lookup(&f.name))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut dropped_missing_target = 0;
    let mut dropped_missing_features = 0;
    for (i, row) in csv.records().enumerate() {
        let row = row?;
        let row_no = i + 1;
        let cell = |c: usize| row.get(c).unwrap_or("");

        let target_text = cell(target_col);
        if is_missing(target_text) {
            dropped_missing_target += 1;
            continue;
        }
        let mut target = parse_number(target_text).ok_or_else(|| Error::Unparseable {
            row: row_no,
            column: schema.target.clone(),
            value: target_text.to_string(),
        })?;
        if target <= 0.0 {
            return Err(Error::NonPositiveTarget {
                row: row_no,
                column: schema.target.clone(),
                value: target,
            });
        }
        if schema.target_unit == DoseUnit::Daily {
            target *= 7.0;
        }

        if feature_cols.iter().any(|&c| is_missing(cell(c))) {
            dropped_missing_features += 1;
            continue;
        }
        let values = schema
            .features
            .iter()
            .zip(&feature_cols)
            .map(|(decl, &c)| {
                let text = cell(c);
                match decl.kind {
                    FeatureKind::Categorical => Ok(RawValue::Label(text.to_string())),
                    FeatureKind::Numeric => {
                        parse_number(text)
                            .map(RawValue::Numeric)
                            .ok_or_else(|| Error::Unparseable {
                                row: row_no,
                                column: decl.name.clone(),
                                value: text.to_string(),
                            })
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let id = match id_col {
            Some(c) => cell(c).to_string(),
            None => row_no.to_string(),
        };
        records.push(RawRecord {
            id,
            row: row_no,
            values,
            target,
        });
    }

    if dropped_missing_target > 0 {
        log::warn!("dropped {dropped_missing_target} rows with a missing target");
    }
    if dropped_missing_features > 0 {
        log::warn!("dropped {dropped_missing_features} rows with missing feature values");
    }

    let catalog = build_catalog(schema, &records)?;
    Ok(LoadedData {
        catalog,
        records,
        dropped_missing_target,
        dropped_missing_features,
        deselected: Vec::new(),
    })
}

pub(crate) fn build_catalog(schema: &Schema, records: &[RawRecord]) -> Result<FeatureCatalog> {
    let features = schema
        .features
        .iter()
        .enumerate()
        .map(|(j, decl)| {
            let levels = match decl.kind {
                FeatureKind::Numeric => Vec::new(),
                FeatureKind::Categorical => records
                    .iter()
                    .filter_map(|r| match &r.values[j] {
                        RawValue::Label(l) => Some(l.clone()),
                        RawValue::Numeric(_) => None,
                    })
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect(),
            };
            Feature {
                name: decl.name.clone(),
                category: decl.category,
                kind: decl.kind,
                levels,
            }
        })
        .collect();
    FeatureCatalog::new(features)
}
