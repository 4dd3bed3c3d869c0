//! Patient profiles (redaction masks) and test-time profile assignment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{Cohort, FeatureCatalog, FeatureCategory, StandardizationParams};
use crate::distillation::{sweep_lambda, BundleSet, DistillationConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub name: String,
    /// Short form accepted on the command line.
    pub slug: String,
    pub redacted_categories: BTreeSet<FeatureCategory>,
    /// Sorted indices of withheld features.
    pub redacted_features: Vec<usize>,
}

impl Profile {
    /// Profile withholding every feature in `categories`.
    pub fn from_categories(
        name: &str,
        slug: &str,
        categories: BTreeSet<FeatureCategory>,
        catalog: &FeatureCatalog,
    ) -> Result<Self> {
        let redacted: Vec<usize> = categories.iter().flat_map(|&c| catalog.indices_in(c)).collect();
        let mut profile = Self::from_features(name, slug, redacted, catalog.dim())?;
        profile.redacted_categories = categories;
        Ok(profile)
    }

    /// Feature-level mask.
    pub fn from_features(name: &str, slug: &str, redacted: Vec<usize>, dim: usize) -> Result<Self> {
        let redacted: BTreeSet<usize> = redacted.into_iter().collect();
        if let Some(&bad) = redacted.iter().find(|&&i| i >= dim) {
            return Err(Error::InvalidProfile(format!(
                "profile `{name}` redacts feature {bad}, but there are only {dim}"
            )));
        }
        if redacted.len() >= dim {
            return Err(Error::InvalidProfile(format!("profile `{name}` redacts every feature")));
        }
        Ok(Self {
            name: name.to_string(),
            slug: slug.to_string(),
            redacted_categories: BTreeSet::new(),
            redacted_features: redacted.into_iter().collect(),
        })
    }

    pub fn is_redacted(&self, index: usize) -> bool {
        self.redacted_features.binary_search(&index).is_ok()
    }

    pub fn has_redactions(&self) -> bool {
        !self.redacted_features.is_empty()
    }

    /// Non-redacted indices in catalog order.
    pub fn visible(&self, dim: usize) -> Vec<usize> {
        (0..dim).filter(|&i| !self.is_redacted(i)).collect()
    }

    pub fn matches(&self, key: &str) -> bool {
        self.name.eq_ignore_ascii_case(key) || self.slug.eq_ignore_ascii_case(key)
    }
}

/// Split `x` into (non-redacted, redacted) parts, each in catalog order.
pub fn apply_mask(profile: &Profile, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut visible = Vec::with_capacity(x.len());
    let mut star = Vec::with_capacity(profile.redacted_features.len());
    for (i, &v) in x.iter().enumerate() {
        if profile.is_redacted(i) {
            star.push(v);
        } else {
            visible.push(v);
        }
    }
    (visible, star)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCatalog {
    pub dim: usize,
    pub profiles: Vec<Profile>,
}

impl ProfileCatalog {
    pub fn new(dim: usize, profiles: Vec<Profile>) -> Result<Self> {
        let mut names = BTreeSet::new();
        for p in &profiles {
            if !names.insert(p.name.to_lowercase()) {
                return Err(Error::InvalidProfile(format!("duplicate profile `{}`", p.name)));
            }
            if p.redacted_features.len() >= dim || p.redacted_features.iter().any(|&i| i >= dim) {
                return Err(Error::InvalidProfile(format!(
                    "profile `{}` does not fit {dim} features",
                    p.name
                )));
            }
        }
        Ok(Self { dim, profiles })
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn find(&self, key: &str) -> Option<&Profile> {
        self.profiles.iter().find(|p| p.matches(key))
    }

    pub fn get(&self, key: &str) -> Result<&Profile> {
        self.find(key).ok_or_else(|| Error::UnknownProfile(key.to_string()))
    }

    /// Keep only profiles named in `keys` (by name or slug), in catalog order.
    pub fn select(&self, keys: &[String]) -> Result<Self> {
        for k in keys {
            self.get(k)?;
        }
        let profiles = self
            .profiles
            .iter()
            .filter(|p| keys.iter().any(|k| p.matches(k)))
            .cloned()
            .collect();
        Self::new(self.dim, profiles)
    }

    /// Profile rows with one ✓/✗ column per category; `~` marks a category
    /// that a feature-level mask only partly withholds.
    pub fn render_table(&self, features: &FeatureCatalog) -> String {
        let width = self.profiles.iter().map(|p| p.name.len()).max().unwrap_or(7).max(7);
        let mut out = format!("{:width$}", "Profile");
        for c in FeatureCategory::ALL {
            let _ = write!(out, "  {:>11}", c.title());
        }
        out.push('\n');
        for p in &self.profiles {
            let _ = write!(out, "{:width$}", p.name);
            for c in FeatureCategory::ALL {
                let members = features.indices_in(c);
                let hidden = members.iter().filter(|&&i| p.is_redacted(i)).count();
                let mark = if hidden == 0 {
                    "✓"
                } else if hidden == members.len() {
                    "✗"
                } else {
                    "~"
                };
                let _ = write!(out, "  {:>11}", mark);
            }
            out.push('\n');
        }
        out
    }
}

/// The category-level profiles: public, one "with all except X" per
/// category, and one "X except others" per category. Nine when every
/// category has features.
pub fn default_catalog(features: &FeatureCatalog) -> Result<ProfileCatalog> {
    // A category emptied by feature selection would give a copy of the public
    // profile and one that discloses nothing; both are left out.
    let present: Vec<FeatureCategory> = FeatureCategory::ALL
        .into_iter()
        .filter(|&c| !features.indices_in(c).is_empty())
        .collect();
    for c in FeatureCategory::ALL.iter().filter(|c| !present.contains(c)) {
        log::warn!("category `{c}` has no features; its two default profiles are skipped");
    }
    let mut profiles = vec![Profile::from_categories(
        "Public patient",
        "public",
        BTreeSet::new(),
        features,
    )?];
    for &c in &present {
        profiles.push(Profile::from_categories(
            &format!("With all except {}", c.as_str()),
            &format!("no-{}", c.as_str()),
            BTreeSet::from([c]),
            features,
        )?);
    }
    for &c in &present {
        let others = FeatureCategory::ALL.iter().copied().filter(|&o| o != c).collect();
        profiles.push(Profile::from_categories(
            &format!("{} except others", c.title()),
            &format!("only-{}", c.as_str()),
            others,
            features,
        )?);
    }
    ProfileCatalog::new(features.dim(), profiles)
}

/// Read access to one patient's feature values, by catalog index.
///
/// Prediction goes through this trait so tests can record which indices a
/// model touches.
pub trait FeatureSource {
    fn feature(&self, index: usize) -> Option<f64>;
}

impl FeatureSource for [f64] {
    fn feature(&self, index: usize) -> Option<f64> {
        self.get(index).copied()
    }
}

/// What a patient chose to reveal: encoded, standardized values keyed by
/// catalog index. Absent keys are withheld.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Disclosure {
    pub values: BTreeMap<usize, f64>,
}

impl Disclosure {
    pub fn disclosed(&self) -> BTreeSet<usize> {
        self.values.keys().copied().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Disclose the given indices of an already standardized full vector.
    pub fn from_vector(x: &[f64], disclosed: &[usize]) -> Self {
        Self {
            values: disclosed.iter().map(|&i| (i, x[i])).collect(),
        }
    }

    /// Parse `name=value,name=value`, encoding labels and applying the
    /// training standardizer.
    pub fn parse(text: &str, features: &FeatureCatalog, standardizer: &StandardizationParams) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text)?, features, standardizer)
    }

    pub fn from_pairs(
        pairs: &[(&str, &str)],
        features: &FeatureCatalog,
        standardizer: &StandardizationParams,
    ) -> Result<Self> {
        let mut values = BTreeMap::new();
        for &(name, text) in pairs {
            let index = features
                .index_of(name)
                .ok_or_else(|| Error::UnknownFeature(name.to_string()))?;
            let encoded = features.features[index].encode_text(text)?;
            if values.insert(index, standardizer.apply_one(index, encoded)).is_some() {
                return Err(Error::InvalidArgument(format!("feature `{name}` disclosed twice")));
            }
        }
        Ok(Self { values })
    }
}

/// Split `name=value,name=value` into trimmed pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(&str, &str)>> {
    text.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|pair| {
            pair.split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::InvalidArgument(format!("expected name=value, got `{pair}`")))
        })
        .collect()
}

impl FeatureSource for Disclosure {
    fn feature(&self, index: usize) -> Option<f64> {
        self.values.get(&index).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    /// Position in the catalog.
    pub index: usize,
    /// The profile's non-redacted set equals the disclosed set.
    pub exact: bool,
}

/// Pick the profile using the most disclosed features among those that need
/// nothing the patient withheld. Ties go to the earlier profile.
pub fn assign_profile(catalog: &ProfileCatalog, disclosure: &Disclosure) -> Result<Assignment> {
    if disclosure.is_empty() {
        return Err(Error::InvalidArgument("the disclosure reveals no features".into()));
    }
    let disclosed = disclosure.disclosed();
    let mut best: Option<(usize, usize)> = None;
    for (index, profile) in catalog.profiles.iter().enumerate() {
        let visible = profile.visible(catalog.dim);
        if !visible.iter().all(|i| disclosed.contains(i)) {
            continue;
        }
        if best.is_none_or(|(_, size)| visible.len() > size) {
            best = Some((index, visible.len()));
        }
    }
    let (index, size) = best.ok_or(Error::NoFeasibleProfile)?;
    Ok(Assignment {
        index,
        exact: size == disclosed.len(),
    })
}

/// Profile withholding exactly what `disclosure` omits.
pub fn profile_for_disclosure(disclosure: &Disclosure, features: &FeatureCatalog) -> Result<Profile> {
    let disclosed = disclosure.disclosed();
    let redacted: Vec<usize> = (0..features.dim()).filter(|i| !disclosed.contains(i)).collect();
    let names: Vec<&str> = disclosed.iter().map(|&i| features.features[i].name.as_str()).collect();
    let name = format!("Custom: discloses {}", names.join(", "));
    let slug = format!("custom-{}", names.join("-"));
    Profile::from_features(&name, &slug, redacted, features.dim())
}

/// Return the bundle trained for exactly this disclosure, training and
/// appending one if none exists yet. `&mut` keeps appends single-writer.
pub fn train_on_demand(
    set: &mut BundleSet,
    train: &Cohort,
    valid: &Cohort,
    disclosure: &Disclosure,
    config: &DistillationConfig,
) -> Result<(usize, bool)> {
    let profile = profile_for_disclosure(disclosure, &set.catalog)?;
    if let Some(i) = set
        .bundles
        .iter()
        .position(|b| b.profile.redacted_features == profile.redacted_features)
    {
        return Ok((i, false));
    }
    let outcome = sweep_lambda(train, valid, &profile, config, None)?;
    set.bundles.push(outcome.best);
    Ok((set.bundles.len() - 1, true))
}
