use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::SyntheticSpec;
use crate::distillation::{DistillationConfig, PrivilegedInputs};
use crate::error::{Error, Result};
use crate::evaluation::{run_seeds, StudyConfig};
use crate::feature_selection::BaeConfig;
use crate::models::TrainConfig;

pub const RUN_CONFIG_FILE: &str = "run_config.json";

/// Effective settings of one command, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub runs: usize,
    pub split_ratio: f64,
    pub lambda_grid: Vec<f64>,
    /// Profile names or slugs; `all` selects the default catalog.
    pub profiles: Vec<String>,
    /// Optional feature-selection result restricting the catalog.
    pub features: Option<PathBuf>,
    pub train: TrainConfig,
    pub privileged_inputs: PrivilegedInputs,
    pub bae: BaeConfig,
    pub synthetic: Option<SyntheticSpec>,
    /// `prepare` also writes encoded cohorts.
    #[serde(default)]
    pub dump_encoded: bool,
}

impl RunConfig {
    pub fn new(command: &str, out: PathBuf) -> Self {
        Self {
            command: command.to_string(),
            data: None,
            schema: None,
            out,
            seed: 0,
            runs: 1,
            split_ratio: 0.65,
            lambda_grid: crate::distillation::default_lambda_grid(),
            profiles: vec!["all".into()],
            features: None,
            train: TrainConfig::default(),
            privileged_inputs: PrivilegedInputs::AllFeatures,
            bae: BaeConfig::default(),
            synthetic: None,
            dump_encoded: false,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn write(&self) -> Result<()> {
        let path = self.out.join(RUN_CONFIG_FILE);
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn data_paths(&self) -> Result<(&Path, &Path)> {
        match (&self.data, &self.schema) {
            (Some(d), Some(s)) => Ok((d, s)),
            _ => Err(Error::InvalidArgument(format!(
                "`{}` needs --data and --schema",
                self.command
            ))),
        }
    }

    /// Distillation settings for a single split derived from `seed`.
    pub fn distillation(&self) -> DistillationConfig {
        let (_, train_seed) = run_seeds(self.seed, 0);
        DistillationConfig {
            lambda_grid: self.lambda_grid.clone(),
            privileged_inputs: self.privileged_inputs,
            train: self.train.with_seed(train_seed),
            ..Default::default()
        }
    }

    pub fn study(&self) -> StudyConfig {
        StudyConfig {
            split_ratio: self.split_ratio,
            runs: self.runs,
            base_seed: self.seed,
            distillation: DistillationConfig {
                lambda_grid: self.lambda_grid.clone(),
                privileged_inputs: self.privileged_inputs,
                train: self.train.clone(),
                ..Default::default()
            },
        }
    }
}

/// `start:stop:step` (inclusive, values rounded to 1e-10) or a comma list.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidArgument(format!("cannot parse lambda grid `{text}`"));
    let number = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let grid = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let (start, stop, step) = (number(parts[0])?, number(parts[1])?, number(parts[2])?);
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| ((start + i as f64 * step) * 1e10).round() / 1e10)
            .collect()
    } else {
        text.split(',').map(number).collect::<Result<Vec<_>>>()?
    };
    if grid.is_empty() {
        return Err(bad());
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_forms() {
        let g = parse_grid("0:1:0.1").unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[3], 0.3);
        assert_eq!(g[10], 1.0);
        assert_eq!(parse_grid("0,0.5,1").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_grid("0.2:0.2:0.1").unwrap(), vec![0.2]);
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("0:1:0").is_err());
        assert!(parse_grid("a,b").is_err());
    }

    #[test]
    fn config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::new("train", dir.path().to_path_buf());
        c.seed = 42;
        c.write().unwrap();
        assert_eq!(RunConfig::load(&dir.path().join(RUN_CONFIG_FILE)).unwrap(), c);
    }
}
