//! Regression cores: closed-form least squares and a small ReLU network.

pub(crate) mod bits;
mod format;
mod linear;
mod mlp;
mod train;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{config_digest, SavedModel, MODEL_FORMAT_VERSION};
pub(crate) use linear::CenteredMoments;
pub use linear::{fit_least_squares, fit_least_squares_damped, LinearModel, LEAST_SQUARES_DAMPING};
pub use mlp::{MlpGradient, MlpModel, MlpShape, DEFAULT_HIDDEN};
pub use train::{holdout_split, train_mlp, Objective, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RegressionModel {
    Linear(LinearModel),
    Mlp(MlpModel),
}

impl RegressionModel {
    pub fn input_dim(&self) -> usize {
        match self {
            RegressionModel::Linear(m) => m.dim(),
            RegressionModel::Mlp(m) => m.input_dim(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        match self {
            RegressionModel::Linear(m) => m.predict(x),
            RegressionModel::Mlp(m) => m.forward(x),
        }
    }

    pub fn predict_rows(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let x = x.as_standard_layout();
        let flat = x.as_slice().expect("standard layout");
        let d = self.input_dim().max(1);
        Ok(match self {
            RegressionModel::Linear(m) => flat.chunks(d).map(|r| m.predict_unchecked(r)).collect(),
            RegressionModel::Mlp(m) => flat.chunks(d).map(|r| m.forward_unchecked(r)).collect(),
        })
    }

    /// Structural checks for models read from disk.
    pub fn validate(&self) -> Result<()> {
        let finite = match self {
            RegressionModel::Linear(m) => m.alpha.iter().all(|v| v.is_finite()) && m.beta.is_finite(),
            RegressionModel::Mlp(m) => {
                if m.params.len() != m.shape.len() || m.shape.hidden == 0 || m.shape.input_dim == 0 {
                    return Err(Error::ModelFormat(format!(
                        "MLP shape {}x{} needs {} parameters, found {}",
                        m.shape.hidden,
                        m.shape.input_dim,
                        m.shape.len(),
                        m.params.len()
                    )));
                }
                m.all_finite()
            }
        };
        if !finite {
            return Err(Error::ModelFormat("model has non-finite parameters".into()));
        }
        Ok(())
    }
}

impl From<LinearModel> for RegressionModel {
    fn from(m: LinearModel) -> Self {
        RegressionModel::Linear(m)
    }
}

impl From<MlpModel> for RegressionModel {
    fn from(m: MlpModel) -> Self {
        RegressionModel::Mlp(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_predict_interface() {
        let lin: RegressionModel = LinearModel {
            alpha: vec![1.0, -1.0],
            beta: 1.0,
        }
        .into();
        let mlp: RegressionModel = MlpModel::from_parts(&[1.0, 0.0], &[0.0], &[2.0], 1.0).unwrap().into();
        let x = array![[2.0, 2.0], [3.0, 0.0]];
        assert_eq!(lin.predict_rows(x.view()).unwrap(), vec![1.0, 4.0]);
        assert_eq!(mlp.predict_rows(x.view()).unwrap(), vec![5.0, 7.0]);
        assert!(lin.predict_rows(array![[1.0]].view()).is_err());
    }

    #[test]
    fn json_is_bit_faithful() {
        let m: RegressionModel = MlpModel::new(3, 4, 11).unwrap().into();
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"kind\":\"mlp\""));
        let back: RegressionModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        back.validate().unwrap();
    }

    #[test]
    fn validate_catches_truncated_params() {
        let mut m = MlpModel::new(2, 2, 0).unwrap();
        m.params.pop();
        assert!(RegressionModel::Mlp(m).validate().is_err());
    }
}
