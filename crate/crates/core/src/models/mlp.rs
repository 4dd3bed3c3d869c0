//! One-hidden-layer ReLU regressor with a linear output.
//!
//! Parameters live in one flat buffer laid out as `[W1 | b1 | w2 | b2]`,
//! with `W1` row-major (`hidden x input_dim`). Gradients share the layout.

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input_dim: usize,
    pub hidden: usize,
}

impl MlpShape {
    pub fn len(&self) -> usize {
        self.hidden * self.input_dim + 2 * self.hidden + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn b1_start(&self) -> usize {
        self.hidden * self.input_dim
    }

    fn w2_start(&self) -> usize {
        self.b1_start() + self.hidden
    }

    fn b2_index(&self) -> usize {
        self.w2_start() + self.hidden
    }
}

macro_rules! layout_accessors {
    ($field:ident) => {
        pub fn w1(&self) -> &[f64] {
            &self.$field[..self.shape.b1_start()]
        }
        pub fn b1(&self) -> &[f64] {
            &self.$field[self.shape.b1_start()..self.shape.w2_start()]
        }
        pub fn w2(&self) -> &[f64] {
            &self.$field[self.shape.w2_start()..self.shape.b2_index()]
        }
        pub fn b2(&self) -> f64 {
            self.$field[self.shape.b2_index()]
        }
        /// Row `k` of `W1`.
        pub fn w1_row(&self, k: usize) -> &[f64] {
            let d = self.shape.input_dim;
            &self.$field[k * d..(k + 1) * d]
        }
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub shape: MlpShape,
    #[serde(with = "super::bits::vec")]
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub shape: MlpShape,
    pub values: Vec<f64>,
}

impl MlpGradient {
    layout_accessors!(values);

    fn zeros(shape: MlpShape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.len()],
        }
    }
}

impl MlpModel {
    layout_accessors!(params);

    /// Glorot-uniform weights, zero biases.
    pub fn new(input_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::InvalidArgument(format!(
                "MLP needs input_dim >= 1 and hidden >= 1, got {input_dim} and {hidden}"
            )));
        }
        let shape = MlpShape { input_dim, hidden };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; shape.len()];
        let bound1 = (6.0 / (input_dim + hidden) as f64).sqrt();
        for p in &mut params[..shape.b1_start()] {
            *p = rng.random_range(-bound1..=bound1);
        }
        let bound2 = (6.0 / (hidden + 1) as f64).sqrt();
        for p in &mut params[shape.w2_start()..shape.b2_index()] {
            *p = rng.random_range(-bound2..=bound2);
        }
        Ok(Self { shape, params })
    }

    pub fn from_parts(w1: &[f64], b1: &[f64], w2: &[f64], b2: f64) -> Result<Self> {
        let hidden = b1.len();
        if hidden == 0 || w2.len() != hidden || !w1.len().is_multiple_of(hidden) || w1.is_empty() {
            return Err(Error::InvalidArgument("inconsistent MLP parameter shapes".into()));
        }
        let shape = MlpShape {
            input_dim: w1.len() / hidden,
            hidden,
        };
        let mut params = Vec::with_capacity(shape.len());
        params.extend_from_slice(w1);
        params.extend_from_slice(b1);
        params.extend_from_slice(w2);
        params.push(b2);
        Ok(Self { shape, params })
    }

    pub fn input_dim(&self) -> usize {
        self.shape.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.shape.hidden
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.shape.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.shape.input_dim,
                got: x.len(),
            });
        }
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> f64 {
        let b1 = self.b1();
        let w2 = self.w2();
        let mut out = self.b2();
        for k in 0..self.shape.hidden {
            let pre = dot(self.w1_row(k), x) + b1[k];
            if pre > 0.0 {
                out += w2[k] * pre;
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Gradient of the batch mean of `loss_derivative`-driven losses.
    ///
    /// `dloss(i, pred)` returns the derivative of row `i`'s loss with respect
    /// to the prediction. The ReLU derivative at exactly zero is taken as 0.
    pub(crate) fn accumulate_gradient<F>(
        &self,
        x: &[f64],
        rows: &[usize],
        mut dloss: F,
        grad: &mut [f64],
        hidden_buf: &mut [f64],
    ) where
        F: FnMut(usize, f64) -> f64,
    {
        let d = self.shape.input_dim;
        let h = self.shape.hidden;
        let (b1_start, w2_start, b2_index) = (self.shape.b1_start(), self.shape.w2_start(), self.shape.b2_index());
        grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = 1.0 / rows.len() as f64;
        let b1 = self.b1();
        let w2 = self.w2();
        for &i in rows {
            let xi = &x[i * d..(i + 1) * d];
            let mut pred = self.b2();
            for k in 0..h {
                let pre = dot(self.w1_row(k), xi) + b1[k];
                hidden_buf[k] = pre;
                if pre > 0.0 {
                    pred += w2[k] * pre;
                }
            }
            let delta = dloss(i, pred) * scale;
            grad[b2_index] += delta;
            for k in 0..h {
                let pre = hidden_buf[k];
                if pre > 0.0 {
                    grad[w2_start + k] += delta * pre;
                    let back = delta * w2[k];
                    grad[b1_start + k] += back;
                    for (g, v) in grad[k * d..(k + 1) * d].iter_mut().zip(xi) {
                        *g += back * v;
                    }
                }
            }
        }
    }

    /// Exact gradient of the batch mean squared error against `targets`.
    pub fn gradient(&self, x: ArrayView2<f64>, targets: &[f64]) -> Result<MlpGradient> {
        let (n, d) = x.dim();
        if n == 0 {
            return Err(Error::InvalidArgument("gradient of an empty batch".into()));
        }
        if d != self.shape.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.shape.input_dim,
                got: d,
            });
        }
        if targets.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: targets.len(),
            });
        }
        let x = x.as_standard_layout();
        let flat = x.as_slice().expect("standard layout");
        let rows: Vec<usize> = (0..n).collect();
        let mut grad = MlpGradient::zeros(self.shape);
        let mut buf = vec![0.0; self.shape.hidden];
        self.accumulate_gradient(
            flat,
            &rows,
            |i, pred| 2.0 * (pred - targets[i]),
            &mut grad.values,
            &mut buf,
        );
        Ok(grad)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = MlpModel::new(33, 32, 5).unwrap();
        assert_eq!(a, MlpModel::new(33, 32, 5).unwrap());
        assert_ne!(a, MlpModel::new(33, 32, 6).unwrap());
        assert_eq!(a.w1().len(), 32 * 33);
        assert_eq!(a.w2().len(), 32);
        let bound = (6.0f64 / 65.0).sqrt();
        assert!(a.w1().iter().all(|w| w.abs() <= bound));
        assert!(a.b1().iter().all(|&b| b == 0.0));
        assert_eq!(a.b2(), 0.0);
        assert!(MlpModel::new(0, 4, 1).is_err());
    }

    #[test]
    fn forward_examples() {
        let zero = MlpModel::from_parts(&[0.0; 6], &[0.0; 3], &[0.0; 3], 0.0).unwrap();
        assert_eq!(zero.forward(&[1.0, -4.0]).unwrap(), 0.0);
        let dead = MlpModel::from_parts(&[1.0], &[-5.0], &[1.0], 0.0).unwrap();
        assert_eq!(dead.forward(&[3.0]).unwrap(), 0.0);
        let live = MlpModel::from_parts(&[1.0], &[0.0], &[2.0], 1.0).unwrap();
        assert_eq!(live.forward(&[3.0]).unwrap(), 7.0);
        assert!(matches!(
            live.forward(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dead_layer_gradient_hits_only_output_bias() {
        let m = MlpModel::from_parts(&[0.0; 2], &[0.0; 2], &[0.0; 2], 0.0).unwrap();
        let g = m.gradient(array![[1.0]].view(), &[4.0]).unwrap();
        assert_eq!(g.b2(), -8.0);
        assert!(g.w1().iter().chain(g.w2()).chain(g.b1()).all(|&v| v == 0.0));
    }

    #[test]
    fn identical_rows_match_single_row() {
        let m = MlpModel::new(3, 4, 9).unwrap();
        let one = m.gradient(array![[0.3, -1.2, 0.8]].view(), &[2.0]).unwrap();
        let many = m
            .gradient(
                array![[0.3, -1.2, 0.8], [0.3, -1.2, 0.8], [0.3, -1.2, 0.8]].view(),
                &[2.0, 2.0, 2.0],
            )
            .unwrap();
        for (a, b) in one.values.iter().zip(&many.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_batch_is_an_error() {
        let m = MlpModel::new(2, 2, 0).unwrap();
        let x = ndarray::Array2::<f64>::zeros((0, 2));
        assert!(m.gradient(x.view(), &[]).is_err());
    }
}
