//! Per-segment anomaly classifier: `D -> 512 -> 32 -> 1` with ReLU after the first
//! layer, dropout after layers one and two (training only) and a final sigmoid.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{apply_mask, dropout_mask, join, sigmoid, Linear, ParamMut, ParamRef, Parameterized};

pub const HIDDEN1: usize = 512;
pub const HIDDEN2: usize = 32;
pub const DEFAULT_DROPOUT: f64 = 0.6;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringHead {
    pub fc1: Linear,
    pub fc2: Linear,
    pub fc3: Linear,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    input: Array2<f64>,
    pre1: Array2<f64>,
    mask1: Option<Array2<f64>>,
    dropped1: Array2<f64>,
    mask2: Option<Array2<f64>>,
    dropped2: Array2<f64>,
    scores: Array1<f64>,
}

impl HeadCache {
    pub fn scores(&self) -> ArrayView1<'_, f64> {
        self.scores.view()
    }
}

impl ScoringHead {
    pub fn new(dim: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            fc1: Linear::new(dim, HIDDEN1, rng),
            fc2: Linear::new(HIDDEN1, HIDDEN2, rng),
            fc3: Linear::new(HIDDEN2, 1, rng),
            dropout,
        }
    }

    /// Evaluation-mode scores, one per row.
    pub fn score(&self, xhat: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.forward_train(xhat, None)?.0)
    }

    pub fn logits(&self, xhat: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        self.check(xhat)?;
        let h1 = self.fc1.forward(xhat).mapv(|v| v.max(0.0));
        let h2 = self.fc2.forward(h1.view());
        Ok(self.fc3.forward(h2.view()).remove_axis(Axis(1)))
    }

    fn check(&self, xhat: ArrayView2<'_, f64>) -> Result<()> {
        if xhat.ncols() != self.fc1.fan_in() {
            return Err(Error::Shape(format!(
                "classifier expects width {}, got {}",
                self.fc1.fan_in(),
                xhat.ncols()
            )));
        }
        Ok(())
    }

    pub fn forward_train(&self, xhat: ArrayView2<'_, f64>, mut rng: Option<&mut ChaCha8Rng>) -> Result<(Array1<f64>, HeadCache)> {
        self.check(xhat)?;
        let pre1 = self.fc1.forward(xhat);
        let mask1 = dropout_mask(pre1.dim(), self.dropout, rng.as_deref_mut());
        let dropped1 = apply_mask(pre1.mapv(|v| v.max(0.0)), mask1.as_ref());
        let pre2 = self.fc2.forward(dropped1.view());
        let mask2 = dropout_mask(pre2.dim(), self.dropout, rng);
        let dropped2 = apply_mask(pre2, mask2.as_ref());
        let logits = self.fc3.forward(dropped2.view());
        let scores = logits.column(0).mapv(sigmoid);
        let cache = HeadCache {
            input: xhat.to_owned(),
            pre1,
            mask1,
            dropped1,
            mask2,
            dropped2,
            scores: scores.clone(),
        };
        Ok((scores, cache))
    }

    /// Backpropagates `dL/dscores`; returns `dL/dxhat`.
    pub fn backward(&self, cache: &HeadCache, d_scores: ArrayView1<'_, f64>, grad: &mut ScoringHead) -> Array2<f64> {
        let mut d_logits = Array2::zeros((d_scores.len(), 1));
        Zip::from(d_logits.column_mut(0))
            .and(&d_scores)
            .and(&cache.scores)
            .for_each(|dl, &ds, &y| *dl = ds * y * (1.0 - y));
        let d_dropped2 = self.fc3.backward(cache.dropped2.view(), d_logits.view(), &mut grad.fc3);
        let d_pre2 = apply_mask(d_dropped2, cache.mask2.as_ref());
        let d_dropped1 = self.fc2.backward(cache.dropped1.view(), d_pre2.view(), &mut grad.fc2);
        let mut d_pre1 = apply_mask(d_dropped1, cache.mask1.as_ref());
        Zip::from(&mut d_pre1)
            .and(&cache.pre1)
            .for_each(|d, &p| {
                if p <= 0.0 {
                    *d = 0.0
                }
            });
        self.fc1.backward(cache.input.view(), d_pre1.view(), &mut grad.fc1)
    }
}

impl Parameterized for ScoringHead {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.fc1.params(&join(prefix, "fc1"), out);
        self.fc2.params(&join(prefix, "fc2"), out);
        self.fc3.params(&join(prefix, "fc3"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.fc1.params_mut(&join(prefix, "fc1"), out);
        self.fc2.params_mut(&join(prefix, "fc2"), out);
        self.fc3.params_mut(&join(prefix, "fc3"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn head(dim: usize) -> ScoringHead {
        ScoringHead::new(dim, DEFAULT_DROPOUT, &mut ChaCha8Rng::seed_from_u64(2))
    }

    #[test]
    fn widths_are_fixed() {
        let h = head(16);
        assert_eq!(h.fc1.weight.dim(), (16, 512));
        assert_eq!(h.fc2.weight.dim(), (512, 32));
        assert_eq!(h.fc3.weight.dim(), (32, 1));
    }

    #[test]
    fn zero_parameters_score_one_half() {
        let mut h = head(4);
        h.zero();
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i + j) as f64);
        assert!(h.score(x.view()).unwrap().iter().all(|&s| s == 0.5));
    }

    #[test]
    fn saturated_bias() {
        let mut h = head(4);
        h.zero();
        h.fc3.bias[0] = 20.0;
        let expected = 1.0 / (1.0 + (-20.0f64).exp());
        for s in h.score(Array2::ones((3, 4)).view()).unwrap() {
            assert!((s - expected).abs() < 1e-8);
            assert!(s < 1.0);
        }
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        assert!(matches!(head(4).score(Array2::zeros((2, 5)).view()), Err(Error::Shape(_))));
    }

    #[test]
    fn training_mode_uses_dropout() {
        let h = head(8);
        let x = Array2::from_shape_fn((6, 8), |(i, j)| ((i * 8 + j) as f64).cos());
        let eval = h.score(x.view()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (train, _) = h.forward_train(x.view(), Some(&mut rng)).unwrap();
        assert_ne!(eval, train);
        assert_eq!(eval, h.score(x.view()).unwrap());
    }
}
