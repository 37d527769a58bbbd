//! MIL ranking loss on scores, local-variation ranking loss on features, and the
//! weighted two-pass total. Losses come with analytic (sub)gradients; each max
//! routes its gradient to the first index attaining it.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1e-4,
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub l_score_u: f64,
    pub l_fea_u: f64,
    pub l_u: f64,
    pub l_score_e: f64,
    pub l_fea_e: f64,
    pub l_e: f64,
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [
            self.l_score_u,
            self.l_fea_u,
            self.l_u,
            self.l_score_e,
            self.l_fea_e,
            self.l_e,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn first_argmax(values: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best
}

/// `max(0, 1 - max(abnormal) + max(normal))`.
pub fn score_ranking_loss(abnormal: ArrayView1<'_, f64>, normal: ArrayView1<'_, f64>) -> Result<f64> {
    let (_, a) = first_argmax(abnormal.iter().copied()).ok_or_else(|| Error::Domain("empty abnormal scores".into()))?;
    let (_, n) = first_argmax(normal.iter().copied()).ok_or_else(|| Error::Domain("empty normal scores".into()))?;
    Ok((1.0 - a + n).max(0.0))
}

/// `1 - cos(x_{t-k}, x_t)` for `t = k..T` (0-based), `k = T/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalVariation {
    pub values: Vec<f64>,
    /// Pairs that hit a zero-norm row and were assigned variation 1.
    pub degenerate: Vec<bool>,
}

impl LocalVariation {
    pub fn offset(&self) -> usize {
        self.values.len()
    }
}

pub fn local_variation(xhat: ArrayView2<'_, f64>) -> Result<LocalVariation> {
    let t = xhat.nrows();
    if t == 0 || !t.is_multiple_of(2) {
        return Err(Error::Domain(format!("local variation needs an even, positive length, got {t}")));
    }
    let k = t / 2;
    let mut values = Vec::with_capacity(k);
    let mut degenerate = Vec::with_capacity(k);
    for i in k..t {
        let (c, bad) = crate::erasing::cosine(xhat.row(i - k), xhat.row(i));
        values.push(1.0 - c);
        degenerate.push(bad);
    }
    if degenerate.iter().any(|d| *d) {
        log::debug!("zero-norm row in local variation");
    }
    Ok(LocalVariation { values, degenerate })
}

/// `max(0, 1 - max var(abnormal) + max var(normal))`.
pub fn feature_variation_loss(abnormal: ArrayView2<'_, f64>, normal: ArrayView2<'_, f64>) -> Result<f64> {
    let va = local_variation(abnormal)?;
    let vn = local_variation(normal)?;
    let (_, a) = first_argmax(va.values.iter().copied()).expect("non-empty");
    let (_, n) = first_argmax(vn.values.iter().copied()).expect("non-empty");
    Ok((1.0 - a + n).max(0.0))
}

/// Scores and aggregated features of one video in one pass.
#[derive(Debug, Clone, Copy)]
pub struct VideoOutput<'a> {
    pub scores: ArrayView1<'a, f64>,
    pub features: ArrayView2<'a, f64>,
}

/// One forward pass over a batch; `abnormal[i]` is paired with `normal[i]`.
#[derive(Debug, Clone, Default)]
pub struct PassOutputs<'a> {
    pub abnormal: Vec<VideoOutput<'a>>,
    pub normal: Vec<VideoOutput<'a>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoGrad {
    pub d_scores: Array1<f64>,
    pub d_features: Array2<f64>,
}

impl VideoGrad {
    fn zeros(v: &VideoOutput<'_>) -> Self {
        Self {
            d_scores: Array1::zeros(v.scores.len()),
            d_features: Array2::zeros(v.features.raw_dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassGrads {
    pub abnormal: Vec<VideoGrad>,
    pub normal: Vec<VideoGrad>,
}

/// Mean over pairs of the two hinge losses, and their gradients scaled so that the
/// caller's total is `score_scale * l_score + fea_scale * l_fea`.
pub fn pass_loss(pass: &PassOutputs<'_>, score_scale: f64, fea_scale: f64) -> Result<(f64, f64, PassGrads)> {
    let pairs = pass.abnormal.len();
    if pairs == 0 || pass.normal.len() != pairs {
        return Err(Error::Dataset(format!(
            "batch must pair abnormal and normal videos one to one ({} vs {})",
            pairs,
            pass.normal.len()
        )));
    }
    let inv = 1.0 / pairs as f64;
    let mut grads = PassGrads {
        abnormal: pass.abnormal.iter().map(VideoGrad::zeros).collect(),
        normal: pass.normal.iter().map(VideoGrad::zeros).collect(),
    };
    let (mut score_sum, mut fea_sum) = (0.0, 0.0);

    for (i, (a, n)) in pass.abnormal.iter().zip(&pass.normal).enumerate() {
        let (ia, ma) = first_argmax(a.scores.iter().copied()).ok_or_else(|| Error::Domain("empty scores".into()))?;
        let (inn, mn) = first_argmax(n.scores.iter().copied()).ok_or_else(|| Error::Domain("empty scores".into()))?;
        let hinge = 1.0 - ma + mn;
        if hinge > 0.0 {
            score_sum += hinge;
            grads.abnormal[i].d_scores[ia] -= score_scale * inv;
            grads.normal[i].d_scores[inn] += score_scale * inv;
        }

        let va = local_variation(a.features)?;
        let vn = local_variation(n.features)?;
        let (ja, xa) = first_argmax(va.values.iter().copied()).expect("non-empty");
        let (jn, xn) = first_argmax(vn.values.iter().copied()).expect("non-empty");
        let hinge = 1.0 - xa + xn;
        if hinge > 0.0 {
            fea_sum += hinge;
            // dL/dvar = -c for the abnormal argmax, +c for the normal one; var = 1 - cos
            let c = fea_scale * inv;
            if !va.degenerate[ja] {
                add_cosine_grad(a.features, va.offset(), ja, c, &mut grads.abnormal[i].d_features);
            }
            if !vn.degenerate[jn] {
                add_cosine_grad(n.features, vn.offset(), jn, -c, &mut grads.normal[i].d_features);
            }
        }
    }
    Ok((score_sum * inv, fea_sum * inv, grads))
}

/// Adds `coef * d cos(x_{t-k}, x_t)` for pair `j` (row `t = k + j`) into `out`.
fn add_cosine_grad(x: ArrayView2<'_, f64>, k: usize, j: usize, coef: f64, out: &mut Array2<f64>) {
    let a = x.row(j);
    let b = x.row(j + k);
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    let cos = a.dot(&b) / (na * nb);
    let da = (&b / (na * nb) - &a * (cos / (na * na))) * coef;
    let db = (&a / (na * nb) - &b * (cos / (nb * nb))) * coef;
    let mut ra = out.row_mut(j);
    ra += &da;
    let mut rb = out.row_mut(j + k);
    rb += &db;
}

/// Total loss of the un-erased pass and (optionally) the erased pass, with
/// gradients of `total` with respect to every video's scores and features.
pub fn combined_loss_with_grads(
    unerased: &PassOutputs<'_>,
    erased: Option<&PassOutputs<'_>>,
    w: &LossWeights,
) -> Result<(LossReport, PassGrads, Option<PassGrads>)> {
    let (l_score_u, l_fea_u, grads_u) = pass_loss(unerased, w.lambda1 * w.alpha1, w.lambda1 * w.alpha2)?;
    let l_u = w.alpha1 * l_score_u + w.alpha2 * l_fea_u;
    let (l_score_e, l_fea_e, grads_e) = match erased {
        Some(pass) => {
            let (s, f, g) = pass_loss(pass, w.lambda2 * w.alpha1, w.lambda2 * w.alpha2)?;
            (s, f, Some(g))
        }
        None => (0.0, 0.0, None),
    };
    let l_e = w.alpha1 * l_score_e + w.alpha2 * l_fea_e;
    let total = w.lambda1 * l_u + w.lambda2 * l_e;
    let report = LossReport {
        l_score_u,
        l_fea_u,
        l_u,
        l_score_e,
        l_fea_e,
        l_e,
        total,
    };
    Ok((report, grads_u, grads_e))
}

pub fn combined_loss(unerased: &PassOutputs<'_>, erased: Option<&PassOutputs<'_>>, w: &LossWeights) -> Result<LossReport> {
    Ok(combined_loss_with_grads(unerased, erased, w)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ranking_loss_examples() {
        let l = |a: Array1<f64>, n: Array1<f64>| score_ranking_loss(a.view(), n.view()).unwrap();
        assert_eq!(l(array![0.2, 1.0], array![0.0, 0.0]), 0.0);
        assert!((l(array![0.3, 0.1], array![0.7, 0.2]) - 1.4).abs() < 1e-12);
        assert_eq!(l(array![0.4, 0.6], array![0.4, 0.6]), 1.0);
        assert!(score_ranking_loss(Array1::zeros(0).view(), array![0.1].view()).is_err());
    }

    #[test]
    fn variation_examples() {
        let same = Array2::from_shape_fn((6, 3), |(_, j)| j as f64 + 1.0);
        assert!(local_variation(same.view()).unwrap().values.iter().all(|v| v.abs() < 1e-12));

        let mut anti = Array2::from_shape_fn((4, 2), |(i, j)| (i * 2 + j) as f64 + 1.0);
        for i in 0..2 {
            let r = anti.row(i).to_owned();
            anti.row_mut(i + 2).assign(&(-r));
        }
        assert!(local_variation(anti.view()).unwrap().values.iter().all(|v| (v - 2.0).abs() < 1e-12));

        assert!(local_variation(Array2::zeros((5, 2)).view()).is_err());

        let mut zero = Array2::ones((4, 2));
        zero.row_mut(3).fill(0.0);
        let lv = local_variation(zero.view()).unwrap();
        assert!(lv.values[0].abs() < 1e-15 && lv.values[1] == 1.0, "{:?}", lv.values);
        assert_eq!(lv.degenerate, vec![false, true]);
    }

    #[test]
    fn feature_loss_examples() {
        let flat = Array2::from_shape_fn((4, 2), |(_, j)| j as f64 + 1.0);
        assert_eq!(feature_variation_loss(flat.view(), flat.view()).unwrap(), 1.0);

        let mut anti = flat.clone();
        anti.row_mut(2).mapv_inplace(|v| -v);
        anti.row_mut(3).mapv_inplace(|v| -v);
        assert_eq!(feature_variation_loss(anti.view(), flat.view()).unwrap(), 0.0);
    }

    #[test]
    fn zero_alphas_annihilate() {
        let s = array![0.2, 0.4];
        let f = array![[1.0, 0.0], [0.0, 1.0]];
        let v = VideoOutput {
            scores: s.view(),
            features: f.view(),
        };
        let pass = PassOutputs {
            abnormal: vec![v],
            normal: vec![v],
        };
        let w = LossWeights {
            alpha1: 0.0,
            alpha2: 0.0,
            ..LossWeights::default()
        };
        let (r, g, _) = combined_loss_with_grads(&pass, Some(&pass), &w).unwrap();
        assert_eq!(r.total, 0.0);
        assert!(g.abnormal[0].d_scores.iter().all(|v| *v == 0.0));

        let r = combined_loss(&pass, Some(&pass), &LossWeights::default()).unwrap();
        assert_eq!(r.l_e, r.l_u);
    }

    #[test]
    fn unpaired_batch_is_rejected() {
        let s = array![0.2, 0.4];
        let f = array![[1.0, 0.0], [0.0, 1.0]];
        let v = VideoOutput {
            scores: s.view(),
            features: f.view(),
        };
        let pass = PassOutputs {
            abnormal: vec![v, v],
            normal: vec![v],
        };
        assert!(matches!(
            combined_loss(&pass, None, &LossWeights::default()),
            Err(Error::Dataset(_))
        ));
    }
}
