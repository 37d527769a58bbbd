//! Reference implementations used as test oracles.
//!
//! Everything here is written with plain loops over `Vec<Vec<f64>>` and shares no
//! code with the library beyond reading parameter values.

#![allow(dead_code)]

use denet::head::ScoringHead;
use denet::model::DeNet;
use denet::mstm::Mstm;
use denet::nn::{EncoderLayer, LayerNorm, Linear, MultiHeadAttention};
use denet::objectives::LossWeights;
use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(a: ArrayView2<'_, f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn from_mat(m: &Mat) -> Array2<f64> {
    let cols = m.first().map_or(0, Vec::len);
    Array2::from_shape_fn((m.len(), cols), |(i, j)| m[i][j])
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

// ---------------------------------------------------------------- dense layers

pub fn ref_linear(x: &Mat, l: &Linear) -> Mat {
    let (fan_in, fan_out) = l.weight.dim();
    x.iter()
        .map(|row| {
            assert_eq!(row.len(), fan_in);
            (0..fan_out)
                .map(|o| {
                    let mut acc = l.bias[o];
                    for (i, xi) in row.iter().enumerate() {
                        acc += xi * l.weight[[i, o]];
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

pub fn ref_layer_norm(x: &Mat, ln: &LayerNorm) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let denom = (var + 1e-5).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / denom * ln.gain[j] + ln.bias[j])
                .collect()
        })
        .collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn ref_gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn ref_attention(x: &Mat, mha: &MultiHeadAttention) -> Mat {
    let q = ref_linear(x, &mha.query);
    let k = ref_linear(x, &mha.key);
    let v = ref_linear(x, &mha.value);
    let n = x.len();
    let d = q[0].len();
    let hd = d / mha.heads;
    let mut context = vec![vec![0.0; d]; n];
    for h in 0..mha.heads {
        let cols = h * hd..(h + 1) * hd;
        for i in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (hd as f64).sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = w.iter().sum();
            for c in cols.clone() {
                context[i][c] = (0..n).map(|j| w[j] / z * v[j][c]).sum();
            }
        }
    }
    ref_linear(&context, &mha.output)
}

/// Post-norm encoder layer in evaluation mode.
pub fn ref_encoder(z: &Mat, layer: &EncoderLayer) -> Mat {
    let a = ref_attention(z, &layer.attention);
    let h = ref_layer_norm(&add(z, &a), &layer.norm1);
    let hidden: Mat = ref_linear(&h, &layer.fc1)
        .into_iter()
        .map(|r| r.into_iter().map(ref_gelu).collect())
        .collect();
    let m = ref_linear(&hidden, &layer.fc2);
    ref_layer_norm(&add(&h, &m), &layer.norm2)
}

// ---------------------------------------------------------------- MSTM

/// Window `j` of scale stride `k` is rows `j*k .. j*k+k` laid end to end.
pub fn ref_local_conv(x: &Mat, conv: &Linear, stride: usize) -> Mat {
    let windows: Mat = (0..x.len() / stride)
        .map(|j| (0..stride).flat_map(|r| x[j * stride + r].iter().copied()).collect())
        .collect();
    ref_linear(&windows, conv)
}

pub fn ref_align(x: &Mat, segments: usize) -> Mat {
    let repeat = segments / x.len();
    (0..segments).map(|t| x[t / repeat].clone()).collect()
}

pub fn ref_mstm(x: &Mat, mstm: &Mstm) -> Mat {
    let t = x.len();
    let mut concat: Mat = vec![Vec::new(); t];
    for branch in &mstm.branches {
        let local = ref_local_conv(x, &branch.conv, branch.stride);
        let z = add(&local, &to_mat(branch.position.view()));
        let global = ref_encoder(&z, &branch.encoder);
        for (row, aligned) in concat.iter_mut().zip(ref_align(&global, t)) {
            row.extend(aligned);
        }
    }
    ref_linear(&concat, &mstm.aggregate)
}

pub fn ref_scores(xhat: &Mat, head: &ScoringHead) -> Vec<f64> {
    let h1: Mat = ref_linear(xhat, &head.fc1)
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    let h2 = ref_linear(&h1, &head.fc2);
    ref_linear(&h2, &head.fc3)
        .into_iter()
        .map(|r| 1.0 / (1.0 + (-r[0]).exp()))
        .collect()
}

pub fn ref_forward(model: &DeNet, x: ArrayView2<'_, f64>) -> (Mat, Vec<f64>) {
    let xhat = ref_mstm(&to_mat(x), &model.mstm);
    let scores = ref_scores(&xhat, &model.head);
    (xhat, scores)
}

// ---------------------------------------------------------------- erasing and losses

pub fn ref_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// First maximum and first minimum by linear scan.
pub fn ref_extremes(s: &[f64]) -> (usize, usize) {
    let mut hi = 0;
    let mut lo = 0;
    for i in 1..s.len() {
        if s[i] > s[hi] {
            hi = i;
        }
        if s[i] < s[lo] {
            lo = i;
        }
    }
    (hi, lo)
}

/// `1 - cos(x[t-k], x[t])` for `t = k .. T-1`, with `k = T/2`.
pub fn ref_variation(x: &Mat) -> Vec<f64> {
    let k = x.len() / 2;
    (k..x.len()).map(|t| 1.0 - ref_cosine(&x[t - k], &x[t])).collect()
}

fn vmax(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

pub fn ref_hinge(a: &[f64], n: &[f64]) -> f64 {
    (1.0 - vmax(a) + vmax(n)).max(0.0)
}

/// `(mean score hinge, mean feature hinge)` over i-th abnormal / i-th normal pairs.
pub fn ref_pass_terms(abnormal: &[(Mat, Vec<f64>)], normal: &[(Mat, Vec<f64>)]) -> (f64, f64) {
    let n = abnormal.len() as f64;
    let mut ls = 0.0;
    let mut lf = 0.0;
    for ((xa, ya), (xn, yn)) in abnormal.iter().zip(normal) {
        ls += ref_hinge(ya, yn);
        lf += ref_hinge(&ref_variation(xa), &ref_variation(xn));
    }
    (ls / n, lf / n)
}

/// Total training loss with dropout disabled and erased inputs held fixed.
pub fn ref_total_loss(
    model: &DeNet,
    abnormal: &[Array2<f64>],
    normal: &[Array2<f64>],
    erased: Option<&[Array2<f64>]>,
    w: &LossWeights,
) -> f64 {
    let run = |xs: &[Array2<f64>]| -> Vec<(Mat, Vec<f64>)> { xs.iter().map(|x| ref_forward(model, x.view())).collect() };
    let outs_n = run(normal);
    let (s_u, f_u) = ref_pass_terms(&run(abnormal), &outs_n);
    let l_u = w.alpha1 * s_u + w.alpha2 * f_u;
    let l_e = match erased {
        Some(e) => {
            let (s_e, f_e) = ref_pass_terms(&run(e), &outs_n);
            w.alpha1 * s_e + w.alpha2 * f_e
        }
        None => 0.0,
    };
    w.lambda1 * l_u + w.lambda2 * l_e
}

// ---------------------------------------------------------------- metrics

/// Exhaustive pair count: wins plus half ties over all positive/negative pairs.
pub fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] == 0 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Rank of item `i` in descending order with ties broken by original index.
fn rank_of(scores: &[f64], i: usize) -> usize {
    1 + (0..scores.len())
        .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
        .count()
}

/// Mean over positives of (positives ranked at or above it) / (its rank).
/// Terms are added in rank order so the float sum is reproducible bit for bit.
pub fn brute_ap(scores: &[f64], labels: &[u8]) -> f64 {
    let positives: Vec<usize> = (0..scores.len()).filter(|&i| labels[i] != 0).collect();
    let mut terms: Vec<(usize, f64)> = positives
        .iter()
        .map(|&i| {
            let r = rank_of(scores, i);
            let hits = positives.iter().filter(|&&j| rank_of(scores, j) <= r).count();
            (r, hits as f64 / r as f64)
        })
        .collect();
    terms.sort_by_key(|&(r, _)| r);
    terms.iter().map(|&(_, p)| p).sum::<f64>() / positives.len() as f64
}

/// Random metric instance with both classes present and frequent ties.
pub fn random_metric_instance(rng: &mut ChaCha8Rng, max_len: usize) -> (Vec<f64>, Vec<u8>) {
    loop {
        let n = rng.random_range(2..=max_len);
        let levels = rng.random_range(2..=20);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
        if labels.contains(&0) && labels.contains(&1) {
            return (scores, labels);
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn array1(v: &[f64]) -> Array1<f64> {
    Array1::from(v.to_vec())
}
