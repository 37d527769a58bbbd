//! Dynamic assessment and erasure of prominent abnormal segments.
//!
//! For each abnormal video the cosine similarity between its highest- and
//! lowest-scored raw segments is compared with the mean of the same quantity over
//! the batch's normal videos. A video whose similarity does not exceed that mean is
//! judged incomplete and every segment scored above `delta` is zeroed.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DELTA: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EraseMode {
    /// Erase only videos whose completeness is not positive.
    #[default]
    Dynamic,
    /// Erase every abnormal video (ablation without assessment).
    Static,
    /// No erase pass at all.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EraseDecision {
    pub video_id: String,
    pub t_h: usize,
    pub t_l: usize,
    pub sim: f64,
    pub completeness: f64,
    pub era_m: u8,
    pub erased_indices: Vec<usize>,
    pub delta: f64,
    /// Set when a compared row had zero norm and `sim` fell back to 0.
    pub degenerate: bool,
}

/// `(argmax, argmin)` with ties going to the smallest index.
pub fn extreme_indices(scores: ArrayView1<'_, f64>) -> Result<(usize, usize)> {
    if scores.is_empty() {
        return Err(Error::Domain("extreme indices of empty score vector".into()));
    }
    let (mut hi, mut lo) = (0, 0);
    for (t, &v) in scores.iter().enumerate() {
        if v > scores[hi] {
            hi = t;
        }
        if v < scores[lo] {
            lo = t;
        }
    }
    Ok((hi, lo))
}

/// Cosine similarity; `(0.0, true)` if either vector has zero norm.
pub fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> (f64, bool) {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return (0.0, true);
    }
    ((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0), false)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub value: f64,
    pub degenerate: bool,
}

/// Cosine similarity of raw rows `t_h` and `t_l`.
pub fn segment_similarity(x: ArrayView2<'_, f64>, t_h: usize, t_l: usize) -> Result<Similarity> {
    if t_h >= x.nrows() || t_l >= x.nrows() {
        return Err(Error::Shape(format!("index out of range for {} segments", x.nrows())));
    }
    let (value, degenerate) = cosine(x.row(t_h), x.row(t_l));
    if degenerate {
        log::debug!("zero-norm segment in similarity ({t_h}, {t_l}); using 0");
    }
    Ok(Similarity { value, degenerate })
}

pub fn completeness(sim_abnormal: f64, normal_sims: &[f64]) -> Result<f64> {
    if normal_sims.is_empty() {
        return Err(Error::Domain("completeness needs at least one normal video".into()));
    }
    let mean = normal_sims.iter().sum::<f64>() / normal_sims.len() as f64;
    Ok(sim_abnormal - mean)
}

/// Erase-memory bit: 0 when completeness is strictly positive.
pub fn erase_memory(completeness: f64) -> u8 {
    if completeness > 0.0 {
        0
    } else {
        1
    }
}

/// Zeroes rows with score strictly above `delta` when `era_m == 1`.
pub fn erase(x: ArrayView2<'_, f64>, scores: ArrayView1<'_, f64>, era_m: u8, delta: f64) -> Result<(Array2<f64>, Vec<usize>)> {
    if x.nrows() != scores.len() {
        return Err(Error::Shape(format!("{} rows vs {} scores", x.nrows(), scores.len())));
    }
    let mut out = x.to_owned();
    if era_m == 0 {
        return Ok((out, Vec::new()));
    }
    let erased: Vec<usize> = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > delta)
        .map(|(t, _)| t)
        .collect();
    for &t in &erased {
        out.row_mut(t).fill(0.0);
    }
    Ok((out, erased))
}

#[derive(Debug, Clone, Copy)]
pub struct ScoredVideo<'a> {
    pub video_id: &'a str,
    pub features: ArrayView2<'a, f64>,
    pub scores: ArrayView1<'a, f64>,
}

#[derive(Debug, Clone, Default)]
pub struct BatchErasure {
    pub erased: Vec<Array2<f64>>,
    pub decisions: Vec<EraseDecision>,
    pub normal_mean_sim: f64,
}

impl BatchErasure {
    pub fn erased_videos(&self) -> usize {
        self.decisions.iter().filter(|d| !d.erased_indices.is_empty()).count()
    }

    pub fn mean_erased_segments(&self) -> f64 {
        if self.decisions.is_empty() {
            return 0.0;
        }
        self.decisions.iter().map(|d| d.erased_indices.len()).sum::<usize>() as f64 / self.decisions.len() as f64
    }
}

/// Runs assessment and erasure over a batch. Normal videos are only read.
pub fn apply_batch(abnormal: &[ScoredVideo<'_>], normal: &[ScoredVideo<'_>], delta: f64, mode: EraseMode) -> Result<BatchErasure> {
    if abnormal.is_empty() {
        return Ok(BatchErasure::default());
    }
    if mode == EraseMode::None {
        return Ok(BatchErasure {
            erased: abnormal.iter().map(|v| v.features.to_owned()).collect(),
            ..BatchErasure::default()
        });
    }
    let normal_sims: Vec<f64> = normal
        .iter()
        .map(|v| {
            let (h, l) = extreme_indices(v.scores)?;
            Ok(segment_similarity(v.features, h, l)?.value)
        })
        .collect::<Result<_>>()?;
    let normal_mean = -completeness(0.0, &normal_sims)?;

    let mut out = BatchErasure {
        erased: Vec::with_capacity(abnormal.len()),
        decisions: Vec::with_capacity(abnormal.len()),
        normal_mean_sim: normal_mean,
    };
    for v in abnormal {
        let (t_h, t_l) = extreme_indices(v.scores)?;
        let sim = segment_similarity(v.features, t_h, t_l)?;
        let comp = completeness(sim.value, &normal_sims)?;
        let era_m = match mode {
            EraseMode::Static => 1,
            _ => erase_memory(comp),
        };
        let (x_e, erased_indices) = erase(v.features, v.scores, era_m, delta)?;
        out.erased.push(x_e);
        out.decisions.push(EraseDecision {
            video_id: v.video_id.to_string(),
            t_h,
            t_l,
            sim: sim.value,
            completeness: comp,
            era_m,
            erased_indices,
            delta,
            degenerate: sim.degenerate,
        });
    }
    Ok(out)
}
