//! Frame-level scoring and the two global metrics.
//!
//! Scores and labels of all test videos are concatenated in manifest order before
//! computing ROC-AUC (Mann-Whitney, ties count one half) and average precision
//! (rank-wise precision at each positive, stable order among tied scores).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::ArrayView1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{read_ground_truth, DatasetManifest, SegmentFeatures};
use crate::model::DeNet;

/// Frame `j` takes the score of segment `floor(j * T / frame_count)`.
pub fn frame_scores(segment_scores: ArrayView1<'_, f64>, frame_count: usize) -> Vec<f64> {
    let t = segment_scores.len();
    (0..frame_count)
        .map(|j| segment_scores[(j * t / frame_count).min(t - 1)])
        .collect()
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l != 0).count();
    Ok((pos, labels.len() - pos))
}

/// Area under the ROC curve as the normalised Mann-Whitney U statistic.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::Domain("ROC-AUC needs both positive and negative labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // twice the U statistic, kept integral so ties are exact
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut n) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] != 0 {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        twice_u += p * (2 * neg_below + n);
        neg_below += n;
        i = j;
    }
    Ok(twice_u as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// Mean over positives of the precision at that positive's rank.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = check_inputs(scores, labels)?;
    if pos == 0 {
        return Err(Error::Domain("average precision needs at least one positive label".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable: ties keep their original order
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &idx) in order.iter().enumerate() {
        if labels[idx] != 0 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / pos as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePrediction {
    pub video_id: String,
    pub frame_scores: Vec<f64>,
    pub gt: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub ap: f64,
    pub n_videos: usize,
    pub n_frames: usize,
}

#[derive(Debug, Clone)]
pub struct TestVideo {
    pub segments: SegmentFeatures,
    pub frame_count: usize,
    pub gt: Vec<u8>,
}

pub fn load_test_set(manifest: &DatasetManifest, segments: usize, scales: usize) -> Result<Vec<TestVideo>> {
    let feats = manifest.load_segments(segments, scales)?;
    manifest
        .entries
        .iter()
        .zip(feats)
        .map(|(entry, segs)| {
            let gt_path = entry
                .gt_path
                .as_ref()
                .ok_or_else(|| Error::Validation(format!("test row {:?} has no gt_path", entry.video_id)))?;
            Ok(TestVideo {
                segments: segs,
                frame_count: entry.frame_count,
                gt: read_ground_truth(gt_path, entry.frame_count)?,
            })
        })
        .collect()
}

/// Scores every video in evaluation mode and computes the global metrics.
pub fn evaluate(model: &DeNet, videos: &[TestVideo]) -> Result<(EvalReport, Vec<FramePrediction>)> {
    let predictions: Vec<FramePrediction> = videos
        .par_iter()
        .map(|v| {
            let seg = model.score(v.segments.x.view())?;
            Ok(FramePrediction {
                video_id: v.segments.video_id.clone(),
                frame_scores: frame_scores(seg.view(), v.frame_count),
                gt: v.gt.clone(),
            })
        })
        .collect::<Result<_>>()?;
    let report = report_for(&predictions)?;
    Ok((report, predictions))
}

pub fn report_for(predictions: &[FramePrediction]) -> Result<EvalReport> {
    let scores: Vec<f64> = predictions.iter().flat_map(|p| p.frame_scores.iter().copied()).collect();
    let labels: Vec<u8> = predictions.iter().flat_map(|p| p.gt.iter().copied()).collect();
    Ok(EvalReport {
        auc: roc_auc(&scores, &labels)?,
        ap: average_precision(&scores, &labels)?,
        n_videos: predictions.len(),
        n_frames: scores.len(),
    })
}

/// One `frame,score,gt` CSV per video under `dir`.
pub fn write_curves(dir: &Path, predictions: &[FramePrediction]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for p in predictions {
        let mut text = String::from("frame,score,gt\n");
        for (j, (s, g)) in p.frame_scores.iter().zip(&p.gt).enumerate() {
            let _ = writeln!(text, "{j},{s},{g}");
        }
        let path = dir.join(format!("{}.csv", p.video_id));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Score curve over shaded ground-truth intervals, one SVG per video.
pub fn write_plots(dir: &Path, predictions: &[FramePrediction]) -> Result<()> {
    const W: f64 = 640.0;
    const H: f64 = 200.0;
    const PAD: f64 = 20.0;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for p in predictions {
        let n = p.frame_scores.len().max(1);
        let x = |j: usize| PAD + (W - 2.0 * PAD) * j as f64 / n as f64;
        let y = |s: f64| H - PAD - (H - 2.0 * PAD) * s;
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
             <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
        );
        let mut j = 0;
        while j < p.gt.len() {
            if p.gt[j] == 0 {
                j += 1;
                continue;
            }
            let start = j;
            while j < p.gt.len() && p.gt[j] != 0 {
                j += 1;
            }
            let _ = writeln!(
                svg,
                "<rect x=\"{:.2}\" y=\"{PAD}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#f4b6b6\"/>",
                x(start),
                x(j) - x(start),
                H - 2.0 * PAD
            );
        }
        let points: Vec<String> = p
            .frame_scores
            .iter()
            .enumerate()
            .map(|(j, &s)| format!("{:.2},{:.2}", x(j), y(s)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"#1f4e9c\" stroke-width=\"1.5\" points=\"{}\"/>",
            points.join(" ")
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{PAD}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n\
             <text x=\"{PAD}\" y=\"14\" font-size=\"12\" font-family=\"sans-serif\">{2}</text>\n</svg>",
            H - PAD,
            W - PAD,
            p.video_id
        );
        let path = dir.join(format!("{}.svg", p.video_id));
        fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
