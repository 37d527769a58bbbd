//! Synthetic weakly-labelled datasets with frame-level ground truth.
//!
//! Every clip is `base + noise`. Anomalous segments add `separation * d_p`, where
//! `d_p` is a fixed random sign vector, so each coordinate moves by exactly
//! `separation`. When `gentle_separation` is set, every event after the first in a
//! video is "gentle": it moves along an independent sign vector `d_g` by the smaller
//! amount instead.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    write_feature_file, write_ground_truth, write_manifest, DatasetManifest, ManifestEntry, Split,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_train_normal: usize,
    pub n_train_abnormal: usize,
    pub n_test_normal: usize,
    pub n_test_abnormal: usize,
    /// Segments per video (T).
    pub segments: usize,
    pub dim: usize,
    pub clips_per_segment: usize,
    pub clip_len: usize,
    /// Anomalous interval length range in segments, inclusive.
    pub min_duration: usize,
    pub max_duration: usize,
    /// Events per abnormal video, inclusive.
    pub min_events: usize,
    pub max_events: usize,
    /// Per-coordinate mean shift of prominent anomalies.
    pub separation: f64,
    pub noise: f64,
    /// Standard deviation of the shared base mean.
    pub base_scale: f64,
    pub gentle_separation: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_train_normal: 100,
            n_train_abnormal: 100,
            n_test_normal: 25,
            n_test_abnormal: 25,
            segments: 32,
            dim: 16,
            clips_per_segment: 1,
            clip_len: 16,
            min_duration: 2,
            max_duration: 12,
            min_events: 1,
            max_events: 2,
            separation: 3.0,
            noise: 1.0,
            base_scale: 2.0,
            gentle_separation: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("segments", self.segments),
            ("dim", self.dim),
            ("clips_per_segment", self.clips_per_segment),
            ("clip_len", self.clip_len),
            ("min_duration", self.min_duration),
            ("min_events", self.min_events),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.max_duration < self.min_duration {
            return Err(Error::Config("max_duration < min_duration".into()));
        }
        if self.max_events < self.min_events {
            return Err(Error::Config("max_events < min_events".into()));
        }
        // worst case: longest events plus one normal segment between neighbours
        let need = self.max_events * self.max_duration + self.max_events - 1;
        if need > self.segments {
            return Err(Error::Config(format!(
                "{} events of {} segments do not fit in {} segments",
                self.max_events, self.max_duration, self.segments
            )));
        }
        if self.n_train_normal + self.n_test_normal == 0 && self.n_train_abnormal + self.n_test_abnormal == 0 {
            return Err(Error::Config("no videos requested".into()));
        }
        for (name, v) in [
            ("separation", self.separation),
            ("noise", self.noise),
            ("base_scale", self.base_scale),
            ("gentle_separation", self.gentle_separation.unwrap_or(0.0)),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventSpan {
    pub start: usize,
    pub len: usize,
    pub gentle: bool,
}

/// Places events with the given durations as disjoint intervals separated by at
/// least one free segment. Event 0 keeps `gentle = false`; the temporal order is random.
pub fn place_events<R: Rng>(segments: usize, durations: &[usize], gentle_after_first: bool, rng: &mut R) -> Result<Vec<EventSpan>> {
    let k = durations.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let used: usize = durations.iter().sum::<usize>() + k - 1;
    if used > segments {
        return Err(Error::Config(format!("events of total length {used} exceed {segments} segments")));
    }
    let free = segments - used;
    // stars and bars: k+1 gaps summing to `free`
    let mut cuts: Vec<usize> = (0..k).map(|_| rng.random_range(0..=free)).collect();
    cuts.sort_unstable();
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(rng);

    let mut spans = Vec::with_capacity(k);
    let mut cursor = 0;
    let mut prev_cut = 0;
    for (slot, &event) in order.iter().enumerate() {
        cursor += cuts[slot] - prev_cut;
        prev_cut = cuts[slot];
        spans.push(EventSpan {
            start: cursor,
            len: durations[event],
            gentle: gentle_after_first && event > 0,
        });
        cursor += durations[event] + 1;
    }
    Ok(spans)
}

pub fn segment_mask(segments: usize, spans: &[EventSpan]) -> Vec<u8> {
    let mut mask = vec![0u8; segments];
    for s in spans {
        mask[s.start..s.start + s.len].iter_mut().for_each(|m| *m = 1);
    }
    mask
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub train: DatasetManifest,
    pub test: DatasetManifest,
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    base: Array1<f64>,
    prominent: Array1<f64>,
    gentle: Array1<f64>,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn video(&mut self, abnormal: bool) -> Result<(Array2<f64>, Vec<u8>)> {
        let cfg = self.cfg;
        let spans = if abnormal {
            let k = self.rng.random_range(cfg.min_events..=cfg.max_events);
            let durations: Vec<usize> = (0..k)
                .map(|_| self.rng.random_range(cfg.min_duration..=cfg.max_duration))
                .collect();
            place_events(cfg.segments, &durations, cfg.gentle_separation.is_some(), &mut self.rng)?
        } else {
            Vec::new()
        };
        let mask = segment_mask(cfg.segments, &spans);

        let n_clips = cfg.segments * cfg.clips_per_segment;
        let mut clips = Array2::<f64>::zeros((n_clips, cfg.dim));
        for (c, mut row) in clips.rows_mut().into_iter().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let z: f64 = self.rng.sample(StandardNormal);
                *v = self.base[j] + cfg.noise * z;
            }
            let seg = c / cfg.clips_per_segment;
            if let Some(span) = spans.iter().find(|s| seg >= s.start && seg < s.start + s.len) {
                if span.gentle {
                    row.scaled_add(cfg.gentle_separation.unwrap_or(0.0), &self.gentle);
                } else {
                    row.scaled_add(cfg.separation, &self.prominent);
                }
            }
        }
        Ok((clips, mask))
    }
}

fn sign_vector(dim: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    Array1::from_shape_fn(dim, |_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
}

/// Writes `features/`, `gt/`, `train.csv`, `test.csv` and `synth_config.json` under
/// `out_dir`. Output bytes depend only on `(cfg, seed)`.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64, out_dir: &Path) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let feat_dir = out_dir.join("features");
    let gt_dir = out_dir.join("gt");
    for d in [&feat_dir, &gt_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = Array1::from_shape_fn(cfg.dim, |_| cfg.base_scale * rng.sample::<f64, _>(StandardNormal));
    let prominent = sign_vector(cfg.dim, &mut rng);
    let gentle = sign_vector(cfg.dim, &mut rng);
    let mut generator = Generator {
        cfg,
        base,
        prominent,
        gentle,
        rng,
    };

    let frame_count = cfg.segments * cfg.clips_per_segment * cfg.clip_len;
    let mut manifests = Vec::with_capacity(2);
    for (split, n_normal, n_abnormal) in [
        (Split::Train, cfg.n_train_normal, cfg.n_train_abnormal),
        (Split::Test, cfg.n_test_normal, cfg.n_test_abnormal),
    ] {
        let tag = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        let mut entries = Vec::with_capacity(n_normal + n_abnormal);
        for (label, count) in [(0u8, n_normal), (1u8, n_abnormal)] {
            let kind = if label == 1 { "abnormal" } else { "normal" };
            for i in 0..count {
                let video_id = format!("{tag}_{kind}_{i:04}");
                let (clips, mask) = generator.video(label == 1)?;
                let feature_path = feat_dir.join(format!("{video_id}.bin"));
                write_feature_file(&feature_path, clips.view())?;
                let gt_path = if split == Split::Test {
                    let frames: Vec<u8> = (0..frame_count)
                        .map(|f| mask[f * cfg.segments / frame_count])
                        .collect();
                    let p = gt_dir.join(format!("{video_id}.txt"));
                    write_ground_truth(&p, &frames)?;
                    Some(p)
                } else {
                    None
                };
                entries.push(ManifestEntry {
                    video_id,
                    label,
                    feature_path,
                    frame_count,
                    gt_path,
                });
            }
        }
        let manifest = DatasetManifest { entries, split };
        let path = out_dir.join(format!("{tag}.csv"));
        write_manifest(&path, &manifest)?;
        manifests.push((manifest, path));
    }

    let cfg_path = out_dir.join("synth_config.json");
    let mut cfg_json = serde_json::to_string_pretty(cfg)?;
    cfg_json.push('\n');
    fs::write(&cfg_path, cfg_json).map_err(|e| Error::io(&cfg_path, e))?;

    let (test, test_manifest) = manifests.pop().unwrap();
    let (train, train_manifest) = manifests.pop().unwrap();
    Ok(SyntheticDataset {
        train,
        test,
        train_manifest,
        test_manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_events_cover_exact_segment_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let spans = place_events(32, &[2, 10], false, &mut rng).unwrap();
            let mask = segment_mask(32, &spans);
            assert_eq!(mask.iter().filter(|m| **m == 1).count(), 12);
            let (a, b) = if spans[0].start < spans[1].start {
                (spans[0], spans[1])
            } else {
                (spans[1], spans[0])
            };
            assert!(a.start + a.len < b.start, "events must be separated: {spans:?}");
        }
    }

    #[test]
    fn first_event_is_prominent() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spans = place_events(40, &[3, 4, 5], true, &mut rng).unwrap();
        assert_eq!(spans.iter().filter(|s| !s.gentle).count(), 1);
        assert_eq!(spans.iter().find(|s| !s.gentle).unwrap().len, 3);
    }

    #[test]
    fn events_that_cannot_fit_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(place_events(10, &[5, 5], false, &mut rng).is_err());
        assert!(place_events(11, &[5, 5], false, &mut rng).is_ok());
    }

    #[test]
    fn config_validation() {
        let mut cfg = SynthConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.dim = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = SynthConfig {
            max_duration: 30,
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = serde_json::from_str::<SynthConfig>(r#"{"segmnts": 8}"#).unwrap_err();
        assert!(err.to_string().contains("segmnts"), "{err}");
    }
}
