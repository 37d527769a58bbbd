//! Two-pass training loop.
//!
//! Every iteration draws a paired batch, runs the un-erased pass, scores the batch
//! in evaluation mode to make erase decisions, runs the erased pass on the erased
//! abnormal videos plus the unchanged normal videos, and applies one optimizer
//! update for the weighted sum of both passes' losses.
//!
//! All randomness (initialisation, batch sampling, dropout) comes from a single
//! ChaCha8 generator consumed in a fixed order. Per-video gradients are computed in
//! parallel but summed in batch order, so results do not depend on thread count.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2, Zip};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, RngState};
use crate::erasing::{apply_batch, BatchErasure, EraseDecision, EraseMode, ScoredVideo, DEFAULT_DELTA};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, TestVideo};
use crate::features::{DatasetManifest, SegmentFeatures, Split};
use crate::model::{DeNet, ModelConfig, VideoPass};
use crate::nn::Parameterized;
use crate::objectives::{combined_loss_with_grads, LossReport, LossWeights, PassOutputs, VideoGrad, VideoOutput};
use crate::optim::{AdamConfig, AdamState};

/// Upper bound on memory held by per-video gradient buffers at once.
const GRAD_BUFFER_BYTES: usize = 256 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub segments: usize,
    pub scales: usize,
    pub heads: usize,
    /// Encoder MLP width; `None` means `4 * dim`.
    pub mlp_hidden: Option<usize>,
    pub encoder_dropout: f64,
    pub classifier_dropout: f64,
    pub delta: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_iterations: u64,
    pub seed: u64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub erase_mode: EraseMode,
    /// Write an intermediate checkpoint every this many iterations (0 = only at the end).
    pub checkpoint_every: u64,
    /// Evaluate on the validation set every this many iterations (0 = never).
    pub validate_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        let adam = AdamConfig::default();
        Self {
            segments: 64,
            scales: 3,
            heads: 8,
            mlp_hidden: None,
            encoder_dropout: 0.1,
            classifier_dropout: crate::head::DEFAULT_DROPOUT,
            delta: DEFAULT_DELTA,
            batch_size: 64,
            learning_rate: adam.learning_rate,
            weight_decay: adam.weight_decay,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            max_iterations: 1000,
            seed: 0,
            alpha1: w.alpha1,
            alpha2: w.alpha2,
            lambda1: w.lambda1,
            lambda2: w.lambda2,
            erase_mode: EraseMode::Dynamic,
            checkpoint_every: 0,
            validate_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            lambda1: self.lambda1,
            lambda2: if self.erase_mode == EraseMode::None { 0.0 } else { self.lambda2 },
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn model_config(&self, dim: usize) -> ModelConfig {
        ModelConfig {
            segments: self.segments,
            scales: self.scales,
            dim,
            heads: self.heads,
            mlp_hidden: self.mlp_hidden.unwrap_or(4 * dim),
            encoder_dropout: self.encoder_dropout,
            classifier_dropout: self.classifier_dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta {} must lie in (0, 1)", self.delta)));
        }
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "batch_size {} must be even and at least 2 (equal abnormal and normal halves)",
                self.batch_size
            )));
        }
        if !self.segments.is_multiple_of(2) {
            return Err(Error::Config(format!("segments {} must be even", self.segments)));
        }
        crate::features::check_segment_count(self.segments, self.scales)?;
        self.weights().validate()?;
        self.adam().validate()
    }

    pub fn half_batch(&self) -> usize {
        self.batch_size / 2
    }
}

/// Training videos split by class.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub videos: Vec<SegmentFeatures>,
    abnormal: Vec<usize>,
    normal: Vec<usize>,
}

impl TrainingSet {
    pub fn new(videos: Vec<SegmentFeatures>) -> Result<Self> {
        let abnormal: Vec<usize> = (0..videos.len()).filter(|&i| videos[i].is_abnormal()).collect();
        let normal: Vec<usize> = (0..videos.len()).filter(|&i| !videos[i].is_abnormal()).collect();
        if abnormal.is_empty() || normal.is_empty() {
            return Err(Error::Dataset(format!(
                "training needs both classes ({} abnormal, {} normal)",
                abnormal.len(),
                normal.len()
            )));
        }
        let dim = videos[0].dim();
        let t = videos[0].segments();
        if let Some(v) = videos.iter().find(|v| v.dim() != dim || v.segments() != t) {
            return Err(Error::Dataset(format!("{}: shape differs from the first video", v.video_id)));
        }
        Ok(Self {
            videos,
            abnormal,
            normal,
        })
    }

    pub fn load(manifest: &DatasetManifest, segments: usize, scales: usize) -> Result<Self> {
        Self::new(manifest.load_segments(segments, scales)?)
    }

    pub fn dim(&self) -> usize {
        self.videos[0].dim()
    }

    pub fn segments(&self) -> usize {
        self.videos[0].segments()
    }
}

/// Indices into [`TrainingSet::videos`]; `abnormal[i]` pairs with `normal[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub abnormal: Vec<usize>,
    pub normal: Vec<usize>,
}

fn sample_class<R: Rng>(pool: &[usize], count: usize, rng: &mut R) -> Vec<usize> {
    if pool.len() >= count {
        index::sample(rng, pool.len(), count).into_iter().map(|i| pool[i]).collect()
    } else {
        (0..count).map(|_| pool[rng.random_range(0..pool.len())]).collect()
    }
}

/// Draws `half` videos of each class, with replacement only when a class is smaller
/// than `half`.
pub fn make_batch<R: Rng>(data: &TrainingSet, half: usize, rng: &mut R) -> Result<Batch> {
    if data.abnormal.is_empty() || data.normal.is_empty() {
        return Err(Error::Dataset("batch needs at least one video of each class".into()));
    }
    let abnormal = sample_class(&data.abnormal, half, rng);
    let normal = sample_class(&data.normal, half, rng);
    Ok(Batch { abnormal, normal })
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub iteration: u64,
    pub report: LossReport,
    pub erasure: BatchErasure,
    pub batch: Batch,
}

impl StepOutcome {
    pub fn fraction_erased_videos(&self) -> f64 {
        if self.batch.abnormal.is_empty() {
            return 0.0;
        }
        self.erasure.erased_videos() as f64 / self.batch.abnormal.len() as f64
    }
}

fn as_outputs(passes: &[VideoPass], pairs: usize) -> PassOutputs<'_> {
    let outs: Vec<VideoOutput<'_>> = passes
        .iter()
        .map(|p| VideoOutput {
            scores: p.scores.view(),
            features: p.features.view(),
        })
        .collect();
    PassOutputs {
        abnormal: outs[..pairs].to_vec(),
        normal: outs[pairs..].to_vec(),
    }
}

fn is_zero(g: &VideoGrad) -> bool {
    g.d_scores.iter().all(|v| *v == 0.0) && g.d_features.iter().all(|v| *v == 0.0)
}

fn accumulate(dst: &mut DeNet, src: &DeNet) {
    for (d, s) in dst.param_list_mut().into_iter().zip(src.param_list()) {
        Zip::from(d.data).and(&s.data).for_each(|a, &b| *a += b);
    }
}

fn backward_units(model: &DeNet, units: &[(&VideoPass, VideoGrad)]) -> DeNet {
    let mut total = model.zeros_like();
    let unit_bytes = model.num_params() * std::mem::size_of::<f64>();
    let chunk = (GRAD_BUFFER_BYTES / unit_bytes.max(1)).clamp(1, 256);
    for group in units.chunks(chunk) {
        let partial: Vec<DeNet> = group
            .par_iter()
            .map(|(pass, g)| {
                let mut acc = model.zeros_like();
                model.backward(pass, g, &mut acc);
                acc
            })
            .collect();
        for g in &partial {
            accumulate(&mut total, g);
        }
    }
    total
}

/// Loss report and parameter gradient of the total for forward passes already run.
/// Passes are ordered abnormal videos first, then normal; `erased` holds the second
/// pass with erased abnormal inputs.
fn passes_gradient(
    model: &DeNet,
    unerased: &[VideoPass],
    erased: Option<&[VideoPass]>,
    pairs: usize,
    weights: &LossWeights,
) -> Result<(LossReport, DeNet)> {
    let out_u = as_outputs(unerased, pairs);
    let out_e = erased.map(|p| as_outputs(p, pairs));
    let (report, grads_u, grads_e) = combined_loss_with_grads(&out_u, out_e.as_ref(), weights)?;
    let mut units: Vec<(&VideoPass, VideoGrad)> = unerased
        .iter()
        .zip(grads_u.abnormal.into_iter().chain(grads_u.normal))
        .collect();
    if let (Some(passes), Some(g)) = (erased, grads_e) {
        units.extend(passes.iter().zip(g.abnormal.into_iter().chain(g.normal)));
    }
    units.retain(|(_, g)| !is_zero(g));
    Ok((report, backward_units(model, &units)))
}

/// Total loss and its parameter gradient for fixed inputs with dropout disabled.
///
/// `unerased` lists abnormal videos then normal ones, `pairs` of each. When
/// `erased_abnormal` is given, the erased pass runs on those matrices paired with the
/// same normal videos. Erase decisions are therefore constants here, as in training.
pub fn loss_and_gradient(
    model: &DeNet,
    unerased: &[ArrayView2<'_, f64>],
    erased_abnormal: Option<&[ArrayView2<'_, f64>]>,
    weights: &LossWeights,
) -> Result<(LossReport, DeNet)> {
    if !unerased.len().is_multiple_of(2) || unerased.is_empty() {
        return Err(Error::Dataset("need equal, non-empty abnormal and normal halves".into()));
    }
    let pairs = unerased.len() / 2;
    let forward = |xs: Vec<ArrayView2<'_, f64>>| -> Result<Vec<VideoPass>> {
        xs.par_iter().map(|x| model.forward_train(x.view(), None)).collect()
    };
    let passes_u = forward(unerased.to_vec())?;
    let passes_e = match erased_abnormal {
        Some(e) if e.len() != pairs => {
            return Err(Error::Dataset(format!("{} erased videos for {pairs} pairs", e.len())));
        }
        Some(e) => Some(forward(e.iter().chain(&unerased[pairs..]).copied().collect())?),
        None => None,
    };
    passes_gradient(model, &passes_u, passes_e.as_deref(), pairs, weights)
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: DeNet,
    pub optimizer: AdamState,
    pub iteration: u64,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: TrainConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut model = DeNet::new(config.model_config(dim), &mut rng)?;
        model.round_to_f32();
        let optimizer = AdamState::new(&model);
        Ok(Self {
            config,
            model,
            optimizer,
            iteration: 0,
            rng,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.train.validate()?;
        let rng = ckpt.rng.restore()?;
        Ok(Self {
            config: ckpt.train,
            model: ckpt.model,
            optimizer: ckpt.optimizer,
            iteration: ckpt.iteration,
            rng,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
            train: self.config.clone(),
            iteration: self.iteration,
            rng: RngState::capture(&self.rng),
        }
    }

    fn forward_all(&self, videos: &[&Array2<f64>], seeds: &[u64]) -> Result<Vec<VideoPass>> {
        videos
            .par_iter()
            .zip(seeds.par_iter())
            .map(|(x, &seed)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                self.model.forward_train(x.view(), Some(&mut rng))
            })
            .collect()
    }

    fn draw_seeds(&mut self, n: usize) -> Vec<u64> {
        (0..n).map(|_| self.rng.random()).collect()
    }

    /// Runs one iteration on a freshly sampled batch.
    pub fn step(&mut self, data: &TrainingSet) -> Result<StepOutcome> {
        if data.dim() != self.model.config.dim || data.segments() != self.model.config.segments {
            return Err(Error::Shape(format!(
                "data is {}x{}, model expects {}x{}",
                data.segments(),
                data.dim(),
                self.model.config.segments,
                self.model.config.dim
            )));
        }
        let batch = make_batch(data, self.config.half_batch(), &mut self.rng)?;
        self.step_on(data, batch)
    }

    /// Runs one iteration on an explicit batch.
    pub fn step_on(&mut self, data: &TrainingSet, batch: Batch) -> Result<StepOutcome> {
        let pairs = batch.abnormal.len();
        if pairs == 0 || batch.normal.len() != pairs {
            return Err(Error::Dataset("batch halves must be equal and non-empty".into()));
        }
        let mode = self.config.erase_mode;
        let originals: Vec<&Array2<f64>> = batch
            .abnormal
            .iter()
            .chain(&batch.normal)
            .map(|&i| &data.videos[i].x)
            .collect();

        // (1)-(2) un-erased pass
        let seeds = self.draw_seeds(2 * pairs);
        let unerased = self.forward_all(&originals, &seeds)?;

        // (3) erase decisions from dropout-free scores
        let erasure = if mode == EraseMode::None {
            BatchErasure::default()
        } else {
            let decision_scores: Vec<Array1<f64>> = if self.model.config.has_dropout() {
                originals
                    .par_iter()
                    .map(|x| self.model.score(x.view()))
                    .collect::<Result<_>>()?
            } else {
                unerased.iter().map(|p| p.scores.clone()).collect()
            };
            let scored: Vec<ScoredVideo<'_>> = batch
                .abnormal
                .iter()
                .chain(&batch.normal)
                .zip(&decision_scores)
                .map(|(&i, s)| ScoredVideo {
                    video_id: &data.videos[i].video_id,
                    features: data.videos[i].x.view(),
                    scores: s.view(),
                })
                .collect();
            let (a, n) = scored.split_at(pairs);
            apply_batch(a, n, self.config.delta, mode)?
        };

        // (4)-(5) erased pass
        let erased = if mode == EraseMode::None {
            None
        } else {
            let inputs: Vec<&Array2<f64>> = erasure.erased.iter().chain(originals[pairs..].iter().copied()).collect();
            let seeds = self.draw_seeds(2 * pairs);
            Some(self.forward_all(&inputs, &seeds)?)
        };

        // (6)-(7) losses and gradient of the total
        let (report, grads) = passes_gradient(&self.model, &unerased, erased.as_deref(), pairs, &self.config.weights())?;
        if !report.is_finite() {
            let video_ids = batch
                .abnormal
                .iter()
                .chain(&batch.normal)
                .map(|&i| data.videos[i].video_id.clone())
                .collect();
            return Err(Error::NonFinite {
                iteration: self.iteration,
                video_ids,
            });
        }
        self.optimizer.update(&self.config.adam(), &mut self.model, &grads);
        self.iteration += 1;

        Ok(StepOutcome {
            iteration: self.iteration,
            report,
            erasure,
            batch,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where metrics, audit logs and checkpoints go; nothing is written when `None`.
    pub output_dir: Option<PathBuf>,
    pub audit_erase: bool,
}

pub const METRICS_HEADER: &str = "iteration,l_u,l_e,total,fraction_erased_videos,mean_erased_segments";
pub const FINAL_CHECKPOINT: &str = "model.dnck";

#[derive(Serialize)]
struct AuditRecord<'a> {
    iteration: u64,
    #[serde(flatten)]
    decision: &'a EraseDecision,
}

struct RunLogs {
    dir: PathBuf,
    metrics: BufWriter<File>,
    audit: Option<BufWriter<File>>,
    validation: Option<BufWriter<File>>,
}

fn open_log(path: &Path, header: Option<&str>, append: bool) -> Result<BufWriter<File>> {
    let exists = path.exists();
    let file = if append {
        OpenOptions::new().create(true).append(true).open(path)
    } else {
        File::create(path)
    }
    .map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    if let Some(h) = header {
        if !(append && exists) {
            writeln!(w, "{h}").map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(w)
}

impl RunLogs {
    fn open(dir: &Path, opts: &TrainOptions, resumed: bool, validating: bool) -> Result<Self> {
        fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
        let metrics = open_log(&dir.join("metrics.csv"), Some(METRICS_HEADER), resumed)?;
        let audit = if opts.audit_erase {
            Some(open_log(&dir.join("erase_audit.jsonl"), None, resumed)?)
        } else {
            None
        };
        let validation = if validating {
            Some(open_log(&dir.join("validation.csv"), Some("iteration,auc,ap"), resumed)?)
        } else {
            None
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics,
            audit,
            validation,
        })
    }

    fn record(&mut self, step: &StepOutcome) -> Result<()> {
        let r = &step.report;
        writeln!(
            self.metrics,
            "{},{},{},{},{},{}",
            step.iteration,
            r.l_u,
            r.l_e,
            r.total,
            step.fraction_erased_videos(),
            step.erasure.mean_erased_segments()
        )
        .map_err(|e| Error::io(&self.dir, e))?;
        if let Some(audit) = self.audit.as_mut() {
            for d in &step.erasure.decisions {
                let line = serde_json::to_string(&AuditRecord {
                    iteration: step.iteration,
                    decision: d,
                })?;
                writeln!(audit, "{line}").map_err(|e| Error::io(&self.dir, e))?;
            }
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        let dir = self.dir.clone();
        self.metrics.flush().map_err(|e| Error::io(&dir, e))?;
        if let Some(a) = self.audit.as_mut() {
            a.flush().map_err(|e| Error::io(&dir, e))?;
        }
        if let Some(v) = self.validation.as_mut() {
            v.flush().map_err(|e| Error::io(&dir, e))?;
        }
        Ok(())
    }
}

/// Runs the trainer until `config.max_iterations` and returns the final checkpoint.
/// Validation results are logged only; they never influence training.
pub fn run(trainer: &mut Trainer, data: &TrainingSet, validation: Option<&[TestVideo]>, opts: &TrainOptions) -> Result<Checkpoint> {
    let resumed = trainer.iteration > 0;
    let mut logs = match &opts.output_dir {
        Some(dir) => Some(RunLogs::open(dir, opts, resumed, validation.is_some())?),
        None => None,
    };
    while trainer.iteration < trainer.config.max_iterations {
        let step = trainer.step(data)?;
        log::debug!(
            "iter {} total {:.5} l_u {:.5} l_e {:.5} erased {:.2}",
            step.iteration,
            step.report.total,
            step.report.l_u,
            step.report.l_e,
            step.fraction_erased_videos()
        );
        if let Some(logs) = logs.as_mut() {
            logs.record(&step)?;
            let every = trainer.config.checkpoint_every;
            if every > 0 && step.iteration % every == 0 && step.iteration < trainer.config.max_iterations {
                let path = logs.dir.join("checkpoints").join(format!("ckpt_{:06}.dnck", step.iteration));
                trainer.checkpoint().save(&path)?;
            }
        }
        let every = trainer.config.validate_every;
        if let Some(val) = validation.filter(|_| every > 0 && step.iteration % every == 0) {
            let (report, _) = evaluate(&trainer.model, val)?;
            log::info!("iter {} validation auc {:.4} ap {:.4}", step.iteration, report.auc, report.ap);
            if let Some(w) = logs.as_mut().and_then(|l| l.validation.as_mut()) {
                writeln!(w, "{},{},{}", step.iteration, report.auc, report.ap).map_err(|e| Error::io(".", e))?;
            }
        }
    }
    let ckpt = trainer.checkpoint();
    if let Some(logs) = logs.as_mut() {
        logs.flush()?;
        ckpt.save(&logs.dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(ckpt)
}

/// Loads the training split from `manifest` and trains from scratch.
pub fn train(config: TrainConfig, manifest: &Path, opts: &TrainOptions) -> Result<Checkpoint> {
    config.validate()?;
    let manifest = crate::features::load_manifest(manifest, Split::Train)?;
    let data = TrainingSet::load(&manifest, config.segments, config.scales)?;
    let mut trainer = Trainer::new(config, data.dim())?;
    run(&mut trainer, &data, None, opts)
}

/// Evaluates a checkpoint's model on a test split.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, manifest: &DatasetManifest) -> Result<(EvalReport, Vec<crate::eval::FramePrediction>)> {
    let cfg = &ckpt.model.config;
    let videos = crate::eval::load_test_set(manifest, cfg.segments, cfg.scales)?;
    evaluate(&ckpt.model, &videos)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_set(n_abnormal: usize, n_normal: usize) -> TrainingSet {
        let mut videos = Vec::new();
        for i in 0..n_abnormal + n_normal {
            let label = u8::from(i < n_abnormal);
            let x = Array2::from_elem((4, 2), i as f64 + 1.0);
            videos.push(SegmentFeatures::new(format!("v{i}"), x, label, 1).unwrap());
        }
        TrainingSet::new(videos).unwrap()
    }

    #[test]
    fn batch_composition() {
        let data = toy_set(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = make_batch(&data, 2, &mut rng).unwrap();
        assert_eq!(b.abnormal.len(), 2);
        assert_eq!(b.normal.len(), 2);
        assert!(b.abnormal.iter().all(|&i| data.videos[i].is_abnormal()));
        assert!(b.normal.iter().all(|&i| !data.videos[i].is_abnormal()));

        let big = make_batch(&data, 32, &mut rng).unwrap();
        assert_eq!(big.abnormal.len(), 32);
    }

    #[test]
    fn batch_is_deterministic() {
        let data = toy_set(40, 50);
        let a = make_batch(&data, 32, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = make_batch(&data, 32, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        let mut uniq = a.abnormal.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 32, "no replacement when the class is large enough");
    }

    #[test]
    fn single_class_is_dataset_error() {
        let videos = vec![SegmentFeatures::new("n", Array2::ones((4, 2)), 0, 1).unwrap()];
        assert!(matches!(TrainingSet::new(videos), Err(Error::Dataset(_))));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            delta: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 5,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            segments: 36,
            scales: 4,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let err = serde_json::from_str::<TrainConfig>(r#"{"learning_rat": 0.1}"#).unwrap_err();
        assert!(err.to_string().contains("learning_rat"));
    }

    #[test]
    fn no_erase_forces_lambda2_zero() {
        let cfg = TrainConfig {
            erase_mode: EraseMode::None,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.weights().lambda2, 0.0);
    }
}
