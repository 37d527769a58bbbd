use ndarray::{Array1, Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{HeadCache, ScoringHead, DEFAULT_DROPOUT};
use crate::mstm::{Mstm, MstmCache, ScaleConfig};
use crate::nn::{join, ParamMut, ParamRef, Parameterized};
use crate::objectives::VideoGrad;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub segments: usize,
    pub scales: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub encoder_dropout: f64,
    pub classifier_dropout: f64,
}

impl ModelConfig {
    pub fn new(segments: usize, scales: usize, dim: usize) -> Self {
        Self {
            segments,
            scales,
            dim,
            heads: 8,
            mlp_hidden: 4 * dim,
            encoder_dropout: 0.1,
            classifier_dropout: DEFAULT_DROPOUT,
        }
    }

    pub fn scale_config(&self) -> ScaleConfig {
        ScaleConfig {
            segments: self.segments,
            scales: self.scales,
            dim: self.dim,
            heads: self.heads,
            mlp_hidden: self.mlp_hidden,
            dropout: self.encoder_dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scale_config().validate()?;
        if !(0.0..1.0).contains(&self.classifier_dropout) {
            return Err(Error::Config(format!(
                "classifier dropout {} not in [0, 1)",
                self.classifier_dropout
            )));
        }
        if !self.segments.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "segment count {} must be even for the local-variation offset T/2",
                self.segments
            )));
        }
        Ok(())
    }

    pub fn has_dropout(&self) -> bool {
        self.encoder_dropout > 0.0 || self.classifier_dropout > 0.0
    }
}

/// Multi-scale temporal model followed by the scoring head.
#[derive(Debug, Clone, PartialEq)]
pub struct DeNet {
    pub config: ModelConfig,
    pub mstm: Mstm,
    pub head: ScoringHead,
}

/// Activations of one training-mode forward pass over a single video.
#[derive(Debug, Clone)]
pub struct VideoPass {
    pub features: Array2<f64>,
    pub scores: Array1<f64>,
    mstm: MstmCache,
    head: HeadCache,
}

impl DeNet {
    pub fn new(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mstm = Mstm::new(config.scale_config(), rng)?;
        let head = ScoringHead::new(config.dim, config.classifier_dropout, rng);
        Ok(Self { config, mstm, head })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }

    /// Evaluation mode: aggregated features and per-segment scores.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        let xhat = self.mstm.forward(x)?;
        let scores = self.head.score(xhat.view())?;
        Ok((xhat, scores))
    }

    pub fn score(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.forward(x)?.1)
    }

    pub fn forward_train(&self, x: ArrayView2<'_, f64>, mut rng: Option<&mut ChaCha8Rng>) -> Result<VideoPass> {
        let (features, mstm) = self.mstm.forward_train(x, rng.as_deref_mut())?;
        let (scores, head) = self.head.forward_train(features.view(), rng)?;
        Ok(VideoPass {
            features,
            scores,
            mstm,
            head,
        })
    }

    /// Accumulates parameter gradients for a loss whose partials with respect to
    /// this pass's scores and aggregated features are given in `upstream`.
    pub fn backward(&self, pass: &VideoPass, upstream: &VideoGrad, grad: &mut DeNet) {
        let mut d_features = self.head.backward(&pass.head, upstream.d_scores.view(), &mut grad.head);
        d_features += &upstream.d_features;
        self.mstm.backward(&pass.mstm, d_features.view(), &mut grad.mstm);
    }

    /// Rounds every parameter to the nearest `f32`, the checkpoint storage precision.
    pub fn round_to_f32(&mut self) {
        for p in self.param_list_mut() {
            let mut d = p.data;
            d.mapv_inplace(|v| v as f32 as f64);
        }
    }
}

impl Parameterized for DeNet {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.mstm.params(&join(prefix, "mstm"), out);
        self.head.params(&join(prefix, "classifier"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.mstm.params_mut(&join(prefix, "mstm"), out);
        self.head.params_mut(&join(prefix, "classifier"), out);
    }
}
