//! Multi-scale temporal modelling.
//!
//! Scale `s` (1-based) convolves the `T x D` segment matrix with kernel = stride =
//! `2^(s-1)`, adds a learnable positional table, runs one post-norm encoder layer,
//! repeats each row back up to `T` rows, and the `S` branches are concatenated and
//! projected back to `D` columns.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, EncoderCache, EncoderLayer, Linear, ParamKind, ParamMut, ParamRef, Parameterized};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleConfig {
    pub segments: usize,
    pub scales: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub dropout: f64,
}

impl ScaleConfig {
    pub fn new(segments: usize, scales: usize, dim: usize) -> Self {
        Self {
            segments,
            scales,
            dim,
            heads: 8,
            mlp_hidden: 4 * dim,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 {
            return Err(Error::Config("scales must be at least 1".into()));
        }
        if self.dim == 0 || self.heads == 0 || self.mlp_hidden == 0 {
            return Err(Error::Config("dim, heads and mlp_hidden must be positive".into()));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("encoder dropout {} not in [0, 1)", self.dropout)));
        }
        crate::features::check_segment_count(self.segments, self.scales)
    }

    pub fn stride(&self, scale: usize) -> usize {
        1 << (scale - 1)
    }

    /// Temporal length at 1-based scale `s`: `T / 2^(s-1)`.
    pub fn scale_len(&self, scale: usize) -> usize {
        self.segments / self.stride(scale)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleBranch {
    pub stride: usize,
    /// Kernel as a `(stride*D) x D` affine map over `stride` concatenated rows.
    pub conv: Linear,
    pub position: Array2<f64>,
    pub encoder: EncoderLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mstm {
    pub config: ScaleConfig,
    pub branches: Vec<ScaleBranch>,
    pub aggregate: Linear,
}

#[derive(Debug, Clone)]
struct BranchCache {
    windows: Array2<f64>,
    encoder: EncoderCache,
}

#[derive(Debug, Clone)]
pub struct MstmCache {
    branches: Vec<BranchCache>,
    concat: Array2<f64>,
}

/// Per-scale intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct MultiScaleFeatures {
    pub local: Vec<Array2<f64>>,
    pub global: Vec<Array2<f64>>,
    pub aligned: Vec<Array2<f64>>,
    pub aggregated: Array2<f64>,
}

/// Repeats every row `T / L` times so the result has exactly `segments` rows.
pub fn align(xhat: ArrayView2<'_, f64>, segments: usize) -> Result<Array2<f64>> {
    let len = xhat.nrows();
    if len == 0 || !segments.is_multiple_of(len) || !(segments / len).is_power_of_two() {
        return Err(Error::Shape(format!(
            "cannot align {len} rows to {segments}: ratio must be a power of two"
        )));
    }
    let repeat = segments / len;
    if repeat == 1 {
        return Ok(xhat.to_owned());
    }
    let mut out = Array2::zeros((segments, xhat.ncols()));
    for (j, row) in xhat.rows().into_iter().enumerate() {
        for r in 0..repeat {
            out.row_mut(j * repeat + r).assign(&row);
        }
    }
    Ok(out)
}

fn unalign(d_aligned: ArrayView2<'_, f64>, repeat: usize) -> Array2<f64> {
    let len = d_aligned.nrows() / repeat;
    let mut out = Array2::zeros((len, d_aligned.ncols()));
    for (j, mut row) in out.rows_mut().into_iter().enumerate() {
        row.assign(&d_aligned.slice(s![j * repeat..(j + 1) * repeat, ..]).sum_axis(Axis(0)));
    }
    out
}

/// Row-major `T x D` viewed as `(T/k) x (k*D)`: each row holds `k` consecutive segments.
fn windows(x: ArrayView2<'_, f64>, stride: usize) -> Array2<f64> {
    let (t, d) = x.dim();
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((t / stride, stride * d))
        .expect("divisibility checked by caller")
}

impl Mstm {
    pub fn new(config: ScaleConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let branches = (1..=config.scales)
            .map(|s| {
                let stride = config.stride(s);
                ScaleBranch {
                    stride,
                    conv: Linear::new(stride * d, d, rng),
                    position: Array2::zeros((config.scale_len(s), d)),
                    encoder: EncoderLayer::new(d, config.heads, config.mlp_hidden, config.dropout, rng),
                }
            })
            .collect();
        let aggregate = Linear::new(config.scales * d, d, rng);
        Ok(Self {
            config,
            branches,
            aggregate,
        })
    }

    fn branch(&self, scale: usize) -> Result<&ScaleBranch> {
        if scale == 0 || scale > self.branches.len() {
            return Err(Error::Shape(format!("scale {scale} outside 1..={}", self.branches.len())));
        }
        Ok(&self.branches[scale - 1])
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.config.dim {
            return Err(Error::Shape(format!("feature dim {} != model dim {}", x.ncols(), self.config.dim)));
        }
        if x.nrows() != self.config.segments {
            return Err(Error::Shape(format!(
                "{} segments, model expects {}",
                x.nrows(),
                self.config.segments
            )));
        }
        Ok(())
    }

    /// Strided convolution at 1-based `scale`; no padding, no activation.
    pub fn local_conv(&self, x: ArrayView2<'_, f64>, scale: usize) -> Result<Array2<f64>> {
        let branch = self.branch(scale)?;
        if x.ncols() != self.config.dim {
            return Err(Error::Shape(format!("feature dim {} != model dim {}", x.ncols(), self.config.dim)));
        }
        if !x.nrows().is_multiple_of(branch.stride) {
            return Err(Error::Shape(format!(
                "{} rows not divisible by stride {}",
                x.nrows(),
                branch.stride
            )));
        }
        Ok(branch.conv.forward(windows(x, branch.stride).view()))
    }

    /// Evaluation-mode encoder layer on `xbar + PE`.
    pub fn global_encode(&self, xbar: ArrayView2<'_, f64>, scale: usize) -> Result<Array2<f64>> {
        let branch = self.branch(scale)?;
        if xbar.dim() != branch.position.dim() {
            return Err(Error::Shape(format!(
                "scale {scale} input {:?} does not match positional table {:?}",
                xbar.dim(),
                branch.position.dim()
            )));
        }
        let z = &xbar + &branch.position;
        Ok(branch.encoder.forward(z.view(), None).0)
    }

    pub fn aggregate(&self, aligned: &[Array2<f64>]) -> Result<Array2<f64>> {
        if aligned.len() != self.config.scales {
            return Err(Error::Shape(format!("{} branches, expected {}", aligned.len(), self.config.scales)));
        }
        let shape = (self.config.segments, self.config.dim);
        if let Some(bad) = aligned.iter().find(|a| a.dim() != shape) {
            return Err(Error::Shape(format!("aligned branch {:?}, expected {shape:?}", bad.dim())));
        }
        let views: Vec<_> = aligned.iter().map(|a| a.view()).collect();
        let concat = concatenate(Axis(1), &views).expect("shapes checked");
        Ok(self.aggregate.forward(concat.view()))
    }

    /// Evaluation-mode forward exposing every intermediate.
    pub fn forward_detailed(&self, x: ArrayView2<'_, f64>) -> Result<MultiScaleFeatures> {
        self.check_input(x)?;
        let mut local = Vec::with_capacity(self.config.scales);
        let mut global = Vec::with_capacity(self.config.scales);
        let mut aligned = Vec::with_capacity(self.config.scales);
        for s in 1..=self.config.scales {
            let xbar = self.local_conv(x, s)?;
            let xhat = self.global_encode(xbar.view(), s)?;
            aligned.push(align(xhat.view(), self.config.segments)?);
            local.push(xbar);
            global.push(xhat);
        }
        let aggregated = self.aggregate(&aligned)?;
        Ok(MultiScaleFeatures {
            local,
            global,
            aligned,
            aggregated,
        })
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward_train(x, None)?.0)
    }

    /// Forward pass keeping the activations needed by [`Mstm::backward`].
    /// Dropout is active only when `rng` is given.
    pub fn forward_train(&self, x: ArrayView2<'_, f64>, mut rng: Option<&mut ChaCha8Rng>) -> Result<(Array2<f64>, MstmCache)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.branches.len());
        let mut aligned = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let win = windows(x, branch.stride);
            let z = branch.conv.forward(win.view()) + &branch.position;
            let (enc, encoder) = branch.encoder.forward(z.view(), rng.as_deref_mut());
            aligned.push(align(enc.view(), self.config.segments)?);
            caches.push(BranchCache { windows: win, encoder });
        }
        let views: Vec<_> = aligned.iter().map(|a| a.view()).collect();
        let concat = concatenate(Axis(1), &views).expect("aligned branches share shape");
        let out = self.aggregate.forward(concat.view());
        Ok((
            out,
            MstmCache {
                branches: caches,
                concat,
            },
        ))
    }

    /// Accumulates `dL/dparams` into `grad`; the input gradient is not needed.
    pub fn backward(&self, cache: &MstmCache, d_out: ArrayView2<'_, f64>, grad: &mut Mstm) {
        let d_concat = self.aggregate.backward(cache.concat.view(), d_out, &mut grad.aggregate);
        let d = self.config.dim;
        for (i, ((branch, bc), gb)) in self
            .branches
            .iter()
            .zip(&cache.branches)
            .zip(grad.branches.iter_mut())
            .enumerate()
        {
            let d_aligned = d_concat.slice(s![.., i * d..(i + 1) * d]);
            let d_enc = unalign(d_aligned, branch.stride);
            let dz = branch.encoder.backward(&bc.encoder, d_enc.view(), &mut gb.encoder);
            gb.position += &dz;
            branch.conv.backward(bc.windows.view(), dz.view(), &mut gb.conv);
        }
    }
}

impl Parameterized for Mstm {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        for (i, b) in self.branches.iter().enumerate() {
            let p = join(prefix, &format!("scale{}", i + 1));
            b.conv.params(&join(&p, "conv"), out);
            out.push(ParamRef {
                name: join(&p, "position"),
                kind: ParamKind::Position,
                data: b.position.view().into_dyn(),
            });
            b.encoder.params(&join(&p, "encoder"), out);
        }
        self.aggregate.params(&join(prefix, "aggregate"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        for (i, b) in self.branches.iter_mut().enumerate() {
            let p = join(prefix, &format!("scale{}", i + 1));
            b.conv.params_mut(&join(&p, "conv"), out);
            out.push(ParamMut {
                name: join(&p, "position"),
                kind: ParamKind::Position,
                data: b.position.view_mut().into_dyn(),
            });
            b.encoder.params_mut(&join(&p, "encoder"), out);
        }
        self.aggregate.params_mut(&join(prefix, "aggregate"), out);
    }
}
