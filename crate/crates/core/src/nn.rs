//! Dense layers with explicit forward caches and reverse-mode backward passes.
//!
//! All math runs in `f64`. Weight matrices are stored `in x out` so a layer is
//! `y = x W + b` on row-major activations.

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Which optimizer treatment a tensor receives. Only `Weight` is decayed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Norm,
    Position,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

pub struct ParamRef<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub data: ArrayViewD<'a, f64>,
}

pub struct ParamMut<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub data: ArrayViewMutD<'a, f64>,
}

/// Enumerates tensors under stable, dotted names. Both methods must yield the same
/// names in the same order.
pub trait Parameterized {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>);
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>);

    fn param_list(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        self.params("", &mut out);
        out
    }

    fn param_list_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        self.params_mut("", &mut out);
        out
    }

    fn zero(&mut self) {
        for p in self.param_list_mut() {
            let mut d = p.data;
            d.fill(0.0);
        }
    }

    fn num_params(&self) -> usize {
        self.param_list().iter().map(|p| p.data.len()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn uniform(shape: (usize, usize), bound: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..=bound))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// Fan-in scaled uniform init, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weight and bias.
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = uniform((fan_in, fan_out), bound, rng);
        let bias = Array1::from_shape_simple_fn(fan_out, || rng.random_range(-bound..=bound));
        Self { weight, bias }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Array2::eye(dim),
            bias: Array1::zeros(dim),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<'_, f64>, dy: ArrayView2<'_, f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &x.t().dot(&dy);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.t())
    }
}

impl Parameterized for Linear {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            name: join(prefix, "weight"),
            kind: ParamKind::Weight,
            data: self.weight.view().into_dyn(),
        });
        out.push(ParamRef {
            name: join(prefix, "bias"),
            kind: ParamKind::Bias,
            data: self.bias.view().into_dyn(),
        });
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        out.push(ParamMut {
            name: join(prefix, "weight"),
            kind: ParamKind::Weight,
            data: self.weight.view_mut().into_dyn(),
        });
        out.push(ParamMut {
            name: join(prefix, "bias"),
            kind: ParamKind::Bias,
            data: self.bias.view_mut().into_dyn(),
        });
    }
}

/// Row-wise layer normalisation with learnable gain and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: Array1::ones(dim),
            bias: Array1::zeros(dim),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, LayerNormCache) {
        let (rows, dim) = x.dim();
        let mut normalized = Array2::zeros((rows, dim));
        let mut inv_std = Array1::zeros(rows);
        for ((row, mut out), s) in x.rows().into_iter().zip(normalized.rows_mut()).zip(inv_std.iter_mut()) {
            let mean = row.sum() / dim as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
            *s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            Zip::from(&mut out).and(&row).for_each(|o, &v| *o = (v - mean) * *s);
        }
        let y = &normalized * &self.gain + &self.bias;
        (y, LayerNormCache { normalized, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: ArrayView2<'_, f64>, grad: &mut LayerNorm) -> Array2<f64> {
        grad.gain += &(&dy * &cache.normalized).sum_axis(Axis(0));
        grad.bias += &dy.sum_axis(Axis(0));
        let dim = dy.ncols() as f64;
        let dnorm = &dy * &self.gain;
        let mut dx = Array2::zeros(dy.raw_dim());
        for (((dn, xh), s), mut out) in dnorm
            .rows()
            .into_iter()
            .zip(cache.normalized.rows())
            .zip(cache.inv_std.iter())
            .zip(dx.rows_mut())
        {
            let mean_dn = dn.sum() / dim;
            let mean_dn_xh = dn.dot(&xh) / dim;
            Zip::from(&mut out)
                .and(&dn)
                .and(&xh)
                .for_each(|o, &d, &h| *o = s * (d - mean_dn - h * mean_dn_xh));
        }
        dx
    }
}

impl Parameterized for LayerNorm {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            name: join(prefix, "gain"),
            kind: ParamKind::Norm,
            data: self.gain.view().into_dyn(),
        });
        out.push(ParamRef {
            name: join(prefix, "bias"),
            kind: ParamKind::Norm,
            data: self.bias.view().into_dyn(),
        });
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        out.push(ParamMut {
            name: join(prefix, "gain"),
            kind: ParamKind::Norm,
            data: self.gain.view_mut().into_dyn(),
        });
        out.push(ParamMut {
            name: join(prefix, "bias"),
            kind: ParamKind::Norm,
            data: self.bias.view_mut().into_dyn(),
        });
    }
}

/// Inverted dropout: returns the scaled keep-mask, or `None` when inactive.
pub fn dropout_mask(shape: (usize, usize), p: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Array2<f64>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(Array2::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < p {
            0.0
        } else {
            keep
        }
    }))
}

pub fn apply_mask(x: Array2<f64>, mask: Option<&Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => x * m,
        None => x,
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh approximation of GELU
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    // keep scores strictly inside (0, 1) even when the logit saturates
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Full (unmasked) multi-head self-attention with an output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    context: Array2<f64>,
}

impl MultiHeadAttention {
    pub fn new(dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            heads,
            query: Linear::new(dim, dim, rng),
            key: Linear::new(dim, dim, rng),
            value: Linear::new(dim, dim, rng),
            output: Linear::new(dim, dim, rng),
        }
    }

    fn head_dim(&self) -> usize {
        self.query.fan_out() / self.heads
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, AttentionCache) {
        let q = self.query.forward(x);
        let k = self.key.forward(x);
        let v = self.value.forward(x);
        let hd = self.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut context = Array2::zeros(q.raw_dim());
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let mut p = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            for mut row in p.rows_mut() {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row /= sum;
            }
            context.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
            probs.push(p);
        }
        let out = self.output.forward(context.view());
        let cache = AttentionCache {
            input: x.to_owned(),
            q,
            k,
            v,
            probs,
            context,
        };
        (out, cache)
    }

    pub fn backward(&self, cache: &AttentionCache, dy: ArrayView2<'_, f64>, grad: &mut MultiHeadAttention) -> Array2<f64> {
        let dcontext = self.output.backward(cache.context.view(), dy, &mut grad.output);
        let hd = self.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (h, p) in cache.probs.iter().enumerate() {
            let cols = s![.., h * hd..(h + 1) * hd];
            let dctx = dcontext.slice(cols);
            let dp = dctx.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&dctx));
            // softmax backward, row-wise
            let mut ds = p * &dp;
            for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                let total = row.sum();
                Zip::from(&mut row).and(&prow).for_each(|d, &pv| *d -= pv * total);
            }
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let x = cache.input.view();
        let mut dx = self.query.backward(x, dq.view(), &mut grad.query);
        dx += &self.key.backward(x, dk.view(), &mut grad.key);
        dx += &self.value.backward(x, dv.view(), &mut grad.value);
        dx
    }
}

impl Parameterized for MultiHeadAttention {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.query.params(&join(prefix, "query"), out);
        self.key.params(&join(prefix, "key"), out);
        self.value.params(&join(prefix, "value"), out);
        self.output.params(&join(prefix, "output"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.query.params_mut(&join(prefix, "query"), out);
        self.key.params_mut(&join(prefix, "key"), out);
        self.value.params_mut(&join(prefix, "value"), out);
        self.output.params_mut(&join(prefix, "output"), out);
    }
}

/// One post-norm transformer encoder layer:
/// `h = LN1(z + drop(MSA(z)))`, `out = LN2(h + drop(MLP(h)))`, with a GELU MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub norm2: LayerNorm,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    attention: AttentionCache,
    attn_mask: Option<Array2<f64>>,
    norm1: LayerNormCache,
    hidden_in: Array2<f64>,
    pre_act: Array2<f64>,
    activated: Array2<f64>,
    mlp_mask: Option<Array2<f64>>,
    norm2: LayerNormCache,
}

impl EncoderLayer {
    pub fn new(dim: usize, heads: usize, mlp_hidden: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            attention: MultiHeadAttention::new(dim, heads, rng),
            norm1: LayerNorm::new(dim),
            fc1: Linear::new(dim, mlp_hidden, rng),
            fc2: Linear::new(mlp_hidden, dim, rng),
            norm2: LayerNorm::new(dim),
            dropout,
        }
    }

    /// `rng = None` runs in evaluation mode (no dropout).
    pub fn forward(&self, z: ArrayView2<'_, f64>, mut rng: Option<&mut ChaCha8Rng>) -> (Array2<f64>, EncoderCache) {
        let (attn, attention) = self.attention.forward(z);
        let attn_mask = dropout_mask(attn.dim(), self.dropout, rng.as_deref_mut());
        let attn = apply_mask(attn, attn_mask.as_ref());
        let (hidden_in, norm1) = self.norm1.forward((&attn + &z).view());
        let pre_act = self.fc1.forward(hidden_in.view());
        let activated = pre_act.mapv(gelu);
        let mlp = self.fc2.forward(activated.view());
        let mlp_mask = dropout_mask(mlp.dim(), self.dropout, rng);
        let mlp = apply_mask(mlp, mlp_mask.as_ref());
        let (out, norm2) = self.norm2.forward((&mlp + &hidden_in).view());
        let cache = EncoderCache {
            attention,
            attn_mask,
            norm1,
            hidden_in,
            pre_act,
            activated,
            mlp_mask,
            norm2,
        };
        (out, cache)
    }

    pub fn backward(&self, cache: &EncoderCache, dy: ArrayView2<'_, f64>, grad: &mut EncoderLayer) -> Array2<f64> {
        let d_sum2 = self.norm2.backward(&cache.norm2, dy, &mut grad.norm2);
        let d_mlp = apply_mask(d_sum2.clone(), cache.mlp_mask.as_ref());
        let d_act = self.fc2.backward(cache.activated.view(), d_mlp.view(), &mut grad.fc2);
        let d_pre = d_act * &cache.pre_act.mapv(gelu_grad);
        let mut d_hidden = self.fc1.backward(cache.hidden_in.view(), d_pre.view(), &mut grad.fc1);
        d_hidden += &d_sum2;
        let d_sum1 = self.norm1.backward(&cache.norm1, d_hidden.view(), &mut grad.norm1);
        let d_attn = apply_mask(d_sum1.clone(), cache.attn_mask.as_ref());
        let mut dz = self.attention.backward(&cache.attention, d_attn.view(), &mut grad.attention);
        dz += &d_sum1;
        dz
    }
}

impl Parameterized for EncoderLayer {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.attention.params(&join(prefix, "attention"), out);
        self.norm1.params(&join(prefix, "norm1"), out);
        self.fc1.params(&join(prefix, "mlp.fc1"), out);
        self.fc2.params(&join(prefix, "mlp.fc2"), out);
        self.norm2.params(&join(prefix, "norm2"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.attention.params_mut(&join(prefix, "attention"), out);
        self.norm1.params_mut(&join(prefix, "norm1"), out);
        self.fc1.params_mut(&join(prefix, "mlp.fc1"), out);
        self.fc2.params_mut(&join(prefix, "mlp.fc2"), out);
        self.norm2.params_mut(&join(prefix, "norm2"), out);
    }
}
