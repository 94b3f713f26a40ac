//! Toy dual encoder mapping montages and token sequences onto the unit
//! sphere in a shared `d`-dimensional space.
//!
//! Vision branch: non-overlapping `p x p` patches, each linearly projected
//! to `h` and mean-pooled, then one tanh layer and a linear head to `d`.
//! Because the patch projection is linear, mean-pooling the projections is
//! the projection of the mean patch; [`image_features`] computes that mean
//! patch once per montage and everything downstream works on it.
//!
//! Text branch: token embedding bag averaged over the non-pad prefix, tanh,
//! linear head to `d`.
//!
//! Both outputs are L2-normalized. All arithmetic is `f64`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpusio::{read_file, write_atomic, Montage};
use crate::error::{Error, Result};
use crate::textprep::TokenSequence;

/// Norms below this are treated as degenerate.
pub const MIN_NORM: f64 = 1e-12;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DEC1";

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self * x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `self^T * y`
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                axpy(&mut out, yr, self.row(r));
            }
        }
        out
    }

    /// `self += a * b^T`
    fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        for (r, &ar) in a.iter().enumerate() {
            if ar != 0.0 {
                axpy(self.row_mut(r), ar, b);
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn add_assign(y: &mut [f64], x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += xi;
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderDims {
    /// Patch side `p`.
    pub patch: usize,
    /// Hidden width `h`.
    pub hidden: usize,
    /// Shared embedding dimension `d`.
    pub embed: usize,
    /// Vocabulary size `|V|`.
    pub vocab: usize,
}

impl EncoderDims {
    pub fn patch_len(&self) -> usize {
        self.patch * self.patch
    }

    /// Total parameter count, or `None` if it overflows `usize`.
    pub fn num_values(&self) -> Option<usize> {
        let (h, d) = (self.hidden, self.embed);
        let p2 = self.patch.checked_mul(self.patch)?;
        let per_hidden = p2
            .checked_add(h)?
            .checked_add(2)?
            .checked_add(self.vocab)?
            .checked_add(d.checked_mul(2)?)?;
        h.checked_mul(per_hidden)?.checked_add(d * 2 + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisionParams {
    pub patch_proj: Matrix,
    pub patch_bias: Vec<f64>,
    pub hidden: Matrix,
    pub hidden_bias: Vec<f64>,
    pub out_proj: Matrix,
    pub out_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextParams {
    pub token_embed: Matrix,
    pub out_proj: Matrix,
    pub out_bias: Vec<f64>,
}

/// Weights of both branches plus the log-temperature. The same type holds
/// gradients (see [`EncoderParams::zeros_like`]).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub dims: EncoderDims,
    pub vision: VisionParams,
    pub text: TextParams,
    pub log_tau: f64,
}

pub type ParamGrads = EncoderParams;

/// Names of the parameter groups in checkpoint/flattening order.
pub const GROUP_NAMES: [&str; 10] = [
    "vision.patch_proj",
    "vision.patch_bias",
    "vision.hidden",
    "vision.hidden_bias",
    "vision.out_proj",
    "vision.out_bias",
    "text.token_embed",
    "text.out_proj",
    "text.out_bias",
    "log_tau",
];

impl EncoderParams {
    pub fn zeros(dims: EncoderDims) -> Self {
        let (p2, h, d, v) = (dims.patch_len(), dims.hidden, dims.embed, dims.vocab);
        Self {
            dims,
            vision: VisionParams {
                patch_proj: Matrix::zeros(h, p2),
                patch_bias: vec![0.0; h],
                hidden: Matrix::zeros(h, h),
                hidden_bias: vec![0.0; h],
                out_proj: Matrix::zeros(d, h),
                out_bias: vec![0.0; d],
            },
            text: TextParams {
                token_embed: Matrix::zeros(v, h),
                out_proj: Matrix::zeros(d, h),
                out_bias: vec![0.0; d],
            },
            log_tau: 0.0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims)
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    /// Parameter groups in [`GROUP_NAMES`] order.
    pub fn groups(&self) -> [&[f64]; 10] {
        [
            &self.vision.patch_proj.data,
            &self.vision.patch_bias,
            &self.vision.hidden.data,
            &self.vision.hidden_bias,
            &self.vision.out_proj.data,
            &self.vision.out_bias,
            &self.text.token_embed.data,
            &self.text.out_proj.data,
            &self.text.out_bias,
            std::slice::from_ref(&self.log_tau),
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut [f64]; 10] {
        [
            &mut self.vision.patch_proj.data,
            &mut self.vision.patch_bias,
            &mut self.vision.hidden.data,
            &mut self.vision.hidden_bias,
            &mut self.vision.out_proj.data,
            &mut self.vision.out_bias,
            &mut self.text.token_embed.data,
            &mut self.text.out_proj.data,
            &mut self.text.out_bias,
            std::slice::from_mut(&mut self.log_tau),
        ]
    }

    pub fn num_values(&self) -> usize {
        self.groups().iter().map(|g| g.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|g| g.iter().all(|v| v.is_finite()))
    }

    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (a, b) in self.groups_mut().into_iter().zip(other.groups()) {
            axpy(a, scale, b);
        }
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.num_values() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [self.dims.patch, self.dims.hidden, self.dims.embed, self.dims.vocab] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for g in self.groups() {
            for v in g {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::MalformedHeader("bad DEC1 magic".into()));
        }
        let u = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let dims = EncoderDims {
            patch: u(4),
            hidden: u(8),
            embed: u(12),
            vocab: u(16),
        };
        if [dims.patch, dims.hidden, dims.embed, dims.vocab].contains(&0) {
            return Err(Error::MalformedHeader(format!("zero encoder dim in {dims:?}")));
        }
        let expected = dims
            .num_values()
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::MalformedHeader(format!("encoder dims {dims:?} overflow")))?;
        let payload = &bytes[20..];
        if payload.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                found: payload.len(),
            });
        }
        let mut params = Self::zeros(dims);
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        for g in params.groups_mut() {
            for v in g.iter_mut() {
                *v = values.next().unwrap();
            }
        }
        if !params.is_finite() {
            return Err(Error::MalformedHeader("non-finite checkpoint value".into()));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_checkpoint_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint_bytes(&read_file(path)?)
    }
}

/// Glorot-uniform weights, zero biases, temperature 0.07 (logit scale `1/0.07`).
pub fn init_params(seed: u64, dims: EncoderDims) -> EncoderParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = EncoderParams::zeros(dims);
    let mut fill = |m: &mut Matrix, fan_in: usize, fan_out: usize| {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in &mut m.data {
            *v = rng.random_range(-s..s);
        }
    };
    let (p2, h, d, v) = (dims.patch_len(), dims.hidden, dims.embed, dims.vocab);
    fill(&mut params.vision.patch_proj, p2, h);
    fill(&mut params.vision.hidden, h, h);
    fill(&mut params.vision.out_proj, h, d);
    fill(&mut params.text.token_embed, v, h);
    fill(&mut params.text.out_proj, h, d);
    params.log_tau = 0.07f64.ln();
    params
}

// ---------------------------------------------------------------------------
// forward

/// Mean over all non-overlapping `p x p` patches, flattened row-major.
pub fn image_features(montage: &Montage, patch: usize) -> Result<Vec<f64>> {
    let side = montage.side();
    if patch == 0 || side % patch != 0 {
        return Err(Error::ShapeMismatch(format!(
            "montage side {side} not divisible by patch size {patch}"
        )));
    }
    let n = side / patch;
    let mut acc = vec![0.0; patch * patch];
    let px = montage.pixels();
    for y in 0..side {
        let row = &px[y * side..(y + 1) * side];
        let acc_row = &mut acc[(y % patch) * patch..(y % patch + 1) * patch];
        for chunk in row.chunks_exact(patch) {
            for (a, &v) in acc_row.iter_mut().zip(chunk) {
                *a += v as f64;
            }
        }
    }
    let inv = 1.0 / (n * n) as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}

/// Activations kept for the backward pass of one image.
#[derive(Debug, Clone)]
pub struct VisionCache {
    features: Vec<f64>,
    pooled: Vec<f64>,
    hidden: Vec<f64>,
    norm: f64,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TextCache {
    tokens: Vec<u32>,
    activated: Vec<f64>,
    norm: f64,
    pub embedding: Vec<f64>,
}

fn normalize(pre: Vec<f64>) -> Result<(Vec<f64>, f64)> {
    let norm = l2_norm(&pre);
    if !norm.is_finite() || norm < MIN_NORM {
        return Err(Error::NormalizationDegenerate(norm));
    }
    Ok((pre.into_iter().map(|v| v / norm).collect(), norm))
}

pub fn forward_image(features: &[f64], params: &EncoderParams) -> Result<VisionCache> {
    let vp = &params.vision;
    if features.len() != vp.patch_proj.cols {
        return Err(Error::ShapeMismatch(format!(
            "image features have length {}, expected {}",
            features.len(),
            vp.patch_proj.cols
        )));
    }
    let mut pooled = vp.patch_proj.matvec(features);
    add_assign(&mut pooled, &vp.patch_bias);
    let mut hidden = vp.hidden.matvec(&pooled);
    add_assign(&mut hidden, &vp.hidden_bias);
    hidden.iter_mut().for_each(|v| *v = v.tanh());
    let mut pre = vp.out_proj.matvec(&hidden);
    add_assign(&mut pre, &vp.out_bias);
    let (embedding, norm) = normalize(pre)?;
    Ok(VisionCache {
        features: features.to_vec(),
        pooled,
        hidden,
        norm,
        embedding,
    })
}

pub fn forward_text(tokens: &TokenSequence, params: &EncoderParams) -> Result<TextCache> {
    let tp = &params.text;
    let content = tokens.content();
    if let Some(&bad) = content.iter().find(|&&id| id as usize >= tp.token_embed.rows) {
        return Err(Error::ShapeMismatch(format!(
            "token id {bad} outside vocabulary of {}",
            tp.token_embed.rows
        )));
    }
    if content.is_empty() {
        return Err(Error::NormalizationDegenerate(0.0));
    }
    let mut activated = vec![0.0; tp.token_embed.cols];
    for &id in content {
        add_assign(&mut activated, tp.token_embed.row(id as usize));
    }
    let inv = 1.0 / content.len() as f64;
    activated.iter_mut().for_each(|v| *v = (*v * inv).tanh());
    let mut pre = tp.out_proj.matvec(&activated);
    add_assign(&mut pre, &tp.out_bias);
    let (embedding, norm) = normalize(pre)?;
    Ok(TextCache {
        tokens: content.to_vec(),
        activated,
        norm,
        embedding,
    })
}

pub fn encode_image(montage: &Montage, params: &EncoderParams) -> Result<Vec<f64>> {
    let features = image_features(montage, params.dims.patch)?;
    Ok(forward_image(&features, params)?.embedding)
}

pub fn encode_text(tokens: &TokenSequence, params: &EncoderParams) -> Result<Vec<f64>> {
    Ok(forward_text(tokens, params)?.embedding)
}

// ---------------------------------------------------------------------------
// backward

/// Gradient through `y = x / |x|`: `(g - y (y . g)) / |x|`.
fn normalize_backward(embedding: &[f64], norm: f64, upstream: &[f64]) -> Vec<f64> {
    let proj = dot(embedding, upstream);
    embedding
        .iter()
        .zip(upstream)
        .map(|(y, g)| (g - y * proj) / norm)
        .collect()
}

/// Accumulates into `grads` the parameter gradient of one image given the
/// loss gradient w.r.t. its normalized embedding.
pub fn backward_image(cache: &VisionCache, params: &EncoderParams, upstream: &[f64], grads: &mut ParamGrads) {
    let vp = &params.vision;
    let gv = &mut grads.vision;
    let g_pre = normalize_backward(&cache.embedding, cache.norm, upstream);
    gv.out_proj.add_outer(&g_pre, &cache.hidden);
    add_assign(&mut gv.out_bias, &g_pre);
    let g_hidden = vp.out_proj.matvec_t(&g_pre);
    let g_z: Vec<f64> = g_hidden
        .iter()
        .zip(&cache.hidden)
        .map(|(g, a)| g * (1.0 - a * a))
        .collect();
    gv.hidden.add_outer(&g_z, &cache.pooled);
    add_assign(&mut gv.hidden_bias, &g_z);
    let g_pooled = vp.hidden.matvec_t(&g_z);
    gv.patch_proj.add_outer(&g_pooled, &cache.features);
    add_assign(&mut gv.patch_bias, &g_pooled);
}

pub fn backward_text(cache: &TextCache, params: &EncoderParams, upstream: &[f64], grads: &mut ParamGrads) {
    let tp = &params.text;
    let gt = &mut grads.text;
    let g_pre = normalize_backward(&cache.embedding, cache.norm, upstream);
    gt.out_proj.add_outer(&g_pre, &cache.activated);
    add_assign(&mut gt.out_bias, &g_pre);
    let g_act = tp.out_proj.matvec_t(&g_pre);
    let inv = 1.0 / cache.tokens.len() as f64;
    let g_pooled: Vec<f64> = g_act
        .iter()
        .zip(&cache.activated)
        .map(|(g, a)| g * (1.0 - a * a) * inv)
        .collect();
    for &id in &cache.tokens {
        add_assign(gt.token_embed.row_mut(id as usize), &g_pooled);
    }
}

/// Cached forward state for a batch of paired images and texts.
#[derive(Debug, Clone)]
pub struct BatchCache {
    pub images: Vec<VisionCache>,
    pub texts: Vec<TextCache>,
}

impl BatchCache {
    pub fn image_embeddings(&self) -> Vec<&[f64]> {
        self.images.iter().map(|c| c.embedding.as_slice()).collect()
    }
    pub fn text_embeddings(&self) -> Vec<&[f64]> {
        self.texts.iter().map(|c| c.embedding.as_slice()).collect()
    }
}

pub fn forward_batch(
    features: &[&[f64]],
    tokens: &[&TokenSequence],
    params: &EncoderParams,
) -> Result<BatchCache> {
    if features.len() != tokens.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} images paired with {} texts",
            features.len(),
            tokens.len()
        )));
    }
    Ok(BatchCache {
        images: features
            .iter()
            .map(|f| forward_image(f, params))
            .collect::<Result<_>>()?,
        texts: tokens
            .iter()
            .map(|t| forward_text(t, params))
            .collect::<Result<_>>()?,
    })
}

/// Loss gradients w.r.t. the batch's normalized embeddings and `log_tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpstreamGrads {
    pub images: Vec<Vec<f64>>,
    pub texts: Vec<Vec<f64>>,
    pub log_tau: f64,
}

impl UpstreamGrads {
    pub fn zeros(batch: usize, dim: usize) -> Self {
        Self {
            images: vec![vec![0.0; dim]; batch],
            texts: vec![vec![0.0; dim]; batch],
            log_tau: 0.0,
        }
    }
}

/// Parameter gradients for a cached batch.
pub fn backward(batch: &BatchCache, params: &EncoderParams, upstream: &UpstreamGrads) -> ParamGrads {
    let mut grads = params.zeros_like();
    for (cache, g) in batch.images.iter().zip(&upstream.images) {
        backward_image(cache, params, g, &mut grads);
    }
    for (cache, g) in batch.texts.iter().zip(&upstream.texts) {
        backward_text(cache, params, g, &mut grads);
    }
    grads.log_tau = upstream.log_tau;
    grads
}
