//! Symmetric image/text contrastive objective, AdamW, patient-level
//! splitting and the training loop.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpusio::{read_file, write_atomic, DatasetManifest, Split};
use crate::encoder::{backward, dot, forward_batch, EncoderParams, Matrix, ParamGrads, UpstreamGrads};
use crate::error::{Error, Result};
use crate::textprep::TokenSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub seed: u64,
    pub split_ratio: f64,
    /// Backpropagate into the log-temperature.
    pub train_tau: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            max_epochs: 100,
            lr: 5e-5,
            weight_decay: 1e-3,
            betas: (0.9, 0.98),
            eps: 1e-8,
            seed: 0,
            split_ratio: 0.8,
            train_tau: true,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidTrainer(m.into()));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad("split_ratio must lie strictly between 0 and 1");
        }
        if !(self.lr >= 0.0 && self.weight_decay >= 0.0 && self.eps > 0.0) {
            return bad("lr and weight_decay must be non-negative, eps positive");
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad("betas must lie in [0, 1)");
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// contrastive loss

/// `S[i][k] = <v_i, u_k> / tau`.
pub fn similarity_logits(images: &[&[f64]], texts: &[&[f64]], tau: f64) -> Matrix {
    let b = images.len();
    let mut s = Matrix::zeros(b, texts.len());
    for (i, v) in images.iter().enumerate() {
        for (k, u) in texts.iter().enumerate() {
            s.data[i * texts.len() + k] = dot(v, u) / tau;
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionLoss {
    pub mean: f64,
    pub per_pair: Vec<f64>,
}

fn check_logits(s: &Matrix) -> Result<()> {
    if s.rows != s.cols || s.rows < 2 {
        return Err(Error::ShapeMismatch(format!(
            "logits must be square with B >= 2, got {}x{}",
            s.rows, s.cols
        )));
    }
    if s.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLogits);
    }
    Ok(())
}

/// Stable `log sum exp`.
fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn direction_loss(s: &Matrix, transpose: bool) -> Result<DirectionLoss> {
    check_logits(s)?;
    let b = s.rows;
    let at = |i: usize, k: usize| if transpose { s.data[k * b + i] } else { s.data[i * b + k] };
    let per_pair: Vec<f64> = (0..b)
        .map(|i| logsumexp((0..b).map(move |k| at(i, k))) - at(i, i))
        .collect();
    let mean = per_pair.iter().sum::<f64>() / b as f64;
    Ok(DirectionLoss { mean, per_pair })
}

/// Image-to-text cross-entropy: softmax over each row of `S`.
pub fn loss_image_to_text(s: &Matrix) -> Result<DirectionLoss> {
    direction_loss(s, false)
}

/// Text-to-image cross-entropy: softmax over each column of `S`.
pub fn loss_text_to_image(s: &Matrix) -> Result<DirectionLoss> {
    direction_loss(s, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub image_to_text: f64,
    pub text_to_image: f64,
    pub total: f64,
}

/// Mean of both directions.
pub fn total_loss(s: &Matrix) -> Result<f64> {
    Ok((loss_image_to_text(s)?.mean + loss_text_to_image(s)?.mean) / 2.0)
}

/// Loss and its gradient w.r.t. every entry of `S`.
pub fn total_loss_with_grad(s: &Matrix) -> Result<(LossBreakdown, Matrix)> {
    let v2u = loss_image_to_text(s)?.mean;
    let u2v = loss_text_to_image(s)?.mean;
    let b = s.rows;
    let scale = 1.0 / (2.0 * b as f64);
    let mut grad = Matrix::zeros(b, b);
    for i in 0..b {
        let row = s.row(i);
        let lse = logsumexp(row.iter().copied());
        for k in 0..b {
            grad.data[i * b + k] += ((row[k] - lse).exp() - f64::from(i == k)) * scale;
        }
    }
    for k in 0..b {
        let col = (0..b).map(|i| s.data[i * b + k]);
        let lse = logsumexp(col);
        for i in 0..b {
            grad.data[i * b + k] += ((s.data[i * b + k] - lse).exp() - f64::from(i == k)) * scale;
        }
    }
    Ok((
        LossBreakdown {
            image_to_text: v2u,
            text_to_image: u2v,
            total: (v2u + u2v) / 2.0,
        },
        grad,
    ))
}

/// Forward, loss and full parameter gradient for one batch of pairs.
pub fn loss_and_grads(
    params: &EncoderParams,
    features: &[&[f64]],
    tokens: &[&TokenSequence],
    train_tau: bool,
) -> Result<(LossBreakdown, ParamGrads)> {
    let cache = forward_batch(features, tokens, params)?;
    let v = cache.image_embeddings();
    let u = cache.text_embeddings();
    let tau = params.tau();
    let s = similarity_logits(&v, &u, tau);
    let (loss, ds) = total_loss_with_grad(&s)?;
    let b = v.len();
    let d = params.dims.embed;
    let mut up = UpstreamGrads::zeros(b, d);
    for i in 0..b {
        for k in 0..b {
            let g = ds.data[i * b + k] / tau;
            if g == 0.0 {
                continue;
            }
            for j in 0..d {
                up.images[i][j] += g * u[k][j];
                up.texts[k][j] += g * v[i][j];
            }
        }
    }
    if train_tau {
        // dS/dlog_tau = -S
        up.log_tau = -ds.data.iter().zip(&s.data).map(|(g, x)| g * x).sum::<f64>();
    }
    Ok((loss, backward(&cache, params, &up)))
}

// ---------------------------------------------------------------------------
// AdamW

pub const OPTIMIZER_MAGIC: &[u8; 4] = b"OPT1";

/// First/second moments with the same layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub m: ParamGrads,
    pub v: ParamGrads,
}

impl AdamWState {
    pub fn new(params: &EncoderParams) -> Self {
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// `OPT1`, u64 step, u64 value count, then `m` and `v` as f64 in
    /// parameter-group order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.m.num_values();
        let mut out = Vec::with_capacity(20 + 16 * n);
        out.extend_from_slice(OPTIMIZER_MAGIC);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        for g in self.m.groups().into_iter().chain(self.v.groups()) {
            for x in g {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], params: &EncoderParams) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..4] != OPTIMIZER_MAGIC {
            return Err(Error::MalformedHeader("bad OPT1 magic".into()));
        }
        let step = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
        let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let mut state = Self::new(params);
        if n != params.num_values() || bytes.len() != 20 + 16 * n {
            return Err(Error::SizeMismatch {
                expected: 20 + 16 * params.num_values(),
                found: bytes.len(),
            });
        }
        state.step = step;
        let mut values = bytes[20..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let AdamWState { m, v, .. } = &mut state;
        for g in m.groups_mut().into_iter().chain(v.groups_mut()) {
            for x in g.iter_mut() {
                *x = values.next().unwrap();
            }
        }
        let moments_ok = state.m.is_finite()
            && state.v.is_finite()
            && state.v.groups().iter().all(|g| g.iter().all(|&x| x >= 0.0));
        if !moments_ok {
            return Err(Error::MalformedHeader("invalid optimizer moments".into()));
        }
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path, params: &EncoderParams) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, params)
    }
}

/// Hyperparameters of one AdamW update.
#[derive(Debug, Clone, Copy)]
pub struct AdamWHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl From<&TrainerConfig> for AdamWHyper {
    fn from(c: &TrainerConfig) -> Self {
        Self {
            lr: c.lr,
            weight_decay: c.weight_decay,
            betas: c.betas,
            eps: c.eps,
        }
    }
}

/// One AdamW update of a flat slice at step `t >= 1`.
///
/// Weight decay shrinks the parameter directly and never enters the
/// moment estimates.
pub fn adamw_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    hp: AdamWHyper,
    t: u64,
) {
    let (b1, b2) = hp.betas;
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for i in 0..param.len() {
        param[i] -= hp.lr * hp.weight_decay * param[i];
        m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
        v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
}

/// Applies one AdamW step to every parameter group and advances `state.step`.
pub fn adamw_step(
    params: &mut EncoderParams,
    grads: &ParamGrads,
    state: &mut AdamWState,
    hp: AdamWHyper,
) -> Result<()> {
    if grads.dims != params.dims || state.m.dims != params.dims {
        return Err(Error::ShapeMismatch(format!(
            "gradient dims {:?} / optimizer dims {:?} vs params {:?}",
            grads.dims, state.m.dims, params.dims
        )));
    }
    state.step += 1;
    let t = state.step;
    let AdamWState { m, v, .. } = state;
    for (((p, g), m), v) in params
        .groups_mut()
        .into_iter()
        .zip(grads.groups())
        .zip(m.groups_mut())
        .zip(v.groups_mut())
    {
        adamw_update(p, g, m, v, hp, t);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// patient split

/// `ceil(ratio * patients)`, robust to `0.8 * 460 = 368.00000000000006`.
pub fn train_count(ratio: f64, patients: usize) -> usize {
    ((ratio * patients as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Assigns whole patients to train/test: ids are sorted, shuffled by
/// `seed`, and the first `ceil(ratio * P)` go to train.
pub fn split_by_patient(manifest: &DatasetManifest, ratio: f64, seed: u64) -> DatasetManifest {
    let ids: BTreeSet<&str> = manifest.entries.iter().map(|e| e.patient_id.as_str()).collect();
    let mut ids: Vec<&str> = ids.into_iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = train_count(ratio, ids.len()).min(ids.len());
    let assignment: HashMap<&str, Split> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (*id, if i < n_train { Split::Train } else { Split::Test }))
        .collect();
    let mut out = manifest.clone();
    for e in &mut out.entries {
        e.split = assignment[e.patient_id.as_str()];
    }
    out
}

// ---------------------------------------------------------------------------
// training loop

/// Paired training examples: precomputed image features and tokenized
/// reports.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub features: Vec<Vec<f64>>,
    pub tokens: Vec<TokenSequence>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.features.len()
    }
    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub tau: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss_v2u,loss_u2v,total,tau\n");
    for r in history {
        writeln!(
            out,
            "{},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.epoch, r.loss.image_to_text, r.loss.text_to_image, r.loss.total, r.tau
        )
        .unwrap();
    }
    out
}

/// Seed for the shuffle of `epoch`.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    // splitmix64 finalizer over (seed, epoch)
    let mut z = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Batch index lists for one epoch; a trailing batch smaller than 2 is dropped.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(seed, epoch)));
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Runs `max_epochs` epochs of AdamW on the symmetric loss.
///
/// `params` and `state` are updated in place; a batch producing non-finite
/// logits or gradients aborts before its update, so on error they still hold
/// the last good state. `on_epoch` runs after every epoch (checkpointing).
pub fn train<F>(
    data: &TrainingSet,
    params: &mut EncoderParams,
    state: &mut AdamWState,
    config: &TrainerConfig,
    mut on_epoch: F,
) -> Result<Vec<EpochRecord>>
where
    F: FnMut(&EpochRecord, &EncoderParams, &AdamWState) -> Result<()>,
{
    config.validate()?;
    if data.len() < 2 || data.features.len() != data.tokens.len() {
        return Err(Error::InvalidTrainer(format!(
            "training set needs at least 2 aligned pairs, got {} images / {} texts",
            data.features.len(),
            data.tokens.len()
        )));
    }
    if config.batch_size > data.len() {
        return Err(Error::InvalidTrainer(format!(
            "batch_size {} exceeds training set size {}",
            config.batch_size,
            data.len()
        )));
    }
    let hp = AdamWHyper::from(config);
    let mut history = Vec::with_capacity(config.max_epochs);
    for epoch in 0..config.max_epochs {
        let mut sums = (0.0, 0.0);
        let batches = epoch_batches(data.len(), config.batch_size, config.seed, epoch);
        for idx in &batches {
            let feats: Vec<&[f64]> = idx.iter().map(|&i| data.features[i].as_slice()).collect();
            let toks: Vec<&TokenSequence> = idx.iter().map(|&i| &data.tokens[i]).collect();
            let (loss, grads) = loss_and_grads(params, &feats, &toks, config.train_tau)?;
            if !grads.is_finite() || !loss.total.is_finite() {
                return Err(Error::NonFiniteLogits);
            }
            sums.0 += loss.image_to_text;
            sums.1 += loss.text_to_image;
            let log_tau = params.log_tau;
            adamw_step(params, &grads, state, hp)?;
            if !config.train_tau {
                params.log_tau = log_tau;
            }
        }
        let n = batches.len() as f64;
        let record = EpochRecord {
            epoch,
            loss: LossBreakdown {
                image_to_text: sums.0 / n,
                text_to_image: sums.1 / n,
                total: (sums.0 + sums.1) / (2.0 * n),
            },
            tau: params.tau(),
        };
        on_epoch(&record, params, state)?;
        history.push(record);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpusio::ManifestEntry;
    use crate::encoder::{init_params, EncoderDims};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix {
            rows: rows.len(),
            cols: rows[0].len(),
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    /// -ln(e / (e + 1)) evaluated independently.
    const ALIGNED_B2: f64 = 0.313_261_687_518_222_8;

    #[test]
    fn aligned_orthogonal_pair() {
        let v: Vec<&[f64]> = vec![&[1.0, 0.0], &[0.0, 1.0]];
        let s = similarity_logits(&v, &v, 1.0);
        assert_eq!(s, mat(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let l = loss_image_to_text(&s).unwrap();
        for x in &l.per_pair {
            assert!((x - ALIGNED_B2).abs() < 1e-12);
        }
        assert!((loss_text_to_image(&s).unwrap().mean - ALIGNED_B2).abs() < 1e-12);
        assert!((total_loss(&s).unwrap() - ALIGNED_B2).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_give_log_b() {
        for b in [2, 7, 30] {
            let s = Matrix {
                rows: b,
                cols: b,
                data: vec![3.5; b * b],
            };
            assert!((loss_image_to_text(&s).unwrap().mean - (b as f64).ln()).abs() < 1e-12);
        }
    }

    fn random_logits(rng: &mut ChaCha8Rng, b: usize) -> Matrix {
        Matrix {
            rows: b,
            cols: b,
            data: (0..b * b).map(|_| rng.random_range(-10.0..10.0)).collect(),
        }
    }

    fn naive_row_loss(s: &Matrix, i: usize) -> f64 {
        let denom: f64 = s.row(i).iter().map(|x| x.exp()).sum();
        -(s.row(i)[i].exp() / denom).ln()
    }

    fn transpose(s: &Matrix) -> Matrix {
        let mut t = Matrix::zeros(s.cols, s.rows);
        for i in 0..s.rows {
            for k in 0..s.cols {
                t.data[k * s.rows + i] = s.data[i * s.cols + k];
            }
        }
        t
    }

    #[test]
    fn stable_loss_matches_naive_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let b = rng.random_range(2..12);
            let s = random_logits(&mut rng, b);
            let l = loss_image_to_text(&s).unwrap();
            for i in 0..b {
                assert!((l.per_pair[i] - naive_row_loss(&s, i)).abs() < 1e-12);
            }
            let t2i = loss_text_to_image(&s).unwrap();
            assert_eq!(t2i, loss_image_to_text(&transpose(&s)).unwrap());
        }
    }

    #[test]
    fn symmetric_logits_give_equal_directions() {
        let s = mat(&[&[1.0, 0.2, -0.3], &[0.2, 0.5, 0.1], &[-0.3, 0.1, 2.0]]);
        assert_eq!(
            loss_image_to_text(&s).unwrap(),
            loss_text_to_image(&s).unwrap()
        );
    }

    #[test]
    fn non_finite_logits_rejected() {
        let s = mat(&[&[1.0, f64::NAN], &[0.0, 1.0]]);
        assert!(matches!(total_loss(&s), Err(Error::NonFiniteLogits)));
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_logits(&mut rng, 5);
        let (_, g) = total_loss_with_grad(&s).unwrap();
        let eps = 1e-6;
        for j in 0..25 {
            let mut plus = s.clone();
            plus.data[j] += eps;
            let mut minus = s.clone();
            minus.data[j] -= eps;
            let fd = (total_loss(&plus).unwrap() - total_loss(&minus).unwrap()) / (2.0 * eps);
            assert!((fd - g.data[j]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn permutation_equivariance(seed in 0u64..500, b in 2usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_logits(&mut rng, b);
            let mut perm: Vec<usize> = (0..b).collect();
            perm.shuffle(&mut rng);
            let mut p = Matrix::zeros(b, b);
            for i in 0..b {
                for k in 0..b {
                    p.data[i * b + k] = s.data[perm[i] * b + perm[k]];
                }
            }
            let a = loss_image_to_text(&s).unwrap();
            let c = loss_image_to_text(&p).unwrap();
            for i in 0..b {
                prop_assert!((c.per_pair[i] - a.per_pair[perm[i]]).abs() < 1e-12);
            }
            prop_assert!((a.mean - c.mean).abs() < 1e-12);
            prop_assert!(total_loss(&s).unwrap() >= 0.0);
            let st = transpose(&s);
            prop_assert!((total_loss(&s).unwrap() - total_loss(&st).unwrap()).abs() < 1e-12);
        }
    }

    fn one_group(x: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        (vec![x], vec![0.0], vec![0.0])
    }

    #[test]
    fn adamw_zero_grad_zero_decay_is_identity() {
        let (mut p, mut m, mut v) = one_group(0.7);
        let hp = AdamWHyper {
            lr: 1e-3,
            weight_decay: 0.0,
            betas: (0.9, 0.98),
            eps: 1e-8,
        };
        adamw_update(&mut p, &[0.0], &mut m, &mut v, hp, 1);
        assert_eq!(p, vec![0.7]);
    }

    #[test]
    fn adamw_first_step_is_minus_lr() {
        let (mut p, mut m, mut v) = one_group(0.0);
        let hp = AdamWHyper {
            lr: 5e-5,
            weight_decay: 1e-3,
            betas: (0.9, 0.98),
            eps: 1e-8,
        };
        adamw_update(&mut p, &[1.0], &mut m, &mut v, hp, 1);
        // m_hat = v_hat = 1 after bias correction: step = -lr / (1 + eps)
        assert!((p[0] + 5e-5 / (1.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn adamw_decay_is_decoupled() {
        let (mut p, mut m, mut v) = one_group(2.0);
        let hp = AdamWHyper {
            lr: 0.1,
            weight_decay: 0.5,
            betas: (0.9, 0.98),
            eps: 1e-8,
        };
        adamw_update(&mut p, &[0.0], &mut m, &mut v, hp, 1);
        assert_eq!(p[0], 2.0 * (1.0 - 0.1 * 0.5));
        assert_eq!((m[0], v[0]), (0.0, 0.0));
    }

    #[test]
    fn adamw_step_checks_shapes() {
        let d = EncoderDims {
            patch: 2,
            hidden: 3,
            embed: 2,
            vocab: 5,
        };
        let mut p = init_params(0, d);
        let g = init_params(
            0,
            EncoderDims {
                vocab: 6,
                ..d
            },
        );
        let mut st = AdamWState::new(&p);
        let hp = AdamWHyper::from(&TrainerConfig::default());
        assert!(matches!(
            adamw_step(&mut p, &g, &mut st, hp),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn optimizer_state_round_trip() {
        let d = EncoderDims {
            patch: 2,
            hidden: 3,
            embed: 2,
            vocab: 5,
        };
        let p = init_params(0, d);
        let mut st = AdamWState::new(&p);
        st.step = 17;
        st.m = init_params(1, d);
        st.v = init_params(2, d);
        for g in st.v.groups_mut() {
            g.iter_mut().for_each(|x| *x *= *x);
        }
        assert_eq!(AdamWState::from_bytes(&st.to_bytes(), &p).unwrap(), st);
    }

    fn manifest(p: usize) -> DatasetManifest {
        DatasetManifest {
            classes: vec![],
            entries: (0..p)
                .map(|i| ManifestEntry {
                    patient_id: format!("P{i:04}"),
                    volume_path: "v".into(),
                    report_path: "r".into(),
                    labels: None,
                    split: Split::Unassigned,
                })
                .collect(),
        }
    }

    #[test]
    fn split_counts() {
        let m = split_by_patient(&manifest(10), 0.8, 1);
        assert_eq!(m.entries_in(Split::Train).count(), 8);
        assert_eq!(m.entries_in(Split::Test).count(), 2);
        m.validate(5).unwrap();
        let m = split_by_patient(&manifest(460), 0.8, 1);
        assert_eq!(m.entries_in(Split::Train).count(), 368);
        assert_eq!(m.entries_in(Split::Test).count(), 92);
        assert_eq!(train_count(0.8, 120), 96);
        assert_eq!(train_count(0.5, 3), 2);
    }

    #[test]
    fn split_is_seeded() {
        let a = split_by_patient(&manifest(30), 0.8, 4);
        assert_eq!(a, split_by_patient(&manifest(30), 0.8, 4));
        assert_ne!(a, split_by_patient(&manifest(30), 0.8, 5));
    }

    #[test]
    fn frozen_tau_survives_weight_decay() {
        use crate::encoder::{init_params, EncoderDims};
        use crate::textprep::{build_vocabulary, tokenize, TextConfig};
        let reports = ["left lung clear", "right lung nodule", "heart normal size", "no effusion seen"];
        let vocab = build_vocabulary(&reports, 1).unwrap();
        let text = TextConfig::default();
        let dims = EncoderDims { patch: 2, hidden: 4, embed: 3, vocab: vocab.len() };
        let data = TrainingSet {
            features: (0..4).map(|i| vec![0.1 * i as f64, 0.5, 0.2, 0.9 - 0.2 * i as f64]).collect(),
            tokens: reports.iter().map(|r| tokenize(r, &vocab, &text)).collect(),
        };
        let mut config = TrainerConfig {
            batch_size: 4,
            max_epochs: 5,
            lr: 1e-2,
            weight_decay: 0.5,
            ..TrainerConfig::default()
        };
        for train_tau in [false, true] {
            config.train_tau = train_tau;
            let mut params = init_params(1, dims);
            let start = params.log_tau;
            let mut state = AdamWState::new(&params);
            train(&data, &mut params, &mut state, &config, |_, _, _| Ok(())).unwrap();
            assert_eq!(params.log_tau == start, !train_tau);
        }
    }

    #[test]
    fn epoch_batches_drop_singletons() {
        let b = epoch_batches(201, 100, 0, 0);
        assert_eq!(b.len(), 2);
        let b = epoch_batches(202, 100, 0, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![100, 100, 2]);
        assert_ne!(epoch_batches(50, 10, 0, 0), epoch_batches(50, 10, 0, 1));
    }
}
