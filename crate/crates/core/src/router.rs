//! Learned contrastive router.
//!
//! Questions and methods are embedded in a shared space: a small MLP maps
//! question features to an embedding, and every method owns a free embedding
//! vector. Routing picks the method whose embedding has the highest dot
//! product with the question's. Training pulls each question towards its
//! best-utility method with a softmax contrastive loss, while a ratio
//! regularizer nudges similarity ratios between sibling methods (same
//! generation setup, different draw count) towards the ratios of their
//! accuracy targets, which come from the aggregation bounds when their
//! hypotheses hold.
//!
//! Gradients are written out by hand over one flat parameter vector, which
//! keeps the whole trainer dependency-free and makes finite-difference
//! checking trivial.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write as IoWrite};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bounds::{target_value, TARGET_FLOOR};
use crate::dataset::{
    normalize_costs, positive_method, sibling_pairs, utility, CostTransform, MethodUniverse,
    QuestionRecord, UtilityConfig,
};
use crate::{Error, Result};

/// Dimensions of the embedding model; fixes the flat parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderShape {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    /// Number of methods, each owning one embedding vector.
    pub methods: usize,
}

struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    v: usize,
    total: usize,
}

impl EmbedderShape {
    fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden_dim == 0 || self.embed_dim == 0 || self.methods == 0
        {
            return Err(Error::Domain(
                "embedder dimensions and method count must all be >= 1".into(),
            ));
        }
        Ok(())
    }

    fn offsets(&self) -> Offsets {
        let (d_in, h, d, m) = (self.feature_dim, self.hidden_dim, self.embed_dim, self.methods);
        let w1 = 0;
        let b1 = w1 + h * d_in;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + d * h;
        let v = b3 + d;
        let total = v + m * d;
        Offsets { w1, b1, w2, b2, w3, b3, v, total }
    }

    /// Length of the flat parameter vector: three affine layers plus one
    /// embedding per method.
    pub fn param_count(&self) -> usize {
        self.offsets().total
    }
}

/// `out = W x + b` with `w` row-major `rows x cols`.
fn affine(w: &[f64], b: &[f64], x: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = b[r];
        for c in 0..cols {
            acc += row[c] * x[c];
        }
        out[r] = acc;
    }
}

fn relu_inplace(z: &mut [f64]) {
    for v in z.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Forward pass through the three layers, writing post-activation buffers.
fn forward_layers(
    shape: &EmbedderShape,
    params: &[f64],
    x: &[f64],
    z1: &mut [f64],
    z2: &mut [f64],
    q: &mut [f64],
) {
    let o = shape.offsets();
    let (d_in, h, d) = (shape.feature_dim, shape.hidden_dim, shape.embed_dim);
    affine(&params[o.w1..o.b1], &params[o.b1..o.w2], x, h, d_in, z1);
    relu_inplace(z1);
    affine(&params[o.w2..o.b2], &params[o.b2..o.w3], z1, h, h, z2);
    relu_inplace(z2);
    affine(&params[o.w3..o.b3], &params[o.b3..o.v], z2, d, h, q);
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Negated squared Euclidean distance; an alternative similarity useful for
/// inspecting contrastive losses, not used by routing or training.
pub fn neg_l2(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    -a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
}

fn check_sim_matrix(sims: &[Vec<f64>]) -> Result<usize> {
    if sims.is_empty() {
        return Err(Error::Domain("similarity matrix must have at least one row".into()));
    }
    let m = sims[0].len();
    if m == 0 {
        return Err(Error::Domain("similarity rows must not be empty".into()));
    }
    for row in sims {
        if row.len() != m {
            return Err(Error::Domain("similarity rows must all have the same length".into()));
        }
        if row.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numerical("non-finite similarity".into()));
        }
    }
    Ok(m)
}

/// Mean softmax cross-entropy of each row against its positive column:
/// `mean_j [ log sum_i exp(s_ji) - s_j,pos_j ]`.
pub fn contrastive_loss(sims: &[Vec<f64>], positives: &[usize]) -> Result<f64> {
    let m = check_sim_matrix(sims)?;
    if positives.len() != sims.len() {
        return Err(Error::Domain("one positive index per row is required".into()));
    }
    let mut total = 0.0;
    for (row, &pos) in sims.iter().zip(positives) {
        if pos >= m {
            return Err(Error::Domain(format!("positive index {pos} out of range for {m} methods")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        total += lse - row[pos];
    }
    Ok(total / sims.len() as f64)
}

/// Similarity pushed away from zero so it can serve as a denominator:
/// `sign(s) * max(|s|, eps)`, with `sign(0) = +1`.
fn clamped(s: f64, eps: f64) -> f64 {
    if s >= 0.0 {
        s.max(eps)
    } else {
        s.min(-eps)
    }
}

/// Mean over rows of the squared mismatch between similarity ratios and
/// target ratios across sibling pairs:
/// `sum_(a,b) (s_a / clamped(s_b) - T_a / T_b)^2`.
///
/// Pairs whose denominator target sits at the floor are skipped; a
/// non-finite target is an error naming the pair.
pub fn ratio_reg_loss(
    sims: &[Vec<f64>],
    targets: &[Vec<f64>],
    pairs: &[(usize, usize)],
    sim_epsilon: f64,
) -> Result<f64> {
    let m = check_sim_matrix(sims)?;
    if targets.len() != sims.len() {
        return Err(Error::Domain("one target row per similarity row is required".into()));
    }
    if !(sim_epsilon.is_finite() && sim_epsilon > 0.0) {
        return Err(Error::Domain(format!("sim_epsilon {sim_epsilon} must be positive")));
    }
    for &(a, b) in pairs {
        if a >= m || b >= m {
            return Err(Error::Domain(format!("sibling pair ({a}, {b}) out of range for {m} methods")));
        }
    }
    let mut total = 0.0;
    for (row, target_row) in sims.iter().zip(targets) {
        if target_row.len() != m {
            return Err(Error::Domain("target rows must match similarity rows".into()));
        }
        for &(a, b) in pairs {
            let (ta, tb) = (target_row[a], target_row[b]);
            if !ta.is_finite() || !tb.is_finite() {
                return Err(Error::Domain(format!(
                    "missing or non-finite target for sibling pair ({a}, {b})"
                )));
            }
            if tb < TARGET_FLOOR {
                continue;
            }
            let e = row[a] / clamped(row[b], sim_epsilon) - ta / tb;
            total += e * e;
        }
    }
    Ok(total / sims.len() as f64)
}

/// Full training objective: contrastive plus `tau` times the ratio term.
pub fn total_loss(
    sims: &[Vec<f64>],
    positives: &[usize],
    targets: &[Vec<f64>],
    pairs: &[(usize, usize)],
    tau: f64,
    sim_epsilon: f64,
) -> Result<f64> {
    if !tau.is_finite() || tau < 0.0 {
        return Err(Error::Domain(format!("tau {tau} must be finite and nonnegative")));
    }
    let con = contrastive_loss(sims, positives)?;
    if tau == 0.0 {
        return Ok(con);
    }
    Ok(con + tau * ratio_reg_loss(sims, targets, pairs, sim_epsilon)?)
}

/// One training batch, with features already standardized.
pub struct LossInputs<'a> {
    pub features: &'a [Vec<f64>],
    pub positives: &'a [usize],
    /// Per-question, per-method routing targets.
    pub targets: &'a [Vec<f64>],
    pub pairs: &'a [(usize, usize)],
    pub tau: f64,
    pub sim_epsilon: f64,
}

fn check_inputs(shape: &EmbedderShape, params: &[f64], inputs: &LossInputs) -> Result<()> {
    shape.validate()?;
    if params.len() != shape.param_count() {
        return Err(Error::Schema(format!(
            "expected {} parameters for this shape, got {}",
            shape.param_count(),
            params.len()
        )));
    }
    if inputs.features.is_empty() || inputs.features.len() != inputs.positives.len() {
        return Err(Error::Domain("batch needs matching nonempty features and positives".into()));
    }
    if inputs.features.iter().any(|f| f.len() != shape.feature_dim) {
        return Err(Error::Domain(format!(
            "feature rows must have length {}",
            shape.feature_dim
        )));
    }
    Ok(())
}

fn similarity_rows(shape: &EmbedderShape, params: &[f64], features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let o = shape.offsets();
    let (h, d, m) = (shape.hidden_dim, shape.embed_dim, shape.methods);
    let mut z1 = vec![0.0; h];
    let mut z2 = vec![0.0; h];
    let mut q = vec![0.0; d];
    let mut sims = Vec::with_capacity(features.len());
    for x in features {
        forward_layers(shape, params, x, &mut z1, &mut z2, &mut q);
        let row: Vec<f64> =
            (0..m).map(|i| dot(&q, &params[o.v + i * d..o.v + (i + 1) * d])).collect();
        sims.push(row);
    }
    sims
}

/// Objective value for a flat parameter vector on one batch.
pub fn training_loss(shape: &EmbedderShape, params: &[f64], inputs: &LossInputs) -> Result<f64> {
    check_inputs(shape, params, inputs)?;
    let sims = similarity_rows(shape, params, inputs.features);
    total_loss(&sims, inputs.positives, inputs.targets, inputs.pairs, inputs.tau, inputs.sim_epsilon)
}

/// Objective value and its gradient with respect to every parameter.
///
/// The value equals [`training_loss`] exactly; the gradient is exact
/// reverse-mode differentiation of the same computation (the clamp used in
/// ratio denominators contributes zero slope inside its flat region).
pub fn training_loss_grad(
    shape: &EmbedderShape,
    params: &[f64],
    inputs: &LossInputs,
) -> Result<(f64, Vec<f64>)> {
    check_inputs(shape, params, inputs)?;
    let o = shape.offsets();
    let (d_in, h, d, m) = (shape.feature_dim, shape.hidden_dim, shape.embed_dim, shape.methods);
    let batch = inputs.features.len() as f64;

    let sims = similarity_rows(shape, params, inputs.features);
    let loss = total_loss(
        &sims,
        inputs.positives,
        inputs.targets,
        inputs.pairs,
        inputs.tau,
        inputs.sim_epsilon,
    )?;

    let mut grad = vec![0.0; params.len()];
    let mut z1 = vec![0.0; h];
    let mut z2 = vec![0.0; h];
    let mut q = vec![0.0; d];
    let mut ds = vec![0.0; m];
    let mut dq = vec![0.0; d];
    let mut dz2 = vec![0.0; h];
    let mut dz1 = vec![0.0; h];

    for (j, x) in inputs.features.iter().enumerate() {
        forward_layers(shape, params, x, &mut z1, &mut z2, &mut q);
        let row = &sims[j];

        // d(contrastive)/ds = (softmax - onehot(positive)) / batch.
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|s| (s - max).exp()).sum();
        for i in 0..m {
            ds[i] = (row[i] - max).exp() / denom / batch;
        }
        ds[inputs.positives[j]] -= 1.0 / batch;

        if inputs.tau > 0.0 {
            let target_row = &inputs.targets[j];
            for &(a, b) in inputs.pairs {
                let (ta, tb) = (target_row[a], target_row[b]);
                if tb < TARGET_FLOOR {
                    continue;
                }
                let sb = clamped(row[b], inputs.sim_epsilon);
                let e = row[a] / sb - ta / tb;
                let scale = 2.0 * e * inputs.tau / batch;
                ds[a] += scale / sb;
                if row[b].abs() > inputs.sim_epsilon {
                    ds[b] -= scale * row[a] / (sb * sb);
                }
            }
        }

        // Through the similarities into q and the method embeddings.
        dq.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..m {
            let vi = &params[o.v + i * d..o.v + (i + 1) * d];
            let gvi = &mut grad[o.v + i * d..o.v + (i + 1) * d];
            for t in 0..d {
                dq[t] += ds[i] * vi[t];
                gvi[t] += ds[i] * q[t];
            }
        }

        // Layer 3: q = W3 z2 + b3.
        for r in 0..d {
            grad[o.b3 + r] += dq[r];
            let g3_row = &mut grad[o.w3 + r * h..o.w3 + (r + 1) * h];
            for c in 0..h {
                g3_row[c] += dq[r] * z2[c];
            }
        }
        for c in 0..h {
            let mut acc = 0.0;
            for r in 0..d {
                acc += dq[r] * params[o.w3 + r * h + c];
            }
            dz2[c] = if z2[c] > 0.0 { acc } else { 0.0 };
        }

        // Layer 2: z2 = relu(W2 z1 + b2).
        for r in 0..h {
            grad[o.b2 + r] += dz2[r];
            let g2_row = &mut grad[o.w2 + r * h..o.w2 + (r + 1) * h];
            for c in 0..h {
                g2_row[c] += dz2[r] * z1[c];
            }
        }
        for c in 0..h {
            let mut acc = 0.0;
            for r in 0..h {
                acc += dz2[r] * params[o.w2 + r * h + c];
            }
            dz1[c] = if z1[c] > 0.0 { acc } else { 0.0 };
        }

        // Layer 1: z1 = relu(W1 x + b1).
        for r in 0..h {
            grad[o.b1 + r] += dz1[r];
            let g1_row = &mut grad[o.w1 + r * d_in..o.w1 + (r + 1) * d_in];
            for c in 0..d_in {
                g1_row[c] += dz1[r] * x[c];
            }
        }
    }

    Ok((loss, grad))
}

/// Routing target for every (question, method) cell: the bound-derived
/// [`target_value`] when the record carries a profile for the method's
/// generation setup, otherwise the empirical accuracy clamped to the same
/// floor.
pub fn build_target_table(
    records: &[QuestionRecord],
    universe: &MethodUniverse,
    small_n_threshold: u32,
) -> Result<Vec<Vec<f64>>> {
    let mut table = Vec::with_capacity(records.len());
    for record in records {
        let mut row = Vec::with_capacity(universe.len());
        for method in universe.methods() {
            let acc = record.accuracy[method.id];
            let t = match record.profile_for(method) {
                Some(profile) => {
                    target_value(profile, method.effective_rule(), method.n, acc, small_n_threshold)?
                }
                None => acc.clamp(TARGET_FLOOR, 1.0),
            };
            row.push(t);
        }
        table.push(row);
    }
    Ok(table)
}

/// Index of the best-utility method per question, under the given accuracy
/// weight and identity cost normalization.
pub fn build_positives(records: &[QuestionRecord], lambda: f64) -> Result<Vec<usize>> {
    let cfg = UtilityConfig::new(lambda, CostTransform::Identity)?;
    let mut positives = Vec::with_capacity(records.len());
    for record in records {
        let costs = normalize_costs(record, cfg.transform)?;
        let utilities = record
            .accuracy
            .iter()
            .zip(&costs)
            .map(|(&a, &c)| utility(a, c, &cfg))
            .collect::<Result<Vec<f64>>>()?;
        positives.push(positive_method(&utilities, &costs)?);
    }
    Ok(positives)
}

fn feature_stats(records: &[QuestionRecord]) -> Result<(Vec<f64>, Vec<f64>)> {
    let dim = records[0].features.len();
    let n = records.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in records {
        if r.features.len() != dim {
            return Err(Error::Schema(format!(
                "question {}: inconsistent feature dimension",
                r.qid
            )));
        }
        for (m, f) in mean.iter_mut().zip(&r.features) {
            *m += f;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut std = vec![0.0; dim];
    for r in records {
        for (s, (f, m)) in std.iter_mut().zip(r.features.iter().zip(&mean)) {
            *s += (f - m) * (f - m);
        }
    }
    for s in std.iter_mut() {
        *s = (*s / n).sqrt();
        if *s < 1e-8 {
            *s = 1.0;
        }
    }
    Ok((mean, std))
}

fn standardize(features: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    features
        .iter()
        .zip(mean.iter().zip(std))
        .map(|(f, (m, s))| (f - m) / s)
        .collect()
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize, lr: f64) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0, lr }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let c2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Accuracy weight of the utility that picks each question's positive.
    pub lambda: f64,
    /// Weight of the ratio regularizer.
    pub tau: f64,
    /// Embedding dimension.
    pub d: usize,
    /// Hidden width of the question embedder.
    pub h: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Floor keeping ratio denominators away from zero.
    pub sim_epsilon: f64,
    /// Below this draw count, score-max targets fall back to empirical
    /// accuracy.
    pub small_n_threshold: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            tau: 1e-3,
            d: 64,
            h: 256,
            lr: 1e-3,
            epochs: 200,
            batch: 128,
            seed: 0,
            sim_epsilon: 1e-6,
            small_n_threshold: 8,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Domain(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !self.tau.is_finite() || self.tau < 0.0 {
            return Err(Error::Domain(format!("tau {} must be nonnegative", self.tau)));
        }
        if self.d == 0 || self.h == 0 || self.epochs == 0 || self.batch == 0 {
            return Err(Error::Domain(
                "d, h, epochs, and batch must all be >= 1".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Domain(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.sim_epsilon.is_finite() && self.sim_epsilon > 0.0) {
            return Err(Error::Domain(format!(
                "sim_epsilon {} must be positive",
                self.sim_epsilon
            )));
        }
        Ok(())
    }
}

/// Question embedder weights in structured form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Embedder {
    feature_dim: usize,
    hidden_dim: usize,
    embed_dim: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    w3: Vec<f64>,
    b3: Vec<f64>,
}

impl Embedder {
    fn from_flat(shape: &EmbedderShape, params: &[f64]) -> Self {
        let o = shape.offsets();
        Self {
            feature_dim: shape.feature_dim,
            hidden_dim: shape.hidden_dim,
            embed_dim: shape.embed_dim,
            w1: params[o.w1..o.b1].to_vec(),
            b1: params[o.b1..o.w2].to_vec(),
            w2: params[o.w2..o.b2].to_vec(),
            b2: params[o.b2..o.w3].to_vec(),
            w3: params[o.w3..o.b3].to_vec(),
            b3: params[o.b3..o.v].to_vec(),
        }
    }

    fn validate(&self) -> Result<()> {
        let (d_in, h, d) = (self.feature_dim, self.hidden_dim, self.embed_dim);
        if d_in == 0 || h == 0 || d == 0 {
            return Err(Error::Schema("embedder dimensions must be >= 1".into()));
        }
        let lens = [
            (self.w1.len(), h * d_in),
            (self.b1.len(), h),
            (self.w2.len(), h * h),
            (self.b2.len(), h),
            (self.w3.len(), d * h),
            (self.b3.len(), d),
        ];
        if lens.iter().any(|(got, want)| got != want) {
            return Err(Error::Schema("embedder weight lengths do not match its dimensions".into()));
        }
        Ok(())
    }

    /// Embeds one already-standardized feature vector.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (d_in, h, d) = (self.feature_dim, self.hidden_dim, self.embed_dim);
        debug_assert_eq!(x.len(), d_in);
        let mut z1 = vec![0.0; h];
        let mut z2 = vec![0.0; h];
        let mut q = vec![0.0; d];
        affine(&self.w1, &self.b1, x, h, d_in, &mut z1);
        relu_inplace(&mut z1);
        affine(&self.w2, &self.b2, &z1, h, h, &mut z2);
        relu_inplace(&mut z2);
        affine(&self.w3, &self.b3, &z2, d, h, &mut q);
        q
    }
}

/// Trained router: embedder, method embeddings, feature standardization,
/// and the hash of the universe it was trained for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouterModel {
    embedder: Embedder,
    embeddings: Vec<Vec<f64>>,
    feature_mean: Vec<f64>,
    feature_std: Vec<f64>,
    universe_hash: String,
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    version: u32,
    model: RouterModel,
}

impl RouterModel {
    fn validate(&self) -> Result<()> {
        self.embedder.validate()?;
        if self.embeddings.is_empty() {
            return Err(Error::Schema("router has no method embeddings".into()));
        }
        if self.embeddings.iter().any(|v| v.len() != self.embedder.embed_dim) {
            return Err(Error::Schema("method embedding lengths do not match embed_dim".into()));
        }
        if self.feature_mean.len() != self.embedder.feature_dim
            || self.feature_std.len() != self.embedder.feature_dim
        {
            return Err(Error::Schema(
                "feature statistics do not match the embedder input dimension".into(),
            ));
        }
        if self.feature_std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Schema("feature stds must be positive".into()));
        }
        Ok(())
    }

    pub fn method_count(&self) -> usize {
        self.embeddings.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.embedder.feature_dim
    }

    pub fn universe_hash(&self) -> &str {
        &self.universe_hash
    }

    pub fn method_embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    /// Standardizes raw features and embeds them.
    pub fn embed(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.embedder.feature_dim {
            return Err(Error::Domain(format!(
                "expected {} features, got {}",
                self.embedder.feature_dim,
                features.len()
            )));
        }
        if features.iter().any(|f| !f.is_finite()) {
            return Err(Error::Domain("features must be finite".into()));
        }
        let x = standardize(features, &self.feature_mean, &self.feature_std);
        Ok(self.embedder.forward(&x))
    }

    /// Dot-product similarity against every method embedding.
    pub fn similarities(&self, features: &[f64]) -> Result<Vec<f64>> {
        let q = self.embed(features)?;
        Ok(self.embeddings.iter().map(|v| dot(&q, v)).collect())
    }

    /// Method id with the highest similarity; exact ties go to the lowest id.
    pub fn route(&self, features: &[f64]) -> Result<usize> {
        let sims = self.similarities(features)?;
        let mut best = 0usize;
        for (i, s) in sims.iter().enumerate().skip(1) {
            if *s > sims[best] {
                best = i;
            }
        }
        Ok(best)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        let checkpoint = Checkpoint { version: CHECKPOINT_VERSION, model: self.clone() };
        serde_json::to_writer(&mut out, &checkpoint)?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let checkpoint: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(Error::Schema(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                checkpoint.version
            )));
        }
        checkpoint.model.validate()?;
        Ok(checkpoint.model)
    }

    /// Loads a checkpoint and verifies it was trained for this universe.
    pub fn load_for_universe(path: &Path, universe: &MethodUniverse) -> Result<Self> {
        let model = Self::load(path)?;
        let expected = universe.sha256_hex();
        if model.universe_hash != expected {
            return Err(Error::Schema(format!(
                "checkpoint was trained for universe {} but this universe hashes to {expected}",
                model.universe_hash
            )));
        }
        Ok(model)
    }
}

/// Trains a router and returns it with the per-epoch mean loss history.
pub fn train_with_history(
    records: &[QuestionRecord],
    universe: &MethodUniverse,
    cfg: &TrainConfig,
) -> Result<(RouterModel, Vec<f64>)> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::Domain("training needs at least one record".into()));
    }
    let feature_dim = records[0].features.len();
    for record in records {
        record.validate(universe.len(), feature_dim)?;
    }

    let (mean, std) = feature_stats(records)?;
    let standardized: Vec<Vec<f64>> =
        records.iter().map(|r| standardize(&r.features, &mean, &std)).collect();
    let targets = build_target_table(records, universe, cfg.small_n_threshold)?;
    let positives = build_positives(records, cfg.lambda)?;
    let pairs = sibling_pairs(universe);

    let shape = EmbedderShape {
        feature_dim,
        hidden_dim: cfg.h,
        embed_dim: cfg.d,
        methods: universe.len(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = StandardNormal;
    let mut params: Vec<f64> =
        (0..shape.param_count()).map(|_| 0.1 * <StandardNormal as Distribution<f64>>::sample(&normal, &mut rng)).collect();
    let mut adam = Adam::new(params.len(), cfg.lr);

    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut batch_features: Vec<Vec<f64>> = Vec::with_capacity(cfg.batch);
    let mut batch_positives: Vec<usize> = Vec::with_capacity(cfg.batch);
    let mut batch_targets: Vec<Vec<f64>> = Vec::with_capacity(cfg.batch);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch) {
            batch_features.clear();
            batch_positives.clear();
            batch_targets.clear();
            for &j in chunk {
                batch_features.push(standardized[j].clone());
                batch_positives.push(positives[j]);
                batch_targets.push(targets[j].clone());
            }
            let inputs = LossInputs {
                features: &batch_features,
                positives: &batch_positives,
                targets: &batch_targets,
                pairs: &pairs,
                tau: cfg.tau,
                sim_epsilon: cfg.sim_epsilon,
            };
            let (loss, grad) = training_loss_grad(&shape, &params, &inputs)?;
            epoch_loss += loss * chunk.len() as f64;
            adam.step(&mut params, &grad);
        }
        epoch_loss /= records.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Numerical(format!("training diverged at epoch {epoch}")));
        }
        log::debug!("epoch {epoch}: mean loss {epoch_loss}");
        history.push(epoch_loss);
    }

    let o = shape.offsets();
    let embeddings: Vec<Vec<f64>> = (0..universe.len())
        .map(|i| params[o.v + i * cfg.d..o.v + (i + 1) * cfg.d].to_vec())
        .collect();
    let model = RouterModel {
        embedder: Embedder::from_flat(&shape, &params),
        embeddings,
        feature_mean: mean,
        feature_std: std,
        universe_hash: universe.sha256_hex(),
    };
    model.validate()?;
    Ok((model, history))
}

pub fn train(
    records: &[QuestionRecord],
    universe: &MethodUniverse,
    cfg: &TrainConfig,
) -> Result<RouterModel> {
    train_with_history(records, universe, cfg).map(|(model, _)| model)
}

/// One embedding with a stable text label, for export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledVector {
    pub label: String,
    pub vector: Vec<f64>,
}

/// Labels every method embedding as `method:{id}:{n}` and every question
/// embedding as `question:{qid}`.
pub fn export_embeddings(
    model: &RouterModel,
    universe: &MethodUniverse,
    records: &[QuestionRecord],
) -> Result<Vec<LabeledVector>> {
    let expected = universe.sha256_hex();
    if model.universe_hash != expected {
        return Err(Error::Schema(format!(
            "model was trained for universe {} but this universe hashes to {expected}",
            model.universe_hash
        )));
    }
    let mut out = Vec::with_capacity(universe.len() + records.len());
    for (method, emb) in universe.methods().iter().zip(&model.embeddings) {
        out.push(LabeledVector {
            label: format!("method:{}:{}", method.id, method.n),
            vector: emb.clone(),
        });
    }
    for record in records {
        out.push(LabeledVector {
            label: format!("question:{}", record.qid),
            vector: model.embed(&record.features)?,
        });
    }
    Ok(out)
}
