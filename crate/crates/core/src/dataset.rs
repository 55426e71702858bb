//! Method registries, per-question records, and dataset plumbing.
//!
//! A [`MethodUniverse`] enumerates the candidate reasoning methods a router
//! may choose between: a generation setup (language model, search strategy,
//! temperature, model size) times an aggregation rule and a draw count `n`.
//! A [`QuestionRecord`] stores, for one question, its feature vector and the
//! per-method accuracy and raw generation cost, optionally with the fitted
//! [`GenerationProfile`] of each generation setup. [`synth_benchmark`]
//! fabricates such records from a latent difficulty variable so the whole
//! pipeline can be exercised end to end without any external data.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregation::{mc_win_prob, mix_seeds, AggregationRule, TiePolicy};
use crate::distributions::{AnswerDistribution, GenerationProfile, ScoreModel};
use crate::{Error, Result};

/// Search strategy a method uses to generate candidate solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Single greedy chain of thought.
    CotGreedy,
    /// Independent sampling, best of `n`.
    BestOfN,
    BeamSearch,
    Mcts,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::CotGreedy => "cot_greedy",
            Strategy::BestOfN => "best_of_n",
            Strategy::BeamSearch => "beam_search",
            Strategy::Mcts => "mcts",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One routable method: a generation setup plus aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub id: usize,
    /// Language model label.
    pub lm: String,
    pub strategy: Strategy,
    /// Aggregation rule; absent exactly when a single draw needs none.
    pub agg: Option<AggregationRule>,
    pub temperature: f64,
    /// Number of draws aggregated per question.
    pub n: u32,
    /// Model size used for cost accounting.
    pub params_billions: f64,
}

impl MethodSpec {
    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Schema(format!("method {}: n must be >= 1", self.id)));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(Error::Schema(format!(
                "method {}: temperature {} must be finite and nonnegative",
                self.id, self.temperature
            )));
        }
        if !self.params_billions.is_finite() || self.params_billions <= 0.0 {
            return Err(Error::Schema(format!(
                "method {}: params_billions {} must be positive",
                self.id, self.params_billions
            )));
        }
        if self.strategy == Strategy::CotGreedy && (self.n != 1 || self.agg.is_some()) {
            return Err(Error::Schema(format!(
                "method {}: cot_greedy implies n = 1 and no aggregation rule",
                self.id
            )));
        }
        if self.n > 1 && self.agg.is_none() {
            return Err(Error::Schema(format!(
                "method {}: n > 1 requires an aggregation rule",
                self.id
            )));
        }
        Ok(())
    }

    /// Key identifying the generation setup this method draws from. Methods
    /// sharing a core key differ only in `n`, which is exactly the sibling
    /// relation used for ratio targets, and share one fitted profile.
    pub fn core_key(&self) -> String {
        let agg = self.agg.map_or("none", |a| a.code());
        format!(
            "{}|{}|{}|{}|{}",
            self.lm, self.strategy, self.temperature, self.params_billions, agg
        )
    }

    /// The rule actually applied when aggregating this method's draws; a
    /// single draw is equivalent under every rule.
    pub fn effective_rule(&self) -> AggregationRule {
        self.agg.unwrap_or(AggregationRule::MajorityVote)
    }
}

/// Validated, contiguously indexed set of methods.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodUniverse {
    methods: Vec<MethodSpec>,
}

impl MethodUniverse {
    pub fn new(methods: Vec<MethodSpec>) -> Result<Self> {
        if methods.is_empty() {
            return Err(Error::Schema("method universe must not be empty".into()));
        }
        for (i, m) in methods.iter().enumerate() {
            if m.id != i {
                return Err(Error::Schema(format!(
                    "method ids must be contiguous from 0; position {i} has id {}",
                    m.id
                )));
            }
            m.validate()?;
        }
        Ok(Self { methods })
    }

    pub fn methods(&self) -> &[MethodSpec] {
        &self.methods
    }

    pub fn len(&self) -> usize {
        self.methods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.methods.is_empty()
    }

    /// Hash of the canonical JSON serialization; checkpoints store it so a
    /// router is never applied to a universe it was not trained on.
    pub fn sha256_hex(&self) -> String {
        let canon = serde_json::to_string(&self.methods).expect("methods serialize");
        let mut hasher = Sha256::new();
        hasher.update(canon.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut out, &self.methods)?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let methods: Vec<MethodSpec> = serde_json::from_reader(BufReader::new(file))?;
        Self::new(methods)
    }

    /// Small 12-method registry used by the synthetic benchmark demos: one
    /// greedy baseline, best-of-n sweeps under majority vote and score-sum,
    /// a score-max pair, and one beam-search method.
    pub fn demo() -> Self {
        let mut methods = Vec::new();
        let mut push = |strategy: Strategy, agg: Option<&str>, temperature: f64, n: u32| {
            let id = methods.len();
            methods.push(MethodSpec {
                id,
                lm: "synth-7b".into(),
                strategy,
                agg: agg.map(|a| a.parse().expect("valid code")),
                temperature,
                n,
                params_billions: 7.0,
            });
        };
        push(Strategy::CotGreedy, None, 0.0, 1);
        for n in [2, 4, 8, 16] {
            push(Strategy::BestOfN, Some("mv"), 0.7, n);
        }
        for n in [2, 4, 8, 16] {
            push(Strategy::BestOfN, Some("pvl"), 0.7, n);
        }
        for n in [2, 4] {
            push(Strategy::BestOfN, Some("pmm"), 0.7, n);
        }
        push(Strategy::BeamSearch, Some("mv"), 0.5, 4);
        Self::new(methods).expect("demo universe is valid")
    }
}

/// All sibling pairs: methods sharing a generation setup and aggregation
/// rule but using different `n`, returned as `(id_small_n, id_large_n)`.
pub fn sibling_pairs(universe: &MethodUniverse) -> Vec<(usize, usize)> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for m in universe.methods() {
        groups.entry(m.core_key()).or_default().push(m.id);
    }
    let mut pairs = Vec::new();
    for ids in groups.values() {
        let mut ids = ids.clone();
        ids.sort_by_key(|&i| (universe.methods()[i].n, i));
        for a in 0..ids.len() {
            for b in (a + 1)..ids.len() {
                if universe.methods()[ids[a]].n < universe.methods()[ids[b]].n {
                    pairs.push((ids[a], ids[b]));
                }
            }
        }
    }
    pairs
}

/// Monotone transform applied to raw costs before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostTransform {
    Identity,
    /// `ln(1 + cost)`, compressing heavy-tailed token counts.
    Log1p,
}

impl FromStr for CostTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(CostTransform::Identity),
            "log1p" => Ok(CostTransform::Log1p),
            other => Err(Error::Domain(format!(
                "unknown cost transform {other:?}, expected identity or log1p"
            ))),
        }
    }
}

/// Accuracy/cost trade-off configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityConfig {
    /// Weight on accuracy; `1 - lambda` weighs cheapness.
    pub lambda: f64,
    pub transform: CostTransform,
}

impl UtilityConfig {
    pub fn new(lambda: f64, transform: CostTransform) -> Result<Self> {
        if !lambda.is_finite() || !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Domain(format!("lambda {lambda} outside [0, 1]")));
        }
        Ok(Self { lambda, transform })
    }
}

/// Everything known about one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub qid: String,
    pub features: Vec<f64>,
    /// Per-method empirical accuracy, indexed by method id.
    pub accuracy: Vec<f64>,
    /// Per-method raw generation cost (token count scaled by model size).
    pub raw_cost: Vec<f64>,
    /// Fitted profile per generation setup, keyed by
    /// [`MethodSpec::core_key`]; optional because real traces may not carry
    /// score samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiles: Option<BTreeMap<String, GenerationProfile>>,
}

impl QuestionRecord {
    pub(crate) fn validate(&self, methods: usize, feature_dim: usize) -> Result<()> {
        if self.features.len() != feature_dim {
            return Err(Error::Schema(format!(
                "question {}: expected {feature_dim} features, found {}",
                self.qid,
                self.features.len()
            )));
        }
        if self.features.iter().any(|f| !f.is_finite()) {
            return Err(Error::Schema(format!("question {}: non-finite feature", self.qid)));
        }
        if self.accuracy.len() != methods || self.raw_cost.len() != methods {
            return Err(Error::Schema(format!(
                "question {}: accuracy/cost vectors must have one entry per method ({methods})",
                self.qid
            )));
        }
        if self.accuracy.iter().any(|a| !a.is_finite() || !(0.0..=1.0).contains(a)) {
            return Err(Error::Schema(format!("question {}: accuracy outside [0, 1]", self.qid)));
        }
        if self.raw_cost.iter().any(|c| !c.is_finite() || *c <= 0.0) {
            return Err(Error::Schema(format!("question {}: raw costs must be positive", self.qid)));
        }
        Ok(())
    }

    /// Profile for a method's generation setup, when the record carries one.
    pub fn profile_for(&self, method: &MethodSpec) -> Option<&GenerationProfile> {
        self.profiles.as_ref().and_then(|p| p.get(&method.core_key()))
    }
}

/// Per-question cost normalization: apply the transform, then scale so the
/// most expensive method on this question costs exactly 1.
pub fn normalize_costs(record: &QuestionRecord, transform: CostTransform) -> Result<Vec<f64>> {
    if record.raw_cost.is_empty() {
        return Err(Error::Domain(format!("question {}: empty cost vector", record.qid)));
    }
    if record.raw_cost.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::Domain(format!(
            "question {}: raw costs must be finite and nonnegative",
            record.qid
        )));
    }
    let transformed: Vec<f64> = record
        .raw_cost
        .iter()
        .map(|&c| match transform {
            CostTransform::Identity => c,
            CostTransform::Log1p => c.ln_1p(),
        })
        .collect();
    let max = transformed.iter().copied().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Err(Error::Domain(format!(
            "question {}: all costs are zero after the transform",
            record.qid
        )));
    }
    Ok(transformed.iter().map(|c| c / max).collect())
}

/// Scalar utility of answering with accuracy `acc` at normalized cost
/// `cost`: `lambda * acc + (1 - lambda) * (1 - cost)`.
pub fn utility(acc: f64, cost: f64, cfg: &UtilityConfig) -> Result<f64> {
    for (name, v) in [("accuracy", acc), ("normalized cost", cost)] {
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("{name} {v} outside [0, 1]")));
        }
    }
    Ok(cfg.lambda * acc + (1.0 - cfg.lambda) * (1.0 - cost))
}

/// Index of the highest-utility method; exact utility ties go to the
/// cheaper method, then to the lower id.
pub fn positive_method(utilities: &[f64], costs: &[f64]) -> Result<usize> {
    if utilities.is_empty() || utilities.len() != costs.len() {
        return Err(Error::Domain(format!(
            "positive_method needs matching nonempty vectors, got {} utilities and {} costs",
            utilities.len(),
            costs.len()
        )));
    }
    let mut best = 0usize;
    for i in 1..utilities.len() {
        let better = utilities[i] > utilities[best]
            || (utilities[i] == utilities[best] && costs[i] < costs[best]);
        if better {
            best = i;
        }
    }
    Ok(best)
}

/// Writes records as JSON Lines, one question per line.
pub fn save_records(path: &Path, records: &[QuestionRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads JSON Lines records; errors carry the 1-based line number.
pub fn load_records(path: &Path) -> Result<Vec<QuestionRecord>> {
    let file = File::open(path)?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: QuestionRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Schema(format!("line {}: {e}", idx + 1)))?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::Schema(format!("{}: no records found", path.display())));
    }
    Ok(records)
}

/// Loads a universe and its records together and cross-validates them:
/// every record must score every method and use one feature dimension.
pub fn load_dataset(universe_path: &Path, records_path: &Path) -> Result<(MethodUniverse, Vec<QuestionRecord>)> {
    let universe = MethodUniverse::load(universe_path)?;
    let records = load_records(records_path)?;
    let feature_dim = records[0].features.len();
    for record in &records {
        record.validate(universe.len(), feature_dim)?;
    }
    Ok((universe, records))
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn strength_bonus(strategy: Strategy) -> f64 {
    match strategy {
        Strategy::CotGreedy => 0.0,
        Strategy::BestOfN => 0.05,
        Strategy::BeamSearch => 0.08,
        Strategy::Mcts => 0.10,
    }
}

fn tokens_per_sample(strategy: Strategy) -> f64 {
    match strategy {
        Strategy::CotGreedy => 500.0,
        Strategy::BestOfN => 620.0,
        Strategy::BeamSearch => 900.0,
        Strategy::Mcts => 1300.0,
    }
}

const SYNTH_MC_TRIALS: u64 = 2000;
const SYNTH_ANSWERS: usize = 4;
const SYNTH_FEATURE_NOISE: f64 = 0.05;

fn synth_profile(delta: f64, strategy: Strategy, rng: &mut ChaCha8Rng) -> GenerationProfile {
    let mut jitter = |amp: f64| (rng.gen::<f64>() * 2.0 - 1.0) * amp;
    let p1 = (0.95 - 0.8 * delta + strength_bonus(strategy)).clamp(0.02, 0.98);
    let rest = 1.0 - p1;
    let probs = vec![p1, rest * 0.5, rest * 0.3, rest * 0.2];

    let mut mus = Vec::with_capacity(SYNTH_ANSWERS);
    let mut sigmas = Vec::with_capacity(SYNTH_ANSWERS);
    mus.push(0.78 + 0.08 * (1.0 - delta) + jitter(0.02));
    sigmas.push(0.22 + jitter(0.02));
    for k in 1..SYNTH_ANSWERS {
        mus.push(0.50 - 0.05 * k as f64 + jitter(0.02));
        sigmas.push(0.12 + 0.015 * k as f64 + jitter(0.01));
    }

    GenerationProfile::new(
        AnswerDistribution::new(probs, 0).expect("synth probs sum to 1"),
        ScoreModel::new(mus, sigmas).expect("synth score model is valid"),
    )
    .expect("synth profile is consistent")
}

/// Generates a fully synthetic benchmark.
///
/// Each question draws a latent difficulty `delta` in `[0, 1]`; features are
/// a fixed random linear encoding of `delta` plus Gaussian noise, so a router
/// can recover difficulty. Every generation setup gets a profile whose
/// correct-answer probability falls with difficulty and rises with strategy
/// strength; per-method accuracies are Monte Carlo win probabilities under
/// the method's rule and `n`, and raw costs follow
/// `tokens_per_sample * n * params_billions`. Deterministic for a fixed seed.
pub fn synth_benchmark(
    seed: u64,
    n_questions: usize,
    universe: &MethodUniverse,
    feature_dim: usize,
) -> Result<Vec<QuestionRecord>> {
    if n_questions == 0 {
        return Err(Error::Domain("synth_benchmark needs at least one question".into()));
    }
    if feature_dim == 0 {
        return Err(Error::Domain("synth_benchmark needs feature_dim >= 1".into()));
    }

    // Fixed encoding shared by every question.
    let mut master = ChaCha8Rng::seed_from_u64(mix_seeds(seed, 0x0fee_d000));
    let offset: Vec<f64> = (0..feature_dim).map(|_| 0.5 * master.sample::<f64, _>(StandardNormal)).collect();
    let direction: Vec<f64> = (0..feature_dim).map(|_| master.sample::<f64, _>(StandardNormal)).collect();

    // Unique generation setups in first-appearance order.
    let mut core_keys: Vec<(String, Strategy)> = Vec::new();
    for m in universe.methods() {
        let key = m.core_key();
        if !core_keys.iter().any(|(k, _)| *k == key) {
            core_keys.push((key, m.strategy));
        }
    }

    let ties = TiePolicy::UniformRandom { seed: mix_seeds(seed, 0x7135) };
    let mut records = Vec::with_capacity(n_questions);
    for j in 0..n_questions {
        let qseed = mix_seeds(seed, 1 + j as u64);
        let mut qrng = ChaCha8Rng::seed_from_u64(qseed);
        let delta: f64 = qrng.gen();
        let features: Vec<f64> = (0..feature_dim)
            .map(|t| {
                offset[t]
                    + direction[t] * delta
                    + SYNTH_FEATURE_NOISE * qrng.sample::<f64, _>(StandardNormal)
            })
            .collect();

        let mut profiles = BTreeMap::new();
        for (key, strategy) in &core_keys {
            let mut crng = ChaCha8Rng::seed_from_u64(mix_seeds(qseed, fnv1a(key.as_bytes())));
            profiles.insert(key.clone(), synth_profile(delta, *strategy, &mut crng));
        }

        let mut accuracy = Vec::with_capacity(universe.len());
        let mut raw_cost = Vec::with_capacity(universe.len());
        for m in universe.methods() {
            let profile = &profiles[&m.core_key()];
            let est = mc_win_prob(
                profile,
                m.effective_rule(),
                m.n,
                SYNTH_MC_TRIALS,
                mix_seeds(qseed, 7000 + m.id as u64),
                &ties,
            )?;
            accuracy.push(est.estimate);
            raw_cost.push(tokens_per_sample(m.strategy) * m.n as f64 * m.params_billions);
        }

        records.push(QuestionRecord {
            qid: format!("synth-{seed}-{j:05}"),
            features,
            accuracy,
            raw_cost,
            profiles: Some(profiles),
        });
    }
    Ok(records)
}
