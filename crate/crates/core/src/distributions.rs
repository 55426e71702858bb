//! Distributional models for a single generation setup.
//!
//! A question answered by repeated sampling is modeled by a categorical
//! distribution over the distinct answers together with a per-answer Gaussian
//! model of the scalar score a draw receives. [`GenerationProfile`] bundles
//! both; [`estimate_profile`] fits one from observed draws. The module also
//! provides [`std_normal_cdf`], the Φ primitive used throughout the bound
//! computations, built on a rational approximation of the complementary error
//! function so that tail values stay accurate and monotone.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How a draw's vector of step scores collapses to a single scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepReduction {
    /// Minimum over steps.
    Min,
    /// Final step only.
    Last,
}

impl StepReduction {
    pub fn as_str(self) -> &'static str {
        match self {
            StepReduction::Min => "min",
            StepReduction::Last => "last",
        }
    }
}

/// Categorical distribution over the distinct answers to one question.
///
/// Probabilities are validated and renormalized at construction; exactly one
/// index is marked correct.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerDistribution {
    probs: Vec<f64>,
    correct_index: usize,
}

impl AnswerDistribution {
    /// Validates and renormalizes `probs`. The sum must already be within
    /// `1e-9` of one; renormalization only removes rounding noise.
    pub fn new(probs: Vec<f64>, correct_index: usize) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Domain("answer distribution needs at least one answer".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::Domain(format!("answer probability {p} is not a finite nonnegative value")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("answer probabilities sum to {sum}, expected 1 within 1e-9")));
        }
        if correct_index >= probs.len() {
            return Err(Error::Domain(format!(
                "correct_index {} out of range for {} answers",
                correct_index,
                probs.len()
            )));
        }
        let probs = probs.iter().map(|p| p / sum).collect();
        Ok(Self { probs, correct_index })
    }

    /// Number of distinct answers.
    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn correct_index(&self) -> usize {
        self.correct_index
    }

    /// Probability of the correct answer.
    pub fn correct_prob(&self) -> f64 {
        self.probs[self.correct_index]
    }
}

/// Per-answer Gaussian model of the reduced step score: answer `k` draws its
/// scalar score from `N(mus[k], sigmas[k]^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    mus: Vec<f64>,
    sigmas: Vec<f64>,
}

impl ScoreModel {
    pub fn new(mus: Vec<f64>, sigmas: Vec<f64>) -> Result<Self> {
        if mus.len() != sigmas.len() {
            return Err(Error::Domain(format!(
                "score model has {} means but {} standard deviations",
                mus.len(),
                sigmas.len()
            )));
        }
        if let Some(m) = mus.iter().find(|m| !m.is_finite()) {
            return Err(Error::Domain(format!("score mean {m} is not finite")));
        }
        if let Some(s) = sigmas.iter().find(|s| !s.is_finite() || **s < 0.0) {
            return Err(Error::Domain(format!("score standard deviation {s} is not finite and nonnegative")));
        }
        Ok(Self { mus, sigmas })
    }

    pub fn k(&self) -> usize {
        self.mus.len()
    }

    pub fn mus(&self) -> &[f64] {
        &self.mus
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }
}

/// Answer distribution plus score model for one generation setup.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationProfile {
    dist: AnswerDistribution,
    scores: ScoreModel,
}

impl GenerationProfile {
    pub fn new(dist: AnswerDistribution, scores: ScoreModel) -> Result<Self> {
        if dist.k() != scores.k() {
            return Err(Error::Domain(format!(
                "answer distribution has {} answers but score model has {}",
                dist.k(),
                scores.k()
            )));
        }
        Ok(Self { dist, scores })
    }

    pub fn k(&self) -> usize {
        self.dist.k()
    }

    pub fn dist(&self) -> &AnswerDistribution {
        &self.dist
    }

    pub fn scores(&self) -> &ScoreModel {
        &self.scores
    }
}

/// Flat serialization of [`GenerationProfile`].
#[derive(Serialize, Deserialize)]
struct RawProfile {
    probs: Vec<f64>,
    correct_index: usize,
    mus: Vec<f64>,
    sigmas: Vec<f64>,
}

impl TryFrom<RawProfile> for GenerationProfile {
    type Error = Error;

    fn try_from(raw: RawProfile) -> Result<Self> {
        GenerationProfile::new(
            AnswerDistribution::new(raw.probs, raw.correct_index)?,
            ScoreModel::new(raw.mus, raw.sigmas)?,
        )
    }
}

impl From<GenerationProfile> for RawProfile {
    fn from(p: GenerationProfile) -> Self {
        RawProfile {
            probs: p.dist.probs,
            correct_index: p.dist.correct_index,
            mus: p.scores.mus,
            sigmas: p.scores.sigmas,
        }
    }
}

impl Serialize for GenerationProfile {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        RawProfile::from(self.clone()).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GenerationProfile {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = RawProfile::deserialize(deserializer)?;
        GenerationProfile::try_from(raw).map_err(serde::de::Error::custom)
    }
}

/// One sampled solution: the answer it reached and its per-step scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub answer_index: usize,
    pub step_scores: Vec<f64>,
}

/// A batch of i.i.d. draws from one generation setup.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    draws: Vec<Draw>,
    seed: u64,
}

impl SampleBatch {
    pub fn new(draws: Vec<Draw>, seed: u64) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::Domain("sample batch needs at least one draw".into()));
        }
        if draws.iter().any(|d| d.step_scores.is_empty()) {
            return Err(Error::Domain("every draw needs at least one step score".into()));
        }
        if let Some(bad) = draws
            .iter()
            .flat_map(|d| d.step_scores.iter())
            .find(|s| !s.is_finite())
        {
            return Err(Error::Domain(format!("step score {bad} is not finite")));
        }
        Ok(Self { draws, seed })
    }

    pub fn draws(&self) -> &[Draw] {
        &self.draws
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Standard normal cumulative distribution function.
///
/// Computed as `0.5 * erfc(-x / sqrt(2))` with a rational approximation of
/// the complementary error function, so the absolute error stays below
/// `1e-12` everywhere and the result is nondecreasing in `x` by construction.
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("std_normal_cdf requires a finite argument, got {x}")));
    }
    Ok(phi(x))
}

/// Unchecked Φ for internal hot paths; callers guarantee `x` is finite.
pub(crate) fn phi(x: f64) -> f64 {
    0.5 * math::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Fits a [`GenerationProfile`] to observed draws.
///
/// Answer indices are taken to be canonical, with the correct answer at
/// index 0; the number of answers is one plus the largest index seen.
/// Probabilities are empirical frequencies. Score means are sample means of
/// the reduced step scores; standard deviations use the unbiased (n-1)
/// estimator. Answers with a single draw fall back to the variance pooled
/// across multi-draw answers (or 1.0 when no answer has two draws), and
/// answers never drawn get probability 0, mean 0, and standard deviation 1.
pub fn estimate_profile(batches: &[SampleBatch], reduction: StepReduction) -> Result<GenerationProfile> {
    let total: usize = batches.iter().map(|b| b.draws.len()).sum();
    if total == 0 {
        return Err(Error::Domain("estimate_profile needs at least one draw".into()));
    }
    let k = 1 + batches
        .iter()
        .flat_map(|b| b.draws.iter())
        .map(|d| d.answer_index)
        .max()
        .expect("nonempty batches");

    let mut reduced: Vec<Vec<f64>> = vec![Vec::new(); k];
    for batch in batches {
        for draw in &batch.draws {
            let score = reduce(&draw.step_scores, reduction);
            reduced[draw.answer_index].push(score);
        }
    }

    let probs: Vec<f64> = reduced.iter().map(|r| r.len() as f64 / total as f64).collect();
    let mus: Vec<f64> = reduced
        .iter()
        .map(|r| {
            if r.is_empty() {
                0.0
            } else {
                r.iter().sum::<f64>() / r.len() as f64
            }
        })
        .collect();

    // Pooled variance over answers with at least two draws, used as the
    // fallback spread for single-draw answers.
    let mut pooled_num = 0.0;
    let mut pooled_den = 0.0;
    let mut variances: Vec<Option<f64>> = Vec::with_capacity(k);
    for (r, mu) in reduced.iter().zip(&mus) {
        if r.len() >= 2 {
            let ss: f64 = r.iter().map(|s| (s - mu) * (s - mu)).sum();
            let var = ss / (r.len() - 1) as f64;
            pooled_num += ss;
            pooled_den += (r.len() - 1) as f64;
            variances.push(Some(var));
        } else {
            variances.push(None);
        }
    }
    let pooled_sigma = if pooled_den > 0.0 { (pooled_num / pooled_den).sqrt() } else { 1.0 };

    let sigmas: Vec<f64> = reduced
        .iter()
        .zip(&variances)
        .map(|(r, var)| match (r.len(), var) {
            (_, Some(v)) => v.sqrt(),
            (1, None) => pooled_sigma,
            _ => 1.0,
        })
        .collect();

    GenerationProfile::new(AnswerDistribution::new(probs, 0)?, ScoreModel::new(mus, sigmas)?)
}

fn reduce(scores: &[f64], reduction: StepReduction) -> f64 {
    match reduction {
        StepReduction::Min => scores.iter().copied().fold(f64::INFINITY, f64::min),
        StepReduction::Last => *scores.last().expect("validated nonempty"),
    }
}

/// Complementary error function, ported from the FreeBSD msun implementation
/// (via its Go translation). Relative error is below a few ulps on every
/// branch, which keeps `0.5 * erfc(-x / sqrt 2)` within 1e-12 of Φ(x).
mod math {
    const ERX: f64 = 8.45062911510467529297e-01;

    // Coefficients for approximation to erf in [0, 0.84375].
    const PP0: f64 = 1.28379167095512558561e-01;
    const PP1: f64 = -3.25042107247001499370e-01;
    const PP2: f64 = -2.84817495755985104766e-02;
    const PP3: f64 = -5.77027029648944159157e-03;
    const PP4: f64 = -2.37630166566501626084e-05;
    const QQ1: f64 = 3.97917223959155352819e-01;
    const QQ2: f64 = 6.50222499887672944485e-02;
    const QQ3: f64 = 5.08130628187576562776e-03;
    const QQ4: f64 = 1.32494738004321644526e-04;
    const QQ5: f64 = -3.96022827877536812320e-06;

    // Coefficients for approximation to erf in [0.84375, 1.25].
    const PA0: f64 = -2.36211856075265944077e-03;
    const PA1: f64 = 4.14856118683748331666e-01;
    const PA2: f64 = -3.72207876035701323847e-01;
    const PA3: f64 = 3.18346619901161753674e-01;
    const PA4: f64 = -1.10894694282396677476e-01;
    const PA5: f64 = 3.54783043256182359371e-02;
    const PA6: f64 = -2.16637559486879084300e-03;
    const QA1: f64 = 1.06420880400844228286e-01;
    const QA2: f64 = 5.40397917702171048937e-01;
    const QA3: f64 = 7.18286544141962662868e-02;
    const QA4: f64 = 1.26171219808761642112e-01;
    const QA5: f64 = 1.36370839120290507362e-02;
    const QA6: f64 = 1.19844998467991074170e-02;

    // Coefficients for approximation to erfc in [1.25, 1/0.35].
    const RA0: f64 = -9.86494403484714822705e-03;
    const RA1: f64 = -6.93858572707181764372e-01;
    const RA2: f64 = -1.05586262253232909814e+01;
    const RA3: f64 = -6.23753324503260060396e+01;
    const RA4: f64 = -1.62396669462573470355e+02;
    const RA5: f64 = -1.84605092906711035994e+02;
    const RA6: f64 = -8.12874355063065934246e+01;
    const RA7: f64 = -9.81432934416914548592e+00;
    const SA1: f64 = 1.96512716674392571292e+01;
    const SA2: f64 = 1.37657754143519042600e+02;
    const SA3: f64 = 4.34565877475229228821e+02;
    const SA4: f64 = 6.45387271733267880336e+02;
    const SA5: f64 = 4.29008140027567833386e+02;
    const SA6: f64 = 1.08635005541779435134e+02;
    const SA7: f64 = 6.57024977031928170135e+00;
    const SA8: f64 = -6.04244152148580987438e-02;

    // Coefficients for approximation to erfc in [1/0.35, 28].
    const RB0: f64 = -9.86494292470009928597e-03;
    const RB1: f64 = -7.99283237680523006574e-01;
    const RB2: f64 = -1.77579549177547519889e+01;
    const RB3: f64 = -1.60636384855821916062e+02;
    const RB4: f64 = -6.37566443368389627722e+02;
    const RB5: f64 = -1.02509513161107724954e+03;
    const RB6: f64 = -4.83519191608651397019e+02;
    const SB1: f64 = 3.03380607434824582924e+01;
    const SB2: f64 = 3.25792512996573918826e+02;
    const SB3: f64 = 1.53672958608443695994e+03;
    const SB4: f64 = 3.19985821950859553908e+03;
    const SB5: f64 = 2.55305040643316442583e+03;
    const SB6: f64 = 4.74528541206955367215e+02;
    const SB7: f64 = -2.24409524465858183362e+01;

    // 2^-56
    const TINY: f64 = 1.3877787807814457e-17;

    pub fn erfc(x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        if x == f64::INFINITY {
            return 0.0;
        }
        if x == f64::NEG_INFINITY {
            return 2.0;
        }
        let sign = x < 0.0;
        let x = x.abs();
        if x < 0.84375 {
            let temp = if x < TINY {
                x
            } else {
                let z = x * x;
                let r = PP0 + z * (PP1 + z * (PP2 + z * (PP3 + z * PP4)));
                let s = 1.0 + z * (QQ1 + z * (QQ2 + z * (QQ3 + z * (QQ4 + z * QQ5))));
                let y = r / s;
                if x < 0.25 {
                    x + x * y
                } else {
                    0.5 + (x * y + (x - 0.5))
                }
            };
            return if sign { 1.0 + temp } else { 1.0 - temp };
        }
        if x < 1.25 {
            let s = x - 1.0;
            let p = PA0 + s * (PA1 + s * (PA2 + s * (PA3 + s * (PA4 + s * (PA5 + s * PA6)))));
            let q = 1.0 + s * (QA1 + s * (QA2 + s * (QA3 + s * (QA4 + s * (QA5 + s * QA6)))));
            return if sign { 1.0 + ERX + p / q } else { 1.0 - ERX - p / q };
        }
        if x < 28.0 {
            let s = 1.0 / (x * x);
            let (r, q) = if x < 1.0 / 0.35 {
                (
                    RA0 + s * (RA1 + s * (RA2 + s * (RA3 + s * (RA4 + s * (RA5 + s * (RA6 + s * RA7)))))),
                    1.0 + s
                        * (SA1
                            + s * (SA2
                                + s * (SA3 + s * (SA4 + s * (SA5 + s * (SA6 + s * (SA7 + s * SA8))))))),
                )
            } else {
                if sign && x > 6.0 {
                    return 2.0;
                }
                (
                    RB0 + s * (RB1 + s * (RB2 + s * (RB3 + s * (RB4 + s * (RB5 + s * RB6))))),
                    1.0 + s * (SB1 + s * (SB2 + s * (SB3 + s * (SB4 + s * (SB5 + s * (SB6 + s * SB7)))))),
                )
            };
            // Split x into a high part with the low word zeroed so that
            // exp(-z*z - 0.5625) * exp((z-x)(z+x) + R/S) loses no precision.
            let z = f64::from_bits(x.to_bits() & 0xffff_ffff_0000_0000);
            let r = f64::exp(-z * z - 0.5625) * f64::exp((z - x) * (z + x) + r / q);
            return if sign { 2.0 - r / x } else { r / x };
        }
        if sign {
            2.0
        } else {
            0.0
        }
    }
}
