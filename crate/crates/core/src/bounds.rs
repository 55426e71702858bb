//! Lower and upper bounds on the probability that aggregation of `n`
//! independent draws returns the correct answer.
//!
//! Three bound families match the three aggregation rules:
//!
//! * Majority vote: closed-form exponential bounds in the Bhattacharyya-style
//!   gap `(sqrt(p_1) - sqrt(p_k))^2`, valid when the correct answer has
//!   strictly the largest (lower bound) or not the largest (upper bound)
//!   probability.
//! * Score-sum: Chernoff bounds whose per-competitor exponent is the infimum
//!   of a convex function `F(t)` that does not depend on `n`; one inner
//!   minimization therefore serves every `n`.
//! * Score-max: bounds built from the distribution of the best draw, with the
//!   inner infimum taken over a threshold `t` by coarse grid search plus
//!   golden-section refinement.
//!
//! [`target_value`] combines the three families into the routing target: use
//! a lower bound where its hypothesis holds, fall back to an upper bound,
//! then to the empirical accuracy.

use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationRule;
use crate::distributions::{phi, AnswerDistribution, GenerationProfile};
use crate::{Error, Result};

/// Which side of the win probability a [`BoundResult`] constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Lower,
    Upper,
}

/// Result of a 1-D inner minimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerSolverResult {
    /// Minimizing argument.
    pub t_star: f64,
    /// Objective value at `t_star`.
    pub objective: f64,
    /// Iterations spent.
    pub iterations: u32,
    /// True when the optimality criterion was met; false when the objective
    /// has no interior minimum and the search was capped.
    pub converged: bool,
}

/// A probability bound together with its raw (unclamped) value and the
/// per-competitor pieces it was assembled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    /// Bound value clamped to `[0, 1]`.
    pub value: f64,
    pub kind: BoundKind,
    /// Value before clamping; lower bounds can be vacuously negative.
    pub raw_value: f64,
    /// For lower bounds, one defect term per competing answer in index
    /// order; empty for upper bounds.
    pub per_k_terms: Vec<f64>,
    /// For upper bounds, the competitor the bound was taken against.
    pub active_k: Option<usize>,
    /// Inner minimizations behind the terms, in the same order; empty for
    /// majority-vote bounds, which are closed-form.
    pub inner_solves: Vec<InnerSolverResult>,
}

fn check_n(n: u32) -> Result<()> {
    if n == 0 {
        return Err(Error::Domain("bounds need n >= 1".into()));
    }
    Ok(())
}

/// Lower bound on the majority-vote win probability.
///
/// Requires the correct answer to have strictly the largest probability.
/// The bound is `1 - sum_k exp(-n (sqrt(p_1) - sqrt(p_k))^2)`, clamped at 0.
pub fn majority_lower_bound(dist: &AnswerDistribution, n: u32) -> Result<BoundResult> {
    check_n(n)?;
    let p1 = dist.correct_prob();
    let correct = dist.correct_index();
    let mut terms = Vec::with_capacity(dist.k().saturating_sub(1));
    for (k, &pk) in dist.probs().iter().enumerate() {
        if k == correct {
            continue;
        }
        if p1 <= pk {
            return Err(Error::Hypothesis(format!(
                "majority lower bound needs p[correct] strictly largest; answer {k} has p = {pk} >= {p1}"
            )));
        }
        let gap = (p1.sqrt() - pk.sqrt()).powi(2);
        terms.push((-(n as f64) * gap).exp());
    }
    let raw = 1.0 - terms.iter().sum::<f64>();
    Ok(BoundResult {
        value: raw.clamp(0.0, 1.0),
        kind: BoundKind::Lower,
        raw_value: raw,
        per_k_terms: terms,
        active_k: None,
        inner_solves: Vec::new(),
    })
}

/// Upper bound on the majority-vote win probability.
///
/// Requires some answer to be strictly more likely than the correct one; the
/// bound is taken against the most likely such competitor.
pub fn majority_upper_bound(dist: &AnswerDistribution, n: u32) -> Result<BoundResult> {
    check_n(n)?;
    let p1 = dist.correct_prob();
    let correct = dist.correct_index();
    let active = dist
        .probs()
        .iter()
        .enumerate()
        .filter(|&(k, &pk)| k != correct && pk > p1)
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probs"))
        .map(|(k, _)| k);
    let Some(k) = active else {
        return Err(Error::Hypothesis(format!(
            "majority upper bound needs some answer with p > p[correct] = {p1}"
        )));
    };
    let gap = (dist.probs()[k].sqrt() - p1.sqrt()).powi(2);
    let raw = (-(n as f64) * gap).exp();
    Ok(BoundResult {
        value: raw.clamp(0.0, 1.0),
        kind: BoundKind::Upper,
        raw_value: raw,
        per_k_terms: Vec::new(),
        active_k: Some(k),
        inner_solves: Vec::new(),
    })
}

/// Per-draw Chernoff exponent for the score-sum rule:
/// `F(t) = p_a (exp(-t mu_a + t^2 sigma_a^2 / 2) - 1)
///       + p_b (exp( t mu_b + t^2 sigma_b^2 / 2) - 1)`.
///
/// `F(0) = 0`, and under the hypothesis `p_a mu_a > p_b mu_b` the slope at 0
/// is negative, so the infimum over `t > 0` is strictly negative.
pub fn sum_exponent_objective(
    p_a: f64,
    mu_a: f64,
    sigma_a: f64,
    p_b: f64,
    mu_b: f64,
    sigma_b: f64,
    t: f64,
) -> f64 {
    p_a * ((-t * mu_a + 0.5 * t * t * sigma_a * sigma_a).exp() - 1.0)
        + p_b * ((t * mu_b + 0.5 * t * t * sigma_b * sigma_b).exp() - 1.0)
}

const SOLVER_MAX_ITERS: u32 = 200;
const SOLVER_GRAD_TOL: f64 = 1e-8;

/// Minimizes [`sum_exponent_objective`] over `t > 0` by Newton iteration on
/// the derivative with a bisection safeguard.
///
/// The bracket upper end doubles until the derivative turns positive. When
/// it never does (for example `p_b = 0` with `sigma_a = 0`, where the
/// infimum is only approached as `t` grows), the search stops at
/// `t = 50 / max(|mu_a|, |mu_b|, sigma_a^2, sigma_b^2, 1)` and reports
/// `converged = false` with the capped value.
pub fn sum_exponent_minimize(
    p_a: f64,
    mu_a: f64,
    sigma_a: f64,
    p_b: f64,
    mu_b: f64,
    sigma_b: f64,
) -> Result<InnerSolverResult> {
    for (name, v) in [("p_a", p_a), ("p_b", p_b)] {
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("{name} = {v} must lie in [0, 1]")));
        }
    }
    for (name, v) in [("mu_a", mu_a), ("mu_b", mu_b)] {
        if !v.is_finite() {
            return Err(Error::Domain(format!("{name} = {v} must be finite")));
        }
    }
    for (name, v) in [("sigma_a", sigma_a), ("sigma_b", sigma_b)] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Domain(format!("{name} = {v} must be finite and nonnegative")));
        }
    }
    if p_a * mu_a <= p_b * mu_b {
        return Err(Error::Hypothesis(format!(
            "score-sum exponent needs p_a mu_a > p_b mu_b, got {} <= {}",
            p_a * mu_a,
            p_b * mu_b
        )));
    }

    let va = sigma_a * sigma_a;
    let vb = sigma_b * sigma_b;
    let f = |t: f64| sum_exponent_objective(p_a, mu_a, sigma_a, p_b, mu_b, sigma_b, t);
    let fp = |t: f64| {
        p_a * (-mu_a + t * va) * (-t * mu_a + 0.5 * t * t * va).exp()
            + p_b * (mu_b + t * vb) * (t * mu_b + 0.5 * t * t * vb).exp()
    };
    let fpp = |t: f64| {
        let ga = -mu_a + t * va;
        let gb = mu_b + t * vb;
        p_a * (ga * ga + va) * (-t * mu_a + 0.5 * t * t * va).exp()
            + p_b * (gb * gb + vb) * (t * mu_b + 0.5 * t * t * vb).exp()
    };

    let t_cap = 50.0 / mu_a.abs().max(mu_b.abs()).max(va).max(vb).max(1.0);
    let mut iterations = 0u32;
    let mut hi = (0.125 * t_cap).min(1.0);
    loop {
        iterations += 1;
        let g = fp(hi);
        if g > 0.0 {
            break;
        }
        if hi >= t_cap {
            // No interior minimum: the objective decreases all the way out.
            return Ok(InnerSolverResult {
                t_star: t_cap,
                objective: f(t_cap),
                iterations,
                converged: false,
            });
        }
        hi = (hi * 2.0).min(t_cap);
        if iterations >= SOLVER_MAX_ITERS {
            return Err(Error::Numerical("bracketing the score-sum exponent derivative failed".into()));
        }
    }

    // F' is negative at 0 and positive at hi; F is convex, so Newton on F'
    // with the bracket as a safeguard converges to the unique minimum.
    let mut lo = 0.0f64;
    let mut t = 0.5 * (lo + hi);
    while iterations < SOLVER_MAX_ITERS {
        iterations += 1;
        let g = fp(t);
        if g.abs() <= SOLVER_GRAD_TOL {
            return Ok(InnerSolverResult { t_star: t, objective: f(t), iterations, converged: true });
        }
        if g.is_finite() {
            if g > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
        } else {
            // Overflow happens on the growth side of the bracket.
            hi = t;
        }
        let mut next = t - g / fpp(t);
        if !next.is_finite() || next <= lo || next >= hi || next == t {
            next = 0.5 * (lo + hi);
        }
        t = next;
    }
    Err(Error::Numerical(format!(
        "score-sum exponent minimization did not reach |F'| <= {SOLVER_GRAD_TOL} in {SOLVER_MAX_ITERS} iterations"
    )))
}

fn sum_hypothesis_margin(profile: &GenerationProfile, k: usize) -> (f64, f64) {
    let dist = profile.dist();
    let scores = profile.scores();
    let c = dist.correct_index();
    (
        dist.probs()[c] * scores.mus()[c],
        dist.probs()[k] * scores.mus()[k],
    )
}

/// Lower bound on the score-sum win probability:
/// `1 - sum_k exp(n * inf_t F_k(t))`, requiring `p_1 mu_1 > p_k mu_k` for
/// every competitor. The inner infimum is independent of `n`.
pub fn sum_vote_lower_bound(profile: &GenerationProfile, n: u32) -> Result<BoundResult> {
    check_n(n)?;
    let dist = profile.dist();
    let scores = profile.scores();
    let correct = dist.correct_index();
    let mut terms = Vec::new();
    let mut solves = Vec::new();
    for k in 0..profile.k() {
        if k == correct {
            continue;
        }
        let (own, other) = sum_hypothesis_margin(profile, k);
        if own <= other {
            return Err(Error::Hypothesis(format!(
                "score-sum lower bound needs p_1 mu_1 strictly largest; answer {k} has p mu = {other} >= {own}"
            )));
        }
        let solve = sum_exponent_minimize(
            dist.probs()[correct],
            scores.mus()[correct],
            scores.sigmas()[correct],
            dist.probs()[k],
            scores.mus()[k],
            scores.sigmas()[k],
        )?;
        terms.push((n as f64 * solve.objective).exp());
        solves.push(solve);
    }
    let raw = 1.0 - terms.iter().sum::<f64>();
    Ok(BoundResult {
        value: raw.clamp(0.0, 1.0),
        kind: BoundKind::Lower,
        raw_value: raw,
        per_k_terms: terms,
        active_k: None,
        inner_solves: solves,
    })
}

/// Upper bound on the score-sum win probability, taken against the
/// competitor with the largest `p_k mu_k`, which must exceed `p_1 mu_1`.
pub fn sum_vote_upper_bound(profile: &GenerationProfile, n: u32) -> Result<BoundResult> {
    check_n(n)?;
    let dist = profile.dist();
    let scores = profile.scores();
    let correct = dist.correct_index();
    let active = (0..profile.k())
        .filter(|&k| k != correct)
        .map(|k| (k, sum_hypothesis_margin(profile, k)))
        .filter(|&(_, (own, other))| other > own)
        .max_by(|a, b| (a.1).1.partial_cmp(&(b.1).1).expect("finite"))
        .map(|(k, _)| k);
    let Some(k) = active else {
        return Err(Error::Hypothesis(
            "score-sum upper bound needs some answer with p_k mu_k > p_1 mu_1".into(),
        ));
    };
    // Roles swap: the favored competitor plays "a", the correct answer "b".
    let solve = sum_exponent_minimize(
        dist.probs()[k],
        scores.mus()[k],
        scores.sigmas()[k],
        dist.probs()[correct],
        scores.mus()[correct],
        scores.sigmas()[correct],
    )?;
    let raw = (n as f64 * solve.objective).exp();
    Ok(BoundResult {
        value: raw.clamp(0.0, 1.0),
        kind: BoundKind::Upper,
        raw_value: raw,
        per_k_terms: Vec::new(),
        active_k: Some(k),
        inner_solves: vec![solve],
    })
}

/// Objective of the score-max inner minimization for answers `a` against `b`:
/// `(1 - p_a (1 - PHI_a(t)))^n + 1 - (1 - p_b (1 - PHI_b(t)))^n`, where
/// `PHI_k` is the CDF of answer `k`'s score (a unit step when `sigma_k = 0`).
///
/// The first addend bounds the probability that the best `a`-draw stays at
/// or below `t`; the rest bounds the probability the best `b`-draw exceeds
/// `t`.
pub fn max_inner_objective(profile: &GenerationProfile, a: usize, b: usize, n: u32, t: f64) -> Result<f64> {
    check_n(n)?;
    if a >= profile.k() || b >= profile.k() || a == b {
        return Err(Error::Domain(format!(
            "max_inner_objective needs distinct answer indices below {}, got a = {a}, b = {b}",
            profile.k()
        )));
    }
    if !t.is_finite() {
        return Err(Error::Domain(format!("threshold t = {t} must be finite")));
    }
    Ok(max_objective_unchecked(profile, a, b, n, t))
}

fn score_cdf(profile: &GenerationProfile, k: usize, t: f64) -> f64 {
    let mu = profile.scores().mus()[k];
    let sigma = profile.scores().sigmas()[k];
    if sigma > 0.0 {
        phi((t - mu) / sigma)
    } else if t >= mu {
        1.0
    } else {
        0.0
    }
}

fn max_objective_unchecked(profile: &GenerationProfile, a: usize, b: usize, n: u32, t: f64) -> f64 {
    let pa = profile.dist().probs()[a];
    let pb = profile.dist().probs()[b];
    let below_a = 1.0 - pa * (1.0 - score_cdf(profile, a, t));
    let below_b = 1.0 - pb * (1.0 - score_cdf(profile, b, t));
    below_a.powi(n as i32) + 1.0 - below_b.powi(n as i32)
}

const MAX_GRID_POINTS: usize = 512;
const MAX_REFINE_TOL: f64 = 1e-8;

/// Minimizes the score-max inner objective over the threshold: a 512-point
/// coarse grid over `[min mu - 6 max sigma, max mu + 6 max sigma]` locates
/// the basin, then golden-section refinement shrinks the bracket to width
/// 1e-8. The best evaluated point is returned, so refinement never reports
/// a worse value than the grid.
fn max_term_minimize(profile: &GenerationProfile, a: usize, b: usize, n: u32) -> InnerSolverResult {
    let mus = profile.scores().mus();
    let sigmas = profile.scores().sigmas();
    let mu_min = mus.iter().copied().fold(f64::INFINITY, f64::min);
    let mu_max = mus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sigma_max = sigmas.iter().copied().fold(0.0f64, f64::max);
    let lo = mu_min - 6.0 * sigma_max;
    let hi = mu_max + 6.0 * sigma_max;
    let f = |t: f64| max_objective_unchecked(profile, a, b, n, t);

    if hi <= lo {
        // Degenerate range: every score is the same deterministic value.
        return InnerSolverResult { t_star: lo, objective: f(lo), iterations: 1, converged: true };
    }

    let step = (hi - lo) / (MAX_GRID_POINTS - 1) as f64;
    let mut best_t = lo;
    let mut best_f = f64::INFINITY;
    let mut best_i = 0;
    for i in 0..MAX_GRID_POINTS {
        let t = lo + step * i as f64;
        let v = f(t);
        if v < best_f {
            best_f = v;
            best_t = t;
            best_i = i;
        }
    }

    // Golden-section refinement inside the cells around the best grid point.
    let inv_phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let mut a_end = lo + step * best_i.saturating_sub(1) as f64;
    let mut b_end = lo + step * (best_i + 1).min(MAX_GRID_POINTS - 1) as f64;
    let mut iterations = MAX_GRID_POINTS as u32;
    let mut c = b_end - inv_phi * (b_end - a_end);
    let mut d = a_end + inv_phi * (b_end - a_end);
    let mut fc = f(c);
    let mut fd = f(d);
    let track = |t: f64, v: f64, best_t: &mut f64, best_f: &mut f64| {
        if v < *best_f {
            *best_f = v;
            *best_t = t;
        }
    };
    track(c, fc, &mut best_t, &mut best_f);
    track(d, fd, &mut best_t, &mut best_f);
    while (b_end - a_end) > MAX_REFINE_TOL && iterations < 5_000 {
        iterations += 1;
        if fc < fd {
            b_end = d;
            d = c;
            fd = fc;
            c = b_end - inv_phi * (b_end - a_end);
            fc = f(c);
            track(c, fc, &mut best_t, &mut best_f);
        } else {
            a_end = c;
            c = d;
            fc = fd;
            d = a_end + inv_phi * (b_end - a_end);
            fd = f(d);
            track(d, fd, &mut best_t, &mut best_f);
        }
    }
    InnerSolverResult {
        t_star: best_t,
        objective: best_f,
        iterations,
        converged: (b_end - a_end) <= MAX_REFINE_TOL,
    }
}

/// Lower bound on the score-max win probability, requiring the correct
/// answer's score spread to be strictly the largest.
pub fn max_vote_lower_bound(profile: &GenerationProfile, n: u32) -> Result<BoundResult> {
    check_n(n)?;
    let sigmas = profile.scores().sigmas();
    let correct = profile.dist().correct_index();
    let s1 = sigmas[correct];
    let mut terms = Vec::new();
    let mut solves = Vec::new();
    for k in 0..profile.k() {
        if k == correct {
            continue;
        }
        if s1 <= sigmas[k] {
            return Err(Error::Hypothesis(format!(
                "score-max lower bound needs sigma[correct] strictly largest; answer {k} has sigma = {} >= {s1}",
                sigmas[k]
            )));
        }
        let solve = max_term_minimize(profile, correct, k, n);
        terms.push(solve.objective);
        solves.push(solve);
    }
    let raw = 1.0 - terms.iter().sum::<f64>();
    Ok(BoundResult {
        value: raw.clamp(0.0, 1.0),
        kind: BoundKind::Lower,
        raw_value: raw,
        per_k_terms: terms,
        active_k: None,
        inner_solves: solves,
    })
}

/// Upper bound on the score-max win probability, taken against the
/// competitor with the largest score spread, which must exceed the correct
/// answer's.
pub fn max_vote_upper_bound(profile: &GenerationProfile, n: u32) -> Result<BoundResult> {
    check_n(n)?;
    let sigmas = profile.scores().sigmas();
    let correct = profile.dist().correct_index();
    let s1 = sigmas[correct];
    let active = (0..profile.k())
        .filter(|&k| k != correct && sigmas[k] > s1)
        .max_by(|&a, &b| sigmas[a].partial_cmp(&sigmas[b]).expect("finite"))
        .ok_or_else(|| {
            Error::Hypothesis(format!(
                "score-max upper bound needs some answer with sigma > sigma[correct] = {s1}"
            ))
        })?;
    let solve = max_term_minimize(profile, active, correct, n);
    let raw = solve.objective;
    Ok(BoundResult {
        value: raw.clamp(0.0, 1.0),
        kind: BoundKind::Upper,
        raw_value: raw,
        per_k_terms: Vec::new(),
        active_k: Some(active),
        inner_solves: vec![solve],
    })
}

/// Whether the dominance hypothesis of the rule's lower bound holds: the
/// correct answer strictly leads every rival in the quantity the rule
/// concentrates on (probability, probability-weighted mean score, or score
/// spread).
pub fn lower_hypothesis_holds(profile: &GenerationProfile, rule: AggregationRule) -> bool {
    let dist = profile.dist();
    let scores = profile.scores();
    let c = dist.correct_index();
    (0..profile.k()).filter(|&k| k != c).all(|k| match rule {
        AggregationRule::MajorityVote => dist.probs()[c] > dist.probs()[k],
        AggregationRule::ScoreSum(_) => {
            dist.probs()[c] * scores.mus()[c] > dist.probs()[k] * scores.mus()[k]
        }
        AggregationRule::ScoreMax(_) => scores.sigmas()[c] > scores.sigmas()[k],
    })
}

/// Whether some rival strictly beats the correct answer in the rule's
/// dominant quantity, which is when the matching upper bound applies.
pub fn upper_hypothesis_holds(profile: &GenerationProfile, rule: AggregationRule) -> bool {
    let dist = profile.dist();
    let scores = profile.scores();
    let c = dist.correct_index();
    (0..profile.k()).filter(|&k| k != c).any(|k| match rule {
        AggregationRule::MajorityVote => dist.probs()[k] > dist.probs()[c],
        AggregationRule::ScoreSum(_) => {
            dist.probs()[k] * scores.mus()[k] > dist.probs()[c] * scores.mus()[c]
        }
        AggregationRule::ScoreMax(_) => scores.sigmas()[k] > scores.sigmas()[c],
    })
}

/// Floor applied to routing targets so downstream ratios stay finite.
pub const TARGET_FLOOR: f64 = 1e-6;

/// Dispatches to the bound family matching the rule.
pub fn bound_value(
    profile: &GenerationProfile,
    rule: AggregationRule,
    n: u32,
    kind: BoundKind,
) -> Result<BoundResult> {
    match (rule, kind) {
        (AggregationRule::MajorityVote, BoundKind::Lower) => majority_lower_bound(profile.dist(), n),
        (AggregationRule::MajorityVote, BoundKind::Upper) => majority_upper_bound(profile.dist(), n),
        (AggregationRule::ScoreSum(_), BoundKind::Lower) => sum_vote_lower_bound(profile, n),
        (AggregationRule::ScoreSum(_), BoundKind::Upper) => sum_vote_upper_bound(profile, n),
        (AggregationRule::ScoreMax(_), BoundKind::Lower) => max_vote_lower_bound(profile, n),
        (AggregationRule::ScoreMax(_), BoundKind::Upper) => max_vote_upper_bound(profile, n),
    }
}

/// Routing target for one method on one question.
///
/// Uses the rule's lower bound when its hypothesis holds, else the upper
/// bound, else the empirical accuracy. The score-max bounds describe the
/// `n -> infinity` behavior poorly at small `n`, so below `small_n_threshold`
/// the empirical accuracy is used directly. The result is clamped to
/// `[1e-6, 1]`.
pub fn target_value(
    profile: &GenerationProfile,
    rule: AggregationRule,
    n: u32,
    empirical_acc: f64,
    small_n_threshold: u32,
) -> Result<f64> {
    check_n(n)?;
    if !empirical_acc.is_finite() || !(0.0..=1.0).contains(&empirical_acc) {
        return Err(Error::Domain(format!("empirical accuracy {empirical_acc} outside [0, 1]")));
    }
    let clamp = |v: f64| v.clamp(TARGET_FLOOR, 1.0);
    if matches!(rule, AggregationRule::ScoreMax(_)) && n < small_n_threshold {
        return Ok(clamp(empirical_acc));
    }
    if lower_hypothesis_holds(profile, rule) {
        return Ok(clamp(bound_value(profile, rule, n, BoundKind::Lower)?.value));
    }
    if upper_hypothesis_holds(profile, rule) {
        return Ok(clamp(bound_value(profile, rule, n, BoundKind::Upper)?.value));
    }
    Ok(clamp(empirical_acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{exact_majority_win_prob, TieWeighting};
    use crate::distributions::{ScoreModel, StepReduction};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dist(probs: Vec<f64>, correct: usize) -> AnswerDistribution {
        AnswerDistribution::new(probs, correct).unwrap()
    }

    fn profile(probs: Vec<f64>, correct: usize, mus: Vec<f64>, sigmas: Vec<f64>) -> GenerationProfile {
        GenerationProfile::new(dist(probs, correct), ScoreModel::new(mus, sigmas).unwrap()).unwrap()
    }

    #[test]
    fn majority_lower_certain_answer() {
        let b = majority_lower_bound(&dist(vec![1.0, 0.0], 0), 1).unwrap();
        let expected = 1.0 - (-1.0f64).exp();
        assert!((b.value - expected).abs() < 1e-15);
        assert_eq!(b.per_k_terms.len(), 1);
    }

    #[test]
    fn majority_lower_known_value() {
        let b = majority_lower_bound(&dist(vec![0.6, 0.4], 0), 4).unwrap();
        let gap = (0.6f64.sqrt() - 0.4f64.sqrt()).powi(2);
        let expected = 1.0 - (-4.0 * gap).exp();
        assert!((b.value - expected).abs() < 1e-15);
        assert!((b.value - 0.0776).abs() < 1e-4);
    }

    #[test]
    fn majority_lower_single_answer() {
        let b = majority_lower_bound(&dist(vec![1.0], 0), 3).unwrap();
        assert_eq!(b.value, 1.0);
        assert!(b.per_k_terms.is_empty());
    }

    #[test]
    fn majority_lower_clamps_at_zero() {
        let b = majority_lower_bound(&dist(vec![0.34, 0.33, 0.33], 0), 1).unwrap();
        assert!(b.raw_value < 0.0);
        assert_eq!(b.value, 0.0);
    }

    #[test]
    fn majority_lower_rejects_non_dominant_correct() {
        let err = majority_lower_bound(&dist(vec![0.5, 0.5], 0), 2).unwrap_err();
        assert!(matches!(err, Error::Hypothesis(_)), "{err}");
        assert!(err.to_string().contains("answer 1"));
    }

    #[test]
    fn majority_upper_known_value() {
        let b = majority_upper_bound(&dist(vec![0.4, 0.6], 0), 2).unwrap();
        let gap = (0.6f64.sqrt() - 0.4f64.sqrt()).powi(2);
        assert!((b.value - (-2.0 * gap).exp()).abs() < 1e-15);
        assert!((b.value - 0.9604).abs() < 1e-4);
        assert_eq!(b.active_k, Some(1));
        assert_eq!(b.kind, BoundKind::Upper);
    }

    #[test]
    fn majority_upper_needs_a_beater() {
        assert!(majority_upper_bound(&dist(vec![0.6, 0.4], 0), 2).is_err());
    }

    #[test]
    fn majority_bounds_sandwich_exact_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let k = rng.gen_range(2..=4);
            let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0f64)).collect();
            let sum: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|p| p / sum).collect();
            let n = rng.gen_range(1..=8);
            let top = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();

            let d_lower = dist(probs.clone(), top);
            let exact = exact_majority_win_prob(&d_lower, n, TieWeighting::Uniform).unwrap();
            let lower = majority_lower_bound(&d_lower, n).unwrap();
            assert!(
                lower.value <= exact + 1e-12,
                "lower {} > exact {exact} for {probs:?}, n = {n}",
                lower.value
            );

            let bottom = (top + 1) % k;
            if probs[top] > probs[bottom] {
                let d_upper = dist(probs.clone(), bottom);
                let exact_u = exact_majority_win_prob(&d_upper, n, TieWeighting::Uniform).unwrap();
                let upper = majority_upper_bound(&d_upper, n).unwrap();
                assert!(
                    exact_u <= upper.value + 1e-12,
                    "exact {exact_u} > upper {} for {probs:?}, n = {n}",
                    upper.value
                );
            }
        }
    }

    #[test]
    fn sum_exponent_objective_is_zero_at_origin() {
        assert_eq!(sum_exponent_objective(0.6, 0.8, 0.1, 0.4, 0.5, 0.1, 0.0), 0.0);
    }

    #[test]
    fn sum_exponent_minimize_generic_instance() {
        let res = sum_exponent_minimize(0.6, 0.8, 0.1, 0.4, 0.5, 0.1).unwrap();
        assert!(res.converged);
        assert!(res.t_star > 0.0);
        assert!(res.objective < 0.0);

        // Dense-grid oracle: no point on (0, 10] may beat the solver by more
        // than the acceptance slack.
        let mut grid_min = f64::INFINITY;
        for i in 1..=100_000 {
            let t = 10.0 * i as f64 / 100_000.0;
            grid_min = grid_min.min(sum_exponent_objective(0.6, 0.8, 0.1, 0.4, 0.5, 0.1, t));
        }
        assert!(res.objective <= grid_min + 1e-9, "solver {} vs grid {grid_min}", res.objective);
    }

    #[test]
    fn sum_exponent_minimize_caps_when_no_interior_minimum() {
        let res = sum_exponent_minimize(1.0, 1.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        assert!(!res.converged);
        assert_eq!(res.t_star, 50.0);
        assert!((res.objective - ((-50.0f64).exp() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn sum_exponent_minimize_interior_minimum_with_zero_competitor_mass() {
        // p_b = 0 but sigma_a > 0 still yields an interior minimum at
        // t = mu_a / sigma_a^2.
        let res = sum_exponent_minimize(0.8, 0.5, 0.5, 0.0, 0.0, 0.0).unwrap();
        assert!(res.converged);
        assert!((res.t_star - 2.0).abs() < 1e-6);
    }

    #[test]
    fn sum_exponent_minimize_rejects_bad_inputs() {
        assert!(sum_exponent_minimize(0.5, 0.5, 0.1, 0.5, 0.5, 0.1).is_err());
        assert!(sum_exponent_minimize(1.5, 0.5, 0.1, 0.2, 0.1, 0.1).is_err());
        assert!(sum_exponent_minimize(0.5, f64::NAN, 0.1, 0.2, 0.1, 0.1).is_err());
        assert!(sum_exponent_minimize(0.5, 0.5, -0.1, 0.2, 0.1, 0.1).is_err());
    }

    #[test]
    fn sum_vote_lower_bound_single_term() {
        let p = profile(vec![0.6, 0.4], 0, vec![0.8, 0.5], vec![0.1, 0.1]);
        let b = sum_vote_lower_bound(&p, 50).unwrap();
        assert_eq!(b.inner_solves.len(), 1);
        assert!(b.inner_solves[0].converged);
        let expected = 1.0 - (50.0 * b.inner_solves[0].objective).exp();
        assert!((b.value - expected).abs() < 1e-12);
        assert!(b.value > 0.0 && b.value < 1.0);
    }

    #[test]
    fn sum_vote_upper_bound_roles_swap() {
        // Correct answer is the score-sum underdog: p mu = 0.2 < 0.48.
        let p = profile(vec![0.4, 0.6], 0, vec![0.5, 0.8], vec![0.1, 0.1]);
        let b = sum_vote_upper_bound(&p, 50).unwrap();
        assert_eq!(b.active_k, Some(1));
        assert!(b.value > 0.0 && b.value < 1.0);
        let err = sum_vote_upper_bound(&profile(vec![0.6, 0.4], 0, vec![0.8, 0.5], vec![0.1, 0.1]), 50)
            .unwrap_err();
        assert!(matches!(err, Error::Hypothesis(_)));
    }

    #[test]
    fn sum_vote_bounds_monotone_in_n() {
        let p = profile(vec![0.5, 0.3, 0.2], 0, vec![0.8, 0.6, 0.4], vec![0.2, 0.2, 0.2]);
        let mut prev = 0.0;
        for n in [1, 2, 4, 8, 16, 32, 64] {
            let b = sum_vote_lower_bound(&p, n).unwrap();
            assert!(b.value >= prev - 1e-12, "lower bound fell at n = {n}");
            prev = b.value;
        }
        let q = profile(vec![0.4, 0.6], 0, vec![0.5, 0.8], vec![0.1, 0.1]);
        let mut prev = 1.0;
        for n in [1, 2, 4, 8, 16, 32, 64] {
            let b = sum_vote_upper_bound(&q, n).unwrap();
            assert!(b.value <= prev + 1e-12, "upper bound rose at n = {n}");
            prev = b.value;
        }
    }

    #[test]
    fn max_inner_objective_limits() {
        let p = profile(vec![0.5, 0.5], 0, vec![0.0, 0.0], vec![1.0, 0.5]);
        // Far left: nothing is below t, so the objective is
        // (1 - p_a)^n + 1 - (1 - p_b)^n.
        let left = max_inner_objective(&p, 0, 1, 4, -1e6).unwrap();
        let expected = 0.5f64.powi(4) + 1.0 - 0.5f64.powi(4);
        assert!((left - expected).abs() < 1e-12);
        // Far right: everything is below t, so the objective is 1.
        let right = max_inner_objective(&p, 0, 1, 4, 1e6).unwrap();
        assert!((right - 1.0).abs() < 1e-12);
        assert!(max_inner_objective(&p, 0, 0, 4, 0.0).is_err());
        assert!(max_inner_objective(&p, 0, 2, 4, 0.0).is_err());
    }

    #[test]
    fn max_inner_objective_step_cdf() {
        let p = profile(vec![0.5, 0.5], 0, vec![0.0, 1.0], vec![0.0, 0.0]);
        // t below both means: nothing below t for either answer.
        let v = max_inner_objective(&p, 0, 1, 1, -0.5).unwrap();
        assert!((v - (0.5 + 1.0 - 0.5)).abs() < 1e-12);
        // t between the means: all of answer 0's mass is at or below t.
        let v2 = max_inner_objective(&p, 0, 1, 1, 0.5).unwrap();
        assert!((v2 - (1.0 + 1.0 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn max_vote_lower_bound_grows_with_n() {
        let p = profile(vec![0.5, 0.5], 0, vec![0.0, 0.0], vec![1.0, 0.5]);
        let b64 = max_vote_lower_bound(&p, 64).unwrap();
        let b1024 = max_vote_lower_bound(&p, 1024).unwrap();
        assert!(b64.value > 0.0 && b64.value < 1.0);
        assert!(b1024.value > b64.value, "{} vs {}", b1024.value, b64.value);
        assert!(b64.inner_solves[0].converged);
    }

    #[test]
    fn max_vote_lower_refinement_beats_grid() {
        let p = profile(vec![0.5, 0.5], 0, vec![0.2, 0.0], vec![0.9, 0.4]);
        let b = max_vote_lower_bound(&p, 16).unwrap();
        let solve = &b.inner_solves[0];
        // Re-run the coarse grid by hand and require the refined value to be
        // no worse.
        let mu_min = 0.0;
        let mu_max = 0.2;
        let lo = mu_min - 6.0 * 0.9;
        let hi = mu_max + 6.0 * 0.9;
        let mut grid_best = f64::INFINITY;
        for i in 0..512 {
            let t = lo + (hi - lo) * i as f64 / 511.0;
            grid_best = grid_best.min(max_inner_objective(&p, 0, 1, 16, t).unwrap());
        }
        assert!(solve.objective <= grid_best + 1e-15);
    }

    #[test]
    fn max_vote_bounds_hypotheses() {
        let p = profile(vec![0.5, 0.5], 0, vec![0.0, 0.0], vec![0.5, 1.0]);
        assert!(max_vote_lower_bound(&p, 16).is_err());
        let b = max_vote_upper_bound(&p, 16).unwrap();
        assert_eq!(b.active_k, Some(1));
        assert!(b.value > 0.0 && b.value <= 1.0);
        assert!(max_vote_upper_bound(&profile(vec![0.5, 0.5], 0, vec![0.0, 0.0], vec![1.0, 0.5]), 16).is_err());
    }

    #[test]
    fn target_value_picks_sides() {
        // Majority vote, dominant correct answer: lower bound.
        let p = profile(vec![0.6, 0.4], 0, vec![0.8, 0.5], vec![0.2, 0.1]);
        let t = target_value(&p, AggregationRule::MajorityVote, 8, 0.7, 8).unwrap();
        let lower = majority_lower_bound(p.dist(), 8).unwrap();
        assert_eq!(t, lower.value.max(TARGET_FLOOR));

        // Dominated correct answer: upper bound.
        let q = profile(vec![0.4, 0.6], 0, vec![0.8, 0.5], vec![0.2, 0.1]);
        let t2 = target_value(&q, AggregationRule::MajorityVote, 8, 0.7, 8).unwrap();
        let upper = majority_upper_bound(q.dist(), 8).unwrap();
        assert_eq!(t2, upper.value.clamp(TARGET_FLOOR, 1.0));

        // Exact tie satisfies neither hypothesis: empirical fallback.
        let r = profile(vec![0.5, 0.5], 0, vec![0.8, 0.5], vec![0.2, 0.1]);
        let t3 = target_value(&r, AggregationRule::MajorityVote, 8, 0.7, 8).unwrap();
        assert_eq!(t3, 0.7);
    }

    #[test]
    fn target_value_small_n_score_max() {
        let p = profile(vec![0.5, 0.5], 0, vec![0.0, 0.0], vec![1.0, 0.5]);
        let t = target_value(&p, AggregationRule::ScoreMax(StepReduction::Last), 4, 0.42, 8).unwrap();
        assert_eq!(t, 0.42);
        // At the threshold the bound takes over.
        let t8 = target_value(&p, AggregationRule::ScoreMax(StepReduction::Last), 8, 0.42, 8).unwrap();
        assert_eq!(t8, max_vote_lower_bound(&p, 8).unwrap().value.max(TARGET_FLOOR));
    }

    #[test]
    fn target_value_clamps_to_floor() {
        let p = profile(vec![0.5, 0.5], 0, vec![0.8, 0.5], vec![0.2, 0.1]);
        let t = target_value(&p, AggregationRule::MajorityVote, 8, 0.0, 8).unwrap();
        assert_eq!(t, TARGET_FLOOR);
        assert!(target_value(&p, AggregationRule::MajorityVote, 8, 1.5, 8).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn majority_lower_monotone_in_n(
            p1 in 0.4f64..0.9,
            n in 1u32..200,
        ) {
            let rest = 1.0 - p1;
            let d = dist(vec![p1, rest * 0.6, rest * 0.4], 0);
            prop_assume!(p1 > rest * 0.6);
            let a = majority_lower_bound(&d, n).unwrap();
            let b = majority_lower_bound(&d, n + 1).unwrap();
            prop_assert!(b.value >= a.value - 1e-12);
            prop_assert!((0.0..=1.0).contains(&a.value));
        }

        #[test]
        fn sum_solver_beats_dense_grid(
            p_a in 0.2f64..0.9,
            mu_a in 0.3f64..1.0,
            sigma_a in 0.01f64..0.5,
            frac in 0.05f64..0.9,
            sigma_b in 0.01f64..0.5,
        ) {
            let p_b = 1.0 - p_a;
            // Choose mu_b so the hypothesis p_a mu_a > p_b mu_b holds.
            let mu_b = frac * p_a * mu_a / p_b;
            let res = sum_exponent_minimize(p_a, mu_a, sigma_a, p_b, mu_b, sigma_b).unwrap();
            prop_assert!(res.converged);
            prop_assert!(res.objective <= 0.0);
            let mut grid_min = f64::INFINITY;
            for i in 1..=2_000 {
                let t = 10.0 * i as f64 / 2_000.0;
                grid_min = grid_min.min(sum_exponent_objective(p_a, mu_a, sigma_a, p_b, mu_b, sigma_b, t));
            }
            prop_assert!(res.objective <= grid_min + 1e-9);
        }

        #[test]
        fn max_objective_stays_in_range(
            t in -20.0f64..20.0,
            n in 1u32..64,
        ) {
            let p = profile(vec![0.5, 0.5], 0, vec![0.0, 0.3], vec![1.0, 0.5]);
            let v = max_inner_objective(&p, 0, 1, n, t).unwrap();
            prop_assert!((0.0..=2.0).contains(&v));
        }
    }
}
