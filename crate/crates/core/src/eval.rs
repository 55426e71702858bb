//! Policy evaluation, reference baselines, Pareto sweeps, and a small PCA
//! used when exporting embeddings for plotting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::mix_seeds;
use crate::dataset::{fnv1a, MethodUniverse, QuestionRecord};
use crate::router::{train, TrainConfig};
use crate::{Error, Result};

/// Convention stated in every report: costs are averaged in raw units and
/// cover only the selected method's generation; routing overhead is not
/// billed.
pub const COST_NOTE: &str =
    "avg_raw_cost is the mean raw generation cost of the selected methods only; \
     router overhead is excluded and no cost transform is applied";

/// Aggregate outcome of running one routing policy over a question table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    /// Mean accuracy of the selected method per question.
    pub accuracy: f64,
    /// Mean raw cost of the selected method per question.
    pub avg_raw_cost: f64,
    /// Fraction of questions routed to each method; sums to 1.
    pub per_method_share: Vec<f64>,
    pub note: String,
}

/// Runs `policy` over every question and averages accuracy and raw cost.
pub fn evaluate_policy<F>(mut policy: F, test: &[QuestionRecord], methods: usize) -> Result<PolicyReport>
where
    F: FnMut(&QuestionRecord) -> Result<usize>,
{
    if test.is_empty() {
        return Err(Error::Domain("evaluation needs at least one question".into()));
    }
    if methods == 0 {
        return Err(Error::Domain("evaluation needs at least one method".into()));
    }
    let mut accuracy = 0.0;
    let mut cost = 0.0;
    let mut share = vec![0.0; methods];
    for record in test {
        let i = policy(record)?;
        if i >= methods || i >= record.accuracy.len() || i >= record.raw_cost.len() {
            return Err(Error::Domain(format!(
                "policy chose method {i} on question {} but only {methods} methods exist",
                record.qid
            )));
        }
        accuracy += record.accuracy[i];
        cost += record.raw_cost[i];
        share[i] += 1.0;
    }
    let n = test.len() as f64;
    share.iter_mut().for_each(|s| *s /= n);
    Ok(PolicyReport {
        accuracy: accuracy / n,
        avg_raw_cost: cost / n,
        per_method_share: share,
        note: COST_NOTE.to_string(),
    })
}

/// Fraction of questions some method answers with accuracy above
/// `threshold`: the best any router choosing from this universe could do,
/// counting a question as solvable when a method clears the threshold.
pub fn universe_upper_bound(test: &[QuestionRecord], threshold: f64) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Domain("upper bound needs at least one question".into()));
    }
    if !threshold.is_finite() || !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Domain(format!("threshold {threshold} outside [0, 1]")));
    }
    let solvable = test
        .iter()
        .filter(|r| r.accuracy.iter().any(|a| *a > threshold))
        .count();
    Ok(solvable as f64 / test.len() as f64)
}

/// Policy choosing uniformly among all methods, keyed only by `(seed, qid)`
/// so the decision for a question does not depend on evaluation order.
pub fn baseline_random(methods: usize, seed: u64) -> impl Fn(&QuestionRecord) -> Result<usize> {
    move |record| {
        if methods == 0 {
            return Err(Error::Domain("baseline needs at least one method".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seeds(seed, fnv1a(record.qid.as_bytes())));
        Ok(rng.gen_range(0..methods))
    }
}

/// Policy sampling from the empirical distribution of training-set positive
/// labels, keyed by `(seed, qid)` like [`baseline_random`].
pub fn baseline_label_distribution(
    labels: &[usize],
    methods: usize,
    seed: u64,
) -> Result<impl Fn(&QuestionRecord) -> Result<usize>> {
    if labels.is_empty() {
        return Err(Error::Domain("label-distribution baseline needs training labels".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= methods) {
        return Err(Error::Domain(format!(
            "label {bad} out of range for {methods} methods"
        )));
    }
    let labels = labels.to_vec();
    Ok(move |record: &QuestionRecord| {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seeds(seed, fnv1a(record.qid.as_bytes())));
        Ok(labels[rng.gen_range(0..labels.len())])
    })
}

/// One row of a Pareto sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub lambda: f64,
    pub accuracy: f64,
    pub avg_raw_cost: f64,
}

/// Trains one router per lambda on `train_set` (shared seed and
/// hyperparameters otherwise) and evaluates each on `test_set`. Rows come
/// back sorted by lambda.
pub fn pareto_sweep(
    train_set: &[QuestionRecord],
    test_set: &[QuestionRecord],
    universe: &MethodUniverse,
    lambdas: &[f64],
    cfg: &TrainConfig,
) -> Result<Vec<ParetoPoint>> {
    if lambdas.is_empty() {
        return Err(Error::Domain("pareto sweep needs at least one lambda".into()));
    }
    let mut points = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let cfg = TrainConfig { lambda, ..*cfg };
        let model = train(train_set, universe, &cfg)?;
        let report = evaluate_policy(|r| model.route(&r.features), test_set, universe.len())?;
        points.push(ParetoPoint {
            lambda,
            accuracy: report.accuracy,
            avg_raw_cost: report.avg_raw_cost,
        });
    }
    points.sort_by(|a, b| a.lambda.partial_cmp(&b.lambda).expect("lambdas validated finite"));
    Ok(points)
}

const PCA_TOL: f64 = 1e-9;
const PCA_MAX_ITERS: usize = 10_000;

/// Projects vectors onto their top two principal directions.
///
/// Mean-centers the data, then extracts each direction by power iteration
/// with deflation, re-orthogonalizing against earlier components every
/// step. Component signs are fixed by making the largest-magnitude loading
/// positive. Data with no variance at all is an error; a missing second
/// direction (collinear data) yields zeros in the second column.
pub fn project_2d(vectors: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    if vectors.len() < 2 {
        return Err(Error::Domain("projection needs at least two vectors".into()));
    }
    let dim = vectors[0].len();
    if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::Domain("projection needs equal-length nonempty vectors".into()));
    }
    if vectors.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("projection input contains non-finite values".into()));
    }

    let n = vectors.len() as f64;
    let mut mean = vec![0.0; dim];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let centered: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    // Covariance, dim x dim, row-major.
    let mut cov = vec![0.0; dim * dim];
    for row in &centered {
        for r in 0..dim {
            for c in 0..dim {
                cov[r * dim + c] += row[r] * row[c];
            }
        }
    }
    cov.iter_mut().for_each(|v| *v /= n);
    let trace: f64 = (0..dim).map(|r| cov[r * dim + r]).sum();
    if trace <= 0.0 {
        return Err(Error::Numerical("projection input has zero variance".into()));
    }

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(2);
    for comp in 0..2 {
        // Deterministic start, orthogonalized against found components.
        let mut v: Vec<f64> = (0..dim).map(|i| 1.0 + (i as f64) * 0.25 + (comp as f64)).collect();
        orthogonalize(&mut v, &components);
        if normalize(&mut v) == 0.0 {
            // Start vector lies in the found span; pick a coordinate axis.
            v = vec![0.0; dim];
            v[comp % dim] = 1.0;
            orthogonalize(&mut v, &components);
            normalize(&mut v);
        }
        let mut next = vec![0.0; dim];
        for _ in 0..PCA_MAX_ITERS {
            matvec(&cov, &v, &mut next);
            // Deflation: iterate in the complement of found components.
            orthogonalize(&mut next, &components);
            let norm = normalize(&mut next);
            if norm <= trace * 1e-15 {
                // No variance left: the remaining direction is immaterial.
                break;
            }
            // Convergence up to sign.
            let diff: f64 =
                v.iter().zip(&next).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let sum: f64 =
                v.iter().zip(&next).map(|(a, b)| (a + b) * (a + b)).sum::<f64>().sqrt();
            let delta = diff.min(sum);
            std::mem::swap(&mut v, &mut next);
            if delta <= PCA_TOL {
                break;
            }
        }
        // Sign: largest-magnitude loading positive.
        let lead = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).expect("finite"))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
    }

    Ok(centered
        .iter()
        .map(|row| {
            [
                row.iter().zip(&components[0]).map(|(a, b)| a * b).sum(),
                row.iter().zip(&components[1]).map(|(a, b)| a * b).sum(),
            ]
        })
        .collect())
}

fn matvec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let dim = v.len();
    for r in 0..dim {
        out[r] = m[r * dim..(r + 1) * dim].iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let proj: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
        for (x, c) in v.iter_mut().zip(b) {
            *x -= proj * c;
        }
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}
