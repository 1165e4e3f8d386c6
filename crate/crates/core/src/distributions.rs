//! Embedding distributions and total-variation distance.
//!
//! Three representations are supported: diagonal Gaussians (analytic P and
//! the Gaussian-noise P̃), discrete distributions over the vocabulary (the
//! baseline P̆) and empirical sample sets (any other mechanism's P̃).
//! Distances between kinds that cannot be compared directly are taken after
//! mapping both sides onto the vocabulary's Voronoi cells.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::{nearest_token, EmbeddingTable, EmbeddingVector, TokenId};
use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::stats::{std_normal_cdf, std_normal_quantile, Estimate};

pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionSpec {
    #[serde(rename = "gaussian")]
    DiagonalGaussian { mean: Vec<f64>, var: Vec<f64> },
    #[serde(rename = "discrete")]
    DiscreteOverVocab { probs: Vec<f64> },
    #[serde(rename = "empirical")]
    Empirical { samples: Vec<Vec<f64>> },
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DistributionSpec::DiagonalGaussian { mean, var } => {
                if mean.is_empty() || mean.len() != var.len() {
                    return Err(Error::DimensionMismatch { expected: mean.len(), found: var.len() });
                }
                if mean.iter().any(|m| !m.is_finite()) || var.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::InvalidConfig("gaussian needs finite mean and variances >= 0".into()));
                }
            }
            DistributionSpec::DiscreteOverVocab { probs } => {
                if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(Error::InvalidConfig("probabilities must be finite and >= 0".into()));
                }
                let s: f64 = probs.iter().sum();
                if (s - 1.0).abs() > PROB_SUM_TOLERANCE {
                    return Err(Error::InvalidConfig(format!("probabilities sum to {s}, not 1")));
                }
            }
            DistributionSpec::Empirical { samples } => {
                let dim = samples.first().map(Vec::len).ok_or_else(|| {
                    Error::InvalidConfig("empirical distribution needs at least one sample".into())
                })?;
                if samples.iter().any(|s| s.len() != dim || s.iter().any(|x| !x.is_finite())) {
                    return Err(Error::InvalidConfig("empirical samples must be finite and equal-length".into()));
                }
            }
        }
        Ok(())
    }

    /// Embedding dimension, when the representation carries one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            DistributionSpec::DiagonalGaussian { mean, .. } => Some(mean.len()),
            DistributionSpec::DiscreteOverVocab { .. } => None,
            DistributionSpec::Empirical { samples } => samples.first().map(Vec::len),
        }
    }

    /// True when the support is all of R^M (every variance positive).
    pub fn has_full_support(&self) -> bool {
        matches!(self, DistributionSpec::DiagonalGaussian { var, .. } if var.iter().all(|v| *v > 0.0))
    }
}

/// `n` i.i.d. draws. Discrete draws are returned as the drawn token's
/// embedding, so a table is required for that kind.
pub fn sample_distribution(
    spec: &DistributionSpec,
    n: usize,
    table: Option<&EmbeddingTable>,
    rng: &mut impl Rng,
) -> Result<Vec<EmbeddingVector>> {
    spec.validate()?;
    match spec {
        DistributionSpec::DiagonalGaussian { mean, var } => Ok((0..n)
            .map(|_| {
                EmbeddingVector(
                    mean.iter()
                        .zip(var)
                        .map(|(m, v)| m + v.sqrt() * { let z: f64 = StandardNormal.sample(rng); z })
                        .collect(),
                )
            })
            .collect()),
        DistributionSpec::DiscreteOverVocab { probs } => {
            let table = table.ok_or_else(|| Error::InvalidConfig("discrete sampling needs an embedding table".into()))?;
            if probs.len() != table.len() {
                return Err(Error::MismatchedSupport(format!(
                    "{} probabilities for a vocabulary of {}",
                    probs.len(),
                    table.len()
                )));
            }
            Ok((0..n).map(|_| table.vector(sample_token(probs, rng))).collect())
        }
        DistributionSpec::Empirical { samples } => Ok((0..n)
            .map(|_| EmbeddingVector(samples[rng.random_range(0..samples.len())].clone()))
            .collect()),
    }
}

/// Inverse-CDF draw of a token index.
pub fn sample_token(probs: &[f64], rng: &mut impl Rng) -> TokenId {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// Uniform distribution over the vocabulary; the prompt-independent P̆.
pub fn baseline_distribution(vocab_len: usize) -> DistributionSpec {
    DistributionSpec::DiscreteOverVocab { probs: vec![1.0 / vocab_len as f64; vocab_len] }
}

/// `½ Σ |p_k − q_k|` for two distributions on the same vocabulary.
pub fn tv_discrete(p: &DistributionSpec, q: &DistributionSpec) -> Result<f64> {
    match (p, q) {
        (DistributionSpec::DiscreteOverVocab { probs: a }, DistributionSpec::DiscreteOverVocab { probs: b }) => {
            p.validate()?;
            q.validate()?;
            tv_probs(a, b)
        }
        _ => Err(Error::MismatchedSupport("tv_discrete needs two discrete distributions".into())),
    }
}

pub(crate) fn tv_probs(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::MismatchedSupport(format!("support sizes {} and {}", a.len(), b.len())));
    }
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    Ok((0.5 * s).clamp(0.0, 1.0))
}

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let z = (x - mean) * (x - mean) / var;
    (-0.5 * z).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Points where two 1-D normal densities cross.
fn density_crossings(m1: f64, v1: f64, m2: f64, v2: f64) -> Vec<f64> {
    // log p − log q = a x² + b x + c
    let a = 0.5 / v2 - 0.5 / v1;
    let b = m1 / v1 - m2 / v2;
    let c = 0.5 * m2 * m2 / v2 - 0.5 * m1 * m1 / v1 + 0.5 * (v2 / v1).ln();
    let scale = 1.0 / v1.min(v2);
    if a.abs() <= 1e-14 * scale {
        if b.abs() <= 1e-300 {
            return vec![];
        }
        return vec![-c / b];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let sq = disc.sqrt();
    // numerically stable roots
    let qv = -0.5 * (b + b.signum() * sq);
    let mut roots = if qv != 0.0 { vec![qv / a, c / qv] } else { vec![(-b) / (2.0 * a)] };
    roots.sort_by(f64::total_cmp);
    roots.dedup();
    roots
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        eps: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * eps {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), eps, 48)
}

/// Options for the multi-dimensional Gaussian TV estimator.
#[derive(Debug, Clone, Copy)]
pub struct QmcOptions {
    pub points: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for QmcOptions {
    fn default() -> Self {
        QmcOptions { points: 8192, replicates: 16, seed: 0x5eed }
    }
}

/// TV distance between two diagonal Gaussians.
///
/// One-dimensional inputs are integrated adaptively between the density
/// crossings (absolute error well below 1e-6, reported as zero SE). Higher
/// dimensions use randomized Halton quasi-Monte-Carlo over `p`, estimating
/// `E_p[max(0, 1 − q/p)]`; the SE comes from the spread across random shifts.
pub fn tv_gaussian_diag(p: &DistributionSpec, q: &DistributionSpec, opts: QmcOptions) -> Result<Estimate> {
    let (DistributionSpec::DiagonalGaussian { mean: m1, var: v1 }, DistributionSpec::DiagonalGaussian { mean: m2, var: v2 }) =
        (p, q)
    else {
        return Err(Error::MismatchedSupport("tv_gaussian_diag needs two gaussians".into()));
    };
    for (m, v) in [(m1, v1), (m2, v2)] {
        if m.iter().chain(v.iter()).any(|x| !x.is_finite()) || v.iter().any(|x| *x < 0.0) {
            return Err(Error::NonFiniteDensity("gaussian parameters must be finite with var >= 0".into()));
        }
    }
    if m1.len() != m2.len() || m1.len() != v1.len() || m2.len() != v2.len() {
        return Err(Error::DimensionMismatch { expected: m1.len(), found: m2.len() });
    }
    // Degenerate coordinates: identical point masses drop out, anything else
    // involving a point mass makes the two measures mutually singular.
    let mut keep = Vec::new();
    for k in 0..m1.len() {
        let (a0, b0) = (v1[k] == 0.0, v2[k] == 0.0);
        if a0 && b0 {
            if m1[k] != m2[k] {
                return Ok(Estimate::exact(1.0));
            }
        } else if a0 || b0 {
            return Ok(Estimate::exact(1.0));
        } else {
            keep.push(k);
        }
    }
    if keep.is_empty() || keep.iter().all(|&k| m1[k] == m2[k] && v1[k] == v2[k]) {
        return Ok(Estimate::exact(0.0));
    }
    if keep.len() == 1 {
        let k = keep[0];
        return Ok(Estimate::exact(tv_gaussian_1d(m1[k], v1[k], m2[k], v2[k])?));
    }
    tv_gaussian_qmc(
        &keep.iter().map(|&k| (m1[k], v1[k], m2[k], v2[k])).collect::<Vec<_>>(),
        opts,
    )
}

fn tv_gaussian_1d(m1: f64, v1: f64, m2: f64, v2: f64) -> Result<f64> {
    let f = |x: f64| (normal_pdf(x, m1, v1) - normal_pdf(x, m2, v2)).abs();
    let s = v1.sqrt().max(v2.sqrt());
    let lo = m1.min(m2) - 14.0 * s;
    let hi = m1.max(m2) + 14.0 * s;
    let mut knots = vec![lo];
    knots.extend(density_crossings(m1, v1, m2, v2).into_iter().filter(|x| *x > lo && *x < hi));
    // extra knots near each mode keep narrow peaks from being skipped
    for (m, v) in [(m1, v1), (m2, v2)] {
        for k in [-4.0, -1.0, 0.0, 1.0, 4.0] {
            let x = m + k * v.sqrt();
            if x > lo && x < hi {
                knots.push(x);
            }
        }
    }
    knots.push(hi);
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let mut total = 0.0;
    for w in knots.windows(2) {
        total += adaptive_simpson(&f, w[0], w[1], 1e-12);
    }
    if !total.is_finite() {
        return Err(Error::NonFiniteDensity(format!("integral evaluated to {total}")));
    }
    Ok((0.5 * total).clamp(0.0, 1.0))
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut c = 2u64;
    while primes.len() < n {
        if primes.iter().take_while(|&&p| p * p <= c).all(|&p| c % p != 0) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

fn tv_gaussian_qmc(coords: &[(f64, f64, f64, f64)], opts: QmcOptions) -> Result<Estimate> {
    let dim = coords.len();
    let primes = first_primes(dim);
    let mut rng = StreamKey::new(opts.seed).rng();
    let mut reps = Vec::with_capacity(opts.replicates);
    for _ in 0..opts.replicates.max(2) {
        let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let mut acc = 0.0;
        for i in 0..opts.points {
            let mut log_ratio = 0.0;
            for (k, &(m1, v1, m2, v2)) in coords.iter().enumerate() {
                let u = (radical_inverse(i as u64 + 1, primes[k]) + shift[k]).fract();
                let u = u.clamp(1e-16, 1.0 - 1e-16);
                let x = m1 + v1.sqrt() * std_normal_quantile(u);
                log_ratio += -0.5 * (x - m2).powi(2) / v2 + 0.5 * (x - m1).powi(2) / v1 - 0.5 * (v2 / v1).ln();
            }
            if log_ratio.is_nan() {
                return Err(Error::NonFiniteDensity("density ratio is NaN".into()));
            }
            acc += (1.0 - log_ratio.exp()).max(0.0);
        }
        reps.push(acc / opts.points as f64);
    }
    let est = Estimate::from_samples(&reps);
    Ok(Estimate { value: est.value.clamp(0.0, 1.0), se: est.se })
}

/// A distribution mapped onto the vocabulary's Voronoi cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMasses {
    pub probs: Vec<f64>,
    /// Per-draw cell labels when the masses came from sampling.
    pub labels: Option<Vec<TokenId>>,
}

impl CellMasses {
    /// Histogram of per-draw cell labels over `k` cells.
    pub fn from_labels(labels: Vec<TokenId>, k: usize) -> Self {
        histogram(labels, k)
    }

    pub fn exact(probs: Vec<f64>) -> Self {
        CellMasses { probs, labels: None }
    }
}

pub const VORONOI_SAMPLES: usize = 100_000;

/// Voronoi discretization: the mass each token's nearest-neighbour cell
/// receives. Exact for 1-D Gaussians (cells are intervals), sampled with
/// [`VORONOI_SAMPLES`] draws for multi-dimensional Gaussians, a histogram for
/// empirical inputs.
pub fn voronoi_masses(spec: &DistributionSpec, table: &EmbeddingTable, key: StreamKey) -> Result<CellMasses> {
    spec.validate()?;
    let k = table.len();
    match spec {
        DistributionSpec::DiscreteOverVocab { probs } => {
            if probs.len() != k {
                return Err(Error::MismatchedSupport(format!("{} probabilities for {} tokens", probs.len(), k)));
            }
            Ok(CellMasses { probs: probs.clone(), labels: None })
        }
        DistributionSpec::DiagonalGaussian { mean, var } => {
            if mean.len() != table.dim() {
                return Err(Error::DimensionMismatch { expected: table.dim(), found: mean.len() });
            }
            if var.iter().all(|v| *v == 0.0) {
                let mut probs = vec![0.0; k];
                probs[nearest_token(mean, table)] = 1.0;
                return Ok(CellMasses { probs, labels: None });
            }
            if table.dim() == 1 {
                return Ok(CellMasses { probs: gaussian_interval_masses(mean[0], var[0], table), labels: None });
            }
            let mut rng = key.rng();
            let labels: Vec<TokenId> = sample_distribution(spec, VORONOI_SAMPLES, None, &mut rng)?
                .iter()
                .map(|x| nearest_token(x.coords(), table))
                .collect();
            Ok(histogram(labels, k))
        }
        DistributionSpec::Empirical { samples } => {
            if samples[0].len() != table.dim() {
                return Err(Error::DimensionMismatch { expected: table.dim(), found: samples[0].len() });
            }
            let labels = samples.iter().map(|x| nearest_token(x, table)).collect();
            Ok(histogram(labels, k))
        }
    }
}

fn histogram(labels: Vec<TokenId>, k: usize) -> CellMasses {
    let mut counts = vec![0usize; k];
    for &l in &labels {
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    CellMasses { probs: counts.iter().map(|&c| c as f64 / n).collect(), labels: Some(labels) }
}

fn gaussian_interval_masses(mean: f64, var: f64, table: &EmbeddingTable) -> Vec<f64> {
    let sd = var.sqrt();
    let mut order: Vec<TokenId> = (0..table.len()).collect();
    // duplicates keep the lowest id first so it owns the shared cell
    order.sort_by(|&a, &b| table.row(a)[0].total_cmp(&table.row(b)[0]).then(a.cmp(&b)));
    let mut probs = vec![0.0; table.len()];
    let cdf = |x: f64| std_normal_cdf((x - mean) / sd);
    let mut lower = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let x = table.row(order[i])[0];
        let mut j = i;
        while j + 1 < order.len() && table.row(order[j + 1])[0] == x {
            j += 1;
        }
        let upper = if j + 1 < order.len() { 0.5 * (x + table.row(order[j + 1])[0]) } else { f64::INFINITY };
        let hi = if upper.is_finite() { cdf(upper) } else { 1.0 };
        let lo = if lower.is_finite() { cdf(lower) } else { 0.0 };
        probs[order[i]] = (hi - lo).max(0.0);
        lower = upper;
        i = j + 1;
    }
    probs
}

/// TV between two cell-mass vectors, with a delta-method SE for sampled sides.
pub fn tv_cells(a: &CellMasses, b: &CellMasses) -> Result<Estimate> {
    let value = tv_probs(&a.probs, &b.probs)?;
    let sign: Vec<f64> = a
        .probs
        .iter()
        .zip(&b.probs)
        .map(|(x, y)| if x > y { 1.0 } else if x < y { -1.0 } else { 0.0 })
        .collect();
    let side_var = |m: &CellMasses| -> f64 {
        match &m.labels {
            None => 0.0,
            Some(labels) => {
                let n = labels.len() as f64;
                let s: Vec<f64> = labels.iter().map(|&l| sign[l]).collect();
                let mean = s.iter().sum::<f64>() / n;
                let var = s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                0.25 * var / n
            }
        }
    };
    Ok(Estimate { value, se: (side_var(a) + side_var(b)).sqrt() })
}

/// TV distance for any pair of representations. Gaussian pairs use
/// [`tv_gaussian_diag`], discrete pairs are exact, everything else goes
/// through the Voronoi discretization.
pub fn tv_distance(
    p: &DistributionSpec,
    q: &DistributionSpec,
    table: &EmbeddingTable,
    key: StreamKey,
) -> Result<Estimate> {
    match (p, q) {
        (DistributionSpec::DiagonalGaussian { .. }, DistributionSpec::DiagonalGaussian { .. }) => {
            tv_gaussian_diag(p, q, QmcOptions { seed: key.raw(), ..QmcOptions::default() })
        }
        (DistributionSpec::DiscreteOverVocab { .. }, DistributionSpec::DiscreteOverVocab { .. }) => {
            Ok(Estimate::exact(tv_discrete(p, q)?))
        }
        _ => {
            let a = voronoi_masses(p, table, key.child(1))?;
            let b = voronoi_masses(q, table, key.child(2))?;
            tv_cells(&a, &b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{TableRole, Vocabulary};
    use crate::stats::chi_square_gof;
    use proptest::prelude::*;

    fn discrete(p: &[f64]) -> DistributionSpec {
        DistributionSpec::DiscreteOverVocab { probs: p.to_vec() }
    }

    fn gauss(m: f64, v: f64) -> DistributionSpec {
        DistributionSpec::DiagonalGaussian { mean: vec![m], var: vec![v] }
    }

    #[test]
    fn tv_discrete_examples() {
        assert_eq!(tv_discrete(&discrete(&[0.2, 0.8]), &discrete(&[0.2, 0.8])).unwrap(), 0.0);
        assert_eq!(tv_discrete(&discrete(&[1.0, 0.0]), &discrete(&[0.0, 1.0])).unwrap(), 1.0);
        assert!((tv_discrete(&discrete(&[0.5, 0.5]), &discrete(&[0.75, 0.25])).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(
            tv_discrete(&discrete(&[0.5, 0.5]), &discrete(&[0.2, 0.3, 0.5])),
            Err(Error::MismatchedSupport(_))
        ));
        assert!(matches!(tv_discrete(&discrete(&[1.0, 0.0]), &gauss(0.0, 1.0)), Err(Error::MismatchedSupport(_))));
    }

    #[test]
    fn tv_gaussian_identical_and_shifted() {
        let o = QmcOptions::default();
        assert_eq!(tv_gaussian_diag(&gauss(0.3, 2.0), &gauss(0.3, 2.0), o).unwrap().value, 0.0);
        // 2Φ(1/2) − 1
        let v = tv_gaussian_diag(&gauss(0.0, 1.0), &gauss(1.0, 1.0), o).unwrap().value;
        assert!((v - 0.382_924_922_548_026).abs() < 1e-6, "{v}");
    }

    #[test]
    fn tv_gaussian_variance_change_matches_monte_carlo() {
        // closed-form oracle: densities cross at ±x*, TV = (2Φ(x*)−1) − (2Φ(x*/2)−1)
        // ½x²(1 − 1/4) = ½ln 4
        let xstar = (8.0 * 2.0f64.ln() / 3.0).sqrt();
        let closed = (2.0 * std_normal_cdf(xstar) - 1.0) - (2.0 * std_normal_cdf(xstar / 2.0) - 1.0);
        let v = tv_gaussian_diag(&gauss(0.0, 1.0), &gauss(0.0, 4.0), QmcOptions::default()).unwrap().value;
        assert!((v - closed).abs() < 1e-6, "{v} vs {closed}");

        // independent Monte-Carlo estimate E_p[max(0, 1 − q/p)]
        let mut rng = StreamKey::new(11).rng();
        let n = 400_000;
        let mut acc = Vec::with_capacity(n);
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            acc.push((1.0 - normal_pdf(x, 0.0, 4.0) / normal_pdf(x, 0.0, 1.0)).max(0.0));
        }
        let mc = Estimate::from_samples(&acc);
        assert!(mc.within(v, 3.0), "mc {mc:?} vs {v}");
    }

    #[test]
    fn tv_gaussian_degenerate_coordinates() {
        let o = QmcOptions::default();
        let point = gauss(0.0, 0.0);
        assert_eq!(tv_gaussian_diag(&point, &gauss(0.0, 1.0), o).unwrap().value, 1.0);
        assert_eq!(tv_gaussian_diag(&point, &point, o).unwrap().value, 0.0);
        assert_eq!(tv_gaussian_diag(&point, &gauss(1.0, 0.0), o).unwrap().value, 1.0);
        let bad = gauss(f64::NAN, 1.0);
        assert!(matches!(tv_gaussian_diag(&bad, &point, o), Err(Error::NonFiniteDensity(_))));
    }

    #[test]
    fn tv_gaussian_multidim_product_of_shift() {
        // Shift only along the first axis: TV equals the 1-D value.
        let p = DistributionSpec::DiagonalGaussian { mean: vec![0.0, 0.0, 0.0], var: vec![1.0, 2.0, 0.5] };
        let q = DistributionSpec::DiagonalGaussian { mean: vec![1.0, 0.0, 0.0], var: vec![1.0, 2.0, 0.5] };
        let e = tv_gaussian_diag(&p, &q, QmcOptions::default()).unwrap();
        let exact = 2.0 * std_normal_cdf(0.5) - 1.0;
        assert!(e.se > 0.0 && e.se < 5e-3);
        assert!((e.value - exact).abs() < 4.0 * e.se.max(1e-4), "{e:?} vs {exact}");
    }

    fn table_1d(xs: &[f64]) -> EmbeddingTable {
        let vocab = Vocabulary::new((0..xs.len()).map(|i| format!("v{i}")).collect()).unwrap();
        EmbeddingTable::new(vocab, xs.iter().map(|x| vec![*x]).collect(), TableRole::Canonical).unwrap()
    }

    #[test]
    fn voronoi_1d_matches_sampling() {
        let t = table_1d(&[-2.0, -0.5, 0.0, 1.0, 3.0]);
        let g = gauss(0.2, 1.5);
        let exact = voronoi_masses(&g, &t, StreamKey::new(1)).unwrap();
        assert!(exact.labels.is_none());
        assert!((exact.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let draws = sample_distribution(&g, 200_000, None, &mut StreamKey::new(2).rng()).unwrap();
        let emp = DistributionSpec::Empirical { samples: draws.into_iter().map(|v| v.0).collect() };
        let hist = voronoi_masses(&emp, &t, StreamKey::new(3)).unwrap();
        for (a, b) in exact.probs.iter().zip(&hist.probs) {
            assert!((a - b).abs() < 0.005, "{a} vs {b}");
        }
    }

    #[test]
    fn sampling_examples() {
        let t = table_1d(&[4.0, 5.0, 6.0]);
        let mut rng = StreamKey::new(5).rng();
        let xs = sample_distribution(&discrete(&[1.0, 0.0, 0.0]), 50, Some(&t), &mut rng).unwrap();
        assert!(xs.iter().all(|x| x.0 == vec![4.0]));

        let n = 100_000;
        let xs = sample_distribution(&gauss(1.5, 4.0), n, None, &mut rng).unwrap();
        let m = xs.iter().map(|x| x.0[0]).sum::<f64>() / n as f64;
        assert!((m - 1.5).abs() <= 3.0 * 2.0 / (n as f64).sqrt());

        let emp = DistributionSpec::Empirical { samples: vec![vec![7.0], vec![9.0]] };
        let xs = sample_distribution(&emp, 100, None, &mut rng).unwrap();
        assert!(xs.iter().all(|x| x.0 == vec![7.0] || x.0 == vec![9.0]));
        assert!(xs.iter().any(|x| x.0 == vec![7.0]) && xs.iter().any(|x| x.0 == vec![9.0]));
    }

    #[test]
    fn baseline_examples() {
        assert_eq!(baseline_distribution(4), discrete(&[0.25; 4]));
        let b = baseline_distribution(4);
        assert_eq!(tv_discrete(&b, &b).unwrap(), 0.0);
        let mut rng = StreamKey::new(9).rng();
        let mut counts = [0u64; 4];
        for _ in 0..10_000 {
            counts[sample_token(&[0.25; 4], &mut rng)] += 1;
        }
        assert!(chi_square_gof(&counts, &[0.25; 4]) > 0.01);
    }

    #[test]
    fn empirical_tv_shrinks_with_n() {
        let probs = [0.1, 0.2, 0.3, 0.4];
        let t = table_1d(&[0.0, 1.0, 2.0, 3.0]);
        let mut last = f64::INFINITY;
        for (i, n) in [1_000usize, 10_000, 100_000].into_iter().enumerate() {
            let mut rng = StreamKey::new(21).child(i as u64).rng();
            let xs = sample_distribution(&discrete(&probs), n, Some(&t), &mut rng).unwrap();
            let emp = DistributionSpec::Empirical { samples: xs.into_iter().map(|v| v.0).collect() };
            let tv = tv_distance(&emp, &discrete(&probs), &t, StreamKey::new(0)).unwrap().value;
            // expected TV scales like n^{-1/2}; allow generous slack
            assert!(tv < 2.0 / (n as f64).sqrt(), "n={n} tv={tv}");
            assert!(tv < last * 1.5);
            last = tv;
        }
    }

    #[test]
    fn json_schema() {
        let g: DistributionSpec = serde_json::from_str(r#"{"kind":"gaussian","mean":[0.0],"var":[1.0]}"#).unwrap();
        assert_eq!(g, gauss(0.0, 1.0));
        let d: DistributionSpec = serde_json::from_str(r#"{"kind":"discrete","probs":[0.5,0.5]}"#).unwrap();
        assert_eq!(d, discrete(&[0.5, 0.5]));
        assert!(discrete(&[0.5, 0.6]).validate().is_err());
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_map(|v| {
            let s: f64 = v.iter().sum::<f64>() + 1e-12;
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn tv_is_a_metric_on_simplices((a, b, c) in (simplex(6), simplex(6), simplex(6))) {
            let norm = |v: Vec<f64>| { let s: f64 = v.iter().sum(); v.into_iter().map(|x| x / s).collect::<Vec<_>>() };
            let (a, b, c) = (discrete(&norm(a)), discrete(&norm(b)), discrete(&norm(c)));
            let ab = tv_discrete(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, tv_discrete(&b, &a).unwrap());
            prop_assert_eq!(tv_discrete(&a, &a).unwrap(), 0.0);
            let ac = tv_discrete(&a, &c).unwrap();
            let bc = tv_discrete(&b, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }
}
