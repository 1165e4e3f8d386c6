//! Small statistical helpers: Monte-Carlo estimates with standard errors and
//! the goodness-of-fit / rank tests used to check mechanism behaviour.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

/// A Monte-Carlo estimate and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, se: 0.0 }
    }

    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        assert!(n > 0, "estimate of an empty sample");
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Estimate { value: mean, se: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Estimate { value: mean, se: (var / n as f64).sqrt() }
    }

    /// Estimate of `E[a] - E[b]` from paired draws.
    pub fn paired_difference(a: &[f64], b: &[f64]) -> Self {
        assert_eq!(a.len(), b.len());
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        Self::from_samples(&d)
    }

    pub fn within(&self, target: f64, n_se: f64) -> bool {
        (self.value - target).abs() <= n_se * self.se
    }
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn std_normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

/// Asymptotic Kolmogorov tail probability `P(K > lambda)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let j = j as f64;
        let term = (-2.0 * j * j * lambda * lambda).exp();
        sum += if j as i64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let en = n.sqrt();
    KsResult { statistic: d, p_value: kolmogorov_q((en + 0.12 + 0.11 / en) * d) }
}

/// Two-sample Kolmogorov–Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let en = (na * nb / (na + nb)).sqrt();
    KsResult { statistic: d, p_value: kolmogorov_q((en + 0.12 + 0.11 / en) * d) }
}

/// Pearson chi-square goodness of fit; returns the upper-tail p-value.
pub fn chi_square_gof(observed: &[u64], expected_probs: &[f64]) -> f64 {
    assert_eq!(observed.len(), expected_probs.len());
    let n: u64 = observed.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&o, &p) in observed.iter().zip(expected_probs) {
        if p <= 0.0 {
            continue;
        }
        let e = p * n as f64;
        stat += (o as f64 - e).powi(2) / e;
        cells += 1;
    }
    if cells < 2 {
        return 1.0;
    }
    let dist = ChiSquared::new((cells - 1) as f64).expect("positive dof");
    1.0 - dist.cdf(stat)
}

fn average_ranks(xs: &[f64]) -> (Vec<f64>, bool) {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut ties = false;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        if j > i {
            ties = true;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = r;
        }
        i = j + 1;
    }
    (ranks, ties)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

#[derive(Debug, Clone, Copy)]
pub struct SpearmanResult {
    pub rho: f64,
    /// Two-sided p-value.
    pub p_value: f64,
}

/// Spearman rank correlation. Small tie-free samples (n <= 9) get an exact
/// permutation p-value; otherwise the Student-t approximation is used.
pub fn spearman(x: &[f64], y: &[f64]) -> SpearmanResult {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    assert!(n >= 3, "spearman needs at least 3 points");
    let (rx, tx) = average_ranks(x);
    let (ry, ty) = average_ranks(y);
    let rho = pearson(&rx, &ry);
    if n <= 9 && !tx && !ty {
        let mut perm: Vec<f64> = ry.clone();
        perm.sort_by(f64::total_cmp);
        let mut extreme = 0u64;
        let mut total = 0u64;
        permute(&mut perm, 0, &mut |p| {
            total += 1;
            if pearson(&rx, p).abs() >= rho.abs() - 1e-12 {
                extreme += 1;
            }
        });
        return SpearmanResult { rho, p_value: extreme as f64 / total as f64 };
    }
    if rho.abs() >= 1.0 {
        return SpearmanResult { rho, p_value: 0.0 };
    }
    let dof = (n - 2) as f64;
    let t = rho * (dof / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof).expect("positive dof");
    SpearmanResult { rho, p_value: 2.0 * (1.0 - dist.cdf(t.abs())) }
}

fn permute(v: &mut Vec<f64>, k: usize, f: &mut impl FnMut(&[f64])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}
