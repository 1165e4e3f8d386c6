//! Randomization mechanisms that turn an original prompt into a protected one.
//!
//! Every mechanism works token by token: take the token's embedding, add
//! noise, then pick the replacement token. Each position draws from its own
//! stream, so the output for a position does not depend on the others.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distributions::DistributionSpec;
use crate::embedding::{
    distance, nearest_token, norm, squared_distance, EmbeddingTable, EmbeddingVector, Prompt, TokenId,
};
use crate::error::{Error, Result};
use crate::rng::StreamKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    #[serde(alias = "d_chi")]
    Dchi,
    #[serde(alias = "adjacency_list")]
    Adjacency,
    #[serde(alias = "gaussian_embedding")]
    Gaussian,
    Identity,
}

impl Mechanism {
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Dchi => "dchi",
            Mechanism::Adjacency => "adjacency",
            Mechanism::Gaussian => "gaussian",
            Mechanism::Identity => "identity",
        }
    }
}

fn default_eta() -> f64 {
    1.0
}

fn default_pi() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtectionConfig {
    pub mechanism: Mechanism,
    /// dχ privacy parameter η; the noise magnitude has scale 1/η.
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// dχ noise dimension π; must equal the embedding dimension.
    #[serde(rename = "pi", default = "default_pi")]
    pub pi_dim: usize,
    /// Per-coordinate noise std σ_ε of the Gaussian mechanism.
    #[serde(default)]
    pub sigma_eps: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ProtectionConfig {
    pub fn identity() -> Self {
        ProtectionConfig { mechanism: Mechanism::Identity, eta: 1.0, pi_dim: 1, sigma_eps: 0.0, seed: 0 }
    }

    pub fn dchi(eta: f64, pi_dim: usize) -> Self {
        ProtectionConfig { mechanism: Mechanism::Dchi, eta, pi_dim, ..Self::identity() }
    }

    pub fn adjacency(eta: f64, pi_dim: usize) -> Self {
        ProtectionConfig { mechanism: Mechanism::Adjacency, eta, pi_dim, ..Self::identity() }
    }

    pub fn gaussian(sigma_eps: f64) -> Self {
        ProtectionConfig { mechanism: Mechanism::Gaussian, sigma_eps, ..Self::identity() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// The parameter that varies along a sweep for this mechanism.
    pub fn main_param(&self) -> f64 {
        match self.mechanism {
            Mechanism::Dchi | Mechanism::Adjacency => self.eta,
            Mechanism::Gaussian => self.sigma_eps,
            Mechanism::Identity => 0.0,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self.mechanism {
            Mechanism::Dchi | Mechanism::Adjacency => {
                if !(self.eta > 0.0 && self.eta.is_finite()) {
                    return Err(Error::InvalidConfig(format!("eta must be positive, got {}", self.eta)));
                }
                if self.pi_dim == 0 {
                    return Err(Error::InvalidConfig("pi must be at least 1".into()));
                }
                if self.pi_dim != dim {
                    return Err(Error::DimensionMismatch { expected: dim, found: self.pi_dim });
                }
            }
            Mechanism::Gaussian => {
                if !(self.sigma_eps >= 0.0 && self.sigma_eps.is_finite()) {
                    return Err(Error::InvalidConfig(format!("sigma_eps must be >= 0, got {}", self.sigma_eps)));
                }
            }
            Mechanism::Identity => {}
        }
        Ok(())
    }
}

/// Uniform draw from the unit ball: normalized Gaussian direction, radius U^(1/π).
pub fn sample_unit_ball(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 0.0 {
            let radius = rng.random::<f64>().powf(1.0 / dim as f64);
            return v.into_iter().map(|x| x / n * radius).collect();
        }
    }
}

/// The two factors of a dχ draw: magnitude `l ~ Gamma(π, 1/η)` and a point
/// `v` uniform on the unit ball.
pub fn sample_dchi_parts(pi_dim: usize, eta: f64, rng: &mut impl Rng) -> (f64, Vec<f64>) {
    let gamma = Gamma::new(pi_dim as f64, 1.0 / eta).expect("shape and scale are positive");
    let l = gamma.sample(rng);
    (l, sample_unit_ball(pi_dim, rng))
}

/// dχ noise `δ = l·v`.
pub fn sample_dchi_noise(pi_dim: usize, eta: f64, rng: &mut impl Rng) -> EmbeddingVector {
    let (l, v) = sample_dchi_parts(pi_dim, eta, rng);
    EmbeddingVector(v.into_iter().map(|x| l * x).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbed {
    pub embedding: EmbeddingVector,
    pub noise: EmbeddingVector,
}

/// `w̃ = w + δ` with δ drawn according to the mechanism.
pub fn perturb_embedding(w: &EmbeddingVector, cfg: &ProtectionConfig, rng: &mut impl Rng) -> Result<Perturbed> {
    cfg.validate(w.dim())?;
    let noise = match cfg.mechanism {
        Mechanism::Identity => EmbeddingVector::zeros(w.dim()),
        Mechanism::Gaussian if cfg.sigma_eps == 0.0 => EmbeddingVector::zeros(w.dim()),
        Mechanism::Gaussian => {
            let n = Normal::new(0.0, cfg.sigma_eps).expect("sigma validated");
            EmbeddingVector((0..w.dim()).map(|_| n.sample(rng)).collect())
        }
        Mechanism::Dchi | Mechanism::Adjacency => sample_dchi_noise(cfg.pi_dim, cfg.eta, rng),
    };
    let embedding = EmbeddingVector(w.coords().iter().zip(noise.coords()).map(|(a, b)| a + b).collect());
    Ok(Perturbed { embedding, noise })
}

/// Tokens strictly closer to `token_id`'s embedding than the perturbed point is.
pub fn random_adjacency_list(token_id: TokenId, perturbed: &[f64], table: &EmbeddingTable) -> Vec<TokenId> {
    let center = table.row(token_id);
    let radius_sq = squared_distance(center, perturbed);
    (0..table.len())
        .filter(|&k| k != token_id && squared_distance(table.row(k), center) < radius_sq)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtectedPrompt {
    pub mechanism: Mechanism,
    /// Replacement tokens d̃.
    pub token_ids: Vec<TokenId>,
    /// Perturbed embeddings w̃^(m).
    pub perturbed_embeddings: Vec<EmbeddingVector>,
    /// Noise draws δ^(m).
    pub noise_draws: Vec<EmbeddingVector>,
    /// Positions left unchanged because their adjacency list was empty.
    pub unprotected_positions: Vec<usize>,
}

impl ProtectedPrompt {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn prompt(&self, vocab_len: usize) -> Prompt {
        Prompt::new(self.token_ids.clone(), vocab_len).expect("protection preserves validity")
    }

    /// What the server receives. Noise-embedding mechanisms transmit w̃;
    /// the adjacency-list mechanism transmits only the replacement tokens.
    pub fn observed(&self, table: &EmbeddingTable) -> ObservedPrompt {
        let embeddings = match self.mechanism {
            Mechanism::Adjacency => self.token_ids.iter().map(|&id| table.vector(id)).collect(),
            _ => self.perturbed_embeddings.clone(),
        };
        ObservedPrompt { token_ids: self.token_ids.clone(), embeddings }
    }

    pub fn mean_perturbed(&self) -> EmbeddingVector {
        let dim = self.perturbed_embeddings[0].dim();
        crate::embedding::mean_pool(self.perturbed_embeddings.iter().map(|v| v.coords()), dim)
    }
}

/// The attacker's view of a protected prompt. It deliberately carries no
/// trace of the original tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedPrompt {
    pub token_ids: Vec<TokenId>,
    pub embeddings: Vec<EmbeddingVector>,
}

impl ObservedPrompt {
    /// An unprotected prompt as the server would see it.
    pub fn plain(prompt: &Prompt, table: &EmbeddingTable) -> Self {
        ObservedPrompt {
            token_ids: prompt.ids().to_vec(),
            embeddings: prompt.ids().iter().map(|&id| table.vector(id)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Protect a prompt starting from its canonical token embeddings.
pub fn protect_prompt(
    prompt: &Prompt,
    cfg: &ProtectionConfig,
    table: &EmbeddingTable,
    key: StreamKey,
) -> Result<ProtectedPrompt> {
    let w: Vec<EmbeddingVector> = prompt.ids().iter().map(|&id| table.vector(id)).collect();
    protect_embeddings(prompt, &w, cfg, table, key)
}

/// Protect a prompt whose undistorted per-token embeddings are `w` (these may
/// differ from the table rows when the client's embedding is itself random).
pub fn protect_embeddings(
    prompt: &Prompt,
    w: &[EmbeddingVector],
    cfg: &ProtectionConfig,
    table: &EmbeddingTable,
    key: StreamKey,
) -> Result<ProtectedPrompt> {
    if w.len() != prompt.len() {
        return Err(Error::LengthMismatch { left: prompt.len(), right: w.len() });
    }
    cfg.validate(table.dim())?;
    let mut out = ProtectedPrompt {
        mechanism: cfg.mechanism,
        token_ids: Vec::with_capacity(prompt.len()),
        perturbed_embeddings: Vec::with_capacity(prompt.len()),
        noise_draws: Vec::with_capacity(prompt.len()),
        unprotected_positions: Vec::new(),
    };
    for (m, (&orig, wm)) in prompt.ids().iter().zip(w).enumerate() {
        if wm.dim() != table.dim() {
            return Err(Error::DimensionMismatch { expected: table.dim(), found: wm.dim() });
        }
        let mut rng = key.position(m);
        let p = perturb_embedding(wm, cfg, &mut rng)?;
        let replacement = match cfg.mechanism {
            Mechanism::Identity => orig,
            Mechanism::Dchi | Mechanism::Gaussian => nearest_token(p.embedding.coords(), table),
            Mechanism::Adjacency => {
                // the list is centred on the token's canonical embedding
                let probe: Vec<f64> = table.row(orig).iter().zip(p.noise.coords()).map(|(a, b)| a + b).collect();
                let list = random_adjacency_list(orig, &probe, table);
                if list.is_empty() {
                    out.unprotected_positions.push(m);
                    orig
                } else {
                    list[rng.random_range(0..list.len())]
                }
            }
        };
        out.token_ids.push(replacement);
        out.perturbed_embeddings.push(p.embedding);
        out.noise_draws.push(p.noise);
    }
    Ok(out)
}

/// Analytic protected distribution of the Gaussian mechanism:
/// `N(μ₀, Σ₀ + σ_ε²·Id)`.
pub fn gaussian_protected_distribution(mu0: &[f64], sigma0_var: &[f64], sigma_eps: f64) -> Result<DistributionSpec> {
    if mu0.len() != sigma0_var.len() {
        return Err(Error::DimensionMismatch { expected: mu0.len(), found: sigma0_var.len() });
    }
    if sigma0_var.iter().any(|v| *v < 0.0) || sigma_eps < 0.0 {
        return Err(Error::InvalidConfig("variances must be non-negative".into()));
    }
    let spec = DistributionSpec::DiagonalGaussian {
        mean: mu0.to_vec(),
        var: sigma0_var.iter().map(|v| v + sigma_eps * sigma_eps).collect(),
    };
    spec.validate()?;
    Ok(spec)
}

/// Fraction of positions whose token changed.
pub fn replacement_rate(original: &Prompt, protected: &ProtectedPrompt) -> f64 {
    let changed = original.ids().iter().zip(&protected.token_ids).filter(|(a, b)| a != b).count();
    changed as f64 / original.len() as f64
}

/// Euclidean displacement of each position.
pub fn displacements(w: &[EmbeddingVector], protected: &ProtectedPrompt) -> Vec<f64> {
    w.iter().zip(&protected.perturbed_embeddings).map(|(a, b)| distance(a.coords(), b.coords())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::tv_discrete;
    use crate::embedding::{TableRole, Vocabulary};
    use crate::stats::{chi_square_gof, ks_one_sample, ks_two_sample, spearman, std_normal_cdf, Estimate};

    fn table(rows: Vec<Vec<f64>>) -> EmbeddingTable {
        let vocab = Vocabulary::new((0..rows.len()).map(|i| format!("w{i}")).collect()).unwrap();
        EmbeddingTable::new(vocab, rows, TableRole::Canonical).unwrap()
    }

    fn grid_2d() -> EmbeddingTable {
        let mut rows = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                rows.push(vec![i as f64, j as f64]);
            }
        }
        table(rows)
    }

    #[test]
    fn dchi_magnitude_shrinks_with_eta() {
        let mut rng = StreamKey::new(1).rng();
        let mean_norm = |eta: f64, rng: &mut crate::rng::StreamRng| {
            (0..2000).map(|_| sample_dchi_noise(3, eta, rng).norm()).sum::<f64>() / 2000.0
        };
        let a = mean_norm(1.0, &mut rng);
        let b = mean_norm(1e6, &mut rng);
        assert!(b < 1e-4 && b < a);
    }

    #[test]
    fn dchi_gamma_mean_and_ball_membership() {
        let mut rng = StreamKey::new(2).rng();
        let n = 100_000;
        let mut ls = Vec::with_capacity(n);
        for _ in 0..n {
            let (l, v) = sample_dchi_parts(3, 2.0, &mut rng);
            assert!(norm(&v) <= 1.0);
            ls.push(l);
        }
        let e = Estimate::from_samples(&ls);
        assert!(e.within(1.5, 3.0), "{e:?}");
    }

    #[test]
    fn identity_and_zero_sigma_leave_embedding_alone() {
        let w = EmbeddingVector(vec![0.3, -1.2]);
        let mut rng = StreamKey::new(3).rng();
        assert_eq!(perturb_embedding(&w, &ProtectionConfig::identity(), &mut rng).unwrap().embedding, w);
        assert_eq!(perturb_embedding(&w, &ProtectionConfig::gaussian(0.0), &mut rng).unwrap().embedding, w);
    }

    #[test]
    fn gaussian_noise_has_unit_variance() {
        let w = EmbeddingVector(vec![0.0, 5.0]);
        let mut rng = StreamKey::new(4).rng();
        let n = 100_000;
        let mut diffs = vec![Vec::with_capacity(n), Vec::with_capacity(n)];
        for _ in 0..n {
            let p = perturb_embedding(&w, &ProtectionConfig::gaussian(1.0), &mut rng).unwrap();
            for k in 0..2 {
                diffs[k].push(p.embedding.0[k] - w.0[k]);
            }
        }
        for d in &diffs {
            let mean = d.iter().sum::<f64>() / n as f64;
            let sq: Vec<f64> = d.iter().map(|x| (x - mean).powi(2)).collect();
            // SE of the sample variance for a normal is ≈ sqrt(2/n)
            let var = Estimate::from_samples(&sq);
            assert!((var.value - 1.0).abs() <= 3.0 * (2.0 / n as f64).sqrt(), "{var:?}");
        }
    }

    #[test]
    fn adjacency_list_examples() {
        let t = table(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![5.0, 0.0]]);
        assert!(random_adjacency_list(0, &[0.0, 0.0], &t).is_empty());
        assert_eq!(random_adjacency_list(0, &[0.0, 2.0], &t), vec![1]);
        assert_eq!(random_adjacency_list(0, &[0.0, 100.0], &t), vec![1, 2]);
    }

    #[test]
    fn protect_identity_is_noop() {
        let t = grid_2d();
        let d = Prompt::new(vec![3, 7, 7, 24], t.len()).unwrap();
        let p = protect_prompt(&d, &ProtectionConfig::identity(), &t, StreamKey::new(5)).unwrap();
        assert_eq!(p.token_ids, d.ids());
        assert!(p.noise_draws.iter().all(|n| n.norm() == 0.0));
    }

    #[test]
    fn protect_preserves_length_and_is_reproducible() {
        let t = grid_2d();
        let d = Prompt::new(vec![0, 12, 24, 6, 6], t.len()).unwrap();
        for cfg in [
            ProtectionConfig::identity(),
            ProtectionConfig::dchi(1.0, 2),
            ProtectionConfig::adjacency(0.7, 2),
            ProtectionConfig::gaussian(0.8),
        ] {
            let a = protect_prompt(&d, &cfg, &t, StreamKey::new(6)).unwrap();
            let b = protect_prompt(&d, &cfg, &t, StreamKey::new(6)).unwrap();
            assert_eq!(a.len(), d.len());
            assert_eq!(a, b);
            assert!(a.token_ids.iter().all(|&id| id < t.len()));
        }
    }

    #[test]
    fn dchi_requires_matching_dimension() {
        let t = grid_2d();
        let d = Prompt::new(vec![0], t.len()).unwrap();
        assert!(matches!(
            protect_prompt(&d, &ProtectionConfig::dchi(1.0, 3), &t, StreamKey::new(0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dchi_with_huge_eta_keeps_tokens() {
        let t = grid_2d();
        let d = Prompt::new(vec![12], t.len()).unwrap();
        let same = (0..1000)
            .filter(|&i| {
                let p = protect_prompt(&d, &ProtectionConfig::dchi(1e6, 2), &t, StreamKey::new(7).child(i)).unwrap();
                p.token_ids == d.ids()
            })
            .count();
        assert!(same >= 990);
    }

    #[test]
    fn adjacency_with_large_displacement_is_uniform_over_others() {
        let t = grid_2d();
        let orig = 12;
        let d = Prompt::new(vec![orig], t.len()).unwrap();
        let mut counts = vec![0u64; t.len()];
        for i in 0..20_000 {
            // mean displacement π/η = 2000, far above the diameter
            let p = protect_prompt(&d, &ProtectionConfig::adjacency(1e-3, 2), &t, StreamKey::new(8).child(i)).unwrap();
            counts[p.token_ids[0]] += 1;
        }
        assert_eq!(counts[orig], 0);
        let mut probs = vec![1.0 / 24.0; t.len()];
        probs[orig] = 0.0;
        assert!(chi_square_gof(&counts, &probs) > 0.01);
    }

    #[test]
    fn replacement_rate_decreases_with_eta() {
        let t = grid_2d();
        let d = Prompt::new((0..25).collect(), t.len()).unwrap();
        let etas = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0];
        let rates: Vec<f64> = etas
            .iter()
            .map(|&eta| {
                (0..200)
                    .map(|i| {
                        let p = protect_prompt(&d, &ProtectionConfig::dchi(eta, 2), &t, StreamKey::new(9).child(i)).unwrap();
                        replacement_rate(&d, &p)
                    })
                    .sum::<f64>()
                    / 200.0
            })
            .collect();
        let r = spearman(&etas, &rates);
        assert!(r.rho <= 0.0 && r.p_value < 0.01, "{rates:?} {r:?}");
    }

    #[test]
    fn gaussian_protected_distribution_examples() {
        let p = gaussian_protected_distribution(&[0.5], &[2.0], 0.0).unwrap();
        assert_eq!(p, DistributionSpec::DiagonalGaussian { mean: vec![0.5], var: vec![2.0] });
        let p = gaussian_protected_distribution(&[0.0, 0.0], &[1.0, 1.0], 1.0).unwrap();
        assert_eq!(p, DistributionSpec::DiagonalGaussian { mean: vec![0.0, 0.0], var: vec![2.0, 2.0] });
    }

    #[test]
    fn gaussian_mechanism_matches_analytic_distribution() {
        // w ~ N(μ₀, Σ₀), w̃ = w + ε; compare against both the analytic CDF and
        // a direct draw from the analytic distribution.
        let mu0 = [0.5, -1.0];
        let var0 = [1.0, 0.25];
        let sigma = 0.7;
        let analytic = gaussian_protected_distribution(&mu0, &var0, sigma).unwrap();
        let mut rng = StreamKey::new(10).rng();
        let n = 20_000;
        let mut got = vec![Vec::with_capacity(n), Vec::with_capacity(n)];
        for _ in 0..n {
            let w = EmbeddingVector(
                (0..2).map(|k| mu0[k] + var0[k].sqrt() * { let z: f64 = StandardNormal.sample(&mut rng); z }).collect(),
            );
            let p = perturb_embedding(&w, &ProtectionConfig::gaussian(sigma), &mut rng).unwrap();
            for k in 0..2 {
                got[k].push(p.embedding.0[k]);
            }
        }
        let reference =
            crate::distributions::sample_distribution(&analytic, n, None, &mut StreamKey::new(11).rng()).unwrap();
        let DistributionSpec::DiagonalGaussian { mean, var } = &analytic else { unreachable!() };
        for k in 0..2 {
            let r: Vec<f64> = reference.iter().map(|v| v.0[k]).collect();
            assert!(ks_two_sample(&got[k], &r).p_value > 0.01);
            let (m, s) = (mean[k], var[k].sqrt());
            assert!(ks_one_sample(&got[k], |x| std_normal_cdf((x - m) / s)).p_value > 0.01);
        }
        assert!(tv_discrete(
            &DistributionSpec::DiscreteOverVocab { probs: vec![1.0] },
            &DistributionSpec::DiscreteOverVocab { probs: vec![1.0] }
        )
        .is_ok());
    }

    #[test]
    fn config_json_shape() {
        let c: ProtectionConfig =
            serde_json::from_str(r#"{"mechanism": "dchi", "eta": 2.0, "pi": 3, "sigma_eps": 0.0, "seed": 42}"#).unwrap();
        assert_eq!(c, ProtectionConfig::dchi(2.0, 3).with_seed(42));
        let g: ProtectionConfig = serde_json::from_str(r#"{"mechanism": "gaussian", "sigma_eps": 0.5}"#).unwrap();
        assert_eq!(g.sigma_eps, 0.5);
        assert!(ProtectionConfig::dchi(0.0, 1).validate(1).is_err());
        assert!(ProtectionConfig::gaussian(-1.0).validate(1).is_err());
    }
}
