//! Evaluation of one mechanism setting: Monte-Carlo leakage and utility,
//! the TV distances, bound constants and bound slacks.

use std::collections::HashMap;

use rand_distr::{Distribution, StandardNormal};

use crate::attack::{Attacker, BigramModel, StandardAttacker};
use crate::distributions::{tv_cells, tv_gaussian_diag, voronoi_masses, CellMasses, DistributionSpec, QmcOptions};
use crate::embedding::{
    embed_prompt, mean_pool, nearest_token, tokenize, vocab_diameter, EmbeddingTable, EmbeddingVector, EncoderG,
    Prompt, TokenId,
};
use crate::error::{Error, Result};
use crate::metrics::{
    distortion_extent, estimate_alpha, estimate_c_regions, lemma1_slack, nfl_from_parts, privacy_leakage,
    recovery_extent, utility_loss_from_samples, BoundConstants, TradeoffRecord, UtilityFunctionSpec,
};
use crate::protection::{protect_embeddings, Mechanism, ObservedPrompt, ProtectionConfig};
use crate::rng::StreamKey;
use crate::stats::Estimate;

use super::config::{BaselineSpec, ExperimentConfig};
use super::protocol::MockLLM;

/// Child-key index for the client distribution's cell masses, shared by all
/// grid points.
const P_CELLS_STREAM: u64 = u64::MAX;

/// Everything a sweep needs, resolved from an [`ExperimentConfig`].
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub table: EmbeddingTable,
    pub enc: EncoderG,
    pub omega: f64,
    pub prompt: Prompt,
    /// Per-coordinate jitter variance of each position's embedding.
    pub jitter_var: Vec<f64>,
    pub util: UtilityFunctionSpec,
    pub bigram: Option<BigramModel>,
    pub llm: MockLLM,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let table = config.load_table()?;
        let dim = table.dim();
        let enc = config.encoder.build(dim)?;
        let omega = match config.omega {
            Some(o) => o,
            None => vocab_diameter(&table)?,
        };
        let prompt = tokenize(&config.client.prompt, table.vocab())?;
        let jitter_var = match config.client.embedding_var.len() {
            0 => vec![0.0; dim],
            n if n == dim => config.client.embedding_var.clone(),
            n => return Err(Error::DimensionMismatch { expected: dim, found: n }),
        };
        let targets = if config.utility_targets.is_empty() {
            vec![prompt.clone()]
        } else {
            config.utility_targets.iter().map(|t| tokenize(t, table.vocab())).collect::<Result<_>>()?
        };
        let util = UtilityFunctionSpec::from_prompts(&targets, &table, omega)?;
        let bigram = if config.corpus.is_empty() {
            None
        } else {
            let seqs = config.corpus.iter().map(|s| tokenize(s, table.vocab())).collect::<Result<Vec<_>>>()?;
            Some(BigramModel::train(seqs.iter().map(|p| p.ids()), table.len())?)
        };
        if let BaselineSpec::Discrete { probs } = &config.baseline {
            DistributionSpec::DiscreteOverVocab { probs: probs.clone() }.validate()?;
            if probs.len() != table.len() {
                return Err(Error::MismatchedSupport(format!(
                    "baseline has {} probabilities for {} tokens",
                    probs.len(),
                    table.len()
                )));
            }
        }
        for g in &config.grid {
            g.validate(dim)?;
        }
        let llm = MockLLM::from_completions(&config.mock_llm, &table)?;
        Ok(Experiment { config, table, enc, omega, prompt, jitter_var, util, bigram, llm })
    }

    pub fn master_key(&self) -> StreamKey {
        StreamKey::new(self.config.seed)
    }

    pub fn attacker(&self) -> Result<StandardAttacker<'_>> {
        let a = StandardAttacker::new(self.config.attacker, &self.table, &self.enc)?;
        Ok(match &self.bigram {
            Some(m) => a.with_bigram(m),
            None => a,
        })
    }

    /// P as a distribution of mean-pooled prompt embeddings.
    pub fn client_distribution(&self) -> DistributionSpec {
        let len = self.prompt.len() as f64;
        DistributionSpec::DiagonalGaussian {
            mean: embed_prompt(&self.prompt, &self.table).0,
            var: self.jitter_var.iter().map(|v| v / len).collect(),
        }
    }

    /// Analytic P̃ where one exists (identity and Gaussian mechanisms).
    pub fn protected_distribution(&self, cfg: &ProtectionConfig) -> Option<DistributionSpec> {
        let DistributionSpec::DiagonalGaussian { mean, var } = self.client_distribution() else { unreachable!() };
        let len = self.prompt.len() as f64;
        match cfg.mechanism {
            Mechanism::Identity => Some(DistributionSpec::DiagonalGaussian { mean, var }),
            Mechanism::Gaussian => Some(DistributionSpec::DiagonalGaussian {
                mean,
                var: var.iter().map(|v| v + cfg.sigma_eps * cfg.sigma_eps / len).collect(),
            }),
            Mechanism::Dchi | Mechanism::Adjacency => None,
        }
    }

    fn client_cells(&self) -> Result<CellMasses> {
        voronoi_masses(&self.client_distribution(), &self.table, self.master_key().child(P_CELLS_STREAM))
    }

    /// One draw of per-position client embeddings.
    fn draw_client(&self, key: StreamKey) -> Vec<EmbeddingVector> {
        self.prompt
            .ids()
            .iter()
            .enumerate()
            .map(|(m, &id)| {
                let mut rng = key.position(m);
                EmbeddingVector(
                    self.table
                        .row(id)
                        .iter()
                        .zip(&self.jitter_var)
                        .map(|(e, v)| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            e + v.sqrt() * z
                        })
                        .collect(),
                )
            })
            .collect()
    }

    /// What the server would see for one draw from P̆.
    fn draw_baseline(&self, key: StreamKey) -> ObservedPrompt {
        let len = self.prompt.len();
        match &self.config.baseline {
            // exactly what the identity mechanism transmits for a fresh draw
            BaselineSpec::Client => ObservedPrompt { token_ids: self.prompt.ids().to_vec(), embeddings: self.draw_client(key) },
            spec => {
                let uniform;
                let probs: &[f64] = match spec {
                    BaselineSpec::Discrete { probs } => probs,
                    _ => {
                        uniform = vec![1.0 / self.table.len() as f64; self.table.len()];
                        &uniform
                    }
                };
                let ids: Vec<TokenId> = (0..len)
                    .map(|m| crate::distributions::sample_token(probs, &mut key.position(m)))
                    .collect();
                ObservedPrompt { embeddings: ids.iter().map(|&i| self.table.vector(i)).collect(), token_ids: ids }
            }
        }
    }

    fn pooled(&self, v: &[EmbeddingVector]) -> EmbeddingVector {
        mean_pool(v.iter().map(|e| e.coords()), self.table.dim())
    }

    /// Evaluate grid point `index`. Errors after the Monte-Carlo stage are
    /// recorded in the returned record rather than propagated.
    pub fn evaluate_point(&self, index: usize) -> TradeoffRecord {
        let cfg = self.config.grid[index];
        let mut record = TradeoffRecord::empty(index, cfg.mechanism, cfg.main_param());
        if let Err(e) = self.fill_record(&cfg, &mut record) {
            record.set_error(&e);
        }
        record
    }

    fn fill_record(&self, cfg: &ProtectionConfig, record: &mut TradeoffRecord) -> Result<()> {
        let key = self.master_key().child(record.index as u64).child(cfg.seed);
        let attacker = self.attacker()?;
        let n = self.config.n_samples;
        let k = self.table.len();

        let mut memo: HashMap<Vec<TokenId>, (f64, usize)> = HashMap::new();
        let mut recover = |obs: &ObservedPrompt| -> Result<(f64, usize)> {
            if attacker.token_determined() {
                if let Some(v) = memo.get(&obs.token_ids) {
                    return Ok(*v);
                }
            }
            let rec = recovery_extent(&attacker.attack(obs)?, &self.prompt, &self.table, self.omega)?;
            let v = (rec.r, rec.clamped);
            if attacker.token_determined() {
                memo.insert(obs.token_ids.clone(), v);
            }
            Ok(v)
        };

        let mut r_pt = Vec::with_capacity(n);
        let mut r_b = Vec::with_capacity(n);
        let mut u_p = Vec::with_capacity(n);
        let mut u_pt = Vec::with_capacity(n);
        let mut deltas = Vec::with_capacity(n);
        let mut labels_pt = Vec::with_capacity(n);
        let mut labels_b = Vec::with_capacity(n);
        let mut candidates: Vec<EmbeddingVector> = Vec::with_capacity(2 * n);
        let mut clamped = 0;
        for j in 0..n {
            let sk = key.child(j as u64);
            let w = self.draw_client(sk.child(0));
            let protected = protect_embeddings(&self.prompt, &w, cfg, &self.table, sk.child(1))?;
            let observed = protected.observed(&self.table);
            let (r, c) = recover(&observed)?;
            r_pt.push(r);
            clamped += c;
            let d_tilde = Prompt::new(protected.token_ids.clone(), k)?;
            deltas.push(distortion_extent(&self.prompt, &d_tilde, &self.table, &self.enc)?);
            let w_bar = self.pooled(&w);
            let w_t = self.pooled(&observed.embeddings);
            u_p.push(self.util.utility(w_bar.coords()));
            u_pt.push(self.util.utility(w_t.coords()));
            labels_pt.push(nearest_token(w_t.coords(), &self.table));
            candidates.push(w_bar);
            candidates.push(w_t);

            let base = self.draw_baseline(sk.child(2));
            let (rb, cb) = recover(&base)?;
            r_b.push(rb);
            clamped += cb;
            labels_b.push(nearest_token(self.pooled(&base.embeddings).coords(), &self.table));
        }
        record.clamped = clamped;
        record.delta = Some(deltas.iter().sum::<f64>() / n as f64);
        let eps_p = privacy_leakage(&r_pt, &r_b, self.config.orientation)?;
        let eps_u = utility_loss_from_samples(&u_p, &u_pt, true)?;
        record.eps_p = Some(eps_p);
        record.eps_u = Some(eps_u);

        // distances between P, P̃ and P̆
        let p_spec = self.client_distribution();
        let pt_spec = self.protected_distribution(cfg);
        let p_cells = self.client_cells()?;
        let pt_cells = match (&pt_spec, cfg.mechanism) {
            (_, Mechanism::Identity) => p_cells.clone(),
            (Some(spec), _) => voronoi_masses(spec, &self.table, key.child(P_CELLS_STREAM))?,
            (None, _) => CellMasses::from_labels(labels_pt.clone(), k),
        };
        let pb_cells = match &self.config.baseline {
            BaselineSpec::Client => p_cells.clone(),
            BaselineSpec::Uniform if self.prompt.len() == 1 => CellMasses::exact(vec![1.0 / k as f64; k]),
            BaselineSpec::Discrete { probs } if self.prompt.len() == 1 => CellMasses::exact(probs.clone()),
            _ => CellMasses::from_labels(labels_b.clone(), k),
        };
        let tv_p_pt = match (&pt_spec, cfg.mechanism) {
            (_, Mechanism::Identity) => Estimate::exact(0.0),
            (Some(spec), _) => {
                tv_gaussian_diag(&p_spec, spec, QmcOptions { seed: key.child(1).raw(), ..QmcOptions::default() })?
            }
            (None, _) => tv_cells(&p_cells, &pt_cells)?,
        };
        let tv_pt_pb = tv_cells(&pt_cells, &pb_cells)?;
        let tv_p_pb = tv_cells(&p_cells, &pb_cells)?;
        record.tv_p_pt = Some(tv_p_pt);
        record.tv_pt_pb = Some(tv_pt_pb);
        record.tv_p_pb = Some(tv_p_pb);

        // constants
        let Some(regret) = self.config.attacker.declared_regret() else {
            return Ok(());
        };
        let v_region: Vec<f64> = labels_pt
            .iter()
            .zip(&r_pt)
            .filter(|(l, _)| pt_cells.probs[**l] > pb_cells.probs[**l])
            .map(|x| *x.1)
            .collect();
        let u_region: Vec<f64> = labels_b
            .iter()
            .zip(&r_b)
            .filter(|(l, _)| pt_cells.probs[**l] < pb_cells.probs[**l])
            .map(|x| *x.1)
            .collect();
        let c = estimate_c_regions(&v_region, &u_region)?;
        let u_star = self
            .util
            .optimal_utility(candidates.iter().map(|v| v.coords()).chain(self.table.rows()));
        let atoms: Vec<(f64, f64)> = u_pt.iter().map(|&u| (u, 1.0 / n as f64)).collect();
        let alpha = estimate_alpha(u_star, &atoms, tv_p_pt.value)?;
        let mut constants = BoundConstants::new(
            self.omega,
            c,
            alpha,
            (self.enc.c_a(), self.enc.c_b()),
            regret,
            self.config.attacker.iterations,
        )?;
        if let Some(c1) = self.config.fault_injection.c1_override {
            constants.coef_c1 = c1;
        }
        record.constants = Some(constants);
        record.min_lemma1_slack = Some(
            r_pt.iter().zip(&deltas).map(|(r, d)| lemma1_slack(*r, *d, &constants)).fold(f64::INFINITY, f64::min),
        );
        let nfl = nfl_from_parts(constants.coef_c1, constants.coef_c2, eps_p, eps_u, tv_p_pt, tv_pt_pb, tv_p_pb)?;
        record.nfl_slack = Some(nfl.slack);
        record.nfl_se = Some(nfl.se);
        Ok(())
    }
}
