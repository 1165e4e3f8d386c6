//! Reconstruction attacks against protected prompts.
//!
//! An attacker sees an [`ObservedPrompt`] and the public tables, never the
//! original prompt. It produces an [`AttackTrace`]: one reconstruction per
//! iteration per position, together with the per-iteration regret.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::embedding::{distance, nearest_token, EmbeddingTable, EncoderG, TokenId};
use crate::error::{Error, Result};
pub use crate::protection::ObservedPrompt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    #[serde(alias = "nearest_neighbor_inversion")]
    NearestNeighbor,
    #[serde(alias = "contextual_bigram")]
    Contextual,
    #[serde(alias = "iterative_gradient")]
    Gradient,
    Calibrated,
}

fn one() -> f64 {
    1.0
}

fn one_iter() -> usize {
    1
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerSpec {
    pub kind: AttackKind,
    #[serde(default = "one_iter")]
    pub iterations: usize,
    /// Gradient step schedule `step0 · (i+1)^(-decay)`.
    #[serde(default = "one")]
    pub step0: f64,
    #[serde(default = "one")]
    pub decay: f64,
    /// Calibrated regret exponent.
    #[serde(default = "half")]
    pub p: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

impl AttackerSpec {
    pub fn nearest_neighbor() -> Self {
        AttackerSpec { kind: AttackKind::NearestNeighbor, iterations: 1, step0: 1.0, decay: 1.0, p: 0.5, scale: 1.0 }
    }

    pub fn contextual() -> Self {
        AttackerSpec { kind: AttackKind::Contextual, ..Self::nearest_neighbor() }
    }

    pub fn gradient(iterations: usize, step0: f64, decay: f64) -> Self {
        AttackerSpec { kind: AttackKind::Gradient, iterations, step0, decay, ..Self::nearest_neighbor() }
    }

    pub fn calibrated(iterations: usize, p: f64, scale: f64) -> Self {
        AttackerSpec { kind: AttackKind::Calibrated, iterations, p, scale, ..Self::nearest_neighbor() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::ZeroIterations);
        }
        match self.kind {
            AttackKind::Calibrated => {
                if !(self.p > 0.0 && self.p < 1.0) {
                    return Err(Error::InvalidExponent(self.p));
                }
                if !(self.scale > 0.0 && self.scale.is_finite()) {
                    return Err(Error::InvalidConfig(format!("calibrated scale must be positive, got {}", self.scale)));
                }
            }
            AttackKind::Gradient => {
                if !(self.step0 > 0.0 && self.step0.is_finite() && self.decay >= 0.0) {
                    return Err(Error::InvalidConfig("gradient step schedule must be positive".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Regret constants `(p, c0, c2)` guaranteed by construction, if any.
    pub fn declared_regret(&self) -> Option<RegretConstants> {
        (self.kind == AttackKind::Calibrated).then(|| RegretConstants {
            p: self.p,
            c0: self.scale * self.p / 2.0,
            c2: self.scale / self.p,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretConstants {
    pub p: f64,
    pub c0: f64,
    pub c2: f64,
}

/// Reconstructions of every position at every iteration, stored flat
/// (iteration-major).
#[derive(Debug, Clone, PartialEq)]
pub struct AttackTrace {
    iterations: usize,
    len: usize,
    dim: usize,
    recovered: Vec<TokenId>,
    /// Reconstructions in canonical embedding space (what R is measured on).
    canonical: Vec<f64>,
    /// The same reconstructions after the encoder g.
    encoded: Vec<f64>,
    regret: Vec<f64>,
    /// Distance of the raw (unsnapped) iterate to the target; equals the
    /// regret for attackers that do not snap.
    iterate_distances: Vec<f64>,
}

impl AttackTrace {
    fn with_capacity(iterations: usize, len: usize, dim: usize) -> Self {
        AttackTrace {
            iterations: 0,
            len,
            dim,
            recovered: Vec::with_capacity(iterations * len),
            canonical: Vec::with_capacity(iterations * len * dim),
            encoded: Vec::with_capacity(iterations * len * dim),
            regret: Vec::with_capacity(iterations),
            iterate_distances: Vec::with_capacity(iterations),
        }
    }

    /// Build a trace from a regret series alone (no reconstructions), e.g. a
    /// trace recorded elsewhere.
    pub fn from_regret(regret: Vec<f64>) -> Result<Self> {
        if regret.is_empty() {
            return Err(Error::ZeroIterations);
        }
        if regret.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::DegenerateTrace("regret entries must be finite and non-negative".into()));
        }
        Ok(AttackTrace {
            iterations: regret.len(),
            len: 0,
            dim: 0,
            recovered: Vec::new(),
            canonical: Vec::new(),
            encoded: Vec::new(),
            iterate_distances: regret.clone(),
            regret,
        })
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn prompt_len(&self) -> usize {
        self.len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Token ids d_i^(m) at iteration `i` (0-based).
    pub fn recovered(&self, i: usize) -> &[TokenId] {
        &self.recovered[i * self.len..(i + 1) * self.len]
    }

    pub fn final_recovered(&self) -> &[TokenId] {
        self.recovered(self.iterations - 1)
    }

    /// Canonical-space reconstruction of position `m` at iteration `i`.
    pub fn canonical(&self, i: usize, m: usize) -> &[f64] {
        let o = (i * self.len + m) * self.dim;
        &self.canonical[o..o + self.dim]
    }

    pub fn encoded(&self, i: usize, m: usize) -> &[f64] {
        let o = (i * self.len + m) * self.dim;
        &self.encoded[o..o + self.dim]
    }

    pub fn regret_series(&self) -> &[f64] {
        &self.regret
    }

    pub fn iterate_distances(&self) -> &[f64] {
        &self.iterate_distances
    }

    pub fn cumulative_regret(&self) -> Vec<f64> {
        self.regret
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect()
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iter", "mean_regret", "cumulative"])?;
        for (i, (r, c)) in self.regret.iter().zip(self.cumulative_regret()).enumerate() {
            out.write_record([(i + 1).to_string(), r.to_string(), c.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Anything that reconstructs prompts from what the server observes.
pub trait Attacker: Sync {
    fn attack(&self, observed: &ObservedPrompt) -> Result<AttackTrace>;

    /// True when the trace depends only on the observed token ids, so
    /// callers may cache traces per observed prompt.
    fn token_determined(&self) -> bool {
        false
    }
}

/// Map each observed embedding to its nearest vocabulary token.
pub fn invert_nearest_neighbor(observed: &ObservedPrompt, table: &EmbeddingTable) -> Vec<TokenId> {
    observed.embeddings.iter().map(|e| nearest_token(e.coords(), table)).collect()
}

/// Bigram counts over a token corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramModel {
    vocab_len: usize,
    unigram: Vec<u64>,
    /// `pairs[prev * V + next]`
    pairs: Vec<u64>,
}

impl BigramModel {
    pub fn train<'a>(corpus: impl IntoIterator<Item = &'a [TokenId]>, vocab_len: usize) -> Result<Self> {
        let mut unigram = vec![0u64; vocab_len];
        let mut pairs = vec![0u64; vocab_len * vocab_len];
        for seq in corpus {
            for (k, &t) in seq.iter().enumerate() {
                if t >= vocab_len {
                    return Err(Error::InvalidTokenId { id: t, len: vocab_len });
                }
                unigram[t] += 1;
                if k > 0 {
                    pairs[seq[k - 1] * vocab_len + t] += 1;
                }
            }
        }
        Ok(BigramModel { vocab_len, unigram, pairs })
    }

    pub fn is_empty(&self) -> bool {
        self.unigram.iter().all(|&c| c == 0)
    }

    pub fn count(&self, prev: TokenId, next: TokenId) -> u64 {
        self.pairs[prev * self.vocab_len + next]
    }
}

fn argmax_lowest(counts: &[u64]) -> TokenId {
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best
}

/// Predict the token at position `m` from its left neighbour in the protected
/// prompt. Position 0, and contexts never seen in the corpus, fall back to
/// unigram frequencies (uniform if tied). Ties go to the lowest id.
pub fn invert_contextual(protected: &[TokenId], model: &BigramModel, m: usize) -> Result<TokenId> {
    if model.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if m >= protected.len() {
        return Err(Error::InvalidConfig(format!("position {m} outside prompt of length {}", protected.len())));
    }
    if m > 0 {
        let prev = protected[m - 1];
        if prev >= model.vocab_len {
            return Err(Error::InvalidTokenId { id: prev, len: model.vocab_len });
        }
        let row = &model.pairs[prev * model.vocab_len..(prev + 1) * model.vocab_len];
        if row.iter().any(|&c| c > 0) {
            return Ok(argmax_lowest(row));
        }
    }
    Ok(argmax_lowest(&model.unigram))
}

/// Gradient descent on `½‖x − g(w̃)‖²` in encoded space from `x₀ = 0`, with
/// steps `step0·(i+1)^(-decay)`. Each iterate is decoded and snapped to its
/// nearest token.
pub fn run_iterative_attacker(
    observed: &ObservedPrompt,
    table: &EmbeddingTable,
    enc: &EncoderG,
    spec: &AttackerSpec,
) -> Result<AttackTrace> {
    spec.validate()?;
    let dim = table.dim();
    check_encoder(table, enc)?;
    let len = observed.len();
    let targets: Vec<Vec<f64>> = observed.embeddings.iter().map(|w| enc.encode(w.coords()).0).collect();
    let mut x = vec![vec![0.0; dim]; len];
    let mut trace = AttackTrace::with_capacity(spec.iterations, len, dim);
    let mut canon = vec![0.0; dim];
    for i in 1..=spec.iterations {
        let eta = spec.step0 * ((i + 1) as f64).powf(-spec.decay);
        let (mut regret, mut raw) = (0.0, 0.0);
        for m in 0..len {
            for (xk, tk) in x[m].iter_mut().zip(&targets[m]) {
                *xk -= eta * (*xk - tk);
            }
            raw += distance(&x[m], &targets[m]);
            enc.decode_into(&x[m], &mut canon);
            let id = nearest_token(&canon, table);
            let g = enc.encode(table.row(id));
            regret += distance(g.coords(), &targets[m]);
            trace.recovered.push(id);
            trace.canonical.extend_from_slice(table.row(id));
            trace.encoded.extend_from_slice(g.coords());
        }
        trace.regret.push(regret / len as f64);
        trace.iterate_distances.push(raw / len as f64);
        trace.iterations += 1;
    }
    Ok(trace)
}

fn check_encoder(table: &EmbeddingTable, enc: &EncoderG) -> Result<()> {
    if enc.dim() != table.dim() {
        return Err(Error::DimensionMismatch { expected: table.dim(), found: enc.dim() });
    }
    Ok(())
}

/// Synthetic attacker whose regret is exactly `scale·i^(p−1)` at iteration i.
///
/// The iterates sit at `g(e(d)) + scale·i^(p−1)·u` in encoded space, `u` the
/// first coordinate axis, so the per-iteration error is known in closed form
/// and the cumulative regret lies in `[c0·I^p, c2·I^p]` for every prefix.
/// `target` is the prompt the attacker is anchored to (the observed tokens).
pub fn run_calibrated_attacker(
    target: &[TokenId],
    table: &EmbeddingTable,
    enc: &EncoderG,
    spec: &AttackerSpec,
) -> Result<AttackTrace> {
    if spec.kind == AttackKind::Calibrated && !(spec.p > 0.0 && spec.p < 1.0) {
        return Err(Error::InvalidExponent(spec.p));
    }
    let spec = AttackerSpec { kind: AttackKind::Calibrated, ..*spec };
    spec.validate()?;
    check_encoder(table, enc)?;
    let dim = table.dim();
    let len = target.len();
    if len == 0 {
        return Err(Error::EmptyPrompt);
    }
    let anchors: Vec<Vec<f64>> = target
        .iter()
        .map(|&id| {
            if id >= table.len() {
                Err(Error::InvalidTokenId { id, len: table.len() })
            } else {
                Ok(enc.encode(table.row(id)).0)
            }
        })
        .collect::<Result<_>>()?;
    let mut trace = AttackTrace::with_capacity(spec.iterations, len, dim);
    let mut y = vec![0.0; dim];
    let mut canon = vec![0.0; dim];
    for i in 1..=spec.iterations {
        let r = spec.scale * (i as f64).powf(spec.p - 1.0);
        for anchor in &anchors {
            y.copy_from_slice(anchor);
            y[0] += r;
            enc.decode_into(&y, &mut canon);
            trace.recovered.push(nearest_token(&canon, table));
            trace.canonical.extend_from_slice(&canon);
            trace.encoded.extend_from_slice(&y);
        }
        trace.regret.push(r);
        trace.iterate_distances.push(r);
        trace.iterations += 1;
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretFit {
    pub p_hat: f64,
    pub c0_hat: f64,
    pub c2_hat: f64,
}

/// Fit `log S_i ≈ p·log i + b` over `i ∈ [I/4, I]`, S the cumulative regret;
/// `c0`/`c2` are the extremes of `S_i / i^p̂` over all prefixes.
pub fn estimate_regret_exponent(trace: &AttackTrace) -> Result<RegretFit> {
    let n = trace.iterations();
    if n < 16 {
        return Err(Error::InsufficientSamples { needed: 16, got: n });
    }
    let cum = trace.cumulative_regret();
    if cum[n - 1] <= 0.0 {
        return Err(Error::DegenerateTrace("all regrets are zero".into()));
    }
    let lo = (n / 4).max(1);
    let pts: Vec<(f64, f64)> =
        (lo..=n).filter(|&i| cum[i - 1] > 0.0).map(|i| ((i as f64).ln(), cum[i - 1].ln())).collect();
    if pts.len() < 2 {
        return Err(Error::DegenerateTrace("too few positive points in the fit window".into()));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let p_hat = sxy / sxx;
    let (mut c0, mut c2) = (f64::INFINITY, 0.0f64);
    for (i, s) in cum.iter().enumerate() {
        let ratio = s / ((i + 1) as f64).powf(p_hat);
        c0 = c0.min(ratio);
        c2 = c2.max(ratio);
    }
    Ok(RegretFit { p_hat, c0_hat: c0, c2_hat: c2 })
}

/// The built-in attackers behind the [`Attacker`] interface.
pub struct StandardAttacker<'a> {
    pub spec: AttackerSpec,
    pub table: &'a EmbeddingTable,
    pub enc: &'a EncoderG,
    pub bigram: Option<&'a BigramModel>,
}

impl<'a> StandardAttacker<'a> {
    pub fn new(spec: AttackerSpec, table: &'a EmbeddingTable, enc: &'a EncoderG) -> Result<Self> {
        spec.validate()?;
        check_encoder(table, enc)?;
        Ok(StandardAttacker { spec, table, enc, bigram: None })
    }

    pub fn with_bigram(mut self, model: &'a BigramModel) -> Self {
        self.bigram = Some(model);
        self
    }

    /// One-shot trace from a fixed token reconstruction.
    fn snapshot(&self, ids: Vec<TokenId>, observed: &ObservedPrompt) -> AttackTrace {
        let dim = self.table.dim();
        let mut trace = AttackTrace::with_capacity(1, ids.len(), dim);
        let mut regret = 0.0;
        for (&id, w) in ids.iter().zip(&observed.embeddings) {
            let g = self.enc.encode(self.table.row(id));
            regret += distance(g.coords(), self.enc.encode(w.coords()).coords());
            trace.canonical.extend_from_slice(self.table.row(id));
            trace.encoded.extend_from_slice(g.coords());
        }
        let regret = regret / ids.len().max(1) as f64;
        trace.recovered = ids;
        trace.regret.push(regret);
        trace.iterate_distances.push(regret);
        trace.iterations = 1;
        trace
    }
}

impl Attacker for StandardAttacker<'_> {
    fn attack(&self, observed: &ObservedPrompt) -> Result<AttackTrace> {
        if observed.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        match self.spec.kind {
            AttackKind::NearestNeighbor => Ok(self.snapshot(invert_nearest_neighbor(observed, self.table), observed)),
            AttackKind::Contextual => {
                let model = self.bigram.ok_or(Error::EmptyCorpus)?;
                let ids = (0..observed.len())
                    .map(|m| invert_contextual(&observed.token_ids, model, m))
                    .collect::<Result<Vec<_>>>()?;
                Ok(self.snapshot(ids, observed))
            }
            AttackKind::Gradient => run_iterative_attacker(observed, self.table, self.enc, &self.spec),
            AttackKind::Calibrated => run_calibrated_attacker(&observed.token_ids, self.table, self.enc, &self.spec),
        }
    }

    fn token_determined(&self) -> bool {
        match self.spec.kind {
            AttackKind::Contextual | AttackKind::Calibrated => true,
            // nearest-neighbour on token embeddings (adjacency mechanism) is
            // also token determined, but the caller cannot tell in general
            AttackKind::NearestNeighbor | AttackKind::Gradient => false,
        }
    }
}
