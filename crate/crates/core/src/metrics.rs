//! Recovery extent, privacy leakage, utility loss, distortion, the bound
//! constants, and the lemma / trade-off bound checks built on them.

use serde::{Deserialize, Serialize};

use crate::attack::{AttackTrace, RegretConstants};
use crate::embedding::{distance, mean_pool, EmbeddingTable, EmbeddingVector, EncoderG, Prompt};
use crate::error::{Error, Result};
use crate::protection::Mechanism;
use crate::stats::Estimate;

/// Minimum number of Monte-Carlo draws behind any expectation.
pub const N_MIN: usize = 100;

/// Statistical tolerance used by every bound check, in standard errors.
pub const SE_TOLERANCE: f64 = 3.0;

/// Bound checks allow this much absolute slack on top of the SE tolerance so
/// that exact zeros survive floating-point rounding.
const ABS_EPS: f64 = 1e-12;

/// `U(w, s) = max(0, 1 − ‖w − e(s)‖/Ω)`, averaged over a fixed target set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityFunctionSpec {
    /// Mean-pooled canonical embeddings e(s) of the test prompts.
    pub targets: Vec<EmbeddingVector>,
    pub omega: f64,
}

impl UtilityFunctionSpec {
    pub fn new(targets: Vec<EmbeddingVector>, omega: f64) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::InvalidConfig("utility needs at least one target".into()));
        }
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::InvalidConfig(format!("omega must be positive, got {omega}")));
        }
        let dim = targets[0].dim();
        if let Some(t) = targets.iter().find(|t| t.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: t.dim() });
        }
        Ok(UtilityFunctionSpec { targets, omega })
    }

    pub fn from_prompts(prompts: &[Prompt], table: &EmbeddingTable, omega: f64) -> Result<Self> {
        Self::new(prompts.iter().map(|p| crate::embedding::embed_prompt(p, table)).collect(), omega)
    }

    pub fn utility_against(&self, w: &[f64], target: &[f64]) -> f64 {
        (1.0 - distance(w, target) / self.omega).max(0.0)
    }

    /// `E_{s~P₀} U(w, s)`.
    pub fn utility(&self, w: &[f64]) -> f64 {
        self.targets.iter().map(|t| self.utility_against(w, t.coords())).sum::<f64>() / self.targets.len() as f64
    }

    /// Best utility over a candidate set (the targets are always included).
    pub fn optimal_utility<'a>(&'a self, candidates: impl IntoIterator<Item = &'a [f64]>) -> f64 {
        self.targets
            .iter()
            .map(|t| t.coords())
            .chain(candidates)
            .map(|w| self.utility(w))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub r: f64,
    /// Iterations whose mean error exceeded Ω and was clamped.
    pub clamped: usize,
}

/// `R = 1 − (1/I) Σ_i ‖mean_m (x_i^(m) − e(d^(m)))‖ / Ω`, each norm clamped
/// at Ω so that R stays in [0, 1].
pub fn recovery_extent(trace: &AttackTrace, original: &Prompt, table: &EmbeddingTable, omega: f64) -> Result<Recovery> {
    if trace.iterations() == 0 {
        return Err(Error::ZeroIterations);
    }
    if !(omega > 0.0) {
        return Err(Error::InvalidConfig(format!("omega must be positive, got {omega}")));
    }
    if trace.prompt_len() != original.len() {
        return Err(Error::LengthMismatch { left: original.len(), right: trace.prompt_len() });
    }
    let dim = table.dim();
    let len = original.len() as f64;
    let mut diff = vec![0.0; dim];
    let (mut total, mut clamped) = (0.0, 0);
    for i in 0..trace.iterations() {
        diff.iter_mut().for_each(|x| *x = 0.0);
        for (m, &id) in original.ids().iter().enumerate() {
            for ((d, x), e) in diff.iter_mut().zip(trace.canonical(i, m)).zip(table.row(id)) {
                *d += (x - e) / len;
            }
        }
        let n = crate::embedding::norm(&diff);
        if n > omega {
            clamped += 1;
        }
        total += n.min(omega);
    }
    Ok(Recovery { r: 1.0 - total / (trace.iterations() as f64 * omega), clamped })
}

/// Sign convention for the leakage gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakageOrientation {
    /// `R(P̃) − R(P̆)`: positive when protected prompts are easier to recover
    /// than baseline ones.
    #[default]
    ProtectedMinusBaseline,
    /// `R(P̆) − R(P̃)`.
    BaselineMinusProtected,
}

/// `ε_p` from recovery extents of prompts drawn under P̃ and under P̆.
pub fn privacy_leakage(r_protected: &[f64], r_baseline: &[f64], orientation: LeakageOrientation) -> Result<Estimate> {
    for n in [r_protected.len(), r_baseline.len()] {
        if n < N_MIN {
            return Err(Error::InsufficientSamples { needed: N_MIN, got: n });
        }
    }
    let a = Estimate::from_samples(r_protected);
    let b = Estimate::from_samples(r_baseline);
    let se = a.se.hypot(b.se);
    Ok(match orientation {
        LeakageOrientation::ProtectedMinusBaseline => Estimate { value: a.value - b.value, se },
        LeakageOrientation::BaselineMinusProtected => Estimate { value: b.value - a.value, se },
    })
}

/// `ε_u = U(P) − U(P̃)` from utilities of draws under P and P̃. Paired draws
/// (w and its own protected w̃) give a much tighter SE.
pub fn utility_loss_from_samples(u_p: &[f64], u_pt: &[f64], paired: bool) -> Result<Estimate> {
    for n in [u_p.len(), u_pt.len()] {
        if n < N_MIN {
            return Err(Error::InsufficientSamples { needed: N_MIN, got: n });
        }
    }
    if paired {
        if u_p.len() != u_pt.len() {
            return Err(Error::LengthMismatch { left: u_p.len(), right: u_pt.len() });
        }
        return Ok(Estimate::paired_difference(u_p, u_pt));
    }
    let a = Estimate::from_samples(u_p);
    let b = Estimate::from_samples(u_pt);
    Ok(Estimate { value: a.value - b.value, se: a.se.hypot(b.se) })
}

/// `ε_u` between two embedding samples.
pub fn utility_loss(
    p_samples: &[EmbeddingVector],
    pt_samples: &[EmbeddingVector],
    util: &UtilityFunctionSpec,
    paired: bool,
) -> Result<Estimate> {
    let u = |xs: &[EmbeddingVector]| xs.iter().map(|w| util.utility(w.coords())).collect::<Vec<_>>();
    utility_loss_from_samples(&u(p_samples), &u(pt_samples), paired)
}

/// `Δ = ‖mean_m g(e(d^(m))) − mean_m g(e(d̃^(m)))‖`.
pub fn distortion_extent(d: &Prompt, d_tilde: &Prompt, table: &EmbeddingTable, enc: &EncoderG) -> Result<f64> {
    if d.len() != d_tilde.len() {
        return Err(Error::LengthMismatch { left: d.len(), right: d_tilde.len() });
    }
    let enc_rows = |p: &Prompt| p.ids().iter().map(|&id| enc.encode(table.row(id))).collect::<Vec<_>>();
    Ok(distortion_from_encoded(&enc_rows(d), &enc_rows(d_tilde)))
}

/// Δ from per-position encoded embeddings.
pub fn distortion_from_encoded(a: &[EmbeddingVector], b: &[EmbeddingVector]) -> f64 {
    let dim = a[0].dim();
    let ma = mean_pool(a.iter().map(|v| v.coords()), dim);
    let mb = mean_pool(b.iter().map(|v| v.coords()), dim);
    distance(ma.coords(), mb.coords())
}

/// Largest α with `P̃(W_α) ≤ TV(P‖P̃)/2`, where `W_α` holds the points whose
/// utility is within α of the optimum `u_star`.
///
/// `protected` lists `(utility, mass)` atoms of P̃ (equal-weight samples for
/// a continuous P̃). The mass function is a right-continuous step function in
/// α, so the answer is just below the first gap at which the cap is crossed.
pub fn estimate_alpha(u_star: f64, protected: &[(f64, f64)], tv_p_pt: f64) -> Result<f64> {
    if protected.is_empty() {
        return Err(Error::ConstantsUnavailable("no protected atoms".into()));
    }
    if tv_p_pt <= 0.0 {
        // nothing to certify: the utility bound reduces to ε_u ≥ 0
        return Ok(0.0);
    }
    let cap = tv_p_pt / 2.0;
    let mut gaps: Vec<(f64, f64)> = protected.iter().map(|&(u, w)| ((u_star - u).abs(), w)).collect();
    gaps.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut mass = 0.0;
    let mut k = 0;
    while k < gaps.len() {
        let g = gaps[k].0;
        while k < gaps.len() && gaps[k].0 == g {
            mass += gaps[k].1;
            k += 1;
        }
        if mass > cap {
            if g <= 0.0 {
                return Err(Error::AssumptionViolated(format!(
                    "protected mass {mass:.6} on the optimal set already exceeds TV/2 = {cap:.6}"
                )));
            }
            return Ok(g.next_down());
        }
    }
    Ok(gaps[gaps.len() - 1].0)
}

/// Smallest c with `R(w̃) − R(w) ≥ R(w̃)/c` over all given `(R(w̃), R(w))` pairs.
pub fn estimate_c(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::ConstantsUnavailable("no recovery pairs".into()));
    }
    let mut c: f64 = 0.0;
    for &(rt, r) in pairs {
        if rt <= r {
            return Err(Error::AssumptionViolated(format!("pair with R(w~) = {rt} <= R(w) = {r}")));
        }
        c = c.max(rt / (rt - r));
    }
    Ok(c)
}

/// `c` over the pairs that matter for the leakage bound: protected draws
/// landing where P̃ outweighs P̆ (`v_region`) against baseline draws landing
/// where P̆ outweighs P̃ (`u_region`). The ratio `a/(a−b)` falls in `a` and
/// rises in `b`, so the maximum over all pairs sits at `(min a, max b)`.
/// With either region empty the two distributions coincide on the cells and
/// c = 1 is returned.
pub fn estimate_c_regions(v_region: &[f64], u_region: &[f64]) -> Result<f64> {
    if v_region.is_empty() || u_region.is_empty() {
        return Ok(1.0);
    }
    let a = v_region.iter().copied().fold(f64::INFINITY, f64::min);
    let b = u_region.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    estimate_c(&[(a, b)])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub omega: f64,
    pub c: f64,
    pub alpha: f64,
    pub c_a: f64,
    pub c_b: f64,
    pub c0: f64,
    pub c2: f64,
    pub p: f64,
    pub iterations: usize,
    /// `(1 − (c_b + c2·c_b·I^(p−1))/Ω)/c`
    #[serde(rename = "C1")]
    pub coef_c1: f64,
    /// Same without the division by c.
    #[serde(rename = "C1_undivided")]
    pub coef_c1_undivided: f64,
    /// `α/2`
    #[serde(rename = "C2")]
    pub coef_c2: f64,
}

impl BoundConstants {
    pub fn new(
        omega: f64,
        c: f64,
        alpha: f64,
        (c_a, c_b): (f64, f64),
        regret: RegretConstants,
        iterations: usize,
    ) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::ZeroIterations);
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::ConstantsUnavailable(format!("c = {c}")));
        }
        let lhs = c_b + c_b * regret.c2;
        if lhs > omega {
            return Err(Error::SideConditionViolated { lhs, omega });
        }
        let undivided = 1.0 - (c_b + regret.c2 * c_b * (iterations as f64).powf(regret.p - 1.0)) / omega;
        Ok(BoundConstants {
            omega,
            c,
            alpha,
            c_a,
            c_b,
            c0: regret.c0,
            c2: regret.c2,
            p: regret.p,
            iterations,
            coef_c1: undivided / c,
            coef_c1_undivided: undivided,
            coef_c2: alpha / 2.0,
        })
    }

    /// Lower bound on R given distortion Δ.
    pub fn recovery_lower_bound(&self, delta: f64) -> f64 {
        1.0 - (self.c_b * delta + self.c2 * self.c_b * (self.iterations as f64).powf(self.p - 1.0)) / self.omega
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlackCheck {
    pub slack: f64,
    pub se: f64,
    pub passed: bool,
}

impl SlackCheck {
    pub fn new(slack: f64, se: f64) -> Self {
        SlackCheck { slack, se, passed: slack >= -(SE_TOLERANCE * se) - ABS_EPS }
    }
}

/// `R(w̃) − (1 − (c_b·Δ + c2·c_b·I^(p−1))/Ω)`.
pub fn lemma1_slack(recovery: f64, delta: f64, constants: &BoundConstants) -> f64 {
    recovery - constants.recovery_lower_bound(delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    /// Worst per-sample recovery-bound slack (exact quantities, zero SE).
    pub l1: Option<SlackCheck>,
    pub l2: SlackCheck,
    pub l3: SlackCheck,
}

fn need<T: Copy>(x: Option<T>, what: &str) -> Result<T> {
    x.ok_or_else(|| Error::ConstantsUnavailable(format!("record has no {what}")))
}

/// Slacks of the recovery, leakage and utility lemmas for one record.
pub fn check_lemma_bounds(record: &TradeoffRecord) -> Result<LemmaReport> {
    let k = need(record.constants, "bound constants")?;
    let (eps_p, eps_u) = (need(record.eps_p, "eps_p")?, need(record.eps_u, "eps_u")?);
    let (tv_p_pt, tv_pt_pb) = (need(record.tv_p_pt, "TV(P|P~)")?, need(record.tv_pt_pb, "TV(P~|P^)")?);
    let l2 = SlackCheck::new(eps_p.value - k.coef_c1 * tv_pt_pb.value, eps_p.se.hypot(k.coef_c1 * tv_pt_pb.se));
    let l3 = SlackCheck::new(eps_u.value - k.coef_c2 * tv_p_pt.value, eps_u.se.hypot(k.coef_c2 * tv_p_pt.se));
    let l1 = record.min_lemma1_slack.map(|s| SlackCheck::new(s, 0.0));
    Ok(LemmaReport { l1, l2, l3 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NflCheck {
    pub slack: f64,
    pub se: f64,
    pub passed: bool,
    /// `(C2/C1)(ε_p − C1·TV(P̃‖P̆))`
    pub part_leakage: f64,
    /// `ε_u − C2·TV(P‖P̃)`
    pub part_utility: f64,
    /// `C2·(TV(P‖P̃) + TV(P̃‖P̆) − TV(P‖P̆))`, non-negative by the triangle inequality
    pub part_triangle: f64,
    /// `slack − (sum of parts)`; zero up to rounding.
    pub residual: f64,
}

/// `(C2/C1)·ε_p + ε_u − C2·TV(P‖P̆)` and its three-part decomposition.
pub fn check_nfl(record: &TradeoffRecord) -> Result<NflCheck> {
    let k = need(record.constants, "bound constants")?;
    nfl_from_parts(
        k.coef_c1,
        k.coef_c2,
        need(record.eps_p, "eps_p")?,
        need(record.eps_u, "eps_u")?,
        need(record.tv_p_pt, "TV(P|P~)")?,
        need(record.tv_pt_pb, "TV(P~|P^)")?,
        need(record.tv_p_pb, "TV(P|P^)")?,
    )
}

pub fn nfl_from_parts(
    c1: f64,
    c2: f64,
    eps_p: Estimate,
    eps_u: Estimate,
    tv_p_pt: Estimate,
    tv_pt_pb: Estimate,
    tv_p_pb: Estimate,
) -> Result<NflCheck> {
    if !(c1 > 0.0) {
        return Err(Error::NonpositiveC1(c1));
    }
    let ratio = c2 / c1;
    let slack = ratio * eps_p.value + eps_u.value - c2 * tv_p_pb.value;
    let se = ((ratio * eps_p.se).powi(2) + eps_u.se.powi(2) + (c2 * tv_p_pb.se).powi(2)).sqrt();
    let part_leakage = ratio * (eps_p.value - c1 * tv_pt_pb.value);
    let part_utility = eps_u.value - c2 * tv_p_pt.value;
    let part_triangle = c2 * (tv_p_pt.value + tv_pt_pb.value - tv_p_pb.value);
    let residual = slack - (part_leakage + part_utility + part_triangle);
    Ok(NflCheck {
        slack,
        se,
        passed: slack >= -(SE_TOLERANCE * se) - ABS_EPS,
        part_leakage,
        part_utility,
        part_triangle,
        residual,
    })
}

/// One evaluated mechanism setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRecord {
    pub index: usize,
    pub mech: Mechanism,
    pub param: f64,
    pub eps_p: Option<Estimate>,
    pub eps_u: Option<Estimate>,
    /// Mean distortion over the protected draws.
    pub delta: Option<f64>,
    pub tv_p_pt: Option<Estimate>,
    pub tv_pt_pb: Option<Estimate>,
    pub tv_p_pb: Option<Estimate>,
    pub constants: Option<BoundConstants>,
    pub nfl_slack: Option<f64>,
    pub nfl_se: Option<f64>,
    /// Worst `R(w̃) − lower bound` over the protected draws.
    pub min_lemma1_slack: Option<f64>,
    /// Iterations clamped at Ω across all recovery evaluations.
    pub clamped: usize,
    /// `kind: message` of the error that stopped this point, if any.
    pub error: Option<String>,
}

impl TradeoffRecord {
    pub fn empty(index: usize, mech: Mechanism, param: f64) -> Self {
        TradeoffRecord {
            index,
            mech,
            param,
            eps_p: None,
            eps_u: None,
            delta: None,
            tv_p_pt: None,
            tv_pt_pb: None,
            tv_p_pb: None,
            constants: None,
            nfl_slack: None,
            nfl_se: None,
            min_lemma1_slack: None,
            clamped: 0,
            error: None,
        }
    }

    pub fn failed(index: usize, mech: Mechanism, param: f64, err: &Error) -> Self {
        let mut r = Self::empty(index, mech, param);
        r.set_error(err);
        r
    }

    pub fn set_error(&mut self, err: &Error) {
        self.error = Some(format!("{}: {}", err.kind(), err));
    }

    pub fn error_kind(&self) -> Option<&str> {
        self.error.as_deref().and_then(|e| e.split(':').next())
    }
}

/// The point with the smallest ε_u among those with ε_p ≤ ξ (lowest index on
/// ties); `None` when no point meets the budget.
pub fn select_optimum(records: &[TradeoffRecord], xi: f64) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, r) in records.iter().enumerate() {
        let (Some(p), Some(u)) = (r.eps_p, r.eps_u) else { continue };
        if r.error.is_some() || !(p.value <= xi) || !u.value.is_finite() {
            continue;
        }
        if best.is_none_or(|b| u.value < records[b].eps_u.map_or(f64::INFINITY, |e| e.value)) {
            best = Some(k);
        }
    }
    best
}
