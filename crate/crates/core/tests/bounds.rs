//! Recovery lower bound and slack decomposition on random instances.

use nflbench_core::attack::{run_calibrated_attacker, AttackerSpec};
use nflbench_core::embedding::{vocab_diameter, EmbeddingTable, EncoderG, Prompt, TableRole, Vocabulary};
use nflbench_core::metrics::{distortion_extent, lemma1_slack, nfl_from_parts, recovery_extent, BoundConstants};
use nflbench_core::protection::{protect_prompt, ProtectionConfig};
use nflbench_core::rng::StreamKey;
use nflbench_core::stats::Estimate;
use proptest::prelude::*;
use rand::Rng;

fn random_table(rng: &mut impl Rng, k: usize) -> EmbeddingTable {
    let vocab = Vocabulary::new((0..k).map(|i| format!("w{i}")).collect()).unwrap();
    let rows = (0..k).map(|_| vec![rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)]).collect();
    EmbeddingTable::new(vocab, rows, TableRole::Canonical).unwrap()
}

fn random_encoder(rng: &mut impl Rng) -> EncoderG {
    let mut rows = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    for x in rows.iter_mut().flatten() {
        *x += rng.random_range(-0.4..0.4);
    }
    EncoderG::from_rows(&rows).unwrap()
}

fn random_mechanism(rng: &mut impl Rng) -> ProtectionConfig {
    match rng.random_range(0..4) {
        0 => ProtectionConfig::identity(),
        1 => ProtectionConfig::gaussian(rng.random_range(0.1..3.0)),
        2 => ProtectionConfig::dchi(rng.random_range(0.3..3.0), 2),
        _ => ProtectionConfig::adjacency(rng.random_range(0.3..3.0), 2),
    }
}

/// Independent evaluation of the bound `1 − (c_b·Δ + c2·c_b·I^(p−1))/Ω`.
fn bound_oracle(c_b: f64, delta: f64, scale: f64, p: f64, iters: usize, omega: f64) -> f64 {
    let c2 = scale / p;
    1.0 - (c_b * delta + c2 * c_b * (iters as f64).powf(p - 1.0)) / omega
}

#[test]
fn recovery_bound_holds_on_random_pairs() {
    let mut rng = StreamKey::new(41).rng();
    let mut worst = f64::INFINITY;
    for case in 0..100 {
        let k = rng.random_range(8..30);
        let table = random_table(&mut rng, k);
        let enc = random_encoder(&mut rng);
        let omega = vocab_diameter(&table).unwrap();
        let len = rng.random_range(1..6);
        let d = Prompt::new((0..len).map(|_| rng.random_range(0..table.len())).collect(), table.len()).unwrap();
        let mech = random_mechanism(&mut rng);
        let spec = AttackerSpec::calibrated(rng.random_range(16..512), rng.random_range(0.2..0.9), rng.random_range(0.01..0.3));
        let protected = protect_prompt(&d, &mech, &table, StreamKey::new(case)).unwrap();
        let trace = run_calibrated_attacker(&protected.token_ids, &table, &enc, &spec).unwrap();
        let r = recovery_extent(&trace, &d, &table, omega).unwrap().r;
        let delta = distortion_extent(&d, &protected.prompt(table.len()), &table, &enc).unwrap();
        let oracle = bound_oracle(enc.c_b(), delta, spec.scale, spec.p, spec.iterations, omega);
        assert!(r >= oracle - 1e-12, "case {case}: R {r} < bound {oracle}");
        let k = BoundConstants::new(omega, 1.0, 0.0, (enc.c_a(), enc.c_b()), spec.declared_regret().unwrap(), spec.iterations)
            .unwrap();
        let slack = lemma1_slack(r, delta, &k);
        assert!((slack - (r - oracle)).abs() < 1e-12);
        worst = worst.min(slack);
    }
    assert!(worst >= -1e-12);
}

proptest! {
    #[test]
    fn slack_equals_sum_of_parts(
        c1 in 0.01f64..2.0, c2 in 0.0f64..1.0,
        ep in -1.0f64..1.0, eu in -1.0f64..1.0,
        a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0,
    ) {
        let e = Estimate::exact;
        let chk = nfl_from_parts(c1, c2, e(ep), e(eu), e(a), e(b), e(c)).unwrap();
        let direct = c2 / c1 * ep + eu - c2 * c;
        prop_assert!((chk.slack - direct).abs() < 1e-12);
        prop_assert!(chk.residual.abs() < 1e-12);
    }
}

#[test]
fn nonpositive_c1_is_rejected() {
    let e = Estimate::exact(0.1);
    assert!(nfl_from_parts(0.0, 0.5, e, e, e, e, e).is_err());
    assert!(nfl_from_parts(-1.0, 0.5, e, e, e, e, e).is_err());
}
