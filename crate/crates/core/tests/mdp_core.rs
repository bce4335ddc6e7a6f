mod common;

use offrl::data::sample_trajectories;
use offrl::mdp::{
    coverage_diagnostics, cr_lower_bound, deterministic_policy_at, deterministic_policy_count, intrinsic_bound, occupancy, optimal_policy,
    policy_value, random_mdp, random_policy, return_variance, ring_a_eta, ring_mdp, validate_mdp, Policy, RewardNoise, TabularMdp,
};
use proptest::prelude::*;

#[test]
fn value_matches_trajectory_enumeration() {
    for seed in 0..5 {
        let mdp = random_mdp(seed, 2, 2, 2, 1.0);
        let pi = random_policy(seed + 10, 2, 2, 2, 0.1);
        let (m, _) = common::return_moments(&mdp, &pi);
        assert!((policy_value(&mdp, &pi).unwrap().value - m).abs() < 1e-12);
    }
}

#[test]
fn optimal_beats_all_sixteen_policies() {
    let mdp = random_mdp(3, 2, 2, 2, 1.0);
    let (_, vstar) = optimal_policy(&mdp);
    let count = deterministic_policy_count(2, 2, 2) as usize;
    assert_eq!(count, 16);
    let best =
        (0..count).map(|i| policy_value(&mdp, &deterministic_policy_at(i, 2, 2, 2)).unwrap().value).fold(f64::NEG_INFINITY, f64::max);
    assert!((vstar.value - best).abs() < 1e-12);
}

#[test]
fn first_layer_occupancy_is_d1_times_policy() {
    let mdp = random_mdp(5, 3, 2, 3, 1.0);
    let pi = random_policy(6, 3, 2, 3, 0.2);
    let occ = occupancy(&mdp, &pi).unwrap();
    for s in 0..3 {
        for a in 0..2 {
            assert!((occ.sa(0, s, a) - mdp.d1[s] * pi.prob(0, s, a)).abs() < 1e-15);
        }
    }
}

#[test]
fn occupancy_matches_monte_carlo() {
    let mdp = random_mdp(11, 3, 2, 3, 1.0);
    let pi = random_policy(12, 3, 2, 3, 0.2);
    let occ = occupancy(&mdp, &pi).unwrap();
    let n = 1_000_000;
    let ds = sample_trajectories(&mdp, &pi, n, 99).unwrap();
    let c = offrl::data::counts(&ds);
    for h in 0..3 {
        for s in 0..3 {
            for a in 0..2 {
                let d = occ.sa(h, s, a);
                let se = (d * (1.0 - d) / n as f64).sqrt();
                let emp = c.sa(h, s, a) as f64 / n as f64;
                assert!((emp - d).abs() <= 3.0 * se + 1e-12, "({h},{s},{a}) {emp} vs {d}");
            }
        }
    }
}

#[test]
fn return_variance_matches_enumeration() {
    for seed in 0..5 {
        let mdp = random_mdp(seed, 2, 2, 3, 1.0);
        let pi = random_policy(seed + 7, 2, 2, 3, 0.1);
        let (_, var) = common::return_moments(&mdp, &pi);
        let rv = return_variance(&mdp, &pi).unwrap();
        assert!((rv.total - var).abs() < 1e-12, "{} vs {var}", rv.total);
        assert!((rv.total - rv.decomposition_sum()).abs() < 1e-10);
    }
}

#[test]
fn bernoulli_and_deterministic_variance() {
    let p = 0.3;
    let mdp = TabularMdp::homogeneous(1, 1, 1, &[1.0], &[p], vec![1.0], RewardNoise::Bernoulli);
    let pi = Policy::uniform(1, 1, 1);
    assert!((return_variance(&mdp, &pi).unwrap().total - p * (1.0 - p)).abs() < 1e-15);
    let det = random_mdp(4, 3, 2, 4, 0.0);
    assert_eq!(return_variance(&det, &Policy::deterministic(3, 2, 4, &[1; 12])).unwrap().total, 0.0);
}

#[test]
fn cr_bound_special_cases() {
    let mdp = random_mdp(8, 3, 2, 3, 1.0);
    let pi = random_policy(9, 3, 2, 3, 0.2);
    let rv = return_variance(&mdp, &pi).unwrap();
    let aleatoric: f64 = rv.aleatoric.iter().sum();
    let cr = cr_lower_bound(&mdp, &pi, &pi).unwrap();
    assert!((cr - aleatoric - rv.initial).abs() < 1e-10 || (cr - aleatoric).abs() < 1e-10);
    assert!(cr <= rv.total + 1e-10);
    let det = random_mdp(8, 3, 2, 3, 0.0);
    assert_eq!(cr_lower_bound(&det, &pi, &Policy::uniform(3, 2, 3)).unwrap(), 0.0);
}

/// Term-by-term: Σ_h E_μ[(d^π_h/d^μ_h)² Var[r + V^π_{h+1}(s')]] over (h, s, a).
#[test]
fn cr_bound_matches_enumerated_terms() {
    let mdp = random_mdp(21, 3, 2, 3, 1.0);
    let target = random_policy(22, 3, 2, 3, 0.0);
    let behavior = random_policy(23, 3, 2, 3, 0.3);
    let dt = occupancy(&mdp, &target).unwrap();
    let db = occupancy(&mdp, &behavior).unwrap();
    let vt = policy_value(&mdp, &target).unwrap();
    let mut total = 0.0;
    for h in 0..3 {
        let v_next = vt.v_layer(h + 1);
        for s in 0..3 {
            for a in 0..2 {
                let (pt, pb) = (dt.sa(h, s, a), db.sa(h, s, a));
                if pt == 0.0 {
                    continue;
                }
                let row = mdp.p_row(h, s, a);
                let m: f64 = row.iter().zip(v_next).map(|(p, v)| p * v).sum();
                let var_v: f64 = row.iter().zip(v_next).map(|(p, v)| p * (v - m).powi(2)).sum();
                total += pt * pt / pb * (var_v + mdp.reward_variance(h, s, a));
            }
        }
    }
    assert!((cr_lower_bound(&mdp, &target, &behavior).unwrap() - total).abs() < 1e-10);
}

#[test]
fn intrinsic_bound_scaling() {
    let mdp = random_mdp(2, 3, 2, 3, 1.0);
    let mu = Policy::uniform(3, 2, 3);
    let b1 = intrinsic_bound(&mdp, &mu, 100).unwrap();
    let b4 = intrinsic_bound(&mdp, &mu, 400).unwrap();
    assert!((b1 / b4 - 2.0).abs() < 1e-12);
    assert_eq!(intrinsic_bound(&random_mdp(2, 3, 2, 3, 0.0), &mu, 100).unwrap(), 0.0);
}

/// On-policy data (`μ = π*`): Cauchy–Schwarz over at most `S` supported pairs per step
/// gives `sqrt(S·H·Σ_h E[Var]/n)`, where the variance sum excludes the initial-state term.
#[test]
fn intrinsic_bound_on_policy_envelope() {
    for seed in 0..10 {
        let mdp = random_mdp(seed, 4, 3, 5, 1.0);
        let (star, _) = optimal_policy(&mdp);
        let rv = return_variance(&mdp, &star).unwrap();
        let within = rv.total - rv.initial;
        let n = 250;
        let bound = intrinsic_bound(&mdp, &star, n).unwrap();
        let envelope = (4.0 * 5.0 * within / n as f64).sqrt();
        assert!(bound <= envelope + 1e-12, "seed {seed}: {bound} > {envelope}");
    }
}

#[test]
fn coverage_identical_and_uniform_behavior() {
    let mdp = random_mdp(3, 3, 3, 3, 1.0);
    let pi = random_policy(4, 3, 3, 3, 0.1);
    let c = coverage_diagnostics(&mdp, &pi, &pi).unwrap();
    assert!((c.tau_s - 1.0).abs() < 1e-12 && (c.tau_a - 1.0).abs() < 1e-12 && (c.c_star - 1.0).abs() < 1e-12);
    let c = coverage_diagnostics(&mdp, &pi, &Policy::uniform(3, 3, 3)).unwrap();
    let max_prob = pi.probs.iter().cloned().fold(0.0, f64::max);
    assert!((c.tau_a - 3.0 * max_prob).abs() < 1e-12);
    assert!(c.tau_a <= 3.0);
}

#[test]
fn ring_closed_forms() {
    assert!((ring_a_eta(1.0 / 3.0) - 1.5).abs() < 1e-12);
    assert!((ring_a_eta(0.2) - ring_a_eta(0.8)).abs() < 1e-12);
    let ring = ring_mdp(5, 1.0 / 3.0, 4).unwrap();
    assert!((ring.a_eta.powi(4) - 1.0 - 4.0625).abs() < 1e-12);
    assert!(validate_mdp(&ring.mdp).is_empty());
}

#[test]
fn random_mdp_is_deterministic_in_seed() {
    assert_eq!(random_mdp(17, 3, 2, 4, 0.7), random_mdp(17, 3, 2, 4, 0.7));
    assert!(validate_mdp(&random_mdp(1, 3, 2, 4, 1.0)).is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bellman_and_duality(seed in any::<u64>(), s in 1usize..5, a in 1usize..4, h in 1usize..6, sigma in 0.0f64..=1.0) {
        let mdp = random_mdp(seed, s, a, h, sigma);
        let pi = random_policy(seed ^ 0xABCD, s, a, h, 0.0);
        let vt = policy_value(&mdp, &pi).unwrap();
        for hh in 0..h {
            for ss in 0..s {
                let backup: f64 = (0..a).map(|aa| pi.prob(hh, ss, aa) * mdp.backup(hh, ss, aa, vt.v_layer(hh + 1))).sum();
                prop_assert!((vt.v_at(hh, ss) - backup).abs() <= 1e-10);
            }
        }
        let occ = occupancy(&mdp, &pi).unwrap();
        let dual: f64 = occ.d.iter().zip(&mdp.r).map(|(d, r)| d * r).sum();
        prop_assert!((vt.value - dual).abs() <= 1e-10);
        let rv = return_variance(&mdp, &pi).unwrap();
        prop_assert!((rv.total - rv.decomposition_sum()).abs() <= 1e-10);
        prop_assert!(cr_lower_bound(&mdp, &pi, &pi).unwrap() <= rv.total + 1e-10);
    }

    #[test]
    fn optimal_dominates_enumeration(seed in any::<u64>()) {
        let mdp = random_mdp(seed, 2, 2, 3, 1.0);
        let (_, vstar) = optimal_policy(&mdp);
        for i in 0..deterministic_policy_count(2, 2, 3) as usize {
            let v = policy_value(&mdp, &deterministic_policy_at(i, 2, 2, 3)).unwrap().value;
            prop_assert!(v <= vstar.value + 1e-10);
        }
    }
}
