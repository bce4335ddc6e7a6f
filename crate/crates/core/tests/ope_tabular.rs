#![allow(clippy::needless_range_loop)]

mod common;

use offrl::data::{counts, sample_trajectories, Dataset, DatasetMeta};
use offrl::mdp::{policy_value, random_mdp, random_policy, Policy, RewardNoise, TabularMdp};
use offrl::ope_tabular::{is_estimate, mse_harness, smis_estimate, step_is_estimate, tmis_estimate, Method};
use proptest::prelude::*;

fn single(steps: &[offrl::data::Step], mdp: &TabularMdp) -> Dataset {
    Dataset { n: 1, horizon: mdp.horizon, states: mdp.states, actions: mdp.actions, records: steps.to_vec(), meta: DatasetMeta::default() }
}

#[test]
fn on_policy_is_is_the_mean_return() {
    let mdp = random_mdp(1, 3, 2, 4, 1.0);
    let pi = random_policy(2, 3, 2, 4, 0.2);
    let ds = sample_trajectories(&mdp, &pi, 500, 3).unwrap();
    let mc = ds.trajectories().map(common::ret).sum::<f64>() / 500.0;
    assert!((is_estimate(&ds, &pi, &pi).unwrap().estimate - mc).abs() < 1e-12);
    assert!((step_is_estimate(&ds, &pi, &pi).unwrap().estimate - mc).abs() < 1e-12);
}

#[test]
fn step_is_with_first_step_reward_is_one_step_is() {
    let mut mdp = random_mdp(4, 2, 2, 3, 1.0);
    let (s_n, a_n) = (2, 2);
    for c in s_n * a_n..mdp.r.len() {
        mdp.r[c] = 0.0;
    }
    let target = random_policy(5, 2, 2, 3, 0.0);
    let behavior = random_policy(6, 2, 2, 3, 0.5);
    let ds = sample_trajectories(&mdp, &behavior, 400, 7).unwrap();
    let one_step: f64 =
        ds.trajectories().map(|t| target.prob(0, t[0].s, t[0].a) / behavior.prob(0, t[0].s, t[0].a) * t[0].r).sum::<f64>() / 400.0;
    assert!((step_is_estimate(&ds, &target, &behavior).unwrap().estimate - one_step).abs() < 1e-12);
}

/// Expectation over the enumerated one-trajectory datasets is exactly v^π.
#[test]
fn is_and_step_is_unbiased_by_enumeration() {
    let mdp = random_mdp(8, 2, 2, 2, 1.0);
    let target = random_policy(9, 2, 2, 2, 0.0);
    let behavior = random_policy(10, 2, 2, 2, 0.4);
    let truth = policy_value(&mdp, &target).unwrap().value;
    let law = common::enumerate(&mdp, &behavior);
    let (mut e_is, mut e_step) = (0.0, 0.0);
    for (p, t) in &law {
        let ds = single(t, &mdp);
        e_is += p * is_estimate(&ds, &target, &behavior).unwrap().estimate;
        e_step += p * step_is_estimate(&ds, &target, &behavior).unwrap().estimate;
    }
    assert!((e_is - truth).abs() < 1e-12);
    assert!((e_step - truth).abs() < 1e-12);
}

/// Plug-in MDP built directly from the count tables.
fn plugin_oracle(ds: &Dataset) -> TabularMdp {
    let c = counts(ds);
    let (s_n, a_n, h_n) = (ds.states, ds.actions, ds.horizon);
    let mut p = vec![0.0; h_n * s_n * a_n * s_n];
    let mut r = vec![0.0; h_n * s_n * a_n];
    for cell in 0..h_n * s_n * a_n {
        let k = c.n_sa[cell] as f64;
        assert!(k > 0.0, "oracle needs full coverage");
        r[cell] = c.r_sum[cell] / k;
        for s2 in 0..s_n {
            p[cell * s_n + s2] = c.n_sas[cell * s_n + s2] as f64 / k;
        }
    }
    let d1 = (0..s_n).map(|s| c.n_s[s] as f64 / ds.n as f64).collect();
    TabularMdp { states: s_n, actions: a_n, horizon: h_n, p, r, d1, noise: vec![RewardNoise::Deterministic; h_n * s_n * a_n] }
}

#[test]
fn tmis_equals_plugin_value() {
    for seed in 0..5 {
        let mdp = random_mdp(seed, 3, 2, 3, 1.0);
        let mut mdp_full = mdp.clone();
        mdp_full.d1 = vec![1.0 / 3.0; 3];
        let ds = sample_trajectories(&mdp_full, &Policy::uniform(3, 2, 3), 2000, seed).unwrap();
        let target = random_policy(seed + 20, 3, 2, 3, 0.0);
        let oracle = policy_value(&plugin_oracle(&ds), &target).unwrap().value;
        let rep = tmis_estimate(&ds, &target).unwrap();
        assert!((rep.estimate - oracle).abs() < 1e-10);
        assert!((rep.model_form.unwrap() - oracle).abs() < 1e-10);
    }
}

#[test]
fn tmis_exact_on_covered_deterministic_system() {
    let mut mdp = random_mdp(3, 3, 2, 4, 0.0);
    mdp.d1 = vec![1.0 / 3.0; 3];
    let ds = sample_trajectories(&mdp, &Policy::uniform(3, 2, 4), 3000, 1).unwrap();
    let target = Policy::deterministic(3, 2, 4, &[0, 1, 1, 0, 0, 1, 1, 1, 0, 1, 0, 0]);
    let mut truth_mdp = mdp.clone();
    truth_mdp.d1 = counts(&ds).n_s[..3].iter().map(|&k| k as f64 / 3000.0).collect();
    let truth = policy_value(&truth_mdp, &target).unwrap().value;
    assert!((tmis_estimate(&ds, &target).unwrap().estimate - truth).abs() < 1e-12);
}

#[test]
fn tmis_zero_rule_reports_unvisited_cells() {
    let mdp = random_mdp(2, 3, 2, 3, 1.0);
    let behavior = Policy::deterministic(3, 2, 3, &[0; 9]);
    let ds = sample_trajectories(&mdp, &behavior, 200, 4).unwrap();
    let rep = tmis_estimate(&ds, &Policy::uniform(3, 2, 3)).unwrap();
    assert!(rep.estimate.is_finite());
    assert!(rep.diagnostics.zero_count_cells > 0);
}

/// On-policy SMIS is the value of the state-marginal plug-in chain.
#[test]
fn smis_on_policy_matches_state_chain() {
    let mut mdp = random_mdp(12, 3, 2, 3, 1.0);
    mdp.d1 = vec![1.0 / 3.0; 3];
    let pi = random_policy(13, 3, 2, 3, 0.3);
    let ds = sample_trajectories(&mdp, &pi, 3000, 2).unwrap();
    let c = counts(&ds);
    let s_n = 3;
    let mut d: Vec<f64> = (0..s_n).map(|s| c.state(0, s) as f64 / 3000.0).collect();
    let mut total = 0.0;
    for h in 0..3 {
        let mut next = vec![0.0; s_n];
        for s in 0..s_n {
            let ns = c.state(h, s) as f64;
            let r: f64 = (0..2).map(|a| c.r_sum[c.cell(h, s, a)]).sum::<f64>() / ns;
            total += d[s] * r;
            for s2 in 0..s_n {
                let m: u64 = (0..2).map(|a| c.sas_row(h, s, a)[s2]).sum();
                next[s2] += d[s] * m as f64 / ns;
            }
        }
        d = next;
    }
    assert!((smis_estimate(&ds, &pi, &pi).unwrap().estimate - total).abs() < 1e-10);
}

#[test]
fn smis_unvisited_state_is_harmless() {
    // State 2 is never reached from state 0 under action 0.
    let mut p = vec![0.0; 3 * 2 * 3];
    for (s, a, s2) in [(0, 0, 0), (0, 1, 1), (1, 0, 0), (1, 1, 1), (2, 0, 2), (2, 1, 2)] {
        p[(s * 2 + a) * 3 + s2] = 1.0;
    }
    let mdp = TabularMdp::homogeneous(3, 2, 3, &p, &[0.5; 6], vec![1.0, 0.0, 0.0], RewardNoise::Bernoulli);
    let mu = Policy::uniform(3, 2, 3);
    let ds = sample_trajectories(&mdp, &mu, 100, 1).unwrap();
    assert!(smis_estimate(&ds, &mu, &mu).unwrap().estimate.is_finite());
}

#[test]
fn mse_zero_on_deterministic_covered_system() {
    let mut mdp = random_mdp(7, 2, 2, 3, 0.0);
    mdp.d1 = vec![1.0, 0.0];
    let mu = Policy::uniform(2, 2, 3);
    let target = Policy::deterministic(2, 2, 3, &[1, 0, 0, 1, 1, 1]);
    let s = mse_harness(&mdp, &target, &mu, Method::Tmis, 500, 20, 3).unwrap();
    assert_eq!(s.mse, 0.0);
}

#[test]
fn tmis_mse_scales_as_one_over_n() {
    let mut mdp = random_mdp(14, 3, 2, 3, 1.0);
    mdp.d1 = vec![1.0 / 3.0; 3];
    let mu = Policy::uniform(3, 2, 3);
    let target = random_policy(15, 3, 2, 3, 0.2);
    let a = mse_harness(&mdp, &target, &mu, Method::Tmis, 1000, 500, 1).unwrap();
    let b = mse_harness(&mdp, &target, &mu, Method::Tmis, 4000, 500, 2).unwrap();
    let ratio = a.mse / b.mse;
    assert!((ratio / 4.0 - 1.0).abs() <= 0.3, "ratio {ratio}");
}

#[test]
fn reps_below_two_rejected() {
    let mdp = random_mdp(1, 2, 2, 2, 1.0);
    let mu = Policy::uniform(2, 2, 2);
    assert!(mse_harness(&mdp, &mu, &mu, Method::Is, 10, 1, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tmis_dual_forms_agree(seed in any::<u64>(), n in 1usize..200) {
        let mdp = random_mdp(seed, 3, 2, 4, 1.0);
        let ds = sample_trajectories(&mdp, &random_policy(seed, 3, 2, 4, 0.1), n, seed ^ 1).unwrap();
        let rep = tmis_estimate(&ds, &random_policy(seed ^ 2, 3, 2, 4, 0.0)).unwrap();
        prop_assert!((rep.estimate - rep.model_form.unwrap()).abs() <= 1e-10);
    }
}
