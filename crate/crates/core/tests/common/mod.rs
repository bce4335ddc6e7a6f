//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use offrl::data::Step;
use offrl::mdp::{Policy, RewardNoise, TabularMdp};

/// Every trajectory with positive probability under `policy`, with reward
/// outcomes expanded (Bernoulli cells branch on 0/1).
pub fn enumerate(mdp: &TabularMdp, policy: &Policy) -> Vec<(f64, Vec<Step>)> {
    let mut out = Vec::new();
    for s in 0..mdp.states {
        if mdp.d1[s] > 0.0 {
            walk(mdp, policy, 0, s, mdp.d1[s], &mut Vec::new(), &mut out);
        }
    }
    out
}

fn walk(mdp: &TabularMdp, pi: &Policy, h: usize, s: usize, p: f64, path: &mut Vec<Step>, out: &mut Vec<(f64, Vec<Step>)>) {
    if h == mdp.horizon {
        out.push((p, path.clone()));
        return;
    }
    for a in 0..mdp.actions {
        let pa = pi.prob(h, s, a);
        if pa == 0.0 {
            continue;
        }
        let mean = mdp.reward(h, s, a);
        let rewards: Vec<(f64, f64)> = match mdp.noise_at(h, s, a) {
            RewardNoise::Deterministic => vec![(mean, 1.0)],
            RewardNoise::Bernoulli => vec![(1.0, mean), (0.0, 1.0 - mean)],
        };
        for (r, pr) in rewards {
            if pr == 0.0 {
                continue;
            }
            for (s2, &ps) in mdp.p_row(h, s, a).iter().enumerate() {
                if ps == 0.0 {
                    continue;
                }
                path.push(Step { s, a, r, s_next: s2 });
                walk(mdp, pi, h + 1, s2, p * pa * pr * ps, path, out);
                path.pop();
            }
        }
    }
}

pub fn ret(steps: &[Step]) -> f64 {
    steps.iter().map(|st| st.r).sum()
}

/// `(E[G], Var[G])` of the return over the enumerated law.
pub fn return_moments(mdp: &TabularMdp, policy: &Policy) -> (f64, f64) {
    let law = enumerate(mdp, policy);
    let m: f64 = law.iter().map(|(p, t)| p * ret(t)).sum();
    let v: f64 = law.iter().map(|(p, t)| p * (ret(t) - m).powi(2)).sum();
    (m, v)
}
