//! Named fixture MDPs used by the tests and the CLI.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{occupancy, random_mdp, random_policy, ring_mdp, Policy, RewardNoise, TabularMdp};
use crate::ope_linear::FeatureMap;
use crate::util::{derive_seed, substream};

/// An MDP with the policies and features an experiment needs.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: String,
    pub mdp: TabularMdp,
    pub behavior: Policy,
    pub target: Policy,
    pub features: Option<FeatureMap>,
    /// Derived constants worth recording next to the fixture.
    pub manifest: Vec<(String, String)>,
}

/// Transitions `P_h(·|s, a) = ν_h(·)` independent of `(s, a)`, so `rng V*_h ≤ 1`.
pub fn fastmix(seed: u64, states: usize, actions: usize, horizon: usize) -> TabularMdp {
    let mut mdp = random_mdp(seed, states, actions, horizon, 1.0);
    let (s_n, a_n) = (states, actions);
    for h in 0..horizon {
        let nu = mdp.p_row(h, 0, 0).to_vec();
        for s in 0..s_n {
            for a in 0..a_n {
                let c = mdp.cell(h, s, a);
                mdp.p[c * s_n..(c + 1) * s_n].copy_from_slice(&nu);
            }
        }
    }
    mdp
}

/// Deterministic transitions, rewards and start state.
pub fn deterministic(seed: u64, states: usize, actions: usize, horizon: usize) -> TabularMdp {
    random_mdp(seed, states, actions, horizon, 0.0)
}

/// A deterministic MDP whose step `layer` is made stochastic, paired with its
/// fully deterministic twin.
///
/// At the stochastic layer every `(s, a)` row is replaced by a flat-Dirichlet draw.
pub fn partially_deterministic(seed: u64, states: usize, actions: usize, horizon: usize, layer: usize) -> Result<(TabularMdp, TabularMdp)> {
    if layer >= horizon {
        return Err(Error::InvalidArgument(format!("layer {layer} outside horizon {horizon}")));
    }
    let twin = deterministic(seed, states, actions, horizon);
    let mut stochastic = twin.clone();
    let mut rng = substream(seed, 9);
    for s in 0..states {
        for a in 0..actions {
            let c = stochastic.cell(layer, s, a);
            let w: Vec<f64> = (0..states).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
            let sum: f64 = w.iter().sum();
            for (slot, x) in stochastic.p[c * states..(c + 1) * states].iter_mut().zip(&w) {
                *slot = x / sum;
            }
        }
    }
    Ok((stochastic, twin))
}

/// Time-homogeneous linear MDP with simplex features: `P(s'|s, a) = Σ_k φ_k(s, a) ν_k(s')`
/// and `r(s, a) = Σ_k φ_k(s, a) θ_k`, Bernoulli rewards.
///
/// Homogeneous because linear FQE pools all `nH` transitions into one regression.
pub fn linear_mdp(seed: u64, d: usize, states: usize, actions: usize, horizon: usize) -> Result<(TabularMdp, FeatureMap)> {
    let mut rng = substream(seed, 7);
    let mut simplex = |k: usize| {
        let w: Vec<f64> = (0..k).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let sum: f64 = w.iter().sum();
        w.into_iter().map(|x| x / sum).collect::<Vec<f64>>()
    };
    let phi: Vec<f64> = (0..states * actions).flat_map(|_| simplex(d)).collect();
    let nu: Vec<Vec<f64>> = (0..d).map(|_| simplex(states)).collect();
    let d1 = simplex(states);
    let mut rng = substream(seed, 8);
    let theta: Vec<f64> = (0..d).map(|_| rng.gen()).collect();
    let features = FeatureMap::new(d, states, actions, phi)?;
    let mut p = Vec::with_capacity(states * actions * states);
    let mut r = Vec::with_capacity(states * actions);
    for s in 0..states {
        for a in 0..actions {
            let f = features.slice(s, a);
            for s2 in 0..states {
                p.push((0..d).map(|k| f[k] * nu[k][s2]).sum());
            }
            r.push((0..d).map(|k| f[k] * theta[k]).sum::<f64>().clamp(0.0, 1.0));
        }
    }
    let mdp = TabularMdp::homogeneous(states, actions, horizon, &p, &r, d1, RewardNoise::Bernoulli);
    Ok((mdp, features))
}

/// Three states `U = 0` (start), `G = 1`, `B = 2`; `G` pays 1 per step and `B`
/// pays 0, both absorbing. From `U` action 0 reaches `G`/`B` w.p. 0.3/0.2 and
/// action 1 w.p. 0.2/0.3; `U` pays Bernoulli(0.5) for action 0, 0 for action 1.
///
/// Target `(0.9, 0.1)`, behavior `(0.5, 0.5)` in every state.
pub fn horizon_fixture(horizon: usize) -> Fixture {
    let (s_n, a_n) = (3, 2);
    let mut p_layer = vec![0.0; s_n * a_n * s_n];
    let mut r_layer = vec![0.0; s_n * a_n];
    let rows: [[f64; 3]; 6] = [[0.5, 0.3, 0.2], [0.5, 0.2, 0.3], [0.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0]];
    for (k, row) in rows.iter().enumerate() {
        p_layer[k * s_n..(k + 1) * s_n].copy_from_slice(row);
    }
    r_layer[0] = 0.5;
    r_layer[2] = 1.0;
    r_layer[3] = 1.0;
    let mut mdp = TabularMdp::homogeneous(s_n, a_n, horizon, &p_layer, &r_layer, vec![1.0, 0.0, 0.0], RewardNoise::Deterministic);
    for h in 0..horizon {
        let c = mdp.cell(h, 0, 0);
        mdp.noise[c] = RewardNoise::Bernoulli;
    }
    Fixture {
        name: "horizon".into(),
        behavior: Policy::stationary(s_n, a_n, horizon, &[0.5, 0.5].repeat(s_n)),
        target: Policy::stationary(s_n, a_n, horizon, &[0.9, 0.1].repeat(s_n)),
        features: None,
        manifest: vec![("H".into(), horizon.to_string())],
        mdp,
    }
}

/// One-step contextual bandit: state `s` has action 0 paying `0.5` and action 1
/// paying `0.5 + g_s`, gaps log-spaced on `[gap_min, gap_max]`, uniform start,
/// deterministic rewards. Behavior plays the better action w.p. `rare`.
pub fn gap_ladder(states: usize, gap_min: f64, gap_max: f64, rare: f64) -> Result<Fixture> {
    if states < 2 || !(0.0 < gap_min && gap_min < gap_max && gap_max <= 0.5) || !(0.0 < rare && rare < 1.0) {
        return Err(Error::InvalidArgument("gap_ladder needs S ≥ 2, 0 < gap_min < gap_max ≤ 0.5, 0 < rare < 1".into()));
    }
    let a_n = 2;
    let ratio = (gap_max / gap_min).ln() / (states - 1) as f64;
    let mut p = vec![0.0; states * a_n * states];
    let mut r = vec![0.0; states * a_n];
    for s in 0..states {
        let gap = gap_min * (ratio * s as f64).exp();
        r[s * a_n] = 0.5;
        r[s * a_n + 1] = 0.5 + gap;
        for a in 0..a_n {
            p[(s * a_n + a) * states + s] = 1.0;
        }
    }
    let mdp = TabularMdp::homogeneous(states, a_n, 1, &p, &r, vec![1.0 / states as f64; states], RewardNoise::Deterministic);
    Ok(Fixture {
        name: "gap-ladder".into(),
        behavior: Policy::stationary(states, a_n, 1, &[1.0 - rare, rare].repeat(states)),
        target: Policy::deterministic(states, a_n, 1, &vec![1; states]),
        features: None,
        manifest: vec![("gap_min".into(), gap_min.to_string()), ("gap_max".into(), gap_max.to_string()), ("rare".into(), rare.to_string())],
        mdp,
    })
}

/// Safe/risky linear family with `d = 3` simplex features.
///
/// `φ(s, safe) = (1, 0, 0)`, `φ(s, risky) = (0, x_s, 1 − x_s)`; safe pays 0.5,
/// risky pays Bernoulli(`x_s`) with `x_s` evenly spaced on `[0.5, 1]`. Next
/// states are uniform regardless of `(s, a)`. Behavior picks risky w.p. `rare`.
pub fn safe_risky(states: usize, horizon: usize, rare: f64) -> Result<Fixture> {
    if states < 2 || horizon == 0 || !(0.0 < rare && rare < 1.0) {
        return Err(Error::InvalidArgument("safe_risky needs S ≥ 2, H ≥ 1, 0 < rare < 1".into()));
    }
    let a_n = 2;
    let mut phi = Vec::with_capacity(states * a_n * 3);
    let mut r = vec![0.0; states * a_n];
    let mut noise = vec![RewardNoise::Deterministic; states * a_n];
    for s in 0..states {
        let x = 0.5 + 0.5 * s as f64 / (states - 1) as f64;
        phi.extend_from_slice(&[1.0, 0.0, 0.0, 0.0, x, 1.0 - x]);
        r[s * a_n] = 0.5;
        r[s * a_n + 1] = x;
        noise[s * a_n + 1] = RewardNoise::Bernoulli;
    }
    let p = vec![1.0 / states as f64; states * a_n * states];
    let d1 = vec![1.0 / states as f64; states];
    let mut mdp = TabularMdp::homogeneous(states, a_n, horizon, &p, &r, d1, RewardNoise::Deterministic);
    mdp.noise = (0..horizon).flat_map(|_| noise.iter().copied()).collect();
    Ok(Fixture {
        name: "safe-risky".into(),
        behavior: Policy::stationary(states, a_n, horizon, &[1.0 - rare, rare].repeat(states)),
        target: Policy::deterministic(states, a_n, horizon, &vec![1; horizon * states]),
        features: Some(FeatureMap::new(3, states, a_n, phi)?),
        manifest: vec![("rare".into(), rare.to_string())],
        mdp,
    })
}

/// Smallest positive behavior occupancy `min d^μ_h(s, a)`.
pub fn min_positive_occupancy(mdp: &TabularMdp, behavior: &Policy) -> Result<f64> {
    let occ = occupancy(mdp, behavior)?;
    Ok(occ.d.iter().copied().filter(|&x| x > 0.0).fold(f64::INFINITY, f64::min))
}

/// First seed from `seed` whose random MDP (point-mass start) and random
/// behavior policy give `min d^μ_h(s, a) ≥ floor` over visited cells.
pub fn covered_random(seed: u64, states: usize, actions: usize, horizon: usize, floor: f64) -> Result<Fixture> {
    for k in 0..10_000u64 {
        let sd = derive_seed(seed, k);
        let mut mdp = random_mdp(sd, states, actions, horizon, 1.0);
        mdp.d1 = vec![0.0; states];
        mdp.d1[0] = 1.0;
        let behavior = random_policy(derive_seed(sd, 1), states, actions, horizon, 0.8);
        let target = random_policy(derive_seed(sd, 2), states, actions, horizon, 0.0);
        let dm = min_positive_occupancy(&mdp, &behavior)?;
        if dm >= floor {
            return Ok(Fixture {
                name: "covered-random".into(),
                mdp,
                behavior,
                target,
                features: None,
                manifest: vec![("seed".into(), sd.to_string()), ("d_m".into(), dm.to_string())],
            });
        }
    }
    Err(Error::InvalidArgument(format!("no seed reached d_m ≥ {floor}")))
}

/// Two states, two actions: action 0 stays put w.p. `stay`, action 1 moves
/// w.p. `stay`. Bernoulli rewards `0.8, 0.3` in state 0 and `0.1, 0.4` in
/// state 1; starts in state 0.
pub fn two_state(horizon: usize, stay: f64) -> Result<Fixture> {
    if !(0.0..=1.0).contains(&stay) {
        return Err(Error::InvalidArgument(format!("stay = {stay} outside [0, 1]")));
    }
    let q = 1.0 - stay;
    let p_layer = [stay, q, q, stay, q, stay, stay, q];
    let mdp = TabularMdp::homogeneous(2, 2, horizon, &p_layer, &[0.8, 0.3, 0.1, 0.4], vec![1.0, 0.0], RewardNoise::Bernoulli);
    let mut f = plain("two-state", mdp, vec![("stay".into(), stay.to_string())]);
    f.target = Policy::stationary(2, 2, horizon, &[1.0, 0.0, 0.0, 1.0]);
    Ok(f)
}

pub const FIXTURE_NAMES: &[&str] =
    &["ring", "fastmix", "det", "partial-det", "linear", "horizon", "gap-ladder", "safe-risky", "two-state", "random"];

fn param<T: std::str::FromStr>(params: &BTreeMap<String, String>, key: &str, default: T) -> Result<T> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|_| Error::InvalidArgument(format!("{key} = {v:?}"))),
    }
}

/// `a/b` or a decimal.
fn fraction(params: &BTreeMap<String, String>, key: &str, default: f64) -> Result<f64> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => {
            let parsed = match v.split_once('/') {
                Some((a, b)) => a.trim().parse::<f64>().ok().zip(b.trim().parse::<f64>().ok()).map(|(a, b)| a / b),
                None => v.parse().ok(),
            };
            parsed.ok_or_else(|| Error::InvalidArgument(format!("{key} = {v:?}")))
        }
    }
}

/// Uniform behavior and target for fixtures that carry no policies of their own.
fn plain(name: &str, mdp: TabularMdp, manifest: Vec<(String, String)>) -> Fixture {
    let (s, a, h) = (mdp.states, mdp.actions, mdp.horizon);
    Fixture { name: name.into(), behavior: Policy::uniform(s, a, h), target: Policy::uniform(s, a, h), features: None, manifest, mdp }
}

/// Build a fixture by name from `key=value` parameters.
pub fn build(name: &str, params: &BTreeMap<String, String>) -> Result<Fixture> {
    let seed: u64 = param(params, "seed", 0)?;
    let s: usize = param(params, "S", 3)?;
    let a: usize = param(params, "A", 2)?;
    let h: usize = param(params, "H", 5)?;
    match name {
        "ring" => {
            let n_states = param(params, "n_states", 5)?;
            let eta = fraction(params, "eta", 1.0 / 3.0)?;
            let ring = ring_mdp(n_states, eta, h)?;
            Ok(Fixture {
                name: name.into(),
                manifest: vec![("A_eta".into(), ring.a_eta.to_string()), ("eta".into(), eta.to_string())],
                mdp: ring.mdp,
                behavior: ring.behavior,
                target: ring.target,
                features: None,
            })
        }
        "fastmix" => Ok(plain(name, fastmix(seed, s, a, h), vec![])),
        "det" => Ok(plain(name, deterministic(seed, s, a, h), vec![])),
        "partial-det" => {
            let layer = param(params, "layer", h / 2)?;
            let twin: bool = param(params, "twin", false)?;
            let (stoch, det) = partially_deterministic(seed, s, a, h, layer)?;
            Ok(plain(name, if twin { det } else { stoch }, vec![("layer".into(), layer.to_string())]))
        }
        "linear" => {
            let d = param(params, "d", 4)?;
            let (mdp, features) = linear_mdp(seed, d, s, a, h)?;
            let mut f = plain(name, mdp, vec![("d".into(), d.to_string())]);
            f.target = random_policy(derive_seed(seed, 2), s, a, h, 0.0);
            f.features = Some(features);
            Ok(f)
        }
        "horizon" => Ok(horizon_fixture(h)),
        "gap-ladder" => gap_ladder(
            param(params, "S", 16)?,
            fraction(params, "gap_min", 1e-3)?,
            fraction(params, "gap_max", 0.5)?,
            fraction(params, "rare", 0.1)?,
        ),
        "safe-risky" => safe_risky(param(params, "S", 20)?, h, fraction(params, "rare", 0.1)?),
        "two-state" => two_state(param(params, "H", 2)?, fraction(params, "stay", 0.9)?),
        "random" => {
            let sigma = fraction(params, "sigma", 1.0)?;
            let mut f = plain(name, random_mdp(seed, s, a, h, sigma), vec![]);
            f.behavior = random_policy(derive_seed(seed, 1), s, a, h, 0.5);
            f.target = random_policy(derive_seed(seed, 2), s, a, h, 0.0);
            Ok(f)
        }
        other => Err(Error::InvalidArgument(format!("unknown fixture {other:?}; known: {}", FIXTURE_NAMES.join(", ")))),
    }
}
