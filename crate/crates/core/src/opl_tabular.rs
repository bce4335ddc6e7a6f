//! Pessimistic offline policy learning in tabular MDPs.

use std::fmt;
use std::str::FromStr;

use crate::data::{counts, CountTables, Dataset};
use crate::error::{Error, Result};
use crate::mdp::{occupancy, optimal_policy, policy_value, variance_under, Policy, RewardNoise, TabularMdp};

/// Empirical model with `P̂ = 1/S`, `r̂ = 0` on unvisited cells.
#[derive(Debug, Clone, PartialEq)]
pub struct PluginModel {
    pub horizon: usize,
    pub states: usize,
    pub actions: usize,
    pub p_hat: Vec<f64>,
    pub r_hat: Vec<f64>,
    pub counts: CountTables,
}

impl PluginModel {
    pub fn from_counts(c: CountTables) -> Self {
        let (s_n, a_n, h_n) = (c.states, c.actions, c.horizon);
        let mut p_hat = vec![0.0; h_n * s_n * a_n * s_n];
        let mut r_hat = vec![0.0; h_n * s_n * a_n];
        for h in 0..h_n {
            for s in 0..s_n {
                for a in 0..a_n {
                    let cell = c.cell(h, s, a);
                    let k = c.n_sa[cell];
                    let row = &mut p_hat[cell * s_n..(cell + 1) * s_n];
                    if k == 0 {
                        row.fill(1.0 / s_n as f64);
                    } else {
                        for (dst, &m) in row.iter_mut().zip(c.sas_row(h, s, a)) {
                            *dst = m as f64 / k as f64;
                        }
                        r_hat[cell] = (c.r_sum[cell] / k as f64).clamp(0.0, 1.0);
                    }
                }
            }
        }
        PluginModel { horizon: h_n, states: s_n, actions: a_n, p_hat, r_hat, counts: c }
    }

    #[inline]
    pub fn p_row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let i = ((h * self.states + s) * self.actions + a) * self.states;
        &self.p_hat[i..i + self.states]
    }

    /// The model as an MDP with deterministic rewards and the given start distribution.
    pub fn to_mdp(&self, d1: Vec<f64>) -> TabularMdp {
        TabularMdp {
            states: self.states,
            actions: self.actions,
            horizon: self.horizon,
            p: self.p_hat.clone(),
            r: self.r_hat.clone(),
            d1,
            noise: vec![RewardNoise::Deterministic; self.r_hat.len()],
        }
    }
}

pub fn plugin_model(dataset: &Dataset) -> PluginModel {
    PluginModel::from_counts(counts(dataset))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BonusStyle {
    /// `Γ ≡ 0`: plug-in greedy (ERM).
    None,
    Hoeffding,
    Bernstein,
}

impl fmt::Display for BonusStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BonusStyle::None => "none",
            BonusStyle::Hoeffding => "hoeffding",
            BonusStyle::Bernstein => "bernstein",
        })
    }
}

impl FromStr for BonusStyle {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "erm" => Ok(BonusStyle::None),
            "hoeffding" => Ok(BonusStyle::Hoeffding),
            "bernstein" => Ok(BonusStyle::Bernstein),
            _ => Err(Error::InvalidArgument(format!("unknown bonus style {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BonusConfig {
    pub style: BonusStyle,
    pub delta: f64,
    pub c_var: f64,
    pub c_range: f64,
    /// Overrides the default `ι = log(2HSA/δ)`.
    pub log_factor: Option<f64>,
}

impl BonusConfig {
    pub const DEFAULT_C_VAR: f64 = 2.0;
    pub const DEFAULT_C_RANGE: f64 = 2.0;

    pub fn new(style: BonusStyle, delta: f64) -> Self {
        BonusConfig { style, delta, c_var: Self::DEFAULT_C_VAR, c_range: Self::DEFAULT_C_RANGE, log_factor: None }
    }

    pub fn iota(&self, horizon: usize, states: usize, actions: usize) -> f64 {
        self.log_factor.unwrap_or_else(|| (2.0 * (horizon * states * actions) as f64 / self.delta).ln())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta = {} outside (0, 1)", self.delta)));
        }
        if !(self.c_var > 0.0 && self.c_range > 0.0) {
            return Err(Error::InvalidArgument("bonus constants must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedPolicyReport {
    /// Deterministic greedy policy.
    pub policy: Policy,
    /// Pessimistic values `[h * S + s]`, `h ∈ 0..=H`.
    pub v_hat: Vec<f64>,
    /// Pessimistic Q after bonus and clipping, `[(h * S + s) * A + a]`.
    pub q_hat: Vec<f64>,
    /// Bonus `Γ_h(s, a)`, same layout as `q_hat`.
    pub bonus: Vec<f64>,
    /// Log factor actually used.
    pub iota: f64,
    pub suboptimality: Option<f64>,
}

impl LearnedPolicyReport {
    pub fn v_layer(&self, h: usize) -> &[f64] {
        let s_n = self.policy.states;
        &self.v_hat[h * s_n..(h + 1) * s_n]
    }

    /// `h s a` rows of the deterministic policy.
    pub fn format_policy(&self) -> String {
        format_deterministic_policy(&self.policy)
    }
}

pub fn format_deterministic_policy(policy: &Policy) -> String {
    let table = policy.action_table().expect("learned policies are deterministic");
    let mut out = String::new();
    for h in 0..policy.horizon {
        for s in 0..policy.states {
            out.push_str(&format!("{h} {s} {}\n", table[h * policy.states + s]));
        }
    }
    out
}

/// Greedy argmax with lowest-index ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Backward pass `Q̂_h = clip(r̂ + P̂ V̂_{h+1} − Γ_h, 0, H − h)` with zero-based `h`.
pub fn pvi_from_model(model: &PluginModel, config: &BonusConfig) -> Result<LearnedPolicyReport> {
    config.validate()?;
    let (s_n, a_n, h_n) = (model.states, model.actions, model.horizon);
    let c = &model.counts;
    let iota = config.iota(h_n, s_n, a_n);
    let hf = h_n as f64;
    let mut v_hat = vec![0.0; (h_n + 1) * s_n];
    let mut q_hat = vec![0.0; h_n * s_n * a_n];
    let mut bonus = vec![0.0; h_n * s_n * a_n];
    let mut table = vec![0; h_n * s_n];
    for h in (0..h_n).rev() {
        let v_next: Vec<f64> = v_hat[(h + 1) * s_n..(h + 2) * s_n].to_vec();
        let cap = (h_n - h) as f64;
        for s in 0..s_n {
            for a in 0..a_n {
                let cell = c.cell(h, s, a);
                let k = c.n_sa[cell];
                let row = model.p_row(h, s, a);
                let mean = model.r_hat[cell] + row.iter().zip(&v_next).map(|(p, v)| p * v).sum::<f64>();
                let neff = k.max(1) as f64;
                let gamma = match config.style {
                    BonusStyle::None => 0.0,
                    BonusStyle::Hoeffding => config.c_range * hf * (iota / neff).sqrt(),
                    BonusStyle::Bernstein => {
                        let var = if k == 0 {
                            variance_under(row, &v_next)
                        } else {
                            let (m1, m2) = c.target_moments(h, s, a, &v_next);
                            let m1 = m1 / k as f64;
                            (m2 / k as f64 - m1 * m1).max(0.0)
                        };
                        config.c_var * (iota * var / neff).sqrt() + config.c_range * hf * iota / neff
                    }
                };
                bonus[cell] = gamma;
                q_hat[cell] = (mean - gamma).clamp(0.0, cap);
            }
            let a = argmax(&q_hat[c.cell(h, s, 0)..c.cell(h, s, 0) + a_n]);
            table[h * s_n + s] = a;
            v_hat[h * s_n + s] = q_hat[c.cell(h, s, a)];
        }
    }
    Ok(LearnedPolicyReport { policy: Policy::deterministic(s_n, a_n, h_n, &table), v_hat, q_hat, bonus, iota, suboptimality: None })
}

pub fn pvi(dataset: &Dataset, config: &BonusConfig) -> Result<LearnedPolicyReport> {
    pvi_from_model(&plugin_model(dataset), config)
}

/// Plug-in greedy policy (`Γ ≡ 0`).
pub fn erm_policy(dataset: &Dataset) -> Result<LearnedPolicyReport> {
    pvi(dataset, &BonusConfig::new(BonusStyle::None, 0.5))
}

/// `v* − v^{π̂}`
pub fn suboptimality(mdp: &TabularMdp, policy: &Policy) -> Result<f64> {
    let (_, vstar) = optimal_policy(mdp);
    Ok(vstar.value - policy_value(mdp, policy)?.value)
}

pub fn with_suboptimality(mdp: &TabularMdp, mut report: LearnedPolicyReport) -> Result<LearnedPolicyReport> {
    report.suboptimality = Some(suboptimality(mdp, &report.policy)?);
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct AugmentedMdp {
    /// `S + 1` states; the last one is the absorbing zero-reward state `s†`.
    pub mdp: TabularMdp,
    /// `Σ_{h=2}^{H+1} d^{†π*}_h(s†)` in one-based step notation.
    pub off_support_mass: f64,
    /// Redirected cells `(h, s, a)`.
    pub redirected: Vec<(usize, usize, usize)>,
}

/// Redirect every unvisited `(h, s, a)` to an absorbing zero-reward state.
pub fn augmented_mdp(mdp: &TabularMdp, dataset: &Dataset) -> Result<AugmentedMdp> {
    if (dataset.horizon, dataset.states, dataset.actions) != (mdp.horizon, mdp.states, mdp.actions) {
        return Err(Error::Dimension("dataset does not match the MDP's (H, S, A)".into()));
    }
    let c = counts(dataset);
    let (s_n, a_n, h_n) = (mdp.states, mdp.actions, mdp.horizon);
    let big = s_n + 1;
    let dag = s_n;
    let mut p = vec![0.0; h_n * big * a_n * big];
    let mut r = vec![0.0; h_n * big * a_n];
    let mut noise = vec![RewardNoise::Deterministic; h_n * big * a_n];
    let mut redirected = Vec::new();
    for h in 0..h_n {
        for s in 0..big {
            for a in 0..a_n {
                let cell = (h * big + s) * a_n + a;
                let row = &mut p[cell * big..(cell + 1) * big];
                if s == dag || c.sa(h, s, a) == 0 {
                    row[dag] = 1.0;
                    if s != dag {
                        redirected.push((h, s, a));
                    }
                } else {
                    row[..s_n].copy_from_slice(mdp.p_row(h, s, a));
                    r[cell] = mdp.reward(h, s, a);
                    noise[cell] = mdp.noise_at(h, s, a);
                }
            }
        }
    }
    let mut d1 = mdp.d1.clone();
    d1.push(0.0);
    let aug = TabularMdp { states: big, actions: a_n, horizon: h_n, p, r, d1, noise };

    let (pi_star, _) = optimal_policy(mdp);
    let mut table = pi_star.action_table().expect("optimal policy is deterministic");
    for h in (0..h_n).rev() {
        table.insert(h * s_n + s_n, 0);
    }
    let pi_aug = Policy::deterministic(big, a_n, h_n, &table);
    let occ = occupancy(&aug, &pi_aug)?;
    // Mass in s† after each step: layers 1..H−1 from the occupancy, then layer H.
    let mut mass = 0.0;
    for h in 1..h_n {
        mass += occ.state(h, dag);
    }
    let mut last = occ.state(h_n - 1, dag);
    for s in 0..s_n {
        for a in 0..a_n {
            if c.sa(h_n - 1, s, a) == 0 {
                last += occ.sa(h_n - 1, s, a);
            }
        }
    }
    mass += last;
    Ok(AugmentedMdp { mdp: aug, off_support_mass: mass, redirected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetMeta, Step};

    fn bandit_data(arms: &[(usize, f64)]) -> Dataset {
        let records: Vec<Step> = arms.iter().map(|&(a, r)| Step { s: 0, a, r, s_next: 0 }).collect();
        Dataset { n: records.len(), horizon: 1, states: 1, actions: 2, records, meta: DatasetMeta::default() }
    }

    #[test]
    fn unvisited_cell_convention() {
        let ds = bandit_data(&[(0, 1.0)]);
        let m = plugin_model(&ds);
        assert_eq!(m.r_hat, vec![1.0, 0.0]);
        assert_eq!(m.p_row(0, 0, 1), &[1.0]);
    }

    #[test]
    fn pessimism_prefers_observed_arm() {
        let ds = bandit_data(&vec![(1, 1.0); 4000]);
        let rep = pvi(&ds, &BonusConfig::new(BonusStyle::Bernstein, 0.1)).unwrap();
        assert!(rep.q_hat[1] > 0.0);
        assert_eq!(rep.policy.action_table().unwrap(), vec![1]);
    }

    #[test]
    fn erm_chases_lucky_arm() {
        // Arm 0: 1000 pulls, mean 0.6. Arm 1: 2 pulls, both 1.
        let mut arms: Vec<(usize, f64)> = (0..1000).map(|i| (0, if i % 5 < 3 { 1.0 } else { 0.0 })).collect();
        arms.extend([(1, 1.0), (1, 1.0)]);
        let ds = bandit_data(&arms);
        assert_eq!(erm_policy(&ds).unwrap().policy.action_table().unwrap(), vec![1]);
        let lcb = pvi(&ds, &BonusConfig::new(BonusStyle::Bernstein, 0.1)).unwrap();
        assert_eq!(lcb.policy.action_table().unwrap(), vec![0]);
    }

    #[test]
    fn empty_dataset_gives_tie_policy() {
        let ds = Dataset::empty(3, 2, 2);
        let rep = erm_policy(&ds).unwrap();
        assert!(rep.policy.action_table().unwrap().iter().all(|&a| a == 0));
        assert!(rep.v_hat.iter().all(|&v| v == 0.0));
    }
}
