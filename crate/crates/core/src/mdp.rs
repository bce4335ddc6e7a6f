//! Finite-horizon tabular MDPs, policies and exact dynamic-programming oracles.
//!
//! Steps are zero-based throughout the crate: layer `h` in code is step `h + 1`
//! in the usual one-based notation, so the clipping range `[0, H − h + 1]` for
//! one-based `h` becomes `[0, H − h]` here.

use std::fmt;

use rand::Rng;

use crate::error::{Cell, Error, Result};
use crate::util::{derive_seed, substream, Fnv64};

/// Input probabilities must sum to one within this tolerance.
pub const PROB_TOL: f64 = 1e-12;
/// Enumeration cap for exact policy enumeration oracles.
pub const ENUMERATION_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardNoise {
    Deterministic,
    Bernoulli,
}

impl RewardNoise {
    pub fn variance(self, mean: f64) -> f64 {
        match self {
            RewardNoise::Deterministic => 0.0,
            RewardNoise::Bernoulli => mean * (1.0 - mean),
        }
    }

    pub fn second_moment(self, mean: f64) -> f64 {
        match self {
            RewardNoise::Deterministic => mean * mean,
            RewardNoise::Bernoulli => mean,
        }
    }
}

/// Time-inhomogeneous finite-horizon MDP stored in flat row-major tables.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    /// `p[((h * S + s) * A + a) * S + s']`
    pub p: Vec<f64>,
    /// `r[(h * S + s) * A + a]`, mean reward in `[0, 1]`.
    pub r: Vec<f64>,
    pub d1: Vec<f64>,
    /// Noise law per `(h, s, a)` cell, same layout as `r`.
    pub noise: Vec<RewardNoise>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    Shape(String),
    RowSum(Cell),
    NegativeProbability { cell: Cell, next: usize },
    RewardRange(Cell),
    InitialSum,
    NegativeInitial(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Offending value (row sum, probability or reward).
    pub magnitude: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ViolationKind::Shape(m) => write!(f, "shape: {m}"),
            ViolationKind::RowSum((h, s, a)) => {
                write!(f, "P row (h={h}, s={s}, a={a}) sums to {}", self.magnitude)
            }
            ViolationKind::NegativeProbability { cell: (h, s, a), next } => {
                write!(f, "P(h={h}, s={s}, a={a}, s'={next}) = {} is negative", self.magnitude)
            }
            ViolationKind::RewardRange((h, s, a)) => {
                write!(f, "r(h={h}, s={s}, a={a}) = {} outside [0, 1]", self.magnitude)
            }
            ViolationKind::InitialSum => write!(f, "d1 sums to {}", self.magnitude),
            ViolationKind::NegativeInitial(s) => write!(f, "d1[{s}] = {} is negative", self.magnitude),
        }
    }
}

impl TabularMdp {
    /// Time-homogeneous MDP: one layer of transitions and rewards repeated `horizon` times.
    pub fn homogeneous(
        states: usize,
        actions: usize,
        horizon: usize,
        p_layer: &[f64],
        r_layer: &[f64],
        d1: Vec<f64>,
        noise: RewardNoise,
    ) -> Self {
        let p = (0..horizon).flat_map(|_| p_layer.iter().copied()).collect();
        let r = (0..horizon).flat_map(|_| r_layer.iter().copied()).collect();
        TabularMdp { states, actions, horizon, p, r, d1, noise: vec![noise; horizon * states * actions] }
    }

    #[inline]
    pub fn cell(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.states + s) * self.actions + a
    }

    #[inline]
    pub fn p_row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let i = self.cell(h, s, a) * self.states;
        &self.p[i..i + self.states]
    }

    #[inline]
    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.r[self.cell(h, s, a)]
    }

    #[inline]
    pub fn noise_at(&self, h: usize, s: usize, a: usize) -> RewardNoise {
        self.noise[self.cell(h, s, a)]
    }

    pub fn reward_variance(&self, h: usize, s: usize, a: usize) -> f64 {
        self.noise_at(h, s, a).variance(self.reward(h, s, a))
    }

    /// `r_h(s,a) + Σ_{s'} P_h(s'|s,a) v_next(s')`.
    pub fn backup(&self, h: usize, s: usize, a: usize, v_next: &[f64]) -> f64 {
        self.reward(h, s, a) + dot(self.p_row(h, s, a), v_next)
    }

    /// `Var[r_h + v_next(s') | s, a]`, reward noise independent of the next state.
    pub fn conditional_variance(&self, h: usize, s: usize, a: usize, v_next: &[f64]) -> f64 {
        self.reward_variance(h, s, a) + variance_under(self.p_row(h, s, a), v_next)
    }

    pub fn is_deterministic(&self) -> bool {
        self.p.iter().all(|&x| x == 0.0 || x == 1.0)
            && self.d1.iter().all(|&x| x == 0.0 || x == 1.0)
            && self.noise.iter().zip(&self.r).all(|(n, &r)| *n == RewardNoise::Deterministic || r == 0.0 || r == 1.0)
    }

    pub fn hash(&self) -> u64 {
        let mut h = Fnv64::default();
        h.u64(self.states as u64).u64(self.actions as u64).u64(self.horizon as u64);
        for &x in self.d1.iter().chain(&self.p).chain(&self.r) {
            h.f64(x);
        }
        for n in &self.noise {
            h.u64(matches!(n, RewardNoise::Bernoulli) as u64);
        }
        h.finish()
    }

    pub fn check_policy(&self, policy: &Policy) -> Result<()> {
        if policy.states != self.states || policy.actions != self.actions || policy.horizon != self.horizon {
            return Err(Error::Dimension(format!(
                "policy is (H={}, S={}, A={}) but MDP is (H={}, S={}, A={})",
                policy.horizon, policy.states, policy.actions, self.horizon, self.states, self.actions
            )));
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Variance of `values` under the probability row `probs`, computed about the mean.
pub fn variance_under(probs: &[f64], values: &[f64]) -> f64 {
    let m = dot(probs, values);
    probs.iter().zip(values).map(|(p, v)| p * (v - m) * (v - m)).sum()
}

/// Validation never aborts; an empty list means every invariant holds.
pub fn validate_mdp(mdp: &TabularMdp) -> Vec<Violation> {
    let (s_n, a_n, h_n) = (mdp.states, mdp.actions, mdp.horizon);
    let mut out = Vec::new();
    let shape = |m: String| Violation { kind: ViolationKind::Shape(m), magnitude: f64::NAN };
    if s_n == 0 || a_n == 0 || h_n == 0 {
        out.push(shape(format!("S={s_n}, A={a_n}, H={h_n} must all be ≥ 1")));
        return out;
    }
    let cells = h_n * s_n * a_n;
    if mdp.p.len() != cells * s_n {
        out.push(shape(format!("P has {} entries, expected {}", mdp.p.len(), cells * s_n)));
    }
    if mdp.r.len() != cells {
        out.push(shape(format!("r has {} entries, expected {cells}", mdp.r.len())));
    }
    if mdp.noise.len() != cells {
        out.push(shape(format!("reward_noise has {} entries, expected {cells}", mdp.noise.len())));
    }
    if mdp.d1.len() != s_n {
        out.push(shape(format!("d1 has {} entries, expected {s_n}", mdp.d1.len())));
    }
    if !out.is_empty() {
        return out;
    }
    for h in 0..h_n {
        for s in 0..s_n {
            for a in 0..a_n {
                let row = mdp.p_row(h, s, a);
                for (next, &x) in row.iter().enumerate() {
                    if x < 0.0 || !x.is_finite() {
                        out.push(Violation { kind: ViolationKind::NegativeProbability { cell: (h, s, a), next }, magnitude: x });
                    }
                }
                let sum: f64 = row.iter().sum();
                if !((sum - 1.0).abs() <= PROB_TOL) {
                    out.push(Violation { kind: ViolationKind::RowSum((h, s, a)), magnitude: sum });
                }
                let r = mdp.reward(h, s, a);
                if !(0.0..=1.0).contains(&r) {
                    out.push(Violation { kind: ViolationKind::RewardRange((h, s, a)), magnitude: r });
                }
            }
        }
    }
    for (s, &x) in mdp.d1.iter().enumerate() {
        if x < 0.0 || !x.is_finite() {
            out.push(Violation { kind: ViolationKind::NegativeInitial(s), magnitude: x });
        }
    }
    let sum: f64 = mdp.d1.iter().sum();
    if !((sum - 1.0).abs() <= PROB_TOL) {
        out.push(Violation { kind: ViolationKind::InitialSum, magnitude: sum });
    }
    out
}

/// Step-indexed stochastic policy `π_h(a|s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub horizon: usize,
    pub states: usize,
    pub actions: usize,
    /// `probs[(h * S + s) * A + a]`
    pub probs: Vec<f64>,
}

impl Policy {
    pub fn uniform(states: usize, actions: usize, horizon: usize) -> Self {
        Policy { horizon, states, actions, probs: vec![1.0 / actions as f64; horizon * states * actions] }
    }

    /// Deterministic policy from an action table laid out as `[h * S + s]`.
    pub fn deterministic(states: usize, actions: usize, horizon: usize, table: &[usize]) -> Self {
        assert_eq!(table.len(), horizon * states);
        let mut probs = vec![0.0; horizon * states * actions];
        for (i, &a) in table.iter().enumerate() {
            assert!(a < actions, "action {a} out of range");
            probs[i * actions + a] = 1.0;
        }
        Policy { horizon, states, actions, probs }
    }

    /// The same per-state action distribution at every step.
    pub fn stationary(states: usize, actions: usize, horizon: usize, per_state: &[f64]) -> Self {
        assert_eq!(per_state.len(), states * actions);
        Policy { horizon, states, actions, probs: (0..horizon).flat_map(|_| per_state.iter().copied()).collect() }
    }

    #[inline]
    pub fn row(&self, h: usize, s: usize) -> &[f64] {
        let i = (h * self.states + s) * self.actions;
        &self.probs[i..i + self.actions]
    }

    #[inline]
    pub fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        self.probs[(h * self.states + s) * self.actions + a]
    }

    /// Action table if every row is a point mass.
    pub fn action_table(&self) -> Option<Vec<usize>> {
        (0..self.horizon * self.states)
            .map(|i| {
                let row = &self.probs[i * self.actions..(i + 1) * self.actions];
                let a = row.iter().position(|&p| p == 1.0)?;
                row.iter().enumerate().all(|(b, &p)| b == a || p == 0.0).then_some(a)
            })
            .collect()
    }

    pub fn is_deterministic(&self) -> bool {
        self.action_table().is_some()
    }

    /// Row-sum and sign violations, as `(h, s, row sum)`.
    pub fn violations(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for h in 0..self.horizon {
            for s in 0..self.states {
                let row = self.row(h, s);
                let sum: f64 = row.iter().sum();
                if row.iter().any(|&p| p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > PROB_TOL {
                    out.push((h, s, sum));
                }
            }
        }
        out
    }

    pub fn hash(&self) -> u64 {
        let mut h = Fnv64::default();
        h.u64(self.states as u64).u64(self.actions as u64).u64(self.horizon as u64);
        for &x in &self.probs {
            h.f64(x);
        }
        h.finish()
    }
}

/// Deterministic policy number `index` in mixed-radix order over the `(h, s)` table.
pub fn deterministic_policy_at(index: usize, states: usize, actions: usize, horizon: usize) -> Policy {
    let mut table = vec![0; horizon * states];
    let mut rest = index;
    for slot in table.iter_mut() {
        *slot = rest % actions;
        rest /= actions;
    }
    Policy::deterministic(states, actions, horizon, &table)
}

/// `A^{S·H}` as a float so overflow is harmless.
pub fn deterministic_policy_count(states: usize, actions: usize, horizon: usize) -> f64 {
    (actions as f64).powf((states * horizon) as f64)
}

pub fn enumerate_deterministic_policies(states: usize, actions: usize, horizon: usize, cap: usize) -> Result<Vec<Policy>> {
    let count = deterministic_policy_count(states, actions, horizon);
    if count > cap as f64 {
        return Err(Error::PolicyCap { count, cap });
    }
    Ok((0..count as usize).map(|i| deterministic_policy_at(i, states, actions, horizon)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    pub horizon: usize,
    pub states: usize,
    pub actions: usize,
    /// `v[h * S + s]` for `h ∈ 0..=H`; the final layer is identically zero.
    pub v: Vec<f64>,
    /// `q[(h * S + s) * A + a]`
    pub q: Vec<f64>,
    /// `Σ_s d1(s) V_0(s)`
    pub value: f64,
}

impl ValueTables {
    #[inline]
    pub fn v_at(&self, h: usize, s: usize) -> f64 {
        self.v[h * self.states + s]
    }

    #[inline]
    pub fn v_layer(&self, h: usize) -> &[f64] {
        &self.v[h * self.states..(h + 1) * self.states]
    }

    #[inline]
    pub fn q_at(&self, h: usize, s: usize, a: usize) -> f64 {
        self.q[(h * self.states + s) * self.actions + a]
    }
}

pub fn policy_value(mdp: &TabularMdp, policy: &Policy) -> Result<ValueTables> {
    mdp.check_policy(policy)?;
    let (s_n, a_n, h_n) = (mdp.states, mdp.actions, mdp.horizon);
    let mut v = vec![0.0; (h_n + 1) * s_n];
    let mut q = vec![0.0; h_n * s_n * a_n];
    for h in (0..h_n).rev() {
        let (cur, next) = v.split_at_mut((h + 1) * s_n);
        let next = &next[..s_n];
        for s in 0..s_n {
            let mut vs = 0.0;
            for a in 0..a_n {
                let qa = mdp.backup(h, s, a, next);
                q[mdp.cell(h, s, a)] = qa;
                vs += policy.prob(h, s, a) * qa;
            }
            cur[h * s_n + s] = vs;
        }
    }
    let value = dot(&mdp.d1, &v[..s_n]);
    Ok(ValueTables { horizon: h_n, states: s_n, actions: a_n, v, q, value })
}

/// Greedy backward induction; ties go to the lowest action index.
pub fn optimal_policy(mdp: &TabularMdp) -> (Policy, ValueTables) {
    let (s_n, a_n, h_n) = (mdp.states, mdp.actions, mdp.horizon);
    let mut v = vec![0.0; (h_n + 1) * s_n];
    let mut q = vec![0.0; h_n * s_n * a_n];
    let mut table = vec![0; h_n * s_n];
    for h in (0..h_n).rev() {
        let (cur, next) = v.split_at_mut((h + 1) * s_n);
        let next = &next[..s_n];
        for s in 0..s_n {
            let mut best = f64::NEG_INFINITY;
            for a in 0..a_n {
                let qa = mdp.backup(h, s, a, next);
                q[mdp.cell(h, s, a)] = qa;
                if qa > best {
                    best = qa;
                    table[h * s_n + s] = a;
                }
            }
            cur[h * s_n + s] = best;
        }
    }
    let value = dot(&mdp.d1, &v[..s_n]);
    (Policy::deterministic(s_n, a_n, h_n, &table), ValueTables { horizon: h_n, states: s_n, actions: a_n, v, q, value })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyTables {
    pub horizon: usize,
    pub states: usize,
    pub actions: usize,
    /// `d[(h * S + s) * A + a]`
    pub d: Vec<f64>,
    /// `d_state[h * S + s]`
    pub d_state: Vec<f64>,
}

impl OccupancyTables {
    #[inline]
    pub fn sa(&self, h: usize, s: usize, a: usize) -> f64 {
        self.d[(h * self.states + s) * self.actions + a]
    }

    #[inline]
    pub fn state(&self, h: usize, s: usize) -> f64 {
        self.d_state[h * self.states + s]
    }
}

pub fn occupancy(mdp: &TabularMdp, policy: &Policy) -> Result<OccupancyTables> {
    mdp.check_policy(policy)?;
    let (s_n, a_n, h_n) = (mdp.states, mdp.actions, mdp.horizon);
    let mut d = vec![0.0; h_n * s_n * a_n];
    let mut d_state = vec![0.0; h_n * s_n];
    d_state[..s_n].copy_from_slice(&mdp.d1);
    for h in 0..h_n {
        let mut next = vec![0.0; s_n];
        for s in 0..s_n {
            let ds = d_state[h * s_n + s];
            for a in 0..a_n {
                let m = ds * policy.prob(h, s, a);
                d[mdp.cell(h, s, a)] = m;
                if m != 0.0 && h + 1 < h_n {
                    for (n, &p) in next.iter_mut().zip(mdp.p_row(h, s, a)) {
                        *n += m * p;
                    }
                }
            }
        }
        if h + 1 < h_n {
            d_state[(h + 1) * s_n..(h + 2) * s_n].copy_from_slice(&next);
        }
    }
    Ok(OccupancyTables { horizon: h_n, states: s_n, actions: a_n, d, d_state })
}

/// Exact return variance and its per-step decomposition.
///
/// `total = initial + Σ_h (aleatoric[h] + mismatch[h])`, where `initial` is
/// `Var_{d1}[V_0(s_0)]` (zero for a point-mass initial distribution).
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnVariance {
    pub total: f64,
    pub initial: f64,
    /// `E_π[Var[V_{h+1}(s') + r_h | s_h, a_h]]`
    pub aleatoric: Vec<f64>,
    /// `E_π[Var_{a∼π}[Q_h(s_h, a)]]`
    pub mismatch: Vec<f64>,
}

impl ReturnVariance {
    pub fn decomposition_sum(&self) -> f64 {
        self.initial + self.aleatoric.iter().sum::<f64>() + self.mismatch.iter().sum::<f64>()
    }
}

pub fn return_variance(mdp: &TabularMdp, policy: &Policy) -> Result<ReturnVariance> {
    let vt = policy_value(mdp, policy)?;
    let occ = occupancy(mdp, policy)?;
    let (s_n, a_n, h_n) = (mdp.states, mdp.actions, mdp.horizon);

    // Second moments W_h(s) = E[(Σ_{t≥h} r_t)² | s_h = s].
    let mut w = vec![0.0; s_n];
    for h in (0..h_n).rev() {
        let v_next = vt.v_layer(h + 1);
        let mut w_cur = vec![0.0; s_n];
        for (s, slot) in w_cur.iter_mut().enumerate() {
            for a in 0..a_n {
                let pa = policy.prob(h, s, a);
                if pa == 0.0 {
                    continue;
                }
                let row = mdp.p_row(h, s, a);
                let r = mdp.reward(h, s, a);
                let m2 = mdp.noise_at(h, s, a).second_moment(r) + 2.0 * r * dot(row, v_next) + dot(row, &w);
                *slot += pa * m2;
            }
        }
        w = w_cur;
    }
    let total = dot(&mdp.d1, &w) - vt.value * vt.value;

    let v0 = vt.v_layer(0);
    let initial = variance_under(&mdp.d1, v0);
    let mut aleatoric = vec![0.0; h_n];
    let mut mismatch = vec![0.0; h_n];
    for h in 0..h_n {
        let v_next = vt.v_layer(h + 1);
        for s in 0..s_n {
            let ds = occ.state(h, s);
            if ds == 0.0 {
                continue;
            }
            let vs = vt.v_at(h, s);
            for a in 0..a_n {
                let dsa = occ.sa(h, s, a);
                if dsa == 0.0 {
                    continue;
                }
                aleatoric[h] += dsa * mdp.conditional_variance(h, s, a, v_next);
                let dq = vt.q_at(h, s, a) - vs;
                mismatch[h] += dsa * dq * dq;
            }
        }
    }
    Ok(ReturnVariance { total, initial, aleatoric, mismatch })
}

/// `Σ_h E_μ[(d^π_h/d^μ_h)² Var[V^π_{h+1} + r_h | s_h, a_h]]`, the n·Var floor for unbiased OPE.
pub fn cr_lower_bound(mdp: &TabularMdp, target: &Policy, behavior: &Policy) -> Result<f64> {
    let vt = policy_value(mdp, target)?;
    let dp = occupancy(mdp, target)?;
    let dm = occupancy(mdp, behavior)?;
    let mut bad = Vec::new();
    let mut total = 0.0;
    for h in 0..mdp.horizon {
        let v_next = vt.v_layer(h + 1);
        for s in 0..mdp.states {
            for a in 0..mdp.actions {
                let (p, m) = (dp.sa(h, s, a), dm.sa(h, s, a));
                if p == 0.0 {
                    continue;
                }
                if m == 0.0 {
                    bad.push((h, s, a));
                    continue;
                }
                total += p * p / m * mdp.conditional_variance(h, s, a, v_next);
            }
        }
    }
    if !bad.is_empty() {
        return Err(Error::UnsupportedStateActions(bad));
    }
    Ok(total)
}

/// Main term of the instance-dependent suboptimality bound for pessimistic value iteration.
pub fn intrinsic_bound(mdp: &TabularMdp, behavior: &Policy, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("intrinsic_bound needs n ≥ 1".into()));
    }
    let (pi_star, v_star) = optimal_policy(mdp);
    let d_star = occupancy(mdp, &pi_star)?;
    let dm = occupancy(mdp, behavior)?;
    let mut total = 0.0;
    for h in 0..mdp.horizon {
        let v_next = v_star.v_layer(h + 1);
        for s in 0..mdp.states {
            for a in 0..mdp.actions {
                let (p, m) = (d_star.sa(h, s, a), dm.sa(h, s, a));
                if p == 0.0 || m == 0.0 {
                    continue;
                }
                let var = mdp.conditional_variance(h, s, a, v_next);
                total += p * (var / (n as f64 * m)).sqrt();
            }
        }
    }
    Ok(total)
}

/// States reachable at each step under some action sequence: `reach[h * S + s]`.
pub fn reachable_states(mdp: &TabularMdp) -> Vec<bool> {
    let (s_n, a_n, h_n) = (mdp.states, mdp.actions, mdp.horizon);
    let mut reach = vec![false; h_n * s_n];
    for s in 0..s_n {
        reach[s] = mdp.d1[s] > 0.0;
    }
    for h in 0..h_n.saturating_sub(1) {
        for s in 0..s_n {
            if !reach[h * s_n + s] {
                continue;
            }
            for a in 0..a_n {
                for (s2, &p) in mdp.p_row(h, s, a).iter().enumerate() {
                    if p > 0.0 {
                        reach[(h + 1) * s_n + s2] = true;
                    }
                }
            }
        }
    }
    reach
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageDiagnostics {
    pub d_m_state: f64,
    pub d_m_sa: f64,
    pub tau_s: f64,
    pub tau_a: f64,
    /// Max state-action occupancy ratio of the comparator (`target`) over its own support.
    pub c_star: f64,
    pub c_mu: f64,
    /// False when `c_mu` is a lower bound from sampled policies.
    pub c_mu_exact: bool,
}

fn max_sa_ratio(num: &OccupancyTables, den: &OccupancyTables) -> f64 {
    num.d.iter().zip(&den.d).filter(|(&p, _)| p > 0.0).map(|(&p, &m)| if m > 0.0 { p / m } else { f64::INFINITY }).fold(0.0, f64::max)
}

pub fn coverage_diagnostics(mdp: &TabularMdp, target: &Policy, behavior: &Policy) -> Result<CoverageDiagnostics> {
    let (s_n, a_n, h_n) = (mdp.states, mdp.actions, mdp.horizon);
    let reach = reachable_states(mdp);
    let dp = occupancy(mdp, target)?;
    let dm = occupancy(mdp, behavior)?;

    let mut d_m_state = f64::INFINITY;
    let mut d_m_sa = f64::INFINITY;
    let mut tau_s: f64 = 0.0;
    let mut tau_a: f64 = 0.0;
    for h in 0..h_n {
        for s in 0..s_n {
            if !reach[h * s_n + s] {
                continue;
            }
            d_m_state = d_m_state.min(dm.state(h, s));
            let ps = dp.state(h, s);
            if ps > 0.0 {
                let ms = dm.state(h, s);
                tau_s = tau_s.max(if ms > 0.0 { ps / ms } else { f64::INFINITY });
            }
            for a in 0..a_n {
                d_m_sa = d_m_sa.min(dm.sa(h, s, a));
                let (pa, ma) = (target.prob(h, s, a), behavior.prob(h, s, a));
                if pa > 0.0 {
                    tau_a = tau_a.max(if ma > 0.0 { pa / ma } else { f64::INFINITY });
                }
            }
        }
    }
    let c_star = max_sa_ratio(&dp, &dm);

    let count = deterministic_policy_count(s_n, a_n, h_n);
    let exact = count <= ENUMERATION_CAP as f64;
    let mut c_mu: f64 = 0.0;
    if exact {
        for i in 0..count as usize {
            let pol = deterministic_policy_at(i, s_n, a_n, h_n);
            c_mu = c_mu.max(max_sa_ratio(&occupancy(mdp, &pol)?, &dm));
        }
    } else {
        let mut rng = substream(derive_seed(mdp.hash(), 0xC0FE), 0);
        for _ in 0..ENUMERATION_CAP {
            let table: Vec<usize> = (0..h_n * s_n).map(|_| rng.gen_range(0..a_n)).collect();
            let pol = Policy::deterministic(s_n, a_n, h_n, &table);
            c_mu = c_mu.max(max_sa_ratio(&occupancy(mdp, &pol)?, &dm));
        }
    }
    Ok(CoverageDiagnostics { d_m_state, d_m_sa, tau_s, tau_a, c_star, c_mu, c_mu_exact: exact })
}

/// Where the ring fixture pays reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RingReward {
    /// Reward 1 in `state` at the last step only.
    FinalStep { state: usize },
    /// Reward 1 in `state` at every step.
    EveryStep { state: usize },
}

impl Default for RingReward {
    fn default() -> Self {
        RingReward::FinalStep { state: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct RingFixture {
    pub mdp: TabularMdp,
    pub behavior: Policy,
    pub target: Policy,
    pub a_eta: f64,
}

/// `(η³ + (1 − η)³) / ((1 − η) η)`, the per-step second moment of the ring importance ratio.
pub fn ring_a_eta(eta: f64) -> f64 {
    (eta.powi(3) + (1.0 - eta).powi(3)) / ((1.0 - eta) * eta)
}

pub fn ring_mdp(n_states: usize, eta: f64, horizon: usize) -> Result<RingFixture> {
    ring_mdp_with(n_states, eta, horizon, RingReward::default())
}

/// Ring of `n_states` cells; action 0 moves left, action 1 moves right. Start in state 0.
pub fn ring_mdp_with(n_states: usize, eta: f64, horizon: usize, reward: RingReward) -> Result<RingFixture> {
    if n_states == 0 || n_states.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("ring needs an odd state count, got {n_states}")));
    }
    if !(eta > 0.0 && eta < 1.0) || eta == 0.5 {
        return Err(Error::InvalidArgument(format!("ring needs 0 < eta < 1, eta ≠ 1/2, got {eta}")));
    }
    if horizon == 0 {
        return Err(Error::InvalidArgument("ring needs H ≥ 1".into()));
    }
    let (s_n, a_n) = (n_states, 2);
    let mut p = vec![0.0; horizon * s_n * a_n * s_n];
    let mut r = vec![0.0; horizon * s_n * a_n];
    for h in 0..horizon {
        for s in 0..s_n {
            let left = (s + s_n - 1) % s_n;
            let right = (s + 1) % s_n;
            p[((h * s_n + s) * a_n) * s_n + left] += 1.0;
            p[((h * s_n + s) * a_n + 1) * s_n + right] += 1.0;
            let paid = match reward {
                RingReward::FinalStep { state } => h + 1 == horizon && s == state,
                RingReward::EveryStep { state } => s == state,
            };
            if paid {
                r[(h * s_n + s) * a_n] = 1.0;
                r[(h * s_n + s) * a_n + 1] = 1.0;
            }
        }
    }
    let mut d1 = vec![0.0; s_n];
    d1[0] = 1.0;
    let mdp = TabularMdp { states: s_n, actions: a_n, horizon, p, r, d1, noise: vec![RewardNoise::Deterministic; horizon * s_n * a_n] };
    let target = Policy::stationary(s_n, a_n, horizon, &[eta, 1.0 - eta].repeat(s_n));
    let behavior = Policy::stationary(s_n, a_n, horizon, &[1.0 - eta, eta].repeat(s_n));
    Ok(RingFixture { mdp, behavior, target, a_eta: ring_a_eta(eta) })
}

fn random_simplex<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let sum: f64 = w.iter().sum();
    w.into_iter().map(|x| x / sum).collect()
}

/// Seeded random MDP mixing a deterministic kernel with a sampled one.
///
/// Each transition row is `(1 − σ)·δ_j + σ·w` with `w` a flat-Dirichlet draw;
/// mean rewards are `(1 − σ)·b + σ·u` with `b ∈ {0, 1}`, `u ∈ [0, 1]`, and
/// Bernoulli noise whenever `σ > 0`. The initial distribution mixes the same way.
pub fn random_mdp(seed: u64, states: usize, actions: usize, horizon: usize, stochasticity: f64) -> TabularMdp {
    let sigma = stochasticity.clamp(0.0, 1.0);
    let mut rng = substream(seed, 0);
    let (s_n, a_n) = (states, actions);
    let mut p = Vec::with_capacity(horizon * s_n * a_n * s_n);
    let mut r = Vec::with_capacity(horizon * s_n * a_n);
    for _ in 0..horizon * s_n * a_n {
        let j = rng.gen_range(0..s_n);
        let w = random_simplex(&mut rng, s_n);
        for (k, wk) in w.iter().enumerate() {
            let det = if k == j { 1.0 } else { 0.0 };
            p.push((1.0 - sigma) * det + sigma * wk);
        }
        let b = if rng.gen::<bool>() { 1.0 } else { 0.0 };
        let u: f64 = rng.gen();
        r.push(((1.0 - sigma) * b + sigma * u).clamp(0.0, 1.0));
    }
    let j = rng.gen_range(0..s_n);
    let w = random_simplex(&mut rng, s_n);
    let d1 = w.iter().enumerate().map(|(k, wk)| (1.0 - sigma) * if k == j { 1.0 } else { 0.0 } + sigma * wk).collect();
    let noise = if sigma > 0.0 { RewardNoise::Bernoulli } else { RewardNoise::Deterministic };
    TabularMdp { states: s_n, actions: a_n, horizon, p, r, d1, noise: vec![noise; horizon * s_n * a_n] }
}

/// Seeded random stochastic policy with every action probability at least `floor / A`.
pub fn random_policy(seed: u64, states: usize, actions: usize, horizon: usize, floor: f64) -> Policy {
    let mut rng = substream(seed, 1);
    let mut probs = Vec::with_capacity(horizon * states * actions);
    for _ in 0..horizon * states {
        let w = random_simplex(&mut rng, actions);
        probs.extend(w.iter().map(|x| floor / actions as f64 + (1.0 - floor) * x));
    }
    Policy { horizon, states, actions, probs }
}

/// Homogeneous MDP over `H·S` states `(h, s) ↦ h·S + s` reproducing a time-inhomogeneous one.
///
/// Step-`h` transitions land in layer `h + 1`; the last layer wraps to layer 0,
/// which is never visited within the horizon.
pub fn time_augmented(mdp: &TabularMdp) -> TabularMdp {
    let (s_n, a_n, h_n) = (mdp.states, mdp.actions, mdp.horizon);
    let big = h_n * s_n;
    let mut p_layer = vec![0.0; big * a_n * big];
    let mut r_layer = vec![0.0; big * a_n];
    let mut noise = vec![RewardNoise::Deterministic; big * a_n];
    for h in 0..h_n {
        let next_layer = if h + 1 < h_n { h + 1 } else { 0 };
        for s in 0..s_n {
            let x = h * s_n + s;
            for a in 0..a_n {
                r_layer[x * a_n + a] = mdp.reward(h, s, a);
                noise[x * a_n + a] = mdp.noise_at(h, s, a);
                for (s2, &pr) in mdp.p_row(h, s, a).iter().enumerate() {
                    p_layer[(x * a_n + a) * big + next_layer * s_n + s2] = pr;
                }
            }
        }
    }
    let mut d1 = vec![0.0; big];
    d1[..s_n].copy_from_slice(&mdp.d1);
    let mut out = TabularMdp::homogeneous(big, a_n, h_n, &p_layer, &r_layer, d1, RewardNoise::Deterministic);
    out.noise = (0..h_n).flat_map(|_| noise.iter().copied()).collect();
    out
}

/// Policy on the time-augmented state space: layer-`h` states follow `π_h` at every step.
pub fn time_augmented_policy(policy: &Policy) -> Policy {
    let (s_n, a_n, h_n) = (policy.states, policy.actions, policy.horizon);
    let mut per_state = Vec::with_capacity(h_n * s_n * a_n);
    for h in 0..h_n {
        for s in 0..s_n {
            per_state.extend_from_slice(policy.row(h, s));
        }
    }
    Policy::stationary(h_n * s_n, a_n, h_n, &per_state)
}
