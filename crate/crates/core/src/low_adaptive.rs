//! Low-adaptive online exploration: APEVE-style policy elimination and the
//! reward-free LARFE variant, with switch/batch accounting.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{counts, CountTables, Dataset, DatasetMeta, Step};
use crate::error::{Error, Result};
use crate::mdp::{
    deterministic_policy_at, deterministic_policy_count, occupancy, optimal_policy, policy_value, Policy, RewardNoise, TabularMdp,
};
use crate::ope_tabular::tmis_estimate;
use crate::opl_tabular::PluginModel;
use crate::util::{derive_seed, mean, sample_index, sample_variance, substream};

/// Sampling-only access to an episodic environment.
pub trait Environment {
    fn states(&self) -> usize;
    fn actions(&self) -> usize;
    fn horizon(&self) -> usize;
    /// Start a new episode and return the initial state.
    fn reset(&mut self) -> usize;
    /// Take action `a`, returning `(reward, next state)`.
    fn step(&mut self, a: usize) -> (f64, usize);
}

/// Environment backed by a known MDP; episode `k` uses substream `(seed, k)`.
pub struct MdpEnvironment<'a> {
    mdp: &'a TabularMdp,
    seed: u64,
    episode: u64,
    rng: ChaCha8Rng,
    state: usize,
    h: usize,
}

impl<'a> MdpEnvironment<'a> {
    pub fn new(mdp: &'a TabularMdp, seed: u64) -> Self {
        MdpEnvironment { mdp, seed, episode: 0, rng: substream(seed, 0), state: 0, h: 0 }
    }
}

impl Environment for MdpEnvironment<'_> {
    fn states(&self) -> usize {
        self.mdp.states
    }
    fn actions(&self) -> usize {
        self.mdp.actions
    }
    fn horizon(&self) -> usize {
        self.mdp.horizon
    }
    fn reset(&mut self) -> usize {
        self.rng = substream(self.seed, self.episode);
        self.episode += 1;
        self.h = 0;
        self.state = sample_index(&mut self.rng, &self.mdp.d1);
        self.state
    }
    fn step(&mut self, a: usize) -> (f64, usize) {
        let (h, s) = (self.h, self.state);
        let mean = self.mdp.reward(h, s, a);
        let r = match self.mdp.noise_at(h, s, a) {
            RewardNoise::Deterministic => mean,
            RewardNoise::Bernoulli => {
                if self.rng.gen::<f64>() < mean {
                    1.0
                } else {
                    0.0
                }
            }
        };
        self.state = sample_index(&mut self.rng, self.mdp.p_row(h, s, a));
        self.h += 1;
        (r, self.state)
    }
}

/// A deployed (possibly randomized) policy: each episode runs one component
/// drawn uniformly at random.
#[derive(Debug, Clone, PartialEq)]
pub struct Deployed {
    pub label: String,
    pub components: Vec<Policy>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdaptivityLedger {
    /// Distinct deployed policies; `episode_policy` indexes into this table.
    pub deployed: Vec<Deployed>,
    pub episode_policy: Vec<usize>,
    /// First episode index of every batch.
    pub batch_starts: Vec<usize>,
    pub switch_count: usize,
    pub batch_count: usize,
    /// Cumulative regret after each episode; filled by [`regret_harness`].
    pub regret: Vec<f64>,
}

impl AdaptivityLedger {
    fn intern(&mut self, d: Deployed) -> usize {
        if let Some(i) = self.deployed.iter().position(|x| x.components == d.components) {
            return i;
        }
        self.deployed.push(d);
        self.deployed.len() - 1
    }

    /// Switches recomputed from the episode log.
    pub fn replay_switches(&self) -> usize {
        self.episode_policy.windows(2).filter(|w| w[0] != w[1]).count()
    }

    fn finish(&mut self) {
        self.switch_count = self.replay_switches();
        self.batch_count = self.batch_starts.len();
    }

    /// `t policy_id` rows joined with the episode log as `t h s a r s_next policy_id`.
    pub fn format_log(&self, episodes: &Dataset) -> String {
        let mut out = String::new();
        for (t, traj) in episodes.trajectories().enumerate() {
            for (h, st) in traj.iter().enumerate() {
                out.push_str(&format!("{t} {h} {} {} {} {} {}\n", st.s, st.a, st.r, st.s_next, self.episode_policy[t]));
            }
        }
        out
    }

    pub fn format_batches(&self) -> String {
        let mut out = String::from("# batch start_episode\n");
        for (k, b) in self.batch_starts.iter().enumerate() {
            out.push_str(&format!("{k} {b}\n"));
        }
        out
    }
}

/// Runs batches whose episode plan is fixed before any of its data is seen.
struct Runner<'e> {
    env: &'e mut dyn Environment,
    ledger: AdaptivityLedger,
    records: Vec<Step>,
    rng: ChaCha8Rng,
}

impl<'e> Runner<'e> {
    fn new(env: &'e mut dyn Environment, seed: u64) -> Self {
        Runner { env, ledger: AdaptivityLedger::default(), records: Vec::new(), rng: substream(seed, u64::MAX) }
    }

    fn episodes(&self) -> usize {
        self.ledger.episode_policy.len()
    }

    /// Execute one batch: a list of `(deployment, episode count)` blocks.
    fn batch(&mut self, plan: Vec<(Deployed, usize)>) -> Result<Dataset> {
        let total: usize = plan.iter().map(|p| p.1).sum();
        if total == 0 {
            return Ok(Dataset::empty(self.env.horizon(), self.env.states(), self.env.actions()));
        }
        let start = self.records.len();
        self.ledger.batch_starts.push(self.episodes());
        for (dep, count) in plan {
            if count == 0 {
                continue;
            }
            let id = self.ledger.intern(dep);
            for _ in 0..count {
                let comp = {
                    let comps = &self.ledger.deployed[id].components;
                    if comps.len() == 1 {
                        0
                    } else {
                        self.rng.gen_range(0..comps.len())
                    }
                };
                let policy = self.ledger.deployed[id].components[comp].clone();
                self.run_episode(&policy)?;
                self.ledger.episode_policy.push(id);
            }
        }
        let (s_n, a_n, h_n) = (self.env.states(), self.env.actions(), self.env.horizon());
        Ok(Dataset {
            n: total,
            horizon: h_n,
            states: s_n,
            actions: a_n,
            records: self.records[start..].to_vec(),
            meta: DatasetMeta::default(),
        })
    }

    fn run_episode(&mut self, policy: &Policy) -> Result<()> {
        let (s_n, a_n, h_n) = (self.env.states(), self.env.actions(), self.env.horizon());
        let mut s = self.env.reset();
        if s >= s_n {
            return Err(Error::Environment(format!("reset returned state {s} ≥ S = {s_n}")));
        }
        for h in 0..h_n {
            let a = sample_index(&mut self.rng, policy.row(h, s));
            let (r, s_next) = self.env.step(a);
            if s_next >= s_n || !r.is_finite() {
                return Err(Error::Environment(format!("step returned (r={r}, s'={s_next}) at h={h}")));
            }
            debug_assert!(a < a_n);
            self.records.push(Step { s, a, r, s_next });
            s = s_next;
        }
        Ok(())
    }

    fn all_data(&self) -> Dataset {
        let h_n = self.env.horizon();
        Dataset {
            n: self.records.len() / h_n,
            horizon: h_n,
            states: self.env.states(),
            actions: self.env.actions(),
            records: self.records.clone(),
            meta: DatasetMeta::default(),
        }
    }
}

fn stage_length(t: f64, k: u32) -> usize {
    let x = t.powf(1.0 - 0.5f64.powi(k as i32));
    let r = x.round();
    if (x - r).abs() < 1e-9 * r.max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// `T^{(k)} = ⌈T^{1 − 2^{−k}}⌉`, the last stage truncated so lengths sum to `T`.
pub fn stage_schedule(t: usize) -> Result<Vec<usize>> {
    if t < 4 {
        return Err(Error::InvalidArgument(format!("stage_schedule needs T ≥ 4, got {t}")));
    }
    let mut out = Vec::new();
    let mut used = 0;
    let mut k = 1;
    while used < t {
        let len = stage_length(t as f64, k).min(t - used).max(1);
        out.push(len);
        used += len;
        k += 1;
    }
    Ok(out)
}

/// `⌈log₂ log₂ T⌉ + 2`
pub fn batch_bound(t: usize) -> usize {
    ((t as f64).log2().log2().ceil() as usize) + 2
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApeveConfig {
    pub delta: f64,
    pub policy_cap: usize,
    /// Share of each stage spent on the crude block.
    pub crude_fraction: f64,
    /// `c` in the half-width `c·H·sqrt(S·ι/n_eff)`.
    pub ci_constant: f64,
}

impl Default for ApeveConfig {
    fn default() -> Self {
        ApeveConfig { delta: 0.1, policy_cap: 1024, crude_fraction: 0.25, ci_constant: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySet {
    /// Enumeration indices of the surviving deterministic policies.
    pub ids: Vec<usize>,
    pub policies: Vec<Policy>,
    /// `(lower, upper)` from the latest elimination round.
    pub ci: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub id: usize,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EliminationRound {
    pub stage: usize,
    pub intervals: Vec<Interval>,
    pub survivors: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ApeveOutput {
    pub ledger: AdaptivityLedger,
    pub policy_set: PolicySet,
    pub rounds: Vec<EliminationRound>,
    pub schedule: Vec<usize>,
    pub episodes: Dataset,
}

/// Model for planning: plug-in from all past data, empirical start distribution
/// (uniform when nothing has been seen yet).
pub fn planning_model(data: &Dataset) -> TabularMdp {
    let c = counts(data);
    let s_n = data.states;
    let d1 = if data.n == 0 { vec![1.0 / s_n as f64; s_n] } else { (0..s_n).map(|s| c.state(0, s) as f64 / data.n as f64).collect() };
    PluginModel::from_counts(c).to_mdp(d1)
}

/// Minimum stage count `n_{h,s,π_h(s)}` over states the policy reaches under `model`.
fn effective_count(model: &TabularMdp, c: &CountTables, policy: &Policy, table: &[usize]) -> Result<u64> {
    let occ = occupancy(model, policy)?;
    let mut n_eff = u64::MAX;
    for h in 0..model.horizon {
        for s in 0..model.states {
            if occ.state(h, s) > 0.0 {
                n_eff = n_eff.min(c.sa(h, s, table[h * model.states + s]));
            }
        }
    }
    Ok(n_eff)
}

pub fn apeve(env: &mut dyn Environment, t: usize, config: &ApeveConfig, seed: u64) -> Result<ApeveOutput> {
    let (s_n, a_n, h_n) = (env.states(), env.actions(), env.horizon());
    let count = deterministic_policy_count(s_n, a_n, h_n);
    if count > config.policy_cap as f64 {
        return Err(Error::PolicyCap { count, cap: config.policy_cap });
    }
    if !(config.delta > 0.0 && config.delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta = {} outside (0, 1)", config.delta)));
    }
    let schedule = stage_schedule(t)?;
    let all: Vec<Policy> = (0..count as usize).map(|i| deterministic_policy_at(i, s_n, a_n, h_n)).collect();
    let tables: Vec<Vec<usize>> = all.iter().map(|p| p.action_table().expect("deterministic")).collect();
    let iota = (2.0 * count * schedule.len() as f64 / config.delta).ln();
    let hf = h_n as f64;

    let mut runner = Runner::new(env, seed);
    let mut remaining: Vec<usize> = (0..all.len()).collect();
    let mut ci = vec![(0.0, hf); all.len()];
    let mut rounds = Vec::new();
    for (k, &len) in schedule.iter().enumerate() {
        let model = planning_model(&runner.all_data());
        let occs: Vec<_> = remaining.iter().map(|&i| occupancy(&model, &all[i])).collect::<Result<_>>()?;

        let crude = ((len as f64) * config.crude_fraction).floor() as usize;
        let fine = len - crude;
        let triplets = h_n * s_n * a_n;
        let mut plan =
            vec![(Deployed { label: format!("mixture-stage{k}"), components: remaining.iter().map(|&i| all[i].clone()).collect() }, crude)];
        let mut j = 0;
        for h in 0..h_n {
            for s in 0..s_n {
                for a in 0..a_n {
                    let mut best = 0;
                    for (m, occ) in occs.iter().enumerate() {
                        if occ.sa(h, s, a) > occs[best].sa(h, s, a) {
                            best = m;
                        }
                    }
                    let id = remaining[best];
                    let share = fine / triplets + usize::from(j < fine % triplets);
                    plan.push((Deployed { label: format!("policy{id}"), components: vec![all[id].clone()] }, share));
                    j += 1;
                }
            }
        }
        let stage_data = runner.batch(plan)?;
        if stage_data.n == 0 {
            continue;
        }

        let c = counts(&stage_data);
        let full_model = planning_model(&runner.all_data());
        let mut intervals = Vec::with_capacity(remaining.len());
        for &i in &remaining {
            let est = tmis_estimate(&stage_data, &all[i])?.estimate;
            let n_eff = effective_count(&full_model, &c, &all[i], &tables[i])?;
            let half = if n_eff == 0 { f64::INFINITY } else { config.ci_constant * hf * (s_n as f64 * iota / n_eff as f64).sqrt() };
            intervals.push(Interval { id: i, estimate: est, lower: est - half, upper: est + half });
        }
        let best_lower = intervals.iter().map(|iv| iv.lower).fold(f64::NEG_INFINITY, f64::max);
        remaining = intervals.iter().filter(|iv| iv.upper >= best_lower).map(|iv| iv.id).collect();
        for iv in &intervals {
            ci[iv.id] = (iv.lower, iv.upper);
        }
        rounds.push(EliminationRound { stage: k, intervals, survivors: remaining.clone() });
    }
    runner.ledger.finish();
    let episodes = runner.all_data();
    Ok(ApeveOutput {
        ledger: runner.ledger,
        policy_set: PolicySet {
            policies: remaining.iter().map(|&i| all[i].clone()).collect(),
            ci: remaining.iter().map(|&i| ci[i]).collect(),
            ids: remaining,
        },
        rounds,
        schedule,
        episodes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LarfeConfig {
    pub epsilon: f64,
    pub delta: f64,
    /// `c` in the per-policy budget `⌈c·H²·S·ι/ε²⌉`.
    pub c_budget: f64,
    /// Overrides the computed per-policy episode budget.
    pub episodes_per_policy: Option<usize>,
}

impl Default for LarfeConfig {
    fn default() -> Self {
        LarfeConfig { epsilon: 0.1, delta: 0.1, c_budget: 1.0, episodes_per_policy: None }
    }
}

impl LarfeConfig {
    pub fn budget(&self, states: usize, actions: usize, horizon: usize) -> usize {
        self.episodes_per_policy.unwrap_or_else(|| {
            let iota = (2.0 * (horizon * states * actions) as f64 / self.delta).ln();
            (self.c_budget * (horizon * horizon * states) as f64 * iota / (self.epsilon * self.epsilon)).ceil() as usize
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub per_policy_budget: usize,
    /// Smallest `n_h(s, a) / (budget · reach_h(s))` over cells whose estimated
    /// maximal reach is at least `reach_threshold`; infinite if there are none.
    pub min_ratio: f64,
    pub reach_threshold: f64,
    pub achieved: bool,
}

#[derive(Debug, Clone)]
pub struct LarfeOutput {
    pub dataset: Dataset,
    pub ledger: AdaptivityLedger,
    pub certificate: Certificate,
    /// Estimated maximal reach probability of each `(h, s)` on the final model.
    pub max_reach: Vec<f64>,
}

/// Deterministic policy maximizing the probability of being in `target_state`
/// at step `layer` under `model`, then playing `action` there (action 0 elsewhere).
fn reach_policy(model: &TabularMdp, layer: usize, target_state: usize, action: usize) -> (Policy, f64) {
    let (s_n, a_n, h_n) = (model.states, model.actions, model.horizon);
    let mut indicator = model.clone();
    indicator.r.iter_mut().for_each(|r| *r = 0.0);
    for a in 0..a_n {
        let c = indicator.cell(layer, target_state, a);
        indicator.r[c] = if a == action { 1.0 } else { 0.0 };
    }
    let (pi, v) = optimal_policy(&indicator);
    let mut table = pi.action_table().expect("deterministic");
    for h in layer + 1..h_n {
        for s in 0..s_n {
            table[h * s_n + s] = 0;
        }
    }
    (Policy::deterministic(s_n, a_n, h_n, &table), v.value)
}

pub fn larfe(env: &mut dyn Environment, config: &LarfeConfig, seed: u64) -> Result<LarfeOutput> {
    let (s_n, a_n, h_n) = (env.states(), env.actions(), env.horizon());
    if !(config.epsilon > 0.0) || !(config.delta > 0.0 && config.delta < 1.0) {
        return Err(Error::InvalidArgument("LARFE needs epsilon > 0 and delta in (0, 1)".into()));
    }
    let budget = config.budget(s_n, a_n, h_n);
    let mut runner = Runner::new(env, seed);
    for layer in 0..h_n {
        for round in 0..2 {
            let model = planning_model(&runner.all_data());
            let mut plan = Vec::with_capacity(s_n * a_n);
            for s in 0..s_n {
                for a in 0..a_n {
                    let (pi, _) = reach_policy(&model, layer, s, a);
                    plan.push((Deployed { label: format!("reach-h{layer}-s{s}-a{a}-r{round}"), components: vec![pi] }, budget));
                }
            }
            runner.batch(plan)?;
        }
    }
    runner.ledger.finish();
    let dataset = runner.all_data();
    let model = planning_model(&dataset);
    let c = counts(&dataset);
    let reach_threshold = config.epsilon / (2.0 * (h_n * s_n) as f64);
    let mut max_reach = vec![0.0; h_n * s_n];
    let mut min_ratio = f64::INFINITY;
    for h in 0..h_n {
        for s in 0..s_n {
            let (_, p) = reach_policy(&model, h, s, 0);
            max_reach[h * s_n + s] = p;
            if p >= reach_threshold {
                for a in 0..a_n {
                    min_ratio = min_ratio.min(c.sa(h, s, a) as f64 / (budget as f64 * p));
                }
            }
        }
    }
    Ok(LarfeOutput {
        dataset,
        ledger: runner.ledger,
        certificate: Certificate { per_policy_budget: budget, min_ratio, reach_threshold, achieved: min_ratio >= 1.0 },
        max_reach,
    })
}

/// Something the regret harness can run against an environment.
pub trait Algorithm: Sync {
    fn run(&self, env: &mut dyn Environment, t: usize, seed: u64) -> Result<AdaptivityLedger>;
}

impl Algorithm for ApeveConfig {
    fn run(&self, env: &mut dyn Environment, t: usize, seed: u64) -> Result<AdaptivityLedger> {
        Ok(apeve(env, t, self, seed)?.ledger)
    }
}

/// Deploy one fixed (possibly stochastic) policy for all `T` episodes in a single batch.
pub struct FixedPolicy(pub Policy);

impl Algorithm for FixedPolicy {
    fn run(&self, env: &mut dyn Environment, t: usize, seed: u64) -> Result<AdaptivityLedger> {
        let mut runner = Runner::new(env, seed);
        runner.batch(vec![(Deployed { label: "fixed".into(), components: vec![self.0.clone()] }, t)])?;
        runner.ledger.finish();
        Ok(runner.ledger)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub regret: f64,
    pub switch_count: usize,
    pub batch_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretSummary {
    pub t: usize,
    pub runs: Vec<SeedRun>,
    pub mean_regret: f64,
    pub se_regret: f64,
    pub max_switches: usize,
    pub max_batches: usize,
}

/// Expected value of a deployment: the mean of its components' values.
pub fn deployed_value(mdp: &TabularMdp, d: &Deployed) -> Result<f64> {
    let vals = d.components.iter().map(|p| policy_value(mdp, p).map(|v| v.value)).collect::<Result<Vec<f64>>>()?;
    Ok(mean(&vals))
}

/// Fill `ledger.regret` with the exact cumulative regret trace.
pub fn fill_regret(mdp: &TabularMdp, ledger: &mut AdaptivityLedger) -> Result<f64> {
    let (_, vstar) = optimal_policy(mdp);
    let gaps = ledger.deployed.iter().map(|d| deployed_value(mdp, d).map(|v| vstar.value - v)).collect::<Result<Vec<f64>>>()?;
    let mut acc = 0.0;
    ledger.regret = ledger
        .episode_policy
        .iter()
        .map(|&i| {
            acc += gaps[i];
            acc
        })
        .collect();
    Ok(acc)
}

pub fn regret_harness(mdp: &TabularMdp, algorithm: &dyn Algorithm, t: usize, seeds: &[u64]) -> Result<RegretSummary> {
    use rayon::prelude::*;
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let mut env = MdpEnvironment::new(mdp, derive_seed(seed, 0xE11));
            let mut ledger = algorithm.run(&mut env, t, seed)?;
            let regret = fill_regret(mdp, &mut ledger)?;
            Ok(SeedRun { seed, regret, switch_count: ledger.switch_count, batch_count: ledger.batch_count })
        })
        .collect::<Result<Vec<SeedRun>>>()?;
    let regrets: Vec<f64> = runs.iter().map(|r| r.regret).collect();
    Ok(RegretSummary {
        t,
        mean_regret: mean(&regrets),
        se_regret: (sample_variance(&regrets) / regrets.len() as f64).sqrt(),
        max_switches: runs.iter().map(|r| r.switch_count).max().unwrap_or(0),
        max_batches: runs.iter().map(|r| r.batch_count).max().unwrap_or(0),
        runs,
    })
}
