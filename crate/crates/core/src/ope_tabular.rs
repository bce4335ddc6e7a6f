//! Tabular off-policy evaluation: IS, step-IS, SMIS and TMIS, plus an MSE harness.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::{counts, pooled_counts, sample_trajectories, Dataset};
use crate::error::{Error, Result};
use crate::mdp::{policy_value, Policy, TabularMdp};
use crate::util::{derive_seed, mean, pairwise_sum, sample_variance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Is,
    StepIs,
    Smis,
    Tmis,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Is, Method::StepIs, Method::Smis, Method::Tmis];

    pub fn name(self) -> &'static str {
        match self {
            Method::Is => "IS",
            Method::StepIs => "stepIS",
            Method::Smis => "SMIS",
            Method::Tmis => "TMIS",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown OPE method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// Smallest nonzero visit count among the cells the estimator uses.
    pub min_positive_count: u64,
    /// Cells on the target's estimated support that were never visited.
    pub zero_count_cells: usize,
    /// Largest per-trajectory cumulative importance ratio (IS-family only).
    pub max_cumulative_ratio: f64,
    /// Estimate fell outside `[0, H]`.
    pub out_of_range: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub estimate: f64,
    pub method: Method,
    /// TMIS only: the model-based expression `Σ d̂^π(s,a) r̂(s,a)`.
    pub model_form: Option<f64>,
    pub diagnostics: Diagnostics,
}

fn check_shapes(dataset: &Dataset, policy: &Policy) -> Result<()> {
    if dataset.n == 0 {
        return Err(Error::EmptyDataset);
    }
    if (policy.horizon, policy.states, policy.actions) != (dataset.horizon, dataset.states, dataset.actions) {
        return Err(Error::Dimension(format!(
            "policy is (H={}, S={}, A={}) but dataset is (H={}, S={}, A={})",
            policy.horizon, policy.states, policy.actions, dataset.horizon, dataset.states, dataset.actions
        )));
    }
    Ok(())
}

/// Per-step ratios `π_h(a|s)/μ_h(a|s)` for every record, in record order.
fn step_ratios(dataset: &Dataset, target: &Policy, behavior: &Policy) -> Result<Vec<f64>> {
    check_shapes(dataset, target)?;
    check_shapes(dataset, behavior)?;
    let h_n = dataset.horizon;
    dataset
        .records
        .iter()
        .enumerate()
        .map(|(k, st)| {
            let h = k % h_n;
            let mu = behavior.prob(h, st.s, st.a);
            if mu <= 0.0 {
                return Err(Error::BehaviorSupport((h, st.s, st.a)));
            }
            Ok(target.prob(h, st.s, st.a) / mu)
        })
        .collect()
}

/// Cumulative ratio `ρ_{1:H}` of every trajectory.
pub fn cumulative_ratios(dataset: &Dataset, target: &Policy, behavior: &Policy) -> Result<Vec<f64>> {
    let ratios = step_ratios(dataset, target, behavior)?;
    Ok(ratios.chunks_exact(dataset.horizon).map(|c| c.iter().product()).collect())
}

fn is_family(dataset: &Dataset, target: &Policy, behavior: &Policy, stepwise: bool) -> Result<EstimateReport> {
    let ratios = step_ratios(dataset, target, behavior)?;
    let mut max_ratio: f64 = 0.0;
    let per_traj: Vec<f64> = dataset
        .trajectories()
        .zip(ratios.chunks_exact(dataset.horizon))
        .map(|(traj, rs)| {
            let mut rho = 1.0;
            let mut ret = 0.0;
            let mut acc = 0.0;
            for (st, &w) in traj.iter().zip(rs) {
                rho *= w;
                acc += rho * st.r;
                ret += st.r;
            }
            max_ratio = max_ratio.max(rho);
            if stepwise {
                acc
            } else {
                rho * ret
            }
        })
        .collect();
    let estimate = mean(&per_traj);
    Ok(EstimateReport {
        estimate,
        method: if stepwise { Method::StepIs } else { Method::Is },
        model_form: None,
        diagnostics: Diagnostics {
            min_positive_count: dataset.n as u64,
            zero_count_cells: 0,
            max_cumulative_ratio: max_ratio,
            out_of_range: !(0.0..=dataset.horizon as f64).contains(&estimate),
        },
    })
}

/// `(1/n) Σ_i ρ^{(i)}_{1:H} Σ_t r^{(i)}_t`
pub fn is_estimate(dataset: &Dataset, target: &Policy, behavior: &Policy) -> Result<EstimateReport> {
    is_family(dataset, target, behavior, false)
}

/// `(1/n) Σ_i Σ_t ρ^{(i)}_{1:t} r^{(i)}_t`
pub fn step_is_estimate(dataset: &Dataset, target: &Policy, behavior: &Policy) -> Result<EstimateReport> {
    is_family(dataset, target, behavior, true)
}

/// State-marginal MIS: ratio-weighted empirical `P̂^π_h(s'|s)` and `r̂^π_h(s)`.
pub fn smis_estimate(dataset: &Dataset, target: &Policy, behavior: &Policy) -> Result<EstimateReport> {
    let ratios = step_ratios(dataset, target, behavior)?;
    let (s_n, h_n) = (dataset.states, dataset.horizon);
    let c = counts(dataset);
    let mut w_next = vec![0.0; h_n * s_n * s_n];
    let mut w_r = vec![0.0; h_n * s_n];
    for (k, (st, &w)) in dataset.records.iter().zip(&ratios).enumerate() {
        let h = k % h_n;
        w_next[(h * s_n + st.s) * s_n + st.s_next] += w;
        w_r[h * s_n + st.s] += w * st.r;
    }
    let mut d = vec![0.0; s_n];
    for (s, slot) in d.iter_mut().enumerate() {
        *slot = c.state(0, s) as f64 / dataset.n as f64;
    }
    let mut terms = Vec::with_capacity(h_n * s_n);
    let mut min_pos = u64::MAX;
    let mut zero_cells = 0;
    for h in 0..h_n {
        let mut next = vec![0.0; s_n];
        for s in 0..s_n {
            let ns = c.state(h, s);
            if ns == 0 {
                if d[s] != 0.0 {
                    zero_cells += 1;
                }
                continue;
            }
            min_pos = min_pos.min(ns);
            let inv = 1.0 / ns as f64;
            terms.push(d[s] * w_r[h * s_n + s] * inv);
            for (s2, slot) in next.iter_mut().enumerate() {
                *slot += d[s] * w_next[(h * s_n + s) * s_n + s2] * inv;
            }
        }
        d = next;
    }
    let estimate = pairwise_sum(&terms);
    Ok(EstimateReport {
        estimate,
        method: Method::Smis,
        model_form: None,
        diagnostics: Diagnostics {
            min_positive_count: if min_pos == u64::MAX { 0 } else { min_pos },
            zero_count_cells: zero_cells,
            max_cumulative_ratio: f64::NAN,
            out_of_range: !(0.0..=h_n as f64).contains(&estimate),
        },
    })
}

/// Forward recursion `d̂^π_{h+1} = P̂^π_h d̂^π_h` on the state-action plug-in with the
/// zero rule `P̂ = 0, r̂ = 0` for unvisited cells. Returns state occupancies `[h * S + s]`.
fn tmis_occupancy(c: &crate::data::CountTables, target: &Policy, d1: &[f64]) -> Vec<f64> {
    let (s_n, a_n, h_n) = (c.states, c.actions, c.horizon);
    let mut d = vec![0.0; h_n * s_n];
    d[..s_n].copy_from_slice(d1);
    for h in 0..h_n.saturating_sub(1) {
        for s in 0..s_n {
            let ds = d[h * s_n + s];
            if ds == 0.0 {
                continue;
            }
            for a in 0..a_n {
                let n_sa = c.sa(h, s, a);
                let pa = target.prob(h, s, a);
                if n_sa == 0 || pa == 0.0 {
                    continue;
                }
                let w = ds * pa / n_sa as f64;
                for (s2, &k) in c.sas_row(h, s, a).iter().enumerate() {
                    if k > 0 {
                        d[(h + 1) * s_n + s2] += w * k as f64;
                    }
                }
            }
        }
    }
    d
}

/// Tabular MIS. `estimate` is the importance-sampling form; `model_form` the plug-in form.
pub fn tmis_estimate(dataset: &Dataset, target: &Policy) -> Result<EstimateReport> {
    check_shapes(dataset, target)?;
    let (s_n, a_n, h_n) = (dataset.states, dataset.actions, dataset.horizon);
    let c = counts(dataset);
    let n = dataset.n as f64;
    let d1: Vec<f64> = (0..s_n).map(|s| c.state(0, s) as f64 / n).collect();
    let d = tmis_occupancy(&c, target, &d1);

    let r_hat = |h: usize, s: usize, a: usize| {
        let k = c.sa(h, s, a);
        if k == 0 {
            0.0
        } else {
            c.r_sum[c.cell(h, s, a)] / k as f64
        }
    };

    // Model form: Σ_{h,s,a} d̂^π_h(s) π_h(a|s) r̂_h(s,a).
    let mut model_terms = Vec::with_capacity(h_n * s_n * a_n);
    let mut zero_cells = 0;
    let mut min_pos = u64::MAX;
    for h in 0..h_n {
        for s in 0..s_n {
            let ds = d[h * s_n + s];
            for a in 0..a_n {
                let k = c.sa(h, s, a);
                if k > 0 {
                    min_pos = min_pos.min(k);
                }
                let pa = target.prob(h, s, a);
                if ds > 0.0 && pa > 0.0 && k == 0 {
                    zero_cells += 1;
                }
                model_terms.push(ds * pa * r_hat(h, s, a));
            }
        }
    }
    let model_form = pairwise_sum(&model_terms);

    // MIS form: (1/n) Σ_i Σ_h [d̂^π_h(s)/d̂^μ_h(s)] r̂^π_h(s) over the logged states.
    let r_pi: Vec<f64> = (0..h_n * s_n)
        .map(|k| {
            let (h, s) = (k / s_n, k % s_n);
            (0..a_n).map(|a| target.prob(h, s, a) * r_hat(h, s, a)).sum()
        })
        .collect();
    let per_record: Vec<f64> = dataset
        .records
        .iter()
        .enumerate()
        .map(|(k, st)| {
            let h = k % h_n;
            let ns = c.state(h, st.s) as f64;
            let ratio = d[h * s_n + st.s] / (ns / n);
            ratio * r_pi[h * s_n + st.s]
        })
        .collect();
    let estimate = pairwise_sum(&per_record) / n;

    Ok(EstimateReport {
        estimate,
        method: Method::Tmis,
        model_form: Some(model_form),
        diagnostics: Diagnostics {
            min_positive_count: if min_pos == u64::MAX { 0 } else { min_pos },
            zero_count_cells: zero_cells,
            max_cumulative_ratio: f64::NAN,
            out_of_range: !(0.0..=h_n as f64).contains(&estimate),
        },
    })
}

/// TMIS on the time-homogeneous plug-in: one transition kernel and reward table
/// estimated from all `nH` pooled transitions, started from `initial`.
pub fn tmis_pooled(dataset: &Dataset, target: &Policy, initial: &[f64]) -> Result<f64> {
    check_shapes(dataset, target)?;
    let (s_n, a_n, h_n) = (dataset.states, dataset.actions, dataset.horizon);
    let c = pooled_counts(dataset);
    let mut d = initial.to_vec();
    let mut total = 0.0;
    for h in 0..h_n {
        let mut next = vec![0.0; s_n];
        for s in 0..s_n {
            if d[s] == 0.0 {
                continue;
            }
            for a in 0..a_n {
                let k = c.sa(0, s, a);
                let pa = target.prob(h, s, a);
                if k == 0 || pa == 0.0 {
                    continue;
                }
                let w = d[s] * pa / k as f64;
                total += w * c.r_sum[c.cell(0, s, a)];
                for (s2, &m) in c.sas_row(0, s, a).iter().enumerate() {
                    next[s2] += w * m as f64;
                }
            }
        }
        d = next;
    }
    Ok(total)
}

pub fn estimate(method: Method, dataset: &Dataset, target: &Policy, behavior: &Policy) -> Result<EstimateReport> {
    match method {
        Method::Is => is_estimate(dataset, target, behavior),
        Method::StepIs => step_is_estimate(dataset, target, behavior),
        Method::Smis => smis_estimate(dataset, target, behavior),
        Method::Tmis => tmis_estimate(dataset, target),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MseSummary {
    pub method: Method,
    pub n: usize,
    pub horizon: usize,
    /// Successful replications.
    pub reps: usize,
    /// Replications whose estimator returned an error.
    pub failures: usize,
    pub truth: f64,
    pub mean_estimate: f64,
    pub mse: f64,
    pub rel_rmse: f64,
    /// Standard error of `mse`.
    pub se: f64,
}

impl MseSummary {
    /// `method n H reps mse rel_rmse se`
    pub fn row(&self) -> String {
        format!("{} {} {} {} {:.10e} {:.10e} {:.10e}", self.method, self.n, self.horizon, self.reps, self.mse, self.rel_rmse, self.se)
    }
}

fn summarize(method: Method, n: usize, horizon: usize, truth: f64, estimates: &[Option<f64>]) -> MseSummary {
    let ok: Vec<f64> = estimates.iter().flatten().copied().collect();
    let sq: Vec<f64> = ok.iter().map(|e| (e - truth) * (e - truth)).collect();
    let mse = mean(&sq);
    MseSummary {
        method,
        n,
        horizon,
        reps: ok.len(),
        failures: estimates.len() - ok.len(),
        truth,
        mean_estimate: mean(&ok),
        mse,
        rel_rmse: mse.sqrt() / truth.abs(),
        se: (sample_variance(&sq) / sq.len() as f64).sqrt(),
    }
}

/// Replicated MSE of several estimators sharing the same datasets.
///
/// Replication `r` samples with seed `derive_seed(seed, r)`; aggregation runs
/// in replication order so results do not depend on thread scheduling.
pub fn mse_harness_multi(
    mdp: &TabularMdp,
    target: &Policy,
    behavior: &Policy,
    methods: &[Method],
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<MseSummary>> {
    if reps < 2 {
        return Err(Error::InvalidArgument("mse_harness needs reps ≥ 2".into()));
    }
    let truth = policy_value(mdp, target)?.value;
    policy_value(mdp, behavior)?;
    let per_rep: Vec<Vec<Option<f64>>> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let ds = sample_trajectories(mdp, behavior, n, derive_seed(seed, r)).expect("shapes checked");
            methods.iter().map(|&m| estimate(m, &ds, target, behavior).ok().map(|e| e.estimate)).collect()
        })
        .collect();
    Ok(methods
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let col: Vec<Option<f64>> = per_rep.iter().map(|row| row[j]).collect();
            summarize(m, n, mdp.horizon, truth, &col)
        })
        .collect())
}

pub fn mse_harness(
    mdp: &TabularMdp,
    target: &Policy,
    behavior: &Policy,
    method: Method,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<MseSummary> {
    Ok(mse_harness_multi(mdp, target, behavior, &[method], n, reps, seed)?.remove(0))
}
