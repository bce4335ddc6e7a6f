//! Linear fitted Q-evaluation, bootstrap inference and its population oracles.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::data::{pooled_counts, Dataset};
use crate::error::{parse_err, Error, ParseErrorKind, Result};
use crate::linalg::SpdFactor;
use crate::mdp::{occupancy, policy_value, variance_under, Policy, TabularMdp};
use crate::util::{quantile_sorted, sample_variance, substream};

/// Explicit feature table `φ(s, a) ∈ R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub d: usize,
    pub states: usize,
    pub actions: usize,
    /// `phi[(s * A + a) * d + k]`
    pub phi: Vec<f64>,
}

impl FeatureMap {
    pub fn new(d: usize, states: usize, actions: usize, phi: Vec<f64>) -> Result<Self> {
        if phi.len() != d * states * actions {
            return Err(Error::Dimension(format!("feature table has {} entries, expected {}", phi.len(), d * states * actions)));
        }
        Ok(FeatureMap { d, states, actions, phi })
    }

    /// Canonical basis vector per `(s, a)`; `d = S·A`.
    pub fn indicator(states: usize, actions: usize) -> Self {
        let d = states * actions;
        let mut phi = vec![0.0; d * d];
        for i in 0..d {
            phi[i * d + i] = 1.0;
        }
        FeatureMap { d, states, actions, phi }
    }

    #[inline]
    pub fn slice(&self, s: usize, a: usize) -> &[f64] {
        let i = (s * self.actions + a) * self.d;
        &self.phi[i..i + self.d]
    }

    pub fn vector(&self, s: usize, a: usize) -> DVector<f64> {
        DVector::from_column_slice(self.slice(s, a))
    }

    pub fn max_norm(&self) -> f64 {
        self.phi.chunks_exact(self.d).map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }

    /// `⟨φ(s, a), w⟩`
    pub fn dot(&self, s: usize, a: usize, w: &DVector<f64>) -> f64 {
        self.slice(s, a).iter().zip(w.iter()).map(|(x, y)| x * y).sum()
    }

    pub fn format(&self) -> String {
        let mut out = format!("{}\n", self.d);
        for s in 0..self.states {
            for a in 0..self.actions {
                let _ = write!(out, "{s} {a}");
                for v in self.slice(s, a) {
                    let _ = write!(out, " {v}");
                }
                out.push('\n');
            }
        }
        out
    }

    /// Parse the `d` header plus `s a v1 … vd` lines; `S` and `A` are inferred
    /// from the largest indices and every pair must appear exactly once.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        let (hl, head) = lines.next().ok_or_else(|| parse_err(1, ParseErrorKind::MalformedHeader("missing `d` header".into())))?;
        let d: usize = head.parse().map_err(|_| parse_err(hl, ParseErrorKind::MalformedHeader(format!("{head:?} is not a dimension"))))?;
        let mut rows = Vec::new();
        for (ln, l) in lines {
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks.len() != d + 2 {
                return Err(parse_err(ln, ParseErrorKind::TruncatedRecord(format!("{} of {} fields", toks.len(), d + 2))));
            }
            let idx = |t: &str| t.parse::<usize>().map_err(|_| parse_err(ln, ParseErrorKind::BadValue(t.into())));
            let (s, a) = (idx(toks[0])?, idx(toks[1])?);
            let v = toks[2..]
                .iter()
                .map(|t| t.parse::<f64>().map_err(|_| parse_err(ln, ParseErrorKind::BadValue((*t).into()))))
                .collect::<Result<Vec<f64>>>()?;
            rows.push((ln, s, a, v));
        }
        let states = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        let actions = rows.iter().map(|r| r.2 + 1).max().unwrap_or(0);
        let mut phi = vec![f64::NAN; d * states * actions];
        let mut seen = vec![false; states * actions];
        for (ln, s, a, v) in &rows {
            let k = s * actions + a;
            if seen[k] {
                return Err(parse_err(*ln, ParseErrorKind::BadValue(format!("duplicate pair ({s}, {a})"))));
            }
            seen[k] = true;
            phi[k * d..(k + 1) * d].copy_from_slice(v);
        }
        if let Some(k) = seen.iter().position(|&x| !x) {
            let last = rows.last().map_or(hl, |r| r.0);
            return Err(parse_err(last, ParseErrorKind::UnexpectedEof(format!("pair ({}, {}) missing", k / actions, k % actions))));
        }
        Ok(FeatureMap { d, states, actions, phi })
    }
}

#[derive(Debug, Clone)]
pub struct FqeResult {
    pub v_hat: f64,
    /// `w[h]` for `h ∈ 0..H`.
    pub w: Vec<DVector<f64>>,
    /// `Σ̂ = Σ_n φ_n φ_nᵀ + λI` over all pooled transitions.
    pub gram: DMatrix<f64>,
    pub condition: f64,
    pub transitions: usize,
}

/// Default ridge `1e-6 · N`.
pub fn default_lambda(dataset: &Dataset) -> f64 {
    1e-6 * (dataset.n * dataset.horizon) as f64
}

fn check_linear(dataset: &Dataset, features: &FeatureMap, target: &Policy) -> Result<()> {
    if dataset.n == 0 {
        return Err(Error::EmptyDataset);
    }
    if (features.states, features.actions) != (dataset.states, dataset.actions) {
        return Err(Error::Dimension("feature map does not match the dataset's (S, A)".into()));
    }
    if (target.horizon, target.states, target.actions) != (dataset.horizon, dataset.states, dataset.actions) {
        return Err(Error::Dimension("target policy does not match the dataset's (H, S, A)".into()));
    }
    Ok(())
}

fn empirical_initial(dataset: &Dataset) -> Vec<f64> {
    let mut d1 = vec![0.0; dataset.states];
    for traj in dataset.trajectories() {
        d1[traj[0].s] += 1.0;
    }
    d1.iter_mut().for_each(|x| *x /= dataset.n as f64);
    d1
}

/// `V̂(s) = Σ_a π_h(a|s) ⟨φ(s,a), w⟩`
fn policy_values(features: &FeatureMap, target: &Policy, h: usize, w: &DVector<f64>) -> Vec<f64> {
    (0..features.states).map(|s| (0..features.actions).map(|a| target.prob(h, s, a) * features.dot(s, a, w)).sum()).collect()
}

/// Closed-form FQE over the pooled `N = nH` transitions.
///
/// `initial` is the start distribution for `v̂ = E_{d1, π}[Q̂_0]`; `None` uses
/// the empirical distribution of the logged first states.
pub fn fqe_linear(dataset: &Dataset, features: &FeatureMap, target: &Policy, lambda: f64, initial: Option<&[f64]>) -> Result<FqeResult> {
    check_linear(dataset, features, target)?;
    let (s_n, a_n, h_n, d) = (dataset.states, dataset.actions, dataset.horizon, features.d);
    let c = pooled_counts(dataset);
    let mut gram = DMatrix::<f64>::identity(d, d) * lambda;
    for s in 0..s_n {
        for a in 0..a_n {
            let k = c.sa(0, s, a);
            if k > 0 {
                let phi = features.vector(s, a);
                gram += &phi * phi.transpose() * k as f64;
            }
        }
    }
    let factor = SpdFactor::new(&gram, None)?;
    let mut w = vec![DVector::zeros(d); h_n];
    let mut v_next = vec![0.0; s_n];
    for h in (0..h_n).rev() {
        let mut b = DVector::zeros(d);
        for s in 0..s_n {
            for a in 0..a_n {
                let k = c.sa(0, s, a);
                if k == 0 {
                    continue;
                }
                let cell = c.cell(0, s, a);
                let mut y = c.r_sum[cell];
                for (s2, &m) in c.sas_row(0, s, a).iter().enumerate() {
                    y += m as f64 * v_next[s2];
                }
                if !y.is_finite() {
                    return Err(Error::NonFinite(h));
                }
                b.axpy(y, &features.vector(s, a), 1.0);
            }
        }
        w[h] = factor.solve(&b);
        v_next = policy_values(features, target, h, &w[h]);
    }
    let d1 = match initial {
        Some(d1) => d1.to_vec(),
        None => empirical_initial(dataset),
    };
    let v_hat = d1.iter().zip(&v_next).map(|(p, v)| p * v).sum();
    Ok(FqeResult { v_hat, w, gram, condition: factor.condition, transitions: dataset.n * h_n })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub v_hat: f64,
    pub lower: f64,
    pub upper: f64,
    /// Empirical variance of `√N (v̂*_b − v̂)`.
    pub variance: f64,
    pub replicates: Vec<f64>,
}

/// Percentile bootstrap over whole trajectories; resample `b` uses substream `(seed, b)`.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_fqe(
    dataset: &Dataset,
    features: &FeatureMap,
    target: &Policy,
    lambda: f64,
    resamples: usize,
    alpha: f64,
    seed: u64,
    initial: Option<&[f64]>,
) -> Result<BootstrapResult> {
    if resamples < 100 {
        return Err(Error::InvalidArgument("bootstrap needs at least 100 resamples".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} outside (0, 1)")));
    }
    let base = fqe_linear(dataset, features, target, lambda, initial)?;
    let n = dataset.n;
    let replicates: Vec<f64> = (0..resamples as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, b);
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            fqe_linear(&dataset.select(&idx), features, target, lambda, initial).map(|r| r.v_hat)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut sorted = replicates.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let big_n = (n * dataset.horizon) as f64;
    let scaled: Vec<f64> = replicates.iter().map(|v| big_n.sqrt() * (v - base.v_hat)).collect();
    Ok(BootstrapResult {
        v_hat: base.v_hat,
        lower: quantile_sorted(&sorted, alpha / 2.0),
        upper: quantile_sorted(&sorted, 1.0 - alpha / 2.0),
        variance: sample_variance(&scaled),
        replicates,
    })
}

/// Population quantities shared by the variance and divergence oracles.
struct Population {
    /// `ν_h = E_{d^π_h}[φ]`
    nu: Vec<DVector<f64>>,
    /// `(1/H) Σ_h E_{d^μ_h}[φ φᵀ]`
    sigma: DMatrix<f64>,
}

fn population(mdp: &TabularMdp, features: &FeatureMap, target: &Policy, behavior: &Policy) -> Result<Population> {
    if (features.states, features.actions) != (mdp.states, mdp.actions) {
        return Err(Error::Dimension("feature map does not match the MDP's (S, A)".into()));
    }
    let dp = occupancy(mdp, target)?;
    let dm = occupancy(mdp, behavior)?;
    let d = features.d;
    let h_n = mdp.horizon;
    let mut nu = vec![DVector::zeros(d); h_n];
    let mut sigma = DMatrix::zeros(d, d);
    for (h, nu_h) in nu.iter_mut().enumerate() {
        for s in 0..mdp.states {
            for a in 0..mdp.actions {
                let phi = features.vector(s, a);
                nu_h.axpy(dp.sa(h, s, a), &phi, 1.0);
                let m = dm.sa(h, s, a);
                if m > 0.0 {
                    sigma += &phi * phi.transpose() * (m / h_n as f64);
                }
            }
        }
    }
    Ok(Population { nu, sigma })
}

/// `E[ε_{h1,h'} ε_{h2,h'} | s_{h'} = s, a_{h'} = a]` with `ε_{h,h'} = Q_h(s,a) − r_{h'} − V_{h+1}(s')`.
fn residual_cross_moment(mdp: &TabularMdp, vt: &crate::mdp::ValueTables, h1: usize, h2: usize, hp: usize, s: usize, a: usize) -> f64 {
    let row = mdp.p_row(hp, s, a);
    let (v1, v2) = (vt.v_layer(h1 + 1), vt.v_layer(h2 + 1));
    let r = mdp.reward(hp, s, a);
    let m1 = r + crate::mdp::dot(row, v1);
    let m2 = r + crate::mdp::dot(row, v2);
    let bias = (vt.q_at(h1, s, a) - m1) * (vt.q_at(h2, s, a) - m2);
    let cov: f64 =
        row.iter().zip(v1.iter().zip(v2)).map(|(p, (x, y))| p * (x - crate::mdp::dot(row, v1)) * (y - crate::mdp::dot(row, v2))).sum();
    bias + mdp.reward_variance(hp, s, a) + cov
}

/// `Ω_{h1,h2} = (1/H) Σ_{h'} E_μ[φ φᵀ ε_{h1,h'} ε_{h2,h'}]`, evaluated exactly.
pub fn omega(mdp: &TabularMdp, features: &FeatureMap, target: &Policy, behavior: &Policy, h1: usize, h2: usize) -> Result<DMatrix<f64>> {
    let vt = policy_value(mdp, target)?;
    let dm = occupancy(mdp, behavior)?;
    let d = features.d;
    let h_n = mdp.horizon;
    let mut out = DMatrix::zeros(d, d);
    for hp in 0..h_n {
        for s in 0..mdp.states {
            for a in 0..mdp.actions {
                let m = dm.sa(hp, s, a);
                if m == 0.0 {
                    continue;
                }
                let c = residual_cross_moment(mdp, &vt, h1, h2, hp, s, a);
                let phi = features.vector(s, a);
                out += &phi * phi.transpose() * (m * c / h_n as f64);
            }
        }
    }
    Ok(out)
}

/// `σ² = Σ_{h1,h2} ν_{h1}ᵀ Σ⁻¹ Ω_{h1,h2} Σ⁻¹ ν_{h2}`, the limit of `N · Var(v̂_FQE)`.
///
/// Evaluated per `(h', s, a)` cell through conditional residual moments, so the
/// cost is polynomial in `S, A, H` rather than exponential.
pub fn asymptotic_variance_oracle(mdp: &TabularMdp, features: &FeatureMap, target: &Policy, behavior: &Policy) -> Result<f64> {
    let pop = population(mdp, features, target, behavior)?;
    let factor = SpdFactor::new(&pop.sigma, None)?;
    let vt = policy_value(mdp, target)?;
    let dm = occupancy(mdp, behavior)?;
    let h_n = mdp.horizon;
    let u: Vec<DVector<f64>> = pop.nu.iter().map(|nu| factor.solve(nu)).collect();
    let mut total = 0.0;
    for hp in 0..h_n {
        for s in 0..mdp.states {
            for a in 0..mdp.actions {
                let m = dm.sa(hp, s, a);
                if m == 0.0 {
                    continue;
                }
                let z: Vec<f64> = u.iter().map(|uh| features.dot(s, a, uh)).collect();
                if z.iter().all(|&x| x == 0.0) {
                    continue;
                }
                let mut acc = 0.0;
                for h1 in 0..h_n {
                    if z[h1] == 0.0 {
                        continue;
                    }
                    for h2 in 0..h_n {
                        if z[h2] == 0.0 {
                            continue;
                        }
                        acc += z[h1] * z[h2] * residual_cross_moment(mdp, &vt, h1, h2, hp, s, a);
                    }
                }
                total += m * acc / h_n as f64;
            }
        }
    }
    Ok(total)
}

/// `χ²` divergence over linear functions between the step-averaged target and
/// behavior occupancies: `mᵀ G⁻¹ m − 1` with `m = E_π φ`, `G = E_μ φφᵀ`.
pub fn chi_square_divergence(mdp: &TabularMdp, features: &FeatureMap, target: &Policy, behavior: &Policy) -> Result<f64> {
    let pop = population(mdp, features, target, behavior)?;
    let factor = SpdFactor::new(&pop.sigma, None)?;
    let mut m = DVector::zeros(features.d);
    for nu in &pop.nu {
        m += nu / mdp.horizon as f64;
    }
    Ok(factor.inv_quad(&m) - 1.0)
}

/// `Var_{P_h(s,a)}[V_{h+1}]` under the true MDP (exposed for tests and fixtures).
pub fn transition_variance(mdp: &TabularMdp, h: usize, s: usize, a: usize, v_next: &[f64]) -> f64 {
    variance_under(mdp.p_row(h, s, a), v_next)
}
