//! Pessimistic fitted value iteration with linear features, unweighted and variance-weighted.

use nalgebra::{DMatrix, DVector};

use crate::data::{counts, CountTables, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{SpdFactor, MAX_CONDITION};
use crate::mdp::Policy;
use crate::ope_linear::FeatureMap;
use crate::opl_tabular::{argmax, LearnedPolicyReport};

#[derive(Debug, Clone)]
pub struct GramState {
    /// Regularized (possibly variance-weighted) Gram matrix per step.
    pub lambda: Vec<DMatrix<f64>>,
    pub w: Vec<DVector<f64>>,
    /// `σ̂²_h(s, a)` at `[(h * S + s) * A + a]`; all ones for unweighted PFVI.
    pub sigma2_hat: Vec<f64>,
    pub condition: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VwConfig {
    /// Leading constant of the elliptical bonus.
    pub c: f64,
    /// Constant of the lower-order `H⁴√d·ι/n` term.
    pub c_low: f64,
    pub delta: f64,
}

impl Default for VwConfig {
    fn default() -> Self {
        VwConfig { c: 1.0, c_low: 0.0, delta: 0.1 }
    }
}

impl VwConfig {
    /// `ι = log(2dHn/δ)`
    pub fn iota(&self, d: usize, horizon: usize, n: usize) -> f64 {
        (2.0 * (d * horizon * n.max(1)) as f64 / self.delta).ln()
    }
}

/// `β = dH`, the unweighted bonus scale.
pub fn default_beta(d: usize, horizon: usize) -> f64 {
    (d * horizon) as f64
}

fn check(dataset: &Dataset, features: &FeatureMap, lambda: f64) -> Result<()> {
    if (features.states, features.actions) != (dataset.states, dataset.actions) {
        return Err(Error::Dimension("feature map does not match the dataset's (S, A)".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda = {lambda} must be positive")));
    }
    Ok(())
}

/// Ridge fits of the first and second moments of `r + v_next(s')` at step `h`.
fn moment_fits(c: &CountTables, features: &FeatureMap, h: usize, v_next: &[f64], lambda: f64) -> Result<(DVector<f64>, DVector<f64>)> {
    let d = features.d;
    let mut gram = DMatrix::<f64>::identity(d, d) * lambda;
    let mut b1 = DVector::zeros(d);
    let mut b2 = DVector::zeros(d);
    for s in 0..c.states {
        for a in 0..c.actions {
            let k = c.sa(h, s, a);
            if k == 0 {
                continue;
            }
            let phi = features.vector(s, a);
            gram += &phi * phi.transpose() * k as f64;
            let (m1, m2) = c.target_moments(h, s, a, v_next);
            if !(m1.is_finite() && m2.is_finite()) {
                return Err(Error::NonFinite(h));
            }
            b1.axpy(m1, &phi, 1.0);
            b2.axpy(m2, &phi, 1.0);
        }
    }
    let f = SpdFactor::new(&gram, Some(MAX_CONDITION))?;
    Ok((f.solve(&b1), f.solve(&b2)))
}

fn sigma2_from_fits(features: &FeatureMap, w1: &DVector<f64>, w2: &DVector<f64>, horizon: usize) -> Vec<f64> {
    let cap = (horizon * horizon) as f64;
    let mut out = Vec::with_capacity(features.states * features.actions);
    for s in 0..features.states {
        for a in 0..features.actions {
            let m1 = features.dot(s, a, w1);
            let m2 = features.dot(s, a, w2);
            out.push((m2 - m1 * m1).clamp(1.0, cap));
        }
    }
    out
}

/// `σ̂²_h(s, a) = clip(m̂₂ − m̂₁², 1, H²)` at step `h`, indexed `[s * A + a]`.
pub fn variance_estimate(dataset: &Dataset, features: &FeatureMap, v_next: &[f64], h: usize, lambda: f64) -> Result<Vec<f64>> {
    check(dataset, features, lambda)?;
    if v_next.len() != dataset.states || h >= dataset.horizon {
        return Err(Error::Dimension("v_next length or step index out of range".into()));
    }
    let c = counts(dataset);
    let (w1, w2) = moment_fits(&c, features, h, v_next, lambda)?;
    Ok(sigma2_from_fits(features, &w1, &w2, dataset.horizon))
}

/// Backward pass shared by both learners.
///
/// `weighted` switches on per-step variance weights; `bonus(quad)` maps
/// `φᵀΛ⁻¹φ` to `Γ`.
fn fitted_pass(
    dataset: &Dataset,
    features: &FeatureMap,
    lambda: f64,
    weighted: bool,
    bonus: impl Fn(f64) -> f64,
) -> Result<(LearnedPolicyReport, GramState)> {
    check(dataset, features, lambda)?;
    let (s_n, a_n, h_n, d) = (dataset.states, dataset.actions, dataset.horizon, features.d);
    let c = counts(dataset);
    let mut v_hat = vec![0.0; (h_n + 1) * s_n];
    let mut q_hat = vec![0.0; h_n * s_n * a_n];
    let mut bonus_tab = vec![0.0; h_n * s_n * a_n];
    let mut sigma2_hat = vec![1.0; h_n * s_n * a_n];
    let mut table = vec![0; h_n * s_n];
    let mut grams = vec![DMatrix::zeros(d, d); h_n];
    let mut ws = vec![DVector::zeros(d); h_n];
    let mut conds = vec![0.0; h_n];
    for h in (0..h_n).rev() {
        let v_next = v_hat[(h + 1) * s_n..(h + 2) * s_n].to_vec();
        let sig = if weighted {
            let (w1, w2) = moment_fits(&c, features, h, &v_next, lambda)?;
            sigma2_from_fits(features, &w1, &w2, h_n)
        } else {
            vec![1.0; s_n * a_n]
        };
        let mut gram = DMatrix::<f64>::identity(d, d) * lambda;
        let mut b = DVector::zeros(d);
        for s in 0..s_n {
            for a in 0..a_n {
                let k = c.sa(h, s, a);
                if k == 0 {
                    continue;
                }
                let wgt = 1.0 / sig[s * a_n + a];
                let phi = features.vector(s, a);
                gram += &phi * phi.transpose() * (k as f64 * wgt);
                let (m1, _) = c.target_moments(h, s, a, &v_next);
                if !m1.is_finite() {
                    return Err(Error::NonFinite(h));
                }
                b.axpy(m1 * wgt, &phi, 1.0);
            }
        }
        let f = SpdFactor::new(&gram, Some(MAX_CONDITION))?;
        let w = f.solve(&b);
        let cap = (h_n - h) as f64;
        for s in 0..s_n {
            for a in 0..a_n {
                let cell = (h * s_n + s) * a_n + a;
                let phi = features.vector(s, a);
                let gamma = bonus(f.inv_quad(&phi));
                bonus_tab[cell] = gamma;
                sigma2_hat[cell] = sig[s * a_n + a];
                q_hat[cell] = (features.dot(s, a, &w) - gamma).clamp(0.0, cap);
            }
            let base = (h * s_n + s) * a_n;
            let a = argmax(&q_hat[base..base + a_n]);
            table[h * s_n + s] = a;
            v_hat[h * s_n + s] = q_hat[base + a];
        }
        conds[h] = f.condition;
        grams[h] = gram;
        ws[h] = w;
    }
    Ok((
        LearnedPolicyReport {
            policy: Policy::deterministic(s_n, a_n, h_n, &table),
            v_hat,
            q_hat,
            bonus: bonus_tab,
            iota: f64::NAN,
            suboptimality: None,
        },
        GramState { lambda: grams, w: ws, sigma2_hat, condition: conds },
    ))
}

/// Unweighted pessimistic FVI with `Γ = β·sqrt(φᵀΛ⁻¹φ)`.
pub fn pfvi(dataset: &Dataset, features: &FeatureMap, lambda: f64, beta: f64) -> Result<(LearnedPolicyReport, GramState)> {
    fitted_pass(dataset, features, lambda, false, |q| beta * q.sqrt())
}

/// Variance-weighted pessimistic FVI.
pub fn vw_pfvi(dataset: &Dataset, features: &FeatureMap, lambda: f64, config: &VwConfig) -> Result<(LearnedPolicyReport, GramState)> {
    if !(config.delta > 0.0 && config.delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta = {} outside (0, 1)", config.delta)));
    }
    let d = features.d;
    let h_n = dataset.horizon;
    let iota = config.iota(d, h_n, dataset.n);
    let scale = config.c * (d as f64 * iota).sqrt();
    let low = config.c_low * (h_n as f64).powi(4) * (d as f64).sqrt() * iota / dataset.n.max(1) as f64;
    let (mut rep, gram) = fitted_pass(dataset, features, lambda, true, |q| scale * q.sqrt() + low)?;
    rep.iota = iota;
    Ok((rep, gram))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetMeta, Step};

    #[test]
    fn single_sample_saturates_to_zero() {
        let ds = Dataset {
            n: 1,
            horizon: 2,
            states: 1,
            actions: 1,
            records: vec![Step { s: 0, a: 0, r: 1.0, s_next: 0 }; 2],
            meta: DatasetMeta::default(),
        };
        let f = FeatureMap::indicator(1, 1);
        let (rep, _) = pfvi(&ds, &f, 1.0, 100.0).unwrap();
        assert_eq!(rep.v_hat[0], 0.0);
    }

    #[test]
    fn rejects_zero_lambda() {
        let ds = Dataset::empty(1, 1, 1);
        assert!(pfvi(&ds, &FeatureMap::indicator(1, 1), 0.0, 1.0).is_err());
    }
}
