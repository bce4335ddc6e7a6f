//! Trajectory simulation, dataset persistence and visit-count tables.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{parse_err, Error, ParseErrorKind, Result};
use crate::mdp::{Policy, RewardNoise, TabularMdp};
use crate::util::{sample_index, substream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetMeta {
    pub seed: Option<u64>,
    pub policy_hash: Option<u64>,
    pub mdp_hash: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n: usize,
    pub horizon: usize,
    pub states: usize,
    pub actions: usize,
    /// Trajectory-major: trajectory `i` occupies `records[i * H..(i + 1) * H]`.
    pub records: Vec<Step>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn empty(horizon: usize, states: usize, actions: usize) -> Self {
        Dataset { n: 0, horizon, states, actions, records: Vec::new(), meta: DatasetMeta::default() }
    }

    pub fn trajectory(&self, i: usize) -> &[Step] {
        &self.records[i * self.horizon..(i + 1) * self.horizon]
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &[Step]> + '_ {
        self.records.chunks_exact(self.horizon.max(1)).take(self.n)
    }

    /// Time-homogeneous view: all `N = nH` transitions pooled, step index dropped.
    pub fn pooled(&self) -> impl Iterator<Item = &Step> + '_ {
        self.records.iter()
    }

    /// Transitions at step `h` across trajectories.
    pub fn at_step(&self, h: usize) -> impl Iterator<Item = &Step> + '_ {
        self.records.iter().skip(h).step_by(self.horizon.max(1))
    }

    /// Dataset made of the given trajectories (with repetition), meta dropped.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut records = Vec::with_capacity(indices.len() * self.horizon);
        for &i in indices {
            records.extend_from_slice(self.trajectory(i));
        }
        Dataset {
            n: indices.len(),
            horizon: self.horizon,
            states: self.states,
            actions: self.actions,
            records,
            meta: DatasetMeta::default(),
        }
    }

    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if (self.horizon, self.states, self.actions) != (other.horizon, other.states, other.actions) {
            return Err(Error::Dimension("datasets have different (H, S, A)".into()));
        }
        let mut records = self.records.clone();
        records.extend_from_slice(&other.records);
        Ok(Dataset {
            n: self.n + other.n,
            horizon: self.horizon,
            states: self.states,
            actions: self.actions,
            records,
            meta: DatasetMeta::default(),
        })
    }

    /// Index-range and chain-consistency problems, as human-readable strings.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.records.len() != self.n * self.horizon {
            out.push(format!("{} records for n={} H={}", self.records.len(), self.n, self.horizon));
            return out;
        }
        for (i, traj) in self.trajectories().enumerate() {
            for (h, st) in traj.iter().enumerate() {
                if st.s >= self.states || st.s_next >= self.states || st.a >= self.actions {
                    out.push(format!("trajectory {i} step {h}: index out of range"));
                }
                if h + 1 < traj.len() && traj[h + 1].s != st.s_next {
                    out.push(format!("trajectory {i} step {h}: s_next does not match next state"));
                }
                if !st.r.is_finite() {
                    out.push(format!("trajectory {i} step {h}: non-finite reward"));
                }
            }
        }
        out
    }

    /// Map step-`h` state `s` to `h·S + s` for use with a time-augmented MDP.
    pub fn time_augmented(&self) -> Dataset {
        let (s_n, h_n) = (self.states, self.horizon);
        let records = self
            .records
            .iter()
            .enumerate()
            .map(|(k, st)| {
                let h = k % h_n;
                let next_layer = if h + 1 < h_n { h + 1 } else { 0 };
                Step { s: h * s_n + st.s, a: st.a, r: st.r, s_next: next_layer * s_n + st.s_next }
            })
            .collect();
        Dataset { n: self.n, horizon: h_n, states: h_n * s_n, actions: self.actions, records, meta: DatasetMeta::default() }
    }
}

/// Simulate trajectory `index` under the substream `(seed, index)`, appending its H steps.
pub fn simulate_trajectory(mdp: &TabularMdp, policy: &Policy, seed: u64, index: u64, out: &mut Vec<Step>) {
    let mut rng = substream(seed, index);
    let mut s = sample_index(&mut rng, &mdp.d1);
    for h in 0..mdp.horizon {
        let a = sample_index(&mut rng, policy.row(h, s));
        let mean = mdp.reward(h, s, a);
        let r = match mdp.noise_at(h, s, a) {
            RewardNoise::Deterministic => mean,
            RewardNoise::Bernoulli => {
                let u: f64 = rand::Rng::gen(&mut rng);
                if u < mean {
                    1.0
                } else {
                    0.0
                }
            }
        };
        let s_next = sample_index(&mut rng, mdp.p_row(h, s, a));
        out.push(Step { s, a, r, s_next });
        s = s_next;
    }
}

pub fn sample_trajectories(mdp: &TabularMdp, behavior: &Policy, n: usize, seed: u64) -> Result<Dataset> {
    mdp.check_policy(behavior)?;
    let h_n = mdp.horizon;
    let records: Vec<Step> = (0..n)
        .into_par_iter()
        .with_min_len(256)
        .flat_map_iter(|i| {
            let mut buf = Vec::with_capacity(h_n);
            simulate_trajectory(mdp, behavior, seed, i as u64, &mut buf);
            buf
        })
        .collect();
    Ok(Dataset {
        n,
        horizon: h_n,
        states: mdp.states,
        actions: mdp.actions,
        records,
        meta: DatasetMeta { seed: Some(seed), policy_hash: Some(behavior.hash()), mdp_hash: Some(mdp.hash()) },
    })
}

/// Visit counts and reward moments per step.
///
/// Beyond the plain counts, `r_sq_sum` and `r_next_sum` (reward-weighted
/// transition counts) let variance estimators form exact sample moments of
/// `r + V(s')` without revisiting the data.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTables {
    pub horizon: usize,
    pub states: usize,
    pub actions: usize,
    pub n: usize,
    /// `[(h * S + s) * A + a]`
    pub n_sa: Vec<u64>,
    /// `[h * S + s]`
    pub n_s: Vec<u64>,
    /// `[((h * S + s) * A + a) * S + s']`
    pub n_sas: Vec<u64>,
    pub r_sum: Vec<f64>,
    pub r_sq_sum: Vec<f64>,
    /// `Σ r·1{s_next = s'}`, same layout as `n_sas`.
    pub r_next_sum: Vec<f64>,
}

impl CountTables {
    pub fn zeros(horizon: usize, states: usize, actions: usize) -> Self {
        let cells = horizon * states * actions;
        CountTables {
            horizon,
            states,
            actions,
            n: 0,
            n_sa: vec![0; cells],
            n_s: vec![0; horizon * states],
            n_sas: vec![0; cells * states],
            r_sum: vec![0.0; cells],
            r_sq_sum: vec![0.0; cells],
            r_next_sum: vec![0.0; cells * states],
        }
    }

    #[inline]
    pub fn cell(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.states + s) * self.actions + a
    }

    #[inline]
    pub fn sa(&self, h: usize, s: usize, a: usize) -> u64 {
        self.n_sa[self.cell(h, s, a)]
    }

    #[inline]
    pub fn state(&self, h: usize, s: usize) -> u64 {
        self.n_s[h * self.states + s]
    }

    #[inline]
    pub fn sas_row(&self, h: usize, s: usize, a: usize) -> &[u64] {
        let i = self.cell(h, s, a) * self.states;
        &self.n_sas[i..i + self.states]
    }

    #[inline]
    pub fn r_next_row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let i = self.cell(h, s, a) * self.states;
        &self.r_next_sum[i..i + self.states]
    }

    fn record(&mut self, h: usize, st: &Step) {
        let c = self.cell(h, st.s, st.a);
        self.n_sa[c] += 1;
        self.n_s[h * self.states + st.s] += 1;
        self.n_sas[c * self.states + st.s_next] += 1;
        self.r_sum[c] += st.r;
        self.r_sq_sum[c] += st.r * st.r;
        self.r_next_sum[c * self.states + st.s_next] += st.r;
    }

    /// Sum of target moments `(Σ y, Σ y²)` with `y = r + v_next(s')` over visits to `(h, s, a)`.
    pub fn target_moments(&self, h: usize, s: usize, a: usize, v_next: &[f64]) -> (f64, f64) {
        let c = self.cell(h, s, a);
        let row = self.sas_row(h, s, a);
        let rn = self.r_next_row(h, s, a);
        let mut m1 = self.r_sum[c];
        let mut m2 = self.r_sq_sum[c];
        for s2 in 0..self.states {
            let v = v_next[s2];
            m1 += row[s2] as f64 * v;
            m2 += 2.0 * rn[s2] * v + row[s2] as f64 * v * v;
        }
        (m1, m2)
    }

    pub fn add(&self, other: &CountTables) -> Result<CountTables> {
        if (self.horizon, self.states, self.actions) != (other.horizon, other.states, other.actions) {
            return Err(Error::Dimension("count tables have different (H, S, A)".into()));
        }
        fn sum_u(a: &[u64], b: &[u64]) -> Vec<u64> {
            a.iter().zip(b).map(|(x, y)| x + y).collect()
        }
        fn sum_f(a: &[f64], b: &[f64]) -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| x + y).collect()
        }
        Ok(CountTables {
            horizon: self.horizon,
            states: self.states,
            actions: self.actions,
            n: self.n + other.n,
            n_sa: sum_u(&self.n_sa, &other.n_sa),
            n_s: sum_u(&self.n_s, &other.n_s),
            n_sas: sum_u(&self.n_sas, &other.n_sas),
            r_sum: sum_f(&self.r_sum, &other.r_sum),
            r_sq_sum: sum_f(&self.r_sq_sum, &other.r_sq_sum),
            r_next_sum: sum_f(&self.r_next_sum, &other.r_next_sum),
        })
    }
}

pub fn counts(dataset: &Dataset) -> CountTables {
    let mut c = CountTables::zeros(dataset.horizon, dataset.states, dataset.actions);
    c.n = dataset.n;
    for traj in dataset.trajectories() {
        for (h, st) in traj.iter().enumerate() {
            c.record(h, st);
        }
    }
    c
}

/// Counts with every step folded into a single layer (`horizon = 1`, `n = nH`).
pub fn pooled_counts(dataset: &Dataset) -> CountTables {
    let mut c = CountTables::zeros(1, dataset.states, dataset.actions);
    c.n = dataset.n * dataset.horizon;
    for st in dataset.pooled() {
        c.record(0, st);
    }
    c
}

fn hex_or_dash(x: Option<u64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:016x}"))
}

pub fn format_dataset(ds: &Dataset) -> String {
    let mut out = String::with_capacity(48 * ds.records.len() + 64);
    let _ = writeln!(out, "{} {} {} {}", ds.n, ds.horizon, ds.states, ds.actions);
    for (i, traj) in ds.trajectories().enumerate() {
        for (h, st) in traj.iter().enumerate() {
            let _ = writeln!(out, "{i} {h} {} {} {:.16e} {}", st.s, st.a, st.r, st.s_next);
        }
    }
    out.push_str("meta\n");
    let _ = writeln!(out, "seed {}", ds.meta.seed.map_or_else(|| "-".into(), |s| s.to_string()));
    let _ = writeln!(out, "policy_hash {}", hex_or_dash(ds.meta.policy_hash));
    let _ = writeln!(out, "mdp_hash {}", hex_or_dash(ds.meta.mdp_hash));
    out
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, format_dataset(ds))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

fn field<T: std::str::FromStr>(tok: &str, line: usize, name: &str) -> Result<T> {
    tok.parse().map_err(|_| parse_err(line, ParseErrorKind::BadValue(format!("{name} = {tok:?}"))))
}

fn in_range(value: usize, bound: usize, field: &'static str, line: usize) -> Result<usize> {
    if value >= bound {
        return Err(parse_err(line, ParseErrorKind::IndexOutOfRange { field, value, bound }));
    }
    Ok(value)
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, ParseErrorKind::MalformedHeader("missing `n H S A` header".into())))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 4 {
        return Err(parse_err(hl, ParseErrorKind::MalformedHeader(format!("expected 4 fields, found {}", head.len()))));
    }
    let mut dims = [0usize; 4];
    for (d, tok) in dims.iter_mut().zip(&head) {
        *d = tok.parse().map_err(|_| parse_err(hl, ParseErrorKind::MalformedHeader(format!("non-integer field {tok:?}"))))?;
    }
    let [n, h_n, s_n, a_n] = dims;
    if h_n == 0 || s_n == 0 || a_n == 0 {
        return Err(parse_err(hl, ParseErrorKind::MalformedHeader("H, S, A must be ≥ 1".into())));
    }
    let total = n * h_n;
    let mut records = Vec::with_capacity(total);
    let mut last_line = hl;
    for k in 0..total {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(last_line + 1, ParseErrorKind::UnexpectedEof(format!("expected {total} records, found {k}"))))?;
        last_line = ln;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() < 6 {
            return Err(parse_err(ln, ParseErrorKind::TruncatedRecord(format!("{} of 6 fields", toks.len()))));
        }
        let i: usize = field(toks[0], ln, "i")?;
        let h: usize = field(toks[1], ln, "h")?;
        if i != k / h_n || h != k % h_n {
            return Err(parse_err(
                ln,
                ParseErrorKind::BadValue(format!("record (i={i}, h={h}) out of order, expected ({}, {})", k / h_n, k % h_n)),
            ));
        }
        let s = in_range(field(toks[2], ln, "s")?, s_n, "s", ln)?;
        let a = in_range(field(toks[3], ln, "a")?, a_n, "a", ln)?;
        let r: f64 = field(toks[4], ln, "r")?;
        let s_next = in_range(field(toks[5], ln, "s_next")?, s_n, "s_next", ln)?;
        if h > 0 {
            let prev: &Step = records.last().unwrap();
            if prev.s_next != s {
                return Err(parse_err(ln, ParseErrorKind::BadValue(format!("s = {s} does not continue s_next = {}", prev.s_next))));
            }
        }
        records.push(Step { s, a, r, s_next });
    }
    let mut meta = DatasetMeta::default();
    if let Some((ln, l)) = lines.next() {
        if l != "meta" {
            return Err(parse_err(ln, ParseErrorKind::BadValue(format!("expected `meta`, found {l:?}"))));
        }
        for (ln, l) in lines {
            let (key, val) = l.split_once(' ').ok_or_else(|| parse_err(ln, ParseErrorKind::TruncatedRecord(format!("meta line {l:?}"))))?;
            let val = val.trim();
            let hex = |v: &str| -> Result<Option<u64>> {
                if v == "-" {
                    return Ok(None);
                }
                u64::from_str_radix(v, 16).map(Some).map_err(|_| parse_err(ln, ParseErrorKind::BadValue(format!("{key} = {v:?}"))))
            };
            match key {
                "seed" => meta.seed = if val == "-" { None } else { Some(field(val, ln, "seed")?) },
                "policy_hash" => meta.policy_hash = hex(val)?,
                "mdp_hash" => meta.mdp_hash = hex(val)?,
                _ => return Err(parse_err(ln, ParseErrorKind::BadValue(format!("unknown meta key {key:?}")))),
            }
        }
    }
    Ok(Dataset { n, horizon: h_n, states: s_n, actions: a_n, records, meta })
}
