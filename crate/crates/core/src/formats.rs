//! Text formats for MDP fixtures and policies.
//!
//! MDP document, fields in this order:
//!
//! ```text
//! S 3
//! A 2
//! H 5
//! d1 1 0 0
//! P
//! h s a p_0 … p_{S-1}      one line per (h, s, a), row-major
//! r
//! h s r_0 … r_{A-1}        one line per (h, s)
//! reward_noise deterministic | bernoulli | cells
//! h s n_0 … n_{A-1}        only for `cells`; tokens `d` / `b`
//! ```
//!
//! Policies are `policy H S A` followed by `h s p_0 … p_{A-1}` lines.
//! Numbers are written with the shortest round-trip representation.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{parse_err, Error, ParseErrorKind, Result};
use crate::mdp::{validate_mdp, Policy, RewardNoise, TabularMdp};

pub fn format_mdp(mdp: &TabularMdp) -> String {
    let (s_n, a_n, h_n) = (mdp.states, mdp.actions, mdp.horizon);
    let mut out = format!("S {s_n}\nA {a_n}\nH {h_n}\nd1");
    for p in &mdp.d1 {
        let _ = write!(out, " {p}");
    }
    out.push_str("\nP\n");
    for h in 0..h_n {
        for s in 0..s_n {
            for a in 0..a_n {
                let _ = write!(out, "{h} {s} {a}");
                for p in mdp.p_row(h, s, a) {
                    let _ = write!(out, " {p}");
                }
                out.push('\n');
            }
        }
    }
    out.push_str("r\n");
    for h in 0..h_n {
        for s in 0..s_n {
            let _ = write!(out, "{h} {s}");
            for a in 0..a_n {
                let _ = write!(out, " {}", mdp.reward(h, s, a));
            }
            out.push('\n');
        }
    }
    let first = mdp.noise.first().copied().unwrap_or(RewardNoise::Deterministic);
    if mdp.noise.iter().all(|&n| n == first) {
        let name = match first {
            RewardNoise::Deterministic => "deterministic",
            RewardNoise::Bernoulli => "bernoulli",
        };
        let _ = writeln!(out, "reward_noise {name}");
    } else {
        out.push_str("reward_noise cells\n");
        for h in 0..h_n {
            for s in 0..s_n {
                let _ = write!(out, "{h} {s}");
                for a in 0..a_n {
                    let tok = match mdp.noise_at(h, s, a) {
                        RewardNoise::Deterministic => "d",
                        RewardNoise::Bernoulli => "b",
                    };
                    let _ = write!(out, " {tok}");
                }
                out.push('\n');
            }
        }
    }
    out
}

struct Lines<'a> {
    inner: Box<dyn Iterator<Item = (usize, &'a str)> + 'a>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines { inner: Box::new(text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty())), last: 0 }
    }

    fn next(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        match self.inner.next() {
            Some((ln, l)) => {
                self.last = ln;
                Ok((ln, l.split_whitespace().collect()))
            }
            None => Err(parse_err(self.last + 1, ParseErrorKind::UnexpectedEof(format!("expected {what}")))),
        }
    }

    /// A `key value…` line; returns the values.
    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (ln, toks) = self.next(key)?;
        if toks.first() != Some(&key) {
            return Err(parse_err(ln, ParseErrorKind::MalformedHeader(format!("expected `{key}`, found {:?}", toks.first()))));
        }
        Ok((ln, toks[1..].to_vec()))
    }

    fn dim(&mut self, key: &str) -> Result<usize> {
        let (ln, vals) = self.keyed(key)?;
        match vals.as_slice() {
            [v] => match v.parse::<usize>() {
                Ok(x) if x > 0 => Ok(x),
                _ => Err(parse_err(ln, ParseErrorKind::MalformedHeader(format!("{key} must be a positive integer")))),
            },
            _ => Err(parse_err(ln, ParseErrorKind::MalformedHeader(format!("{key} takes one value")))),
        }
    }
}

fn numbers(toks: &[&str], want: usize, ln: usize) -> Result<Vec<f64>> {
    if toks.len() != want {
        return Err(parse_err(ln, ParseErrorKind::TruncatedRecord(format!("{} of {want} values", toks.len()))));
    }
    toks.iter().map(|t| t.parse::<f64>().map_err(|_| parse_err(ln, ParseErrorKind::BadValue(format!("{t:?}"))))).collect()
}

/// Check that a record's leading indices are exactly `expect`.
fn indices(toks: &[&str], expect: &[(&'static str, usize, usize)], ln: usize) -> Result<()> {
    if toks.len() < expect.len() {
        return Err(parse_err(ln, ParseErrorKind::TruncatedRecord("missing indices".into())));
    }
    for (tok, &(field, want, bound)) in toks.iter().zip(expect) {
        let v: usize = tok.parse().map_err(|_| parse_err(ln, ParseErrorKind::BadValue(format!("{field} = {tok:?}"))))?;
        if v >= bound {
            return Err(parse_err(ln, ParseErrorKind::IndexOutOfRange { field, value: v, bound }));
        }
        if v != want {
            return Err(parse_err(ln, ParseErrorKind::BadValue(format!("{field} = {v}, expected {want} (row-major order)"))));
        }
    }
    Ok(())
}

/// Parse and validate an MDP document.
pub fn parse_mdp(text: &str) -> Result<TabularMdp> {
    let mut lines = Lines::new(text);
    let s_n = lines.dim("S")?;
    let a_n = lines.dim("A")?;
    let h_n = lines.dim("H")?;
    let (ln, vals) = lines.keyed("d1")?;
    let d1 = numbers(&vals, s_n, ln)?;
    lines.keyed("P")?;
    let mut p = Vec::with_capacity(h_n * s_n * a_n * s_n);
    for h in 0..h_n {
        for s in 0..s_n {
            for a in 0..a_n {
                let (ln, toks) = lines.next("transition row")?;
                indices(&toks, &[("h", h, h_n), ("s", s, s_n), ("a", a, a_n)], ln)?;
                p.extend(numbers(&toks[3..], s_n, ln)?);
            }
        }
    }
    lines.keyed("r")?;
    let mut r = Vec::with_capacity(h_n * s_n * a_n);
    for h in 0..h_n {
        for s in 0..s_n {
            let (ln, toks) = lines.next("reward row")?;
            indices(&toks, &[("h", h, h_n), ("s", s, s_n)], ln)?;
            r.extend(numbers(&toks[2..], a_n, ln)?);
        }
    }
    let (ln, vals) = lines.keyed("reward_noise")?;
    let noise = match vals.as_slice() {
        ["deterministic"] => vec![RewardNoise::Deterministic; h_n * s_n * a_n],
        ["bernoulli"] => vec![RewardNoise::Bernoulli; h_n * s_n * a_n],
        ["cells"] => {
            let mut noise = Vec::with_capacity(h_n * s_n * a_n);
            for h in 0..h_n {
                for s in 0..s_n {
                    let (ln, toks) = lines.next("reward noise row")?;
                    indices(&toks, &[("h", h, h_n), ("s", s, s_n)], ln)?;
                    if toks.len() != 2 + a_n {
                        return Err(parse_err(ln, ParseErrorKind::TruncatedRecord(format!("{} of {a_n} tokens", toks.len() - 2))));
                    }
                    for t in &toks[2..] {
                        noise.push(match *t {
                            "d" => RewardNoise::Deterministic,
                            "b" => RewardNoise::Bernoulli,
                            other => return Err(parse_err(ln, ParseErrorKind::BadValue(format!("noise token {other:?}")))),
                        });
                    }
                }
            }
            noise
        }
        other => return Err(parse_err(ln, ParseErrorKind::BadValue(format!("reward_noise {other:?}")))),
    };
    let mdp = TabularMdp { states: s_n, actions: a_n, horizon: h_n, p, r, d1, noise };
    let violations = validate_mdp(&mdp);
    if !violations.is_empty() {
        return Err(Error::InvalidMdp(violations));
    }
    Ok(mdp)
}

pub fn write_mdp(mdp: &TabularMdp, path: &Path) -> Result<()> {
    std::fs::write(path, format_mdp(mdp))?;
    Ok(())
}

pub fn read_mdp(path: &Path) -> Result<TabularMdp> {
    parse_mdp(&std::fs::read_to_string(path)?)
}

pub fn format_policy(policy: &Policy) -> String {
    let mut out = format!("policy {} {} {}\n", policy.horizon, policy.states, policy.actions);
    for h in 0..policy.horizon {
        for s in 0..policy.states {
            let _ = write!(out, "{h} {s}");
            for p in policy.row(h, s) {
                let _ = write!(out, " {p}");
            }
            out.push('\n');
        }
    }
    out
}

/// Parse a stochastic policy document; rows must sum to one.
pub fn parse_policy(text: &str) -> Result<Policy> {
    let mut lines = Lines::new(text);
    let (ln, vals) = lines.keyed("policy")?;
    let dims = vals
        .iter()
        .map(|t| t.parse::<usize>().ok().filter(|&x| x > 0))
        .collect::<Option<Vec<usize>>>()
        .filter(|v| v.len() == 3)
        .ok_or_else(|| parse_err(ln, ParseErrorKind::MalformedHeader("expected `policy H S A`".into())))?;
    let (h_n, s_n, a_n) = (dims[0], dims[1], dims[2]);
    let mut probs = Vec::with_capacity(h_n * s_n * a_n);
    for h in 0..h_n {
        for s in 0..s_n {
            let (ln, toks) = lines.next("policy row")?;
            indices(&toks, &[("h", h, h_n), ("s", s, s_n)], ln)?;
            let row = numbers(&toks[2..], a_n, ln)?;
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(parse_err(ln, ParseErrorKind::BadValue(format!("row sums to {sum}"))));
            }
            probs.extend(row);
        }
    }
    Ok(Policy { horizon: h_n, states: s_n, actions: a_n, probs })
}

pub fn read_policy(path: &Path) -> Result<Policy> {
    parse_policy(&std::fs::read_to_string(path)?)
}
