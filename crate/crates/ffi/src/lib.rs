//! C ABI over `offrl`.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `*_free`. Every fallible call returns an
//! [`OffrlStatus`]; on failure `offrl_last_error` holds a message for the
//! calling thread.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use offrl::data::{parse_dataset, sample_trajectories, Dataset};
use offrl::fixtures::build;
use offrl::formats::{format_mdp, parse_mdp, parse_policy};
use offrl::mdp::{policy_value, Policy, TabularMdp};
use offrl::ope_tabular::{estimate, Method};
use offrl::opl_tabular::{pvi, suboptimality, BonusConfig, BonusStyle};
use offrl::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffrlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Dimension = 4,
    /// Support or coverage requirement not met by the data.
    Unsupported = 5,
    Numerical = 6,
    Runtime = 7,
    Panic = 8,
}

pub struct OffrlMdp {
    inner: TabularMdp,
}

pub struct OffrlPolicy {
    inner: Policy,
}

pub struct OffrlDataset {
    inner: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(OffrlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Parse { .. } => OffrlStatus::Parse,
            Error::Dimension(_) => OffrlStatus::Dimension,
            Error::InvalidArgument(_) | Error::InvalidMdp(_) | Error::EmptyDataset | Error::PolicyCap { .. } => {
                OffrlStatus::InvalidArgument
            }
            Error::BehaviorSupport(_) | Error::UnsupportedStateActions(_) => OffrlStatus::Unsupported,
            Error::RankDeficient { .. } | Error::IllConditioned(_) | Error::NonFinite(_) => OffrlStatus::Numerical,
            Error::Environment(_) | Error::Io(_) => OffrlStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(OffrlStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OffrlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OffrlStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside offrl".into());
            OffrlStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(OffrlStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_f64(out: *mut f64, value: f64) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = value;
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn offrl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn offrl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn offrl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parse an MDP in the text fixture format.
///
/// # Safety
/// `src` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn offrl_mdp_parse(src: *const c_char, out: *mut *mut OffrlMdp) -> OffrlStatus {
    guard(|| {
        let mdp = parse_mdp(text(src, "src")?)?;
        put(out, OffrlMdp { inner: mdp }, "out")
    })
}

/// Render an MDP in the text fixture format; free the result with `offrl_string_free`.
/// Returns NULL if `mdp` is NULL.
///
/// # Safety
/// `mdp` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn offrl_mdp_format(mdp: *const OffrlMdp) -> *mut c_char {
    match mdp.as_ref() {
        Some(m) => CString::new(format_mdp(&m.inner)).map_or(ptr::null_mut(), CString::into_raw),
        None => ptr::null_mut(),
    }
}

/// Write `(S, A, H)` into the three out-pointers.
///
/// # Safety
/// `mdp` must be a live handle; the out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn offrl_mdp_dims(mdp: *const OffrlMdp, states: *mut usize, actions: *mut usize, horizon: *mut usize) -> OffrlStatus {
    guard(|| {
        let m = &handle(mdp, "mdp")?.inner;
        if states.is_null() || actions.is_null() || horizon.is_null() {
            return Err(null("out"));
        }
        *states = m.states;
        *actions = m.actions;
        *horizon = m.horizon;
        Ok(())
    })
}

/// # Safety
/// `mdp` must be NULL or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn offrl_mdp_free(mdp: *mut OffrlMdp) {
    if !mdp.is_null() {
        drop(Box::from_raw(mdp));
    }
}

/// Build a named fixture. `params` is whitespace-separated `key=value` pairs
/// and may be NULL. `behavior` and `target` may be NULL when not wanted.
///
/// # Safety
/// String arguments must be NUL-terminated; out-pointers must be valid or NULL as noted.
#[no_mangle]
pub unsafe extern "C" fn offrl_fixture(
    name: *const c_char,
    params: *const c_char,
    mdp: *mut *mut OffrlMdp,
    behavior: *mut *mut OffrlPolicy,
    target: *mut *mut OffrlPolicy,
) -> OffrlStatus {
    guard(|| {
        let name = text(name, "name")?;
        let mut map = BTreeMap::new();
        if !params.is_null() {
            for kv in text(params, "params")?.split_whitespace() {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Failure(OffrlStatus::InvalidArgument, format!("parameter {kv:?} is not key=value")))?;
                map.insert(k.to_string(), v.to_string());
            }
        }
        let f = build(name, &map)?;
        put(mdp, OffrlMdp { inner: f.mdp }, "mdp")?;
        if !behavior.is_null() {
            put(behavior, OffrlPolicy { inner: f.behavior }, "behavior")?;
        }
        if !target.is_null() {
            put(target, OffrlPolicy { inner: f.target }, "target")?;
        }
        Ok(())
    })
}

/// # Safety
/// `src` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn offrl_policy_parse(src: *const c_char, out: *mut *mut OffrlPolicy) -> OffrlStatus {
    guard(|| {
        let p = parse_policy(text(src, "src")?)?;
        put(out, OffrlPolicy { inner: p }, "out")
    })
}

#[no_mangle]
pub extern "C" fn offrl_policy_uniform(states: usize, actions: usize, horizon: usize) -> *mut OffrlPolicy {
    if states == 0 || actions == 0 || horizon == 0 {
        set_error("uniform policy needs S, A, H > 0".into());
        return ptr::null_mut();
    }
    Box::into_raw(Box::new(OffrlPolicy { inner: Policy::uniform(states, actions, horizon) }))
}

/// Action probability `π_h(a | s)`, or NaN on a NULL handle or out-of-range index.
///
/// # Safety
/// `policy` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn offrl_policy_prob(policy: *const OffrlPolicy, h: usize, s: usize, a: usize) -> f64 {
    match policy.as_ref() {
        Some(p) if h < p.inner.horizon && s < p.inner.states && a < p.inner.actions => p.inner.row(h, s)[a],
        _ => f64::NAN,
    }
}

/// # Safety
/// `policy` must be NULL or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn offrl_policy_free(policy: *mut OffrlPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Exact value `v^π` by backward induction.
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn offrl_policy_value(mdp: *const OffrlMdp, policy: *const OffrlPolicy, out: *mut f64) -> OffrlStatus {
    guard(|| {
        let v = policy_value(&handle(mdp, "mdp")?.inner, &handle(policy, "policy")?.inner)?;
        put_f64(out, v.value)
    })
}

/// `v* − v^π`.
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn offrl_suboptimality(mdp: *const OffrlMdp, policy: *const OffrlPolicy, out: *mut f64) -> OffrlStatus {
    guard(|| {
        let gap = suboptimality(&handle(mdp, "mdp")?.inner, &handle(policy, "policy")?.inner)?;
        put_f64(out, gap)
    })
}

/// Sample `n` trajectories under `behavior`.
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn offrl_sample(
    mdp: *const OffrlMdp,
    behavior: *const OffrlPolicy,
    n: usize,
    seed: u64,
    out: *mut *mut OffrlDataset,
) -> OffrlStatus {
    guard(|| {
        let ds = sample_trajectories(&handle(mdp, "mdp")?.inner, &handle(behavior, "behavior")?.inner, n, seed)?;
        put(out, OffrlDataset { inner: ds }, "out")
    })
}

/// Parse a dataset in the episode-log text format.
///
/// # Safety
/// `src` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn offrl_dataset_parse(src: *const c_char, out: *mut *mut OffrlDataset) -> OffrlStatus {
    guard(|| {
        let ds = parse_dataset(text(src, "src")?)?;
        put(out, OffrlDataset { inner: ds }, "out")
    })
}

/// Number of episodes, or 0 for NULL.
///
/// # Safety
/// `dataset` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn offrl_dataset_episodes(dataset: *const OffrlDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.n)
}

/// # Safety
/// `dataset` must be NULL or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn offrl_dataset_free(dataset: *mut OffrlDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Off-policy estimate of `v^target`. `method` is one of `IS`, `stepIS`,
/// `SMIS`, `TMIS`; `behavior` may be NULL for TMIS only.
///
/// # Safety
/// Handles must be live or NULL as noted; `method` NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn offrl_ope(
    dataset: *const OffrlDataset,
    target: *const OffrlPolicy,
    behavior: *const OffrlPolicy,
    method: *const c_char,
    out: *mut f64,
) -> OffrlStatus {
    guard(|| {
        let method: Method = text(method, "method")?.parse()?;
        let ds = &handle(dataset, "dataset")?.inner;
        let target = &handle(target, "target")?.inner;
        let report = match behavior.as_ref() {
            Some(b) => estimate(method, ds, target, &b.inner)?,
            None if method == Method::Tmis => offrl::ope_tabular::tmis_estimate(ds, target)?,
            None => return Err(null("behavior")),
        };
        put_f64(out, report.estimate)
    })
}

/// Pessimistic value iteration. `style` is `none`, `hoeffding` or `bernstein`.
/// The learned deterministic policy is written to `out`.
///
/// # Safety
/// `dataset` must be live; `style` NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn offrl_pvi(
    dataset: *const OffrlDataset,
    style: *const c_char,
    delta: f64,
    out: *mut *mut OffrlPolicy,
) -> OffrlStatus {
    guard(|| {
        let style: BonusStyle = text(style, "style")?.parse()?;
        let report = pvi(&handle(dataset, "dataset")?.inner, &BonusConfig::new(style, delta))?;
        put(out, OffrlPolicy { inner: report.policy }, "out")
    })
}
