//! Weight functions `h`, `ψ`, `ψ′` for the constructive regimes, numerical
//! checks of the drift assumptions, and the closed-form criteria.
//!
//! Every limit at `0` or `+∞` is estimated from the first or last two decades
//! of the probe grid. Reports built this way carry `extrapolated = true`.

use std::sync::Arc;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::flow::{CumulativeTable, FlowEngine};
use crate::model::{generator_ratio, tilted_mass, ModelSpec, RelativeMeasure, ScalarFn, WeightFunction};
use crate::optim::{bisect, maximize, minimize, MinimizeOptions};

/// Which constructive family produced the weights of a report.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Entrance,
    PseudoEntrance,
    LnxCritical,
    KConstantCritical,
    Custom,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Entrance => "entrance",
            Regime::PseudoEntrance => "pseudo-entrance",
            Regime::LnxCritical => "lnx-critical",
            Regime::KConstantCritical => "K-constant-critical",
            Regime::Custom => "custom",
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "entrance" => Regime::Entrance,
            "pseudo-entrance" => Regime::PseudoEntrance,
            "lnx-critical" => Regime::LnxCritical,
            "K-constant-critical" => Regime::KConstantCritical,
            "custom" => Regime::Custom,
            other => return Err(Error::Domain(format!("unknown regime `{other}`"))),
        })
    }
}

/// One numerical check; `pass` iff `margin > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub margin: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, margin: f64) -> Self {
        Check { name: name.into(), margin, pass: margin > 0.0 }
    }

    /// Boolean check reported with margin ±1.
    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Self::new(name, if ok { 1.0 } else { -1.0 })
    }
}

#[derive(Clone, Debug)]
pub struct AssumptionReport {
    pub regime: Regime,
    pub h: WeightFunction,
    pub psi: WeightFunction,
    pub psi_prime: WeightFunction,
    /// `sup A h / h` over the probes (refined near the maximizer).
    pub b: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// `A ψ′ / ψ′` is constant on the probes.
    pub lambda2_constant: bool,
    /// The compact set `L` of the drift condition.
    pub l: (f64, f64),
    /// The constant `C` of the drift condition.
    pub c: f64,
    pub checks: Vec<Check>,
    /// Some quantity was a limit estimated from tail probes.
    pub extrapolated: bool,
    pub extras: Vec<(String, f64)>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn extra(&self, name: &str) -> Option<f64> {
        self.extras.iter().find(|e| e.0 == name).map(|e| e.1)
    }

    /// `{regime, b, lambda1, lambda2, L, checks, ...}`. Non-finite numbers
    /// are reported as `null`.
    pub fn to_json(&self) -> Value {
        let checks: Vec<Value> = self
            .checks
            .iter()
            .map(|c| json!({"name": c.name, "margin": num(c.margin), "pass": c.pass}))
            .collect();
        let mut extras = Map::new();
        for (k, v) in &self.extras {
            extras.insert(k.clone(), num(*v));
        }
        json!({
            "regime": self.regime.as_str(),
            "b": num(self.b),
            "lambda1": num(self.lambda1),
            "lambda2": num(self.lambda2),
            "L": [num(self.l.0), num(self.l.1)],
            "C": num(self.c),
            "checks": checks,
            "pass": self.passed(),
            "lambda2_constant": self.lambda2_constant,
            "extrapolated": self.extrapolated,
            "h": self.h.label(),
            "psi": self.psi.label(),
            "psi_prime": self.psi_prime.label(),
            "extras": Value::Object(extras),
        })
    }
}

fn num(x: f64) -> Value {
    if x.is_finite() { json!(x) } else { Value::Null }
}

fn opts() -> MinimizeOptions {
    MinimizeOptions::default()
}

// ---------------------------------------------------------------------------
// Closed-form criteria.

/// Minimum of an objective and its minimizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Threshold {
    pub threshold: f64,
    pub argmin: f64,
}

/// `α / (1 − ∫u^α p(du))`, the normalized threshold of the pseudo-entrance
/// criterion; `+inf` where the denominator is not positive.
pub fn relative_objective(p: &RelativeMeasure, alpha: f64) -> f64 {
    match p.moment(alpha) {
        Ok(m) if m < 1.0 => alpha / (1.0 - m),
        _ => f64::INFINITY,
    }
}

/// Minimizes [`relative_objective`] over `α > 1`.
pub fn criterion_relative(p: &RelativeMeasure) -> Result<Threshold> {
    if !p.mass().is_finite() {
        return Err(Error::Unsupported("pseudo-entrance criterion needs a finite p".into()));
    }
    let m = minimize(|a| relative_objective(p, a), (1.5, 4.0), (1.0, f64::INFINITY), &opts())?;
    if !m.value.is_finite() {
        return Err(Error::CriterionViolated { criterion: "pseudo-entrance threshold".into(), at: None, margin: f64::NEG_INFINITY });
    }
    Ok(Threshold { threshold: m.value, argmin: m.argmin })
}

/// `p(du) = 2du`: minimum of `α(α+1)/(α−1)`, `3+2√2` at `1+√2`.
pub fn criterion_uniform_kernel() -> Threshold {
    criterion_relative(&RelativeMeasure::uniform_binary()).expect("finite measure")
}

/// `p = 2δ_{1/2}`: minimum of `α/(1−2^{1−α})`.
pub fn criterion_mitosis_kernel() -> Threshold {
    criterion_relative(&RelativeMeasure::mitosis()).expect("finite measure")
}

/// Best constants in the `s = ln x` criterion: `limsup_{0} K < low` and
/// `liminf_{∞} K > high`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LnxThresholds {
    pub low: f64,
    pub high: f64,
}

/// `low = sup_{α<1} (1−α)/(p_α − 1)`, `high = inf_{β>1} (β−1)/(1 − p_β)`.
///
/// For a mass-conserving `p`, `a ↦ p_a` is convex with `p_1 = 1`, so both
/// extrema are the limit at exponent 1: `1 / ∫(−u ln u) p(du)`.
pub fn criterion_lnx(p: &RelativeMeasure) -> Result<LnxThresholds> {
    if !p.is_mass_conserving() {
        return Err(Error::InvalidKernel("the lnx criterion needs ∫ u p(du) = 1".into()));
    }
    let slope = p.u_log_moment()?;
    if !(slope > 0.0 && slope.is_finite()) {
        return Err(Error::MomentDivergence(format!("∫ −u ln u p(du) = {slope}")));
    }
    let t = 1.0 / slope;
    Ok(LnxThresholds { low: t, high: t })
}

/// `(α + c0)(c∞ − α)/(c0 − α)`.
pub fn reggen_objective(c0: f64, c_inf: f64, alpha: f64) -> f64 {
    (alpha + c0) * (c_inf - alpha) / (c0 - alpha)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reggen {
    /// `3c0 − c∞ − 2√(2c0(c0 − c∞))`.
    pub closed_form: f64,
    /// Maximum of [`reggen_objective`] over `α ∈ [0, c∞)`; the usable threshold.
    pub optimizer_max: f64,
    pub argmax: f64,
    /// The stationary point `c0 − √(2c0(c0−c∞))` lies in `[0, c∞)`, which
    /// happens iff `c0 ≤ 2c∞`; otherwise the maximum is `c∞` at `α = 0`.
    pub closed_form_valid: bool,
}

/// Threshold on `limsup_{0} K` for the piecewise linear speed with the
/// uniform kernel.
pub fn criterion_reggen(c0: f64, c_inf: f64) -> Result<Reggen> {
    if !(c_inf > 0.0 && c0 > c_inf && c0.is_finite()) {
        return Err(Error::Domain(format!("criterion needs 0 < c_inf < c0, got c0 = {c0}, c_inf = {c_inf}")));
    }
    let root = (2.0 * c0 * (c0 - c_inf)).sqrt();
    let closed_form = 3.0 * c0 - c_inf - 2.0 * root;
    let star = c0 - root;
    let closed_form_valid = star >= 0.0 && star < c_inf;
    let m = maximize(|a| reggen_objective(c0, c_inf, a), (0.25 * c_inf, 0.75 * c_inf), (0.0, c_inf), &opts())?;
    let at_zero = reggen_objective(c0, c_inf, 0.0);
    let (optimizer_max, argmax) = if at_zero >= m.value { (at_zero, 0.0) } else { (m.value, m.argmin) };
    Ok(Reggen { closed_form, optimizer_max, argmax, closed_form_valid })
}

// ---------------------------------------------------------------------------
// Tail estimates.

/// Indices of probes in the first (`low = true`) or last two decades.
fn tail_indices(probes: &[f64], low: bool) -> Vec<usize> {
    let n = probes.len();
    if low {
        let cut = probes[0] * 100.0;
        (0..n).filter(|&i| probes[i] <= cut).collect()
    } else {
        let cut = probes[n - 1] / 100.0;
        (0..n).filter(|&i| probes[i] >= cut).collect()
    }
}

fn monotone(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0]) || v.windows(2).all(|w| w[1] <= w[0])
}

/// `limsup` (`sup = true`) or `liminf` of `values` at one end of the probe
/// grid: the boundary value when the tail is monotone, else the extreme over
/// the tail.
pub fn tail_limit(probes: &[f64], values: &[f64], at_zero: bool, sup: bool) -> f64 {
    let idx = tail_indices(probes, at_zero);
    let mut tail: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
    if at_zero {
        tail.reverse();
    }
    if monotone(&tail) {
        *tail.last().expect("non-empty tail")
    } else if sup {
        tail.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    } else {
        tail.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

// ---------------------------------------------------------------------------
// Weight constructions.

/// `x ↦ ∫₁ˣ K(y)/c(y) dy = ∫₁ˣ K ds`, tabulated.
fn k_scale_table(model: &ModelSpec) -> Result<Arc<CumulativeTable>> {
    let m = model.clone();
    let g: ScalarFn = Arc::new(move |x| {
        let v = m.loss_rate(x) / m.speed(x);
        if v.is_finite() { v } else { 0.0 }
    });
    let t = CumulativeTable::build(g, &model.kinks(), model.domain.0 * 1e-3, model.domain.1 * 1e4, false)?;
    Ok(Arc::new(t))
}

/// The two-sided weight `exp(−a0 I(x))` below 1 and `exp(a∞ I(x))` above,
/// with `I(x) = ∫₁ˣ K ds`.
pub fn pseudo_entrance_weight(model: &ModelSpec, a0: f64, a_inf: f64) -> Result<WeightFunction> {
    let table = k_scale_table(model)?;
    pseudo_entrance_from_table(model, table, a0, a_inf)
}

fn pseudo_entrance_from_table(model: &ModelSpec, table: Arc<CumulativeTable>, a0: f64, a_inf: f64) -> Result<WeightFunction> {
    let i_zero = table.left_limit()?;
    if !i_zero.is_finite() {
        return Err(Error::CriterionViolated { criterion: "∫_(0,1) K ds < inf".into(), at: None, margin: f64::NEG_INFINITY });
    }
    let ln_h = {
        let t = table.clone();
        move |x: f64| {
            let i = t.value(x).unwrap_or(f64::NAN);
            if x < 1.0 { -a0 * i } else { a_inf * i }
        }
    };
    let dlog = {
        let m = model.clone();
        move |x: f64| if x < 1.0 { -a0 * m.loss_rate(x) } else { a_inf * m.loss_rate(x) }
    };
    let ln_zero = -a0 * i_zero;
    let (lv, dl) = (ln_h.clone(), dlog.clone());
    let ls = ln_h.clone();
    let mut kinks = model.kinks();
    kinks.push(1.0);
    Ok(WeightFunction::new(
        format!("pseudo-entrance(a0={a0}, a_inf={a_inf})"),
        move |x| lv(x).exp(),
        move |x| dl(x) * ln_h(x).exp(),
    )
    .with_log_forms(ls.clone(), dlog)
    .with_kinks(kinks)
    .with_ln_sup_below(move |x| if x <= 1.0 { ln_zero } else { ln_zero.max(ls(x)) }))
}

/// Outcome of the pseudo-entrance construction.
#[derive(Clone, Debug)]
pub struct PseudoEntrance {
    pub h: WeightFunction,
    /// The `α` actually used (the requested one, or the optimal one after a retry).
    pub alpha: f64,
    pub a0: f64,
    pub a_inf: f64,
    /// `(α/ℓ, 1 − p_α)`.
    pub window: (f64, f64),
    pub eps_half: f64,
    pub ell: f64,
    /// `(u, margin)` of the growth condition at `x = x_max / 2`.
    pub margins: Vec<(f64, f64)>,
    pub b: f64,
}

const U_PROBES: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

/// Builds `h` for the pseudo-entrance regime: `a0 = p0 − 1 + 0.05` and `a∞`
/// the candidate in `(α/ℓ, 1 − p_α)` with the smallest `sup Ah/h`.
///
/// When the growth condition fails at the requested `α` the construction
/// is retried once with the optimal `α` of [`criterion_relative`].
pub fn pseudo_entrance(model: &ModelSpec, alpha: f64) -> Result<PseudoEntrance> {
    if !(alpha > 1.0) {
        return Err(Error::Domain(format!("alpha = {alpha} must exceed 1")));
    }
    let p = model
        .relative_measure()
        .ok_or_else(|| Error::Unsupported("pseudo-entrance weights need a relative kernel".into()))?;
    let p0 = p.mass();
    if !p0.is_finite() {
        return Err(Error::Unsupported("pseudo-entrance weights need a finite p".into()));
    }
    let table = k_scale_table(model)?;
    if !table.left_limit()?.is_finite() {
        return Err(Error::CriterionViolated { criterion: "∫_(0,1) K ds < inf".into(), at: None, margin: f64::NEG_INFINITY });
    }
    let x = 0.5 * model.domain.1;
    let i_of = |y: f64| table.value(y);
    let margins_for = |a: f64| -> Result<(f64, Vec<(f64, f64)>)> {
        let t = relative_objective(p, a);
        let mut out = vec![];
        for u in U_PROBES {
            out.push((u, (i_of(x)? - i_of(u * x)?) / (-u.ln()) - t));
        }
        Ok((t, out))
    };

    let mut alpha = alpha;
    let (mut t, mut margins) = margins_for(alpha)?;
    if margins.iter().any(|m| !(m.1 > 0.0)) {
        let best = criterion_relative(p)?;
        if (best.argmin - alpha).abs() > 1e-9 {
            alpha = best.argmin;
            (t, margins) = margins_for(alpha)?;
        }
    }
    if let Some(&(u, m)) = margins.iter().find(|m| !(m.1 > 0.0)) {
        return Err(Error::CriterionViolated { criterion: "pseudo-entrance growth condition".into(), at: Some(u), margin: m });
    }
    let p_alpha = p.moment(alpha)?;
    let eps_half = (i_of(x)? - i_of(0.5 * x)?) / std::f64::consts::LN_2 - t;
    let ell = t + 0.5 * eps_half;
    let window = (alpha / ell, 1.0 - p_alpha);
    if !(window.0 < window.1) {
        return Err(Error::CriterionViolated { criterion: "a_inf window".into(), at: None, margin: window.1 - window.0 });
    }
    let a0 = p0 - 1.0 + 0.05;

    let probes = model.probe_grid();
    let mut best: Option<(f64, f64, WeightFunction)> = None;
    for k in 1..=8 {
        let a_inf = window.0 + (window.1 - window.0) * k as f64 / 9.0;
        // The proof's choice of a∞ also needs ∫ u^{a∞(ε+T)} p(du) < p_α.
        if !(p.moment(a_inf * (eps_half + t)).unwrap_or(f64::INFINITY) < p_alpha) {
            continue;
        }
        let h = pseudo_entrance_from_table(model, table.clone(), a0, a_inf)?;
        let mut b = f64::NEG_INFINITY;
        for &y in &probes {
            b = b.max(generator_ratio(model, &h, y)?);
        }
        if best.as_ref().is_none_or(|bb| b < bb.1) {
            best = Some((a_inf, b, h));
        }
    }
    let (a_inf, b, h) = best.ok_or_else(|| Error::CriterionViolated {
        criterion: "a_inf moment condition".into(),
        at: None,
        margin: -1.0,
    })?;
    Ok(PseudoEntrance { h, alpha, a0, a_inf, window, eps_half, ell, margins, b })
}

/// The `h` of [`pseudo_entrance`].
pub fn build_h_pseudo_entrance(model: &ModelSpec, alpha: f64) -> Result<WeightFunction> {
    Ok(pseudo_entrance(model, alpha)?.h)
}

/// `exp(α s(x))` below 1 and `exp(β s(x))` above.
///
/// Only the integrability half of the power-law conditions is enforced
/// here; the strict inequalities on `α`, `β` are reported by
/// [`criterion_lnx_model`].
pub fn build_h_powerlaw(model: &ModelSpec, engine: &FlowEngine, alpha: f64, beta: f64) -> Result<WeightFunction> {
    if let Some(p) = model.relative_measure() {
        let probes = model.probe_grid();
        let ratio_inf = |lo: bool| {
            probes
                .iter()
                .filter(|&&x| (x < 1.0) == lo)
                .map(|&x| x / model.speed(x))
                .fold(f64::INFINITY, f64::min)
        };
        for (name, e) in [("alpha", alpha * ratio_inf(true)), ("beta", beta * ratio_inf(false))] {
            if e.is_finite() && p.moment(e).is_err() {
                return Err(Error::CriterionViolated {
                    criterion: format!("∫ u^({name}·inf x/c) p(du) < inf"),
                    at: Some(e),
                    margin: f64::NEG_INFINITY,
                });
            }
        }
    }
    let s_zero = engine.s_zero();
    let e1 = engine.clone();
    let ln_h = move |x: f64| {
        let s = e1.s_of(x).unwrap_or(f64::NAN);
        if x < 1.0 { alpha * s } else { beta * s }
    };
    let dlog = move |x: f64| if x < 1.0 { alpha } else { beta };
    let ln_zero = if alpha == 0.0 { 0.0 } else { alpha * s_zero };
    let (lv, lv2, ls) = (ln_h.clone(), ln_h.clone(), ln_h.clone());
    Ok(WeightFunction::new(
        format!("powerlaw(alpha={alpha}, beta={beta})"),
        move |x| lv(x).exp(),
        move |x| dlog(x) * lv2(x).exp(),
    )
    .with_log_forms(ln_h, dlog)
    .with_kinks(vec![1.0])
    .with_ln_sup_below(move |x| {
        // Increasing on each side of 1 when the exponents are non-negative.
        let here = ls(x);
        let below = if alpha >= 0.0 { f64::NEG_INFINITY } else { ln_zero };
        let left = if x > 1.0 && beta < 0.0 { 0.0 } else { f64::NEG_INFINITY };
        here.max(below).max(left)
    }))
}

// ---------------------------------------------------------------------------
// Assumption checks.

/// `λ2 = −inf A ψ′/ψ′` over the probe grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lambda2Bound {
    pub lambda2: f64,
    /// `A ψ′/ψ′` is constant on the probes (spread ≤ 1e-9 (1 + |max|)).
    pub constant: bool,
    /// The infimum is approached at a boundary of the probe grid, so the
    /// true infimum may be smaller.
    pub extrapolated: bool,
}

pub fn lambda2_bound(model: &ModelSpec, psi_prime: &WeightFunction) -> Result<Lambda2Bound> {
    let probes = model.probe_grid();
    let vals = probes.iter().map(|&x| generator_ratio(model, psi_prime, x)).collect::<Result<Vec<_>>>()?;
    Ok(lambda2_from(&vals))
}

fn lambda2_from(vals: &[f64]) -> Lambda2Bound {
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = vals.len();
    let decreasing_right = vals[n - 2] > vals[n - 1] && vals[n - 1] <= lo;
    let decreasing_left = vals[1] > vals[0] && vals[0] <= lo;
    Lambda2Bound {
        lambda2: -lo,
        constant: hi - lo <= 1e-9 * (1.0 + hi.abs()),
        extrapolated: decreasing_right || decreasing_left,
    }
}

/// Shared evaluation of `A h/h`, `A ψ/ψ`, `λ1`, `L` and `C`.
struct Drift {
    b: f64,
    lambda1: f64,
    l: (f64, f64),
    c: f64,
    tilted_sups: Vec<(f64, f64)>,
}

/// `sup A h/h`: probe maximum, refined by golden section around the
/// maximizing probe and by left limits at the kinks of `h`.
fn sup_ratio_refined(model: &ModelSpec, h: &WeightFunction, probes: &[f64], vals: &[f64]) -> Result<f64> {
    let (imax, &vmax) = vals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty probes");
    let mut b = vmax;
    let lo = probes[imax.saturating_sub(1)].ln();
    let hi = probes[(imax + 1).min(probes.len() - 1)].ln();
    if hi > lo {
        let f = |t: f64| generator_ratio(model, h, t.exp()).unwrap_or(f64::NEG_INFINITY);
        let mid = probes[imax].ln();
        let guess = (0.5 * (lo + mid), 0.5 * (mid + hi));
        if guess.0 < guess.1 {
            if let Ok(m) = maximize(f, guess, (lo, hi), &MinimizeOptions { abs_tol: 1e-8, ..opts() }) {
                b = b.max(m.value);
            }
        }
    }
    let mut kinks = h.kinks().to_vec();
    kinks.extend(model.kinks());
    for k in kinks {
        if k > probes[0] && k < probes[probes.len() - 1] {
            b = b.max(generator_ratio(model, h, k * (1.0 - 1e-9))?);
        }
    }
    Ok(b)
}

fn drift(model: &ModelSpec, h: &WeightFunction, psi: &WeightFunction, lambda_ref: f64) -> Result<(Drift, Vec<f64>)> {
    let probes = model.probe_grid();
    let n = probes.len();
    let hv = probes.iter().map(|&x| generator_ratio(model, h, x)).collect::<Result<Vec<_>>>()?;
    if let Some(bad) = hv.iter().find(|v| !v.is_finite()) {
        return Err(Error::UnboundedAbove { last: *bad });
    }
    let last: Vec<usize> = tail_indices(&probes, false).into_iter().filter(|&i| probes[i] >= probes[n - 1] / 10.0).collect();
    let increasing = last.windows(2).all(|w| hv[w[1]] > hv[w[0]] + 1e-12 * (1.0 + hv[w[0]].abs()));
    let rise = hv[n - 1] - hv[last[0]];
    if increasing && rise > 1e-6 * (1.0 + hv[n - 1].abs()) {
        return Err(Error::UnboundedAbove { last: hv[n - 1] });
    }
    let b = sup_ratio_refined(model, h, &probes, &hv)?;

    let mut tilted_sups = vec![];
    let tm = probes.iter().map(|&x| tilted_mass(model, h, x)).collect::<Result<Vec<_>>>()?;
    for m in [1.0, 10.0, 100.0, model.domain.1] {
        let sup = probes.iter().zip(&tm).filter(|(x, _)| **x < m).map(|(_, v)| *v).fold(0.0, f64::max);
        tilted_sups.push((m, sup));
    }

    let pv = if psi.label() == h.label() {
        hv.clone()
    } else {
        probes.iter().map(|&x| generator_ratio(model, psi, x)).collect::<Result<Vec<_>>>()?
    };
    // Centered windows on the (log-uniform) probe grid.
    let mid = n / 2;
    let max_r = mid.saturating_sub(4);
    let lambda1_at = |r: usize| {
        -(0..n)
            .filter(|&i| i + r < mid || i > mid + r)
            .map(|i| pv[i])
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mut r = 0;
    while r < max_r && !(lambda1_at(r) > lambda_ref) {
        r += 1;
    }
    let lambda1 = lambda1_at(r);
    let (ilo, ihi) = (mid - r, (mid + r).min(n - 1));
    let mut c: f64 = 0.0;
    for i in ilo..=ihi {
        c = c.max(psi.ln_value(probes[i]).exp() * (pv[i] + lambda1));
    }
    Ok((Drift { b, lambda1, l: (probes[ilo], probes[ihi]), c, tilted_sups }, pv))
}

/// Builds a report from the three weights. `lambda_ref` is the value `λ1`
/// must exceed: `λ2` by default, or a supplied `λ0`.
#[allow(clippy::too_many_arguments)]
fn assemble(
    model: &ModelSpec,
    regime: Regime,
    h: WeightFunction,
    psi: WeightFunction,
    psi_prime: WeightFunction,
    mut checks: Vec<Check>,
    mut extras: Vec<(String, f64)>,
    lambda0: Option<f64>,
) -> Result<AssumptionReport> {
    let l2 = lambda2_bound(model, &psi_prime)?;
    let reference = lambda0.unwrap_or(l2.lambda2);
    let (d, _) = drift(model, &h, &psi, reference)?;
    checks.push(Check::flag("assumption1.b_finite", d.b.is_finite()));
    for &(m, sup) in &d.tilted_sups {
        checks.push(Check::flag(format!("assumption1.tilted_mass_finite(M={m})"), sup.is_finite()));
        extras.push((format!("tilted_mass_sup(M={m})"), sup));
    }
    match lambda0 {
        Some(l0) => checks.push(Check::new("assumption4.lambda1_gt_lambda0", d.lambda1 - l0)),
        None => checks.push(Check::new("assumption4.lambda1_gt_lambda2", d.lambda1 - l2.lambda2)),
    }
    Ok(AssumptionReport {
        regime,
        h,
        psi,
        psi_prime,
        b: d.b,
        lambda1: d.lambda1,
        lambda2: l2.lambda2,
        lambda2_constant: l2.constant,
        l: d.l,
        c: d.c,
        checks,
        extrapolated: true,
        extras,
    })
}

/// Assumption 1 for a given `h`, with `ψ = h` and `ψ′ = id` (mass-conserving
/// kernels) or `ψ′ ≡ 1`.
pub fn verify_assumption1(model: &ModelSpec, h: &WeightFunction) -> Result<AssumptionReport> {
    let psi_prime = default_psi_prime(model);
    assemble(model, Regime::Custom, h.clone(), h.clone(), psi_prime, vec![], vec![], None)
}

fn default_psi_prime(model: &ModelSpec) -> WeightFunction {
    if model.is_mass_conserving() {
        WeightFunction::identity(&model.growth)
    } else {
        WeightFunction::constant(1.0)
    }
}

/// Full pseudo-entrance report: `ψ = h` from [`pseudo_entrance`], `ψ′ = id`.
pub fn criterion_pseudo_entrance(model: &ModelSpec, alpha: f64) -> Result<AssumptionReport> {
    let pe = pseudo_entrance(model, alpha)?;
    let p = model.relative_measure().expect("checked by construction");
    let best = criterion_relative(p)?;
    let mut checks = vec![Check::flag("pseudo-entrance.mass_conserving", model.is_mass_conserving())];
    for &(u, m) in &pe.margins {
        checks.push(Check::new(format!("pseudo-entrance.growth(u={u})"), m));
    }
    let extras = vec![
        ("alpha".to_string(), pe.alpha),
        ("a0".to_string(), pe.a0),
        ("a_inf".to_string(), pe.a_inf),
        ("eps_half".to_string(), pe.eps_half),
        ("ell".to_string(), pe.ell),
        ("kernel_threshold".to_string(), best.threshold),
        ("kernel_threshold_argmin".to_string(), best.argmin),
    ];
    let id = WeightFunction::identity(&model.growth);
    assemble(model, Regime::PseudoEntrance, pe.h.clone(), pe.h, id, checks, extras, None)
}

/// Power-law regime (`s` comparable to `ln x`): margins of the two
/// conditions on `K`, with the best admissible `α`, `β`.
pub fn criterion_lnx_model(model: &ModelSpec, engine: &FlowEngine) -> Result<AssumptionReport> {
    let p = model
        .relative_measure()
        .ok_or_else(|| Error::Unsupported("the lnx criterion needs a relative kernel".into()))?;
    if !model.is_mass_conserving() {
        return Err(Error::InvalidKernel("the lnx criterion needs ∫ u p(du) = 1".into()));
    }
    let probes = model.probe_grid();
    let cx: Vec<f64> = probes.iter().map(|&x| model.speed(x) / x).collect();
    let xc: Vec<f64> = cx.iter().map(|v| 1.0 / v).collect();
    let kv: Vec<f64> = probes.iter().map(|&x| model.loss_rate(x)).collect();
    let inf_cx = cx.iter().copied().fold(f64::INFINITY, f64::min);
    let limsup_cx_inf = tail_limit(&probes, &cx, false, true);
    let liminf_xc_0 = tail_limit(&probes, &xc, true, false);
    let liminf_xc_inf = tail_limit(&probes, &xc, false, false);
    let tail_inf_cx = tail_limit(&probes, &cx, true, false).min(tail_limit(&probes, &cx, false, false));
    let limsup_k0 = tail_limit(&probes, &kv, true, true);
    let liminf_kinf = tail_limit(&probes, &kv, false, false);

    // sup over α ∈ [0, inf c/x) of (inf c/x − α)/(p_{α·liminf x/c} − 1).
    let low_obj = |a: f64| match p.moment(a * liminf_xc_0) {
        Ok(m) if m > 1.0 => (inf_cx - a) / (m - 1.0),
        _ => f64::NEG_INFINITY,
    };
    let low_pts: Vec<f64> = std::iter::once(0.0)
        .chain((0..=36).rev().map(|k| inf_cx * (1.0 - 10f64.powf(-k as f64 / 4.0))))
        .filter(|&a| a < inf_cx)
        .collect();
    let (alpha, low) = scan_minimize(|a| -low_obj(a), &low_pts)?;
    let low = -low;
    // inf over β > limsup c/x of (β − inf c/x)/(1 − p_{β·liminf x/c}).
    let high_obj = |bb: f64| match p.moment(bb * liminf_xc_inf) {
        Ok(m) if m < 1.0 => (bb - inf_cx) / (1.0 - m),
        _ => f64::INFINITY,
    };
    let b0 = limsup_cx_inf;
    let high_pts: Vec<f64> = (-36..=12).map(|k| b0 + (b0.abs() + 1e-3) * 10f64.powf(k as f64 / 4.0)).collect();
    let (beta, high) = scan_minimize(high_obj, &high_pts)?;

    let alpha_h = alpha.min(inf_cx * (1.0 - 1e-6));
    let beta_h = beta.max(b0 * (1.0 + 1e-6) + 1e-9);
    let h = build_h_powerlaw(model, engine, alpha_h, beta_h)?;
    let checks = vec![
        Check::new("lnx.low(limsup_0 K)", low - limsup_k0),
        Check::new("lnx.high(liminf_inf K)", liminf_kinf - high),
    ];
    let extras = vec![
        ("low_threshold".to_string(), low),
        ("high_threshold".to_string(), high),
        ("alpha".to_string(), alpha_h),
        ("beta".to_string(), beta_h),
        ("inf_c_over_x".to_string(), inf_cx),
        ("tail_inf_c_over_x".to_string(), tail_inf_cx),
        ("inf_sources_differ".to_string(), if (tail_inf_cx - inf_cx).abs() > 1e-9 * (1.0 + inf_cx) { 1.0 } else { 0.0 }),
        ("limsup_0_K".to_string(), limsup_k0),
        ("liminf_inf_K".to_string(), liminf_kinf),
    ];
    let id = WeightFunction::identity(&model.growth);
    assemble(model, Regime::LnxCritical, h.clone(), h, id, checks, extras, None)
}

/// Minimum of `f` over increasing `pts`, refined between the neighbours of
/// the best point. Handles optima on the boundary of the domain, where
/// bracketing alone fails.
fn scan_minimize<F: Fn(f64) -> f64>(f: F, pts: &[f64]) -> Result<(f64, f64)> {
    let vals: Vec<f64> = pts.iter().map(|&x| f(x)).collect();
    let best = (0..pts.len())
        .filter(|&i| vals[i].is_finite())
        .min_by(|&i, &j| vals[i].total_cmp(&vals[j]))
        .ok_or_else(|| Error::Domain("objective is not finite on any probe".into()))?;
    let (mut x, mut v) = (pts[best], vals[best]);
    if best > 0 && best + 1 < pts.len() {
        let (lo, hi) = (pts[best - 1], pts[best + 1]);
        if let Ok(m) = minimize(&f, (lo, hi), (lo, hi), &opts()) {
            if m.value < v {
                (x, v) = (m.argmin, m.value);
            }
        }
    }
    Ok((x, v))
}

/// `K` bounded between a positive constant and 1: sandwich of `c(x)/x`
/// around `∫(−ln u) p(du)`, with `ψ′ ≡ 1`.
pub fn criterion_k_constant(model: &ModelSpec, engine: &FlowEngine) -> Result<AssumptionReport> {
    let p = model
        .relative_measure()
        .ok_or_else(|| Error::Unsupported("the K-constant criterion needs a relative kernel".into()))?;
    let theta = p.log_moment()?;
    let delta = [0.5, 0.25, 0.1, 0.01]
        .into_iter()
        .find(|&d| p.moment(-d).is_ok_and(f64::is_finite))
        .ok_or_else(|| Error::MomentDivergence("∫ u^(−δ) p(du) diverges for every δ in {0.5, 0.25, 0.1, 0.01}".into()))?;
    let probes = model.probe_grid();
    let cx: Vec<f64> = probes.iter().map(|&x| model.speed(x) / x).collect();
    let kv: Vec<f64> = probes.iter().map(|&x| model.loss_rate(x)).collect();
    let inf_k = kv.iter().copied().fold(f64::INFINITY, f64::min);
    let sup_k = kv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let limsup_k0 = tail_limit(&probes, &kv, true, true);
    let limsup_kinf = tail_limit(&probes, &kv, false, true);
    let limsup_cx_inf = tail_limit(&probes, &cx, false, true);
    let liminf_cx_0 = tail_limit(&probes, &cx, true, false);
    let tol = 1e-6 * (1.0 + inf_k);

    let checks = vec![
        Check::flag("K-constant.mass_conserving", model.is_mass_conserving()),
        Check::new("K-constant.inf_K_positive", inf_k),
        Check::new("K-constant.K_le_1", 1.0 - sup_k + 1e-12),
        Check::flag(
            "K-constant.tails_equal_inf_K",
            (limsup_k0 - inf_k).abs() <= tol && (limsup_kinf - inf_k).abs() <= tol,
        ),
        Check::flag("K-constant.no_entrance(s(0+)=-inf)", engine.s_zero() == f64::NEG_INFINITY),
        Check::new("K-constant.limsup_inf_c/x<theta", theta - limsup_cx_inf),
        Check::new("K-constant.theta<liminf_0_c/x", liminf_cx_0 - theta),
    ];
    let sup_xc_low = probes.iter().filter(|&&x| x < 1.0).map(|&x| x / model.speed(x)).fold(0.0, f64::max);
    let a = 0.05 * 1f64.min(delta / sup_xc_low);
    let h = build_h_powerlaw(model, engine, -a, a)?.with_label(format!("K-constant(alpha={a}, beta={a})"));
    let extras = vec![
        ("theta".to_string(), theta),
        ("delta".to_string(), delta),
        ("alpha".to_string(), a),
        ("beta".to_string(), a),
        ("limsup_inf_c_over_x".to_string(), limsup_cx_inf),
        ("liminf_0_c_over_x".to_string(), liminf_cx_0),
    ];
    assemble(model, Regime::KConstantCritical, h.clone(), h, WeightFunction::constant(1.0), checks, extras, None)
}

/// Entrance boundary at 0: margin `−λ0 − limsup_{∞} (k(x,(0,x)) − K(x))`
/// for a supplied estimate of `λ0`.
pub fn criterion_entrance(model: &ModelSpec, engine: &FlowEngine, lambda0: f64) -> Result<AssumptionReport> {
    let s0 = engine.s_zero();
    if !s0.is_finite() {
        return Err(Error::EntranceBoundaryAbsent);
    }
    let probes = model.probe_grid();
    let km = probes.iter().map(|&x| model.kernel.mass(x, &model.quad)).collect::<Result<Vec<_>>>()?;
    let excess: Vec<f64> = probes.iter().zip(&km).map(|(&x, m)| m - model.loss_rate(x)).collect();
    let limsup_excess = tail_limit(&probes, &excess, false, true);
    let limsup_k0 = tail_limit(&probes, &km, true, true);
    let mut checks = vec![];
    for m in [1.0, 10.0, 100.0, model.domain.1] {
        let sup = probes.iter().zip(&km).filter(|(x, _)| **x < m).map(|(_, v)| *v).fold(0.0, f64::max);
        checks.push(Check::flag(format!("entrance.kernel_mass_bounded(M={m})"), sup.is_finite()));
    }
    checks.push(Check::flag("entrance.limsup_excess_finite", limsup_excess.is_finite()));
    checks.push(Check::new("entrance.limsup_excess<-lambda0", -lambda0 - limsup_excess));

    let a = (-limsup_k0 - lambda0).min(0.0) - 0.1;
    let top = (-a * s0).exp();
    let x0 = engine.s_inv(1.0 - top)?.max(1.0);
    let e1 = engine.clone();
    let s_at = move |x: f64| e1.s_of(x).unwrap_or(f64::NAN);
    let (sa, sb) = (s_at.clone(), s_at.clone());
    let ln_h = move |x: f64| if x < 1.0 { a * (sa(x) - s0) } else { (top + sa(x)).min(1.0).ln() };
    let dlog = move |x: f64| {
        if x < 1.0 {
            a
        } else if x < x0 {
            1.0 / (top + sb(x))
        } else {
            0.0
        }
    };
    let (lv, lv2, dl) = (ln_h.clone(), ln_h.clone(), dlog.clone());
    let h = WeightFunction::new(format!("entrance(a={a}, x0={x0})"), move |x| lv(x).exp(), move |x| dl(x) * lv2(x).exp())
        .with_log_forms(ln_h, dlog)
        .with_kinks(vec![1.0, x0])
        .with_sup_below(|_| 1.0);
    let extras = vec![
        ("s_zero".to_string(), s0),
        ("a".to_string(), a),
        ("x0".to_string(), x0),
        ("limsup_inf_excess".to_string(), limsup_excess),
        ("limsup_0_kernel_mass".to_string(), limsup_k0),
        ("lambda0_estimate".to_string(), lambda0),
    ];
    assemble(model, Regime::Entrance, h.clone(), h, WeightFunction::constant(1.0), checks, extras, Some(lambda0))
}

/// Root of `d/dα` of the relative objective by bisection on a central
/// difference; an optimizer-independent cross-check of [`criterion_relative`].
pub fn relative_argmin_by_derivative(p: &RelativeMeasure, lo: f64, hi: f64) -> Result<f64> {
    let d = |a: f64| {
        let h = 1e-6 * a;
        (relative_objective(p, a + h) - relative_objective(p, a - h)) / (2.0 * h)
    };
    bisect(d, lo, hi, 1e-12, 200)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GrowthSpec;

    fn canonical() -> ModelSpec {
        ModelSpec::relative(GrowthSpec::constant(1.0).unwrap(), RelativeMeasure::uniform_binary(), |x| x, (1e-3, 20.0))
            .unwrap()
    }

    #[test]
    fn uniform_threshold() {
        let t = criterion_uniform_kernel();
        assert!((t.threshold - (3.0 + 2.0 * 2f64.sqrt())).abs() < 1e-6);
        assert!((t.argmin - (1.0 + 2f64.sqrt())).abs() < 1e-6);
    }

    #[test]
    fn mitosis_threshold() {
        let t = criterion_mitosis_kernel();
        assert!((t.threshold - 3.86).abs() < 0.01, "{t:?}");
        assert!(t.argmin > 2.4 && t.argmin < 2.5);
        let p = RelativeMeasure::mitosis();
        assert!((relative_objective(&p, 2.0) - 4.0).abs() < 1e-12);
        assert!((relative_objective(&p, 3.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn lnx_thresholds() {
        let u = criterion_lnx(&RelativeMeasure::uniform_binary()).unwrap();
        assert!((u.low - 2.0).abs() < 1e-9 && (u.high - 2.0).abs() < 1e-9);
        let m = criterion_lnx(&RelativeMeasure::mitosis()).unwrap();
        assert!((m.low - 1.0 / std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn reggen_example() {
        let r = criterion_reggen(2.0, 1.0).unwrap();
        assert!((r.closed_form - 1.0).abs() < 1e-12);
        assert!((r.optimizer_max - 1.0).abs() < 1e-6);
        assert!(criterion_reggen(1.0, 1.0).is_err());
    }

    #[test]
    fn tail_limits() {
        let probes: Vec<f64> = crate::model::log_grid(1e-3, 1e3, 61);
        let v: Vec<f64> = probes.iter().map(|x| 1.0 / (1.0 + x)).collect();
        assert!((tail_limit(&probes, &v, false, true) - 1.0 / 1001.0).abs() < 1e-12);
        assert!((tail_limit(&probes, &v, true, false) - 1.0 / 1.001).abs() < 1e-12);
    }

    #[test]
    fn pseudo_entrance_on_canonical_model() {
        let m = canonical();
        let pe = pseudo_entrance(&m, 1.0 + 2f64.sqrt()).unwrap();
        assert!(pe.a0 > 1.0 && pe.a_inf > pe.window.0 && pe.a_inf < pe.window.1);
        // Ah/h ≤ 0 away from a compact set.
        for x in [1e-3, 1e-2, 15.0, 20.0] {
            assert!(generator_ratio(&m, &pe.h, x).unwrap() <= 0.0, "x = {x}");
        }
    }

    #[test]
    fn pseudo_entrance_rejects_zero_rate() {
        let m = ModelSpec::relative(GrowthSpec::constant(1.0).unwrap(), RelativeMeasure::uniform_binary(), |_| 0.0, (1e-3, 20.0))
            .unwrap();
        assert!(matches!(pseudo_entrance(&m, 2.0), Err(Error::CriterionViolated { .. })));
    }

    #[test]
    fn report_json_shape() {
        let m = canonical();
        let r = criterion_pseudo_entrance(&m, 1.0 + 2f64.sqrt()).unwrap();
        assert!(r.passed(), "{:?}", r.checks);
        let j = r.to_json();
        assert_eq!(j["regime"], "pseudo-entrance");
        assert!(j["L"].as_array().unwrap().len() == 2);
    }
}
