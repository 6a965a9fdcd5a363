use std::sync::Arc;

use super::{GrowthSpec, ScalarFn};
use crate::error::{Error, Result};
use crate::flow::FlowEngine;

/// A positive function together with its s-derivative.
///
/// Used for the h-transform weight `h`, the Lyapunov function `ψ` and the
/// eigenvalue-bound function `ψ′`.
#[derive(Clone)]
pub struct WeightFunction {
    label: String,
    value: ScalarFn,
    s_derivative: ScalarFn,
    kinks: Vec<f64>,
    sup_below: Option<ScalarFn>,
    ln_value: Option<ScalarFn>,
    log_derivative: Option<ScalarFn>,
    ln_sup_below: Option<ScalarFn>,
}

impl std::fmt::Debug for WeightFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "WeightFunction({}, kinks={:?})", self.label, self.kinks)
    }
}

impl WeightFunction {
    pub fn new<V, D>(label: impl Into<String>, value: V, s_derivative: D) -> Self
    where
        V: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        WeightFunction {
            label: label.into(),
            value: Arc::new(value),
            s_derivative: Arc::new(s_derivative),
            kinks: vec![],
            sup_below: None,
            ln_value: None,
            log_derivative: None,
            ln_sup_below: None,
        }
    }

    /// Supplies `ln f` and `(∂f/∂s)/f` directly, so that ratios of very
    /// large or very small weights never overflow.
    pub fn with_log_forms<L, D>(mut self, ln_value: L, log_derivative: D) -> Self
    where
        L: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.ln_value = Some(Arc::new(ln_value));
        self.log_derivative = Some(Arc::new(log_derivative));
        self
    }

    /// Points where the s-derivative may jump; excluded from the
    /// finite-difference check and used as quadrature breaks.
    pub fn with_kinks(mut self, mut kinks: Vec<f64>) -> Self {
        kinks.sort_by(f64::total_cmp);
        kinks.dedup();
        self.kinks = kinks;
        self
    }

    /// Supplies `x ↦ sup_{0<y<x} value(y)`, used as the rejection bound when
    /// sampling tilted fragments. Without it the bound is estimated.
    pub fn with_sup_below<S>(mut self, sup: S) -> Self
    where
        S: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.sup_below = Some(Arc::new(sup));
        self
    }

    /// Log-space form of [`with_sup_below`](Self::with_sup_below).
    pub fn with_ln_sup_below<S>(mut self, ln_sup: S) -> Self
    where
        S: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.ln_sup_below = Some(Arc::new(ln_sup));
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn constant(c: f64) -> Self {
        WeightFunction::new(format!("const({c})"), move |_| c, |_| 0.0).with_sup_below(move |_| c)
    }

    /// `x ↦ x`, whose s-derivative is the growth speed `c(x)`.
    pub fn identity(growth: &GrowthSpec) -> Self {
        let g = growth.clone();
        WeightFunction::new("id", |x| x, move |x| g.speed_at(x))
            .with_kinks(growth.kinks().to_vec())
            .with_sup_below(|x| x)
    }

    /// `x ↦ x^a` (any real `a`).
    pub fn power(growth: &GrowthSpec, a: f64) -> Self {
        let g = growth.clone();
        let w = WeightFunction::new(format!("x^{a}"), move |x: f64| x.powf(a), move |x: f64| a * x.powf(a - 1.0) * g.speed_at(x))
            .with_kinks(growth.kinks().to_vec());
        if a >= 0.0 {
            w.with_sup_below(move |x: f64| x.powf(a))
        } else {
            w.with_sup_below(|_| f64::INFINITY)
        }
    }

    /// `c · self`.
    pub fn scaled(&self, c: f64) -> Self {
        let (v, d) = (self.value.clone(), self.s_derivative.clone());
        let mut out = WeightFunction::new(format!("{}*{c}", self.label), move |x| c * v(x), move |x| c * d(x))
            .with_kinks(self.kinks.clone());
        if let Some(s) = self.sup_below.clone() {
            out = out.with_sup_below(move |x| c * s(x));
        }
        if let (Some(l), Some(d)) = (self.ln_value.clone(), self.log_derivative.clone()) {
            let lc = c.ln();
            out = out.with_log_forms(move |x| l(x) + lc, move |x| d(x));
        }
        if let Some(l) = self.ln_sup_below.clone() {
            let lc = c.ln();
            out = out.with_ln_sup_below(move |x| l(x) + lc);
        }
        out
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        (self.value)(x)
    }

    #[inline]
    pub fn s_derivative(&self, x: f64) -> f64 {
        (self.s_derivative)(x)
    }

    /// `(∂f/∂s) / f`.
    #[inline]
    pub fn log_s_derivative(&self, x: f64) -> f64 {
        match &self.log_derivative {
            Some(d) => d(x),
            None => self.s_derivative(x) / self.value(x),
        }
    }

    #[inline]
    pub fn ln_value(&self, x: f64) -> f64 {
        match &self.ln_value {
            Some(l) => l(x),
            None => self.value(x).ln(),
        }
    }

    /// `f(y) / f(x)`.
    #[inline]
    pub fn ratio(&self, y: f64, x: f64) -> f64 {
        match &self.ln_value {
            Some(l) => (l(y) - l(x)).exp(),
            None => self.value(y) / self.value(x),
        }
    }

    pub fn kinks(&self) -> &[f64] {
        &self.kinks
    }

    pub fn sup_below(&self, x: f64) -> Option<f64> {
        match (&self.sup_below, &self.ln_sup_below) {
            (Some(s), _) => Some(s(x)),
            (None, Some(l)) => Some(l(x).exp()),
            (None, None) => None,
        }
    }

    /// `sup_{0<y<x} f(y) / f(x)`, when a bound was supplied.
    pub fn sup_ratio(&self, x: f64) -> Option<f64> {
        match (&self.ln_sup_below, &self.sup_below) {
            (Some(l), _) => Some((l(x) - self.ln_value(x)).exp()),
            (None, Some(s)) => Some(s(x) / self.value(x)),
            (None, None) => None,
        }
    }

    /// Checks positivity and the s-derivative against finite differences at
    /// every probe point that is not adjacent to a declared kink.
    pub fn check(&self, engine: &FlowEngine, probes: &[f64]) -> Result<()> {
        let kinks: Vec<f64> = self.kinks.iter().chain(engine.growth().kinks()).copied().collect();
        for &x in probes {
            let v = self.value(x);
            if !(v > 0.0 && v.is_finite()) {
                return Err(self.invalid(format!("value({x}) = {v} is not positive")));
            }
            let delta = 1e-6 * x;
            if kinks.iter().any(|k| (k - x).abs() <= 2.0 * delta) {
                continue;
            }
            let ds = engine.s_of(x + delta)? - engine.s_of(x - delta)?;
            if ds <= 0.0 {
                continue;
            }
            let fd = (self.value(x + delta) - self.value(x - delta)) / ds;
            let d = self.s_derivative(x);
            if !((fd - d).abs() <= 1e-4 * (1.0 + d.abs())) {
                return Err(self.invalid(format!("s-derivative at {x}: declared {d}, finite difference {fd}")));
            }
        }
        Ok(())
    }

    fn invalid(&self, reason: String) -> Error {
        Error::InvalidWeight { label: self.label.clone(), reason }
    }
}
