//! Growth-fragmentation coefficients and the generator `A`.
//!
//! `A f(x) = ∂f/∂s(x) + ∫_{(0,x)} f(y) k(x,dy) − K(x) f(x)`.

mod growth;
mod kernel;
mod weight;

use std::sync::Arc;

pub use growth::GrowthSpec;
pub use kernel::{Density, FragmentationKernel, GeneralKernel, RelativeMeasure};
pub use weight::WeightFunction;

use crate::error::{Error, Result};
use crate::flow::FlowEngine;
use crate::quad::QuadOptions;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// `(x, y) ↦ k(x, dy)/dy` for `0 < y < x`.
pub type KernelDensity = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// `x ↦ [(y, weight)]`, the atoms of `k(x, ·)`.
pub type AtomsFn = Arc<dyn Fn(f64) -> Vec<(f64, f64)> + Send + Sync>;

/// Number of points in the default probe grid.
pub const PROBE_POINTS: usize = 256;

/// Evaluates `f` at `x`, nudging to the right when `x` sits on a declared
/// discontinuity so that the right limit is returned.
pub(crate) fn right_eval(f: &(dyn Fn(f64) -> f64 + Send + Sync), x: f64, kinks: &[f64]) -> f64 {
    if kinks.iter().any(|&k| (x - k).abs() <= 1e-13 * k.abs()) {
        f(x * (1.0 + 1e-12) + 1e-300)
    } else {
        f(x)
    }
}

/// `n` log-uniform points spanning `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Assumption Doeb: `k(x, ·) ≥ a μ` on the interval `[lo, hi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DoeblinInterval {
    pub lo: f64,
    pub hi: f64,
    pub a: f64,
    /// Free-text description of the minorizing measure.
    pub mu: String,
}

/// Assumption DoebBis: `k(x, ·) ≥ a δ_{T(x)}` on `[lo, hi]`.
#[derive(Clone)]
pub struct DoeblinMap {
    pub lo: f64,
    pub hi: f64,
    pub a: f64,
    pub map: ScalarFn,
}

impl std::fmt::Debug for DoeblinMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "DoeblinMap([{}, {}], a={})", self.lo, self.hi, self.a)
    }
}

/// Structural assumptions the user declares about a model. They are
/// spot-checked, not decided.
#[derive(Clone, Debug, Default)]
pub struct Declarations {
    pub irreducible: bool,
    pub doeblin: Option<DoeblinInterval>,
    pub doeblin_map: Option<DoeblinMap>,
}

impl Declarations {
    pub fn has_doeblin(&self) -> bool {
        self.doeblin.is_some() || self.doeblin_map.is_some()
    }
}

/// The full coefficient set `(s, K, k)`.
#[derive(Clone)]
pub struct ModelSpec {
    pub growth: GrowthSpec,
    pub kernel: FragmentationKernel,
    loss: ScalarFn,
    loss_kinks: Vec<f64>,
    pub declared: Declarations,
    pub domain: (f64, f64),
    pub quad: QuadOptions,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("growth", &self.growth)
            .field("kernel", &self.kernel)
            .field("domain", &self.domain)
            .finish()
    }
}

impl ModelSpec {
    /// Relative kernel `k(x,·) = K(x) p∘m_x⁻¹` with loss rate `K`.
    pub fn relative<F>(growth: GrowthSpec, p: RelativeMeasure, k: F, domain: (f64, f64)) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let k: ScalarFn = Arc::new(k);
        let kk = k.clone();
        let kernel = FragmentationKernel::Relative { p, rate: Arc::new(move |x| kk(x)), rate_kinks: vec![] };
        Self::build(growth, kernel, k, domain)
    }

    /// General kernel with an explicit loss rate `K`.
    pub fn general<F>(growth: GrowthSpec, kernel: FragmentationKernel, k: F, domain: (f64, f64)) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::build(growth, kernel, Arc::new(k), domain)
    }

    fn build(growth: GrowthSpec, kernel: FragmentationKernel, loss: ScalarFn, domain: (f64, f64)) -> Result<Self> {
        let (lo, hi) = domain;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::InvalidModel(format!("domain [{lo}, {hi}] must satisfy 0 < lo < hi < inf")));
        }
        Ok(ModelSpec {
            growth,
            kernel,
            loss,
            loss_kinks: vec![],
            declared: Declarations::default(),
            domain,
            quad: QuadOptions::default(),
        })
    }

    /// Declares discontinuities of `K` (and of the relative kernel intensity).
    pub fn with_rate_kinks(mut self, mut kinks: Vec<f64>) -> Self {
        kinks.sort_by(f64::total_cmp);
        kinks.dedup();
        if let FragmentationKernel::Relative { rate_kinks, .. } = &mut self.kernel {
            *rate_kinks = kinks.clone();
        }
        self.loss_kinks = kinks;
        self
    }

    /// Replaces the loss rate `K` while keeping the kernel.
    pub fn with_loss_rate<F>(mut self, k: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.loss = Arc::new(k);
        self
    }

    pub fn with_declarations(mut self, declared: Declarations) -> Self {
        self.declared = declared;
        self
    }

    pub fn with_quad(mut self, quad: QuadOptions) -> Self {
        self.quad = quad;
        self
    }

    /// `K(x)`, right limit at declared kinks.
    pub fn loss_rate(&self, x: f64) -> f64 {
        right_eval(self.loss.as_ref(), x, &self.loss_kinks)
    }

    pub fn rate_kinks(&self) -> &[f64] {
        &self.loss_kinks
    }

    /// Every declared discontinuity of `c`, `K` or the kernel intensity.
    pub fn kinks(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.growth.kinks().iter().chain(&self.loss_kinks).copied().collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    pub fn speed(&self, x: f64) -> f64 {
        self.growth.speed_at(x)
    }

    pub fn relative_measure(&self) -> Option<&RelativeMeasure> {
        self.kernel.relative_measure()
    }

    /// Relative kernel whose intensity equals `K` and whose `p` conserves mass.
    pub fn is_mass_conserving(&self) -> bool {
        self.relative_measure().is_some_and(|p| p.is_mass_conserving())
    }

    /// 256 log-uniform points on the working domain.
    pub fn probe_grid(&self) -> Vec<f64> {
        log_grid(self.domain.0, self.domain.1, PROBE_POINTS)
    }

    /// Spot-checks the invariants of the growth law, the kernel and the
    /// declared structural assumptions on the probe grid.
    pub fn validate(&self, engine: &FlowEngine) -> Result<()> {
        let probes = self.probe_grid();
        let mut last = f64::NEG_INFINITY;
        for &x in &probes {
            let c = self.speed(x);
            if !(c > 0.0 || matches!(self.growth, GrowthSpec::Explicit { .. }) && c >= 0.0) {
                return Err(Error::InvalidModel(format!("growth speed c({x}) = {c} is not positive")));
            }
            let s = engine.s_of(x)?;
            if !(s > last) {
                return Err(Error::InvalidModel(format!("s is not strictly increasing at x = {x}")));
            }
            last = s;
            let k = self.loss_rate(x);
            if !(k >= 0.0 && k.is_finite()) {
                return Err(Error::InvalidModel(format!("loss rate K({x}) = {k} must be finite and non-negative")));
            }
            let m = self.kernel.mass(x, &self.quad)?;
            if !(m >= 0.0) {
                return Err(Error::InvalidKernel(format!("k({x}, (0,x)) = {m} is negative")));
            }
        }
        if engine.s_of(1.0)? != 0.0 {
            return Err(Error::InvalidModel("s(1) must be 0".into()));
        }
        let far = engine.s_of(self.domain.1 * 1e6)?;
        if !(far > engine.s_of(self.domain.1)?) {
            return Err(Error::InvalidModel("s does not increase towards +inf".into()));
        }
        self.check_declarations(engine)
    }

    fn check_declarations(&self, engine: &FlowEngine) -> Result<()> {
        if let Some(d) = &self.declared.doeblin {
            for x in log_grid(d.lo.max(1e-300), d.hi, 16) {
                if self.kernel.mass(x, &self.quad)? <= 0.0 {
                    return Err(Error::InvalidModel(format!("declared Doeblin interval: k({x}, (0,x)) = 0")));
                }
            }
        }
        if let Some(d) = &self.declared.doeblin_map {
            for x in log_grid(d.lo.max(1e-300), d.hi, 32) {
                let t = (d.map)(x);
                if !(t > 0.0 && t < x) {
                    return Err(Error::InvalidModel(format!("Doeblin map T({x}) = {t} is not in (0, x)")));
                }
                let dx = 1e-6 * x;
                let num = engine.s_of((d.map)(x + dx))? - engine.s_of((d.map)(x - dx))?;
                let den = engine.s_of(x + dx)? - engine.s_of(x - dx)?;
                let ratio = num / den;
                if (ratio - 1.0).abs() < 1e-6 {
                    return Err(Error::InvalidModel(format!(
                        "Doeblin map: ∂(s∘T)/∂s = {ratio} is 1 at x = {x}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `A f(x)`.
pub fn generator_apply(model: &ModelSpec, f: &WeightFunction, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("generator evaluated at x = {x}")));
    }
    let jump = model.kernel.integrate(x, |y| f.value(y), f.kinks(), &model.quad)?;
    Ok(f.s_derivative(x) + jump - model.loss_rate(x) * f.value(x))
}

/// `A f(x) / f(x)`, computed from ratios `f(y)/f(x)` so that it stays finite
/// when `f` itself overflows.
pub fn generator_ratio(model: &ModelSpec, f: &WeightFunction, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("generator evaluated at x = {x}")));
    }
    let jump = tilted_mass(model, f, x)?;
    Ok(f.log_s_derivative(x) + jump - model.loss_rate(x))
}

/// `k_f(x, (0,x)) = ∫ f(y)/f(x) k(x, dy)`.
pub fn tilted_mass(model: &ModelSpec, f: &WeightFunction, x: f64) -> Result<f64> {
    let lx = f.ln_value(x);
    model.kernel.integrate(x, |y| (f.ln_value(y) - lx).exp(), f.kinks(), &model.quad)
}

/// `∫ (y/x) k(x,dy) − K(x)`: positive when splitting creates size.
pub fn mass_conservation_defect(model: &ModelSpec, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("x = {x} must be positive")));
    }
    let m = model.kernel.integrate(x, |y| y / x, &[], &model.quad)?;
    Ok(m - model.loss_rate(x))
}
