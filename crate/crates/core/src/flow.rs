//! The deterministic semi-flow `φ(x,t) = s⁻¹(s(x)+t)` between jumps.
//!
//! When the growth law is given by its speed `c`, the scale
//! `s(x) = ∫₁ˣ dy/c(y)` is tabulated once on a log grid (densified at the
//! declared kinks) and interpolated by monotone cubic Hermite pieces whose
//! slopes are `1/c` at the nodes. Pieces where the interpolant cannot be
//! trusted (vanishing speed, non-monotone cubic, midpoint mismatch) fall back
//! to direct quadrature from the left node.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{GrowthSpec, ModelSpec, ScalarFn};
use crate::quad::{integrate_with_breaks, QuadOptions};

/// Nodes per decade in the `s` table.
const NODES_PER_DECADE: f64 = 512.0;
/// The table reaches `x_max · RANGE_FACTOR`.
pub const RANGE_FACTOR: f64 = 1e6;
/// The table starts at `x_min / LOW_FACTOR`; below, `s` is integrated directly.
const LOW_FACTOR: f64 = 1e6;

#[derive(Clone)]
pub struct FlowEngine {
    growth: GrowthSpec,
    table: Option<Arc<CumulativeTable>>,
    limit: f64,
    s_zero: f64,
}

impl std::fmt::Debug for FlowEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FlowEngine({:?}, limit={}, s(0+)={})", self.growth, self.limit, self.s_zero)
    }
}

/// Tabulated `x ↦ ∫₁ˣ g(y) dy` for a non-negative, locally integrable `g`.
pub(crate) struct CumulativeTable {
    g: ScalarFn,
    x: Vec<f64>,
    s: Vec<f64>,
    /// Slopes `ds/dx` at the right of node i and at the left of node i+1.
    d_right: Vec<f64>,
    d_left: Vec<f64>,
    hermite_ok: Vec<bool>,
    opts: QuadOptions,
}

impl FlowEngine {
    pub fn new(growth: &GrowthSpec, domain: (f64, f64)) -> Result<Self> {
        let limit = domain.1 * RANGE_FACTOR;
        match growth {
            GrowthSpec::Explicit { s, s_zero, .. } => {
                if s(1.0) != 0.0 {
                    return Err(Error::InvalidModel(format!("s(1) = {} must be 0", s(1.0))));
                }
                Ok(FlowEngine { growth: growth.clone(), table: None, limit, s_zero: *s_zero })
            }
            GrowthSpec::Speed { c, kinks, .. } => {
                let table = CumulativeTable::for_speed(c.clone(), kinks, domain.0 / LOW_FACTOR, limit)?;
                let s_zero = table.s_zero()?;
                Ok(FlowEngine { growth: growth.clone(), table: Some(Arc::new(table)), limit, s_zero })
            }
        }
    }

    pub fn from_model(model: &ModelSpec) -> Result<Self> {
        Self::new(&model.growth, model.domain)
    }

    pub fn growth(&self) -> &GrowthSpec {
        &self.growth
    }

    /// Largest size the engine can flow to.
    pub fn limit(&self) -> f64 {
        self.limit
    }

    /// `s(0+)`; `-inf` when zero is not an entrance boundary.
    pub fn s_zero(&self) -> f64 {
        self.s_zero
    }

    pub fn s_of(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::Domain(format!("s evaluated at x = {x}")));
        }
        if x == 1.0 {
            return Ok(0.0);
        }
        match (&self.growth, &self.table) {
            (GrowthSpec::Explicit { s, .. }, _) => Ok(s(x)),
            (_, Some(t)) => t.s_of(x, self.limit),
            _ => unreachable!("speed growth always carries a table"),
        }
    }

    pub fn s_inv(&self, v: f64) -> Result<f64> {
        if v == 0.0 {
            return Ok(1.0);
        }
        match (&self.growth, &self.table) {
            (GrowthSpec::Explicit { s_inv, s_zero, .. }, _) => {
                if v <= *s_zero {
                    return Err(Error::Domain(format!("s⁻¹({v}) below s(0+) = {s_zero}")));
                }
                Ok(s_inv(v))
            }
            (_, Some(t)) => t.s_inv(v, self.limit, self.s_zero),
            _ => unreachable!("speed growth always carries a table"),
        }
    }

    /// `φ(x, t) = s⁻¹(s(x) + t)`.
    pub fn flow_at(&self, x: f64, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("negative flow time {t}")));
        }
        if t == 0.0 {
            if !(x > 0.0) {
                return Err(Error::Domain(format!("flow started at x = {x}")));
            }
            return Ok(x);
        }
        let y = self.s_inv(self.s_of(x)? + t)?;
        Ok(y.max(x))
    }

    /// Time needed to flow from `x` to `y ≥ x`.
    pub fn time_between(&self, x: f64, y: f64) -> Result<f64> {
        Ok((self.s_of(y)? - self.s_of(x)?).max(0.0))
    }

    /// `∫₀ᵗ g(φ(x,u)) du`, with breaks where the arc crosses declared kinks.
    pub fn integrate_along_flow<G: Fn(f64) -> f64>(&self, g: G, x: f64, t: f64, kinks: &[f64]) -> Result<f64> {
        if t == 0.0 {
            return Ok(0.0);
        }
        let end = self.flow_at(x, t)?;
        let sx = self.s_of(x)?;
        let mut pts = vec![0.0];
        for &k in kinks.iter().chain(self.growth.kinks()) {
            if k > x && k < end {
                pts.push(self.s_of(k)? - sx);
            }
        }
        pts.sort_by(f64::total_cmp);
        pts.push(t);
        let err = std::cell::RefCell::new(None);
        let v = integrate_with_breaks(
            |u| match self.flow_at(x, u) {
                Ok(y) => g(y),
                Err(e) => {
                    err.borrow_mut().get_or_insert(e);
                    f64::NAN
                }
            },
            &pts,
            &QuadOptions::default().with_max_subdivisions(200),
        );
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        v
    }
}

impl CumulativeTable {
    fn for_speed(c: ScalarFn, kinks: &[f64], lo: f64, hi: f64) -> Result<Self> {
        // Isolated zeros of c are integrable singularities of 1/c; a node
        // landing exactly on one contributes nothing.
        let g: ScalarFn = Arc::new(move |x| {
            let v = 1.0 / c(x);
            if v.is_finite() { v } else { 0.0 }
        });
        Self::build(g, kinks, lo, hi, true)
    }

    /// Tabulates on `[lo, hi]`; with `strict`, every piece must carry
    /// positive mass (as `s` must be strictly increasing).
    pub(crate) fn build(g: ScalarFn, kinks: &[f64], lo: f64, hi: f64, strict: bool) -> Result<Self> {
        let decades = (hi / lo).log10();
        let n = (decades * NODES_PER_DECADE).ceil() as usize;
        let mut x: Vec<f64> = (0..=n).map(|i| lo * (hi / lo).powf(i as f64 / n as f64)).collect();
        for &k in kinks {
            if k > lo && k < hi {
                x.push(k);
            }
        }
        x.push(1.0);
        x.sort_by(f64::total_cmp);
        x.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs());
        let nearest = x.partition_point(|&v| v < 1.0);
        let nearest = if nearest < x.len() && (x[nearest] - 1.0).abs() < 1e-12 { nearest } else { nearest - 1 };
        x[nearest] = 1.0;
        let opts = QuadOptions::default().with_rel_tol(1e-13).with_abs_tol(1e-15).with_max_subdivisions(200);

        let m = x.len();
        let mut steps = vec![0.0; m - 1];
        for i in 0..m - 1 {
            steps[i] = integrate_endpoint_singular(&g, x[i], x[i + 1], &opts)?;
            if !(steps[i].is_finite() && (steps[i] > 0.0 || !strict && steps[i] >= 0.0)) {
                return Err(Error::InvalidModel(format!(
                    "∫ dy/c(y) over [{}, {}] is {}: c must be positive and locally bounded",
                    x[i],
                    x[i + 1],
                    steps[i]
                )));
            }
        }
        // Anchor s(1) = 0.
        let one = x.iter().position(|&v| v == 1.0).expect("1 is a node");
        let mut s = vec![0.0; m];
        for i in one + 1..m {
            s[i] = s[i - 1] + steps[i - 1];
        }
        for i in (0..one).rev() {
            s[i] = s[i + 1] - steps[i];
        }
        let mut d_right = vec![0.0; m - 1];
        let mut d_left = vec![0.0; m - 1];
        let mut hermite_ok = vec![false; m - 1];
        let mut table = CumulativeTable { g, x, s, d_right: vec![], d_left: vec![], hermite_ok: vec![], opts };
        for i in 0..m - 1 {
            let (a, b) = (table.x[i], table.x[i + 1]);
            let h = b - a;
            d_right[i] = (table.g)(a + 1e-12 * h);
            d_left[i] = (table.g)(b - 1e-12 * h);
            let secant = steps[i] / h;
            let (al, be) = (d_right[i] / secant, d_left[i] / secant);
            let finite = d_right[i].is_finite() && d_left[i].is_finite();
            if finite && al * al + be * be <= 9.0 {
                let mid = 0.5 * (a + b);
                let exact = table.s[i] + integrate_endpoint_singular(&table.g, a, mid, &table.opts)?;
                let approx = hermite(table.s[i], table.s[i + 1], d_right[i], d_left[i], h, 0.5);
                hermite_ok[i] = (approx - exact).abs() <= 1e-11 * (1.0 + exact.abs());
            }
        }
        table.d_right = d_right;
        table.d_left = d_left;
        table.hermite_ok = hermite_ok;
        Ok(table)
    }

    fn lo(&self) -> f64 {
        self.x[0]
    }

    fn s_of(&self, x: f64, limit: f64) -> Result<f64> {
        if x > limit * (1.0 + 1e-12) {
            return Err(Error::RangeExtensionFailure { requested: x, limit });
        }
        self.value(x)
    }

    /// `∫₁ˣ g`; outside the table the remainder is integrated directly.
    pub(crate) fn value(&self, x: f64) -> Result<f64> {
        let hi = *self.x.last().expect("non-empty");
        if x > hi {
            let direct = integrate_endpoint_singular(&self.g, hi, x, &self.opts)?;
            return Ok(self.s[self.s.len() - 1] + direct);
        }
        if x < self.lo() {
            let direct = integrate_endpoint_singular(&self.g, x, self.lo(), &self.opts)?;
            return Ok(self.s[0] - direct);
        }
        let i = (self.x.partition_point(|&v| v <= x).max(1) - 1).min(self.x.len() - 2);
        Ok(self.eval_piece(i, x))
    }

    fn eval_piece(&self, i: usize, x: f64) -> f64 {
        let (a, b) = (self.x[i], self.x[i + 1]);
        if x <= a {
            return self.s[i];
        }
        if x >= b {
            return self.s[i + 1];
        }
        if self.hermite_ok[i] {
            hermite(self.s[i], self.s[i + 1], self.d_right[i], self.d_left[i], b - a, (x - a) / (b - a))
        } else {
            self.s[i] + integrate_endpoint_singular(&self.g, a, x, &self.opts).unwrap_or(f64::NAN)
        }
    }

    fn s_inv(&self, v: f64, limit: f64, s_zero: f64) -> Result<f64> {
        let m = self.x.len();
        if v > self.s[m - 1] {
            return Err(Error::RangeExtensionFailure { requested: f64::INFINITY, limit });
        }
        if v <= s_zero {
            return Err(Error::Domain(format!("s⁻¹({v}) below s(0+) = {s_zero}")));
        }
        if v < self.s[0] {
            // Bracket, then bisect in log x below the table.
            let mut b = self.lo();
            let mut a = b;
            for _ in 0..100 {
                a *= 1e-3;
                if a == 0.0 || self.s_of(a, limit)? < v {
                    break;
                }
                b = a;
            }
            let a0 = a.max(f64::MIN_POSITIVE);
            let mut a = a0;
            for _ in 0..200 {
                let mid = (0.5 * (a.ln() + b.ln())).exp();
                if mid <= a || mid >= b || (b - a) <= 1e-15 * b {
                    break;
                }
                if self.s_of(mid, limit)? < v {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            return Ok(0.5 * (a + b));
        }
        let i = (self.s.partition_point(|&sv| sv <= v).max(1) - 1).min(m - 2);
        let (a, b) = (self.x[i], self.x[i + 1]);
        if v <= self.s[i] {
            return Ok(a);
        }
        if v >= self.s[i + 1] {
            return Ok(b);
        }
        // Bisection on the (monotone) piece, then a Newton polish.
        let (mut lo, mut hi) = (a, b);
        let mut x = a + (b - a) * (v - self.s[i]) / (self.s[i + 1] - self.s[i]);
        for _ in 0..8 {
            let f = self.eval_piece(i, x) - v;
            if f < 0.0 { lo = x } else { hi = x }
            let d = (self.g)(x);
            let next = x - f / d;
            x = if next > lo && next < hi && d.is_finite() { next } else { 0.5 * (lo + hi) };
            if f.abs() <= 1e-13 * (1.0 + v.abs()) {
                return Ok(x);
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let f = self.eval_piece(i, mid) - v;
            if f < 0.0 { lo = mid } else { hi = mid }
            if f.abs() <= 1e-13 * (1.0 + v.abs()) {
                return Ok(mid);
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// `s(0+)`: `s(lo)` minus the integral of `1/c` over dyadic pieces below
    /// `lo`, or `-inf` when the pieces do not decay geometrically.
    pub(crate) fn left_limit(&self) -> Result<f64> {
        self.s_zero()
    }

    fn s_zero(&self) -> Result<f64> {
        let mut total = 0.0;
        let mut hi = self.lo();
        let mut prev = f64::NAN;
        for j in 0..400 {
            let lo = 0.5 * hi;
            let piece = integrate_endpoint_singular(&self.g, lo, hi, &self.opts)?;
            total += piece;
            if j >= 8 && piece == 0.0 && prev == 0.0 {
                return Ok(self.s[0] - total);
            }
            if j >= 8 {
                let r = piece / prev;
                if r < 0.9 {
                    let tail = piece * r / (1.0 - r);
                    if tail <= 1e-12 * (1.0 + total) {
                        return Ok(self.s[0] - total - tail);
                    }
                } else if j >= 64 {
                    return Ok(f64::NEG_INFINITY);
                }
            }
            prev = piece;
            hi = lo;
        }
        Ok(f64::NEG_INFINITY)
    }
}

/// `∫ₐᵇ f`, retrying under the substitution `y = a + (b−a)(3w² − 2w³)`
/// when plain quadrature fails; the substitution tames integrable
/// singularities at either endpoint. Rounding in `c` next to such a point
/// can keep the strict tolerance out of reach, so the last attempt relaxes
/// it to 1e-10.
fn integrate_endpoint_singular(f: &ScalarFn, a: f64, b: f64, opts: &QuadOptions) -> Result<f64> {
    let h = b - a;
    let substituted = |o: &QuadOptions| {
        integrate_with_breaks(
            |w| {
                let y = a + h * w * w * (3.0 - 2.0 * w);
                f(y) * 6.0 * h * w * (1.0 - w)
            },
            &[0.0, 0.5, 1.0],
            o,
        )
    };
    integrate_with_breaks(|y| f(y), &[a, b], opts)
        .or_else(|_| substituted(opts))
        .or_else(|_| substituted(&opts.with_rel_tol(opts.rel_tol.max(1e-10))))
}

/// Cubic Hermite interpolant on `[0, h]` evaluated at `θ h`.
#[inline]
fn hermite(s0: f64, s1: f64, d0: f64, d1: f64, h: f64, th: f64) -> f64 {
    let t2 = th * th;
    let t3 = t2 * th;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + th;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    h00 * s0 + h10 * h * d0 + h01 * s1 + h11 * h * d1
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn engine(g: GrowthSpec) -> FlowEngine {
        FlowEngine::new(&g, (1e-3, 100.0)).unwrap()
    }

    #[test]
    fn closed_form_scales() {
        let lin = engine(GrowthSpec::linear(1.0).unwrap());
        assert_abs_diff_eq!(lin.s_of(std::f64::consts::E).unwrap(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(lin.flow_at(1.0, 2f64.ln()).unwrap(), 2.0, epsilon = 1e-9);
        let con = engine(GrowthSpec::constant(1.0).unwrap());
        assert_eq!(con.s_of(5.0).unwrap(), 4.0);
        assert_eq!(con.flow_at(2.0, 3.0).unwrap(), 5.0);
        let sq = engine(GrowthSpec::sqrt_abs());
        assert_abs_diff_eq!(sq.s_of(2.0).unwrap(), 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sq.flow_at(1.0, 1.5).unwrap(), 1.0 + 1.5 * 1.5 / 4.0, epsilon = 1e-8);
        assert!(con.s_of(0.0).is_err());
    }

    #[test]
    fn tabulated_scale_matches_log() {
        let e = engine(GrowthSpec::speed("x", |x| x, vec![]));
        for &x in &[1e-8, 1e-4, 0.3, 1.0, 2.5, 77.0, 1e5] {
            assert_abs_diff_eq!(e.s_of(x).unwrap(), x.ln(), epsilon = 1e-10);
        }
        assert_eq!(e.s_zero(), f64::NEG_INFINITY);
        let y = e.flow_at(0.5, 3.0).unwrap();
        assert_abs_diff_eq!(y, 0.5 * 3f64.exp(), epsilon = 1e-9 * y);
    }

    #[test]
    fn tabulated_sqrt_speed_with_singular_point() {
        let e = engine(GrowthSpec::speed("sqrt|x-1|", |x: f64| (x - 1.0).abs().sqrt(), vec![1.0]));
        assert_abs_diff_eq!(e.s_of(2.0).unwrap(), 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(e.s_of(0.75).unwrap(), -1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(e.flow_at(1.0, 1.0).unwrap(), 1.25, epsilon = 1e-8);
    }

    #[test]
    fn entrance_boundary_detected() {
        let e = engine(GrowthSpec::speed("sqrt x", |x: f64| x.sqrt(), vec![]));
        // s(x) = 2(√x − 1), so s(0+) = −2.
        assert_abs_diff_eq!(e.s_zero(), -2.0, epsilon = 1e-8);
    }

    #[test]
    fn piecewise_speed_matches_explicit() {
        let explicit = engine(GrowthSpec::piecewise_linear(2.0, 1.0, 3.0).unwrap());
        let tab = engine(GrowthSpec::speed("pw", |x| if x < 3.0 { 2.0 * x } else { x }, vec![3.0]));
        for &x in &[0.01, 0.5, 2.9, 3.0, 3.1, 50.0] {
            assert_abs_diff_eq!(explicit.s_of(x).unwrap(), tab.s_of(x).unwrap(), epsilon = 1e-10);
        }
    }

    #[test]
    fn along_flow_integral() {
        let e = engine(GrowthSpec::constant(1.0).unwrap());
        assert_abs_diff_eq!(e.integrate_along_flow(|y| y, 1.0, 2.0, &[]).unwrap(), 4.0, epsilon = 1e-8);
        assert_abs_diff_eq!(e.integrate_along_flow(|_| 1.0, 0.3, 1.7, &[]).unwrap(), 1.7, epsilon = 1e-12);
    }

    #[test]
    fn range_limit_enforced() {
        let e = engine(GrowthSpec::speed("x", |x| x, vec![]));
        assert!(matches!(e.flow_at(1.0, 100.0), Err(Error::RangeExtensionFailure { .. })));
    }
}
