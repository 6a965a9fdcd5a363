//! Scalar minimization and root bracketing used by the Lyapunov criteria.

use crate::error::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_8;
const INV_PHI2: f64 = 0.381_966_011_250_105_1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeOptions {
    /// Absolute tolerance on the argument.
    pub abs_tol: f64,
    pub max_iter: usize,
    /// After golden-section has narrowed the bracket, refine the argument by
    /// bisecting on the sign of a central-difference derivative. Golden
    /// section alone cannot resolve the argument below ~sqrt(eps) because
    /// function values become indistinguishable there.
    pub derivative_polish: bool,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            abs_tol: 1e-10,
            max_iter: 200,
            derivative_polish: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub argmin: f64,
    pub value: f64,
    pub iterations: usize,
}

/// Minimizes `f` on the open interval `domain`, starting from the bracket
/// guess `[a, b]`. The bracket is expanded (never past the domain) until it
/// encloses a local minimum; the minimum may sit on the domain boundary, in
/// which case the boundary-most evaluated point is returned.
pub fn minimize<F: Fn(f64) -> f64>(
    f: F,
    guess: (f64, f64),
    domain: (f64, f64),
    opts: &MinimizeOptions,
) -> Result<Minimum> {
    let (dlo, dhi) = domain;
    let (mut a, mut b) = guess;
    if !(dlo <= a && a < b && b <= dhi) {
        return Err(Error::Domain(format!(
            "bracket [{a}, {b}] not inside domain [{dlo}, {dhi}]"
        )));
    }
    let inner = |lo: f64, x: f64| if lo.is_finite() { 0.5 * (lo + x) } else { x - 2.0 * (x.abs() + 1.0) };
    let outer = |hi: f64, x: f64| if hi.is_finite() { 0.5 * (hi + x) } else { x + 2.0 * (x.abs() + 1.0) };

    let mut c = a + INV_PHI2 * (b - a);
    let mut fa = f(a);
    let mut fb = f(b);
    let mut fc = f(c);
    let mut iterations = 0;
    // Expand until fc < fa and fc < fb.
    while iterations < opts.max_iter && (fc >= fa || fc >= fb) {
        iterations += 1;
        if fa <= fb {
            // Downhill to the left.
            b = c;
            fb = fc;
            c = a;
            fc = fa;
            let na = inner(dlo, a);
            if (a - na).abs() < opts.abs_tol {
                return Ok(Minimum { argmin: a, value: fa, iterations });
            }
            a = na;
            fa = f(a);
        } else {
            a = c;
            fa = fc;
            c = b;
            fc = fb;
            let nb = outer(dhi, b);
            if (nb - b).abs() < opts.abs_tol {
                return Ok(Minimum { argmin: b, value: fb, iterations });
            }
            b = nb;
            fb = f(b);
        }
    }
    if fc >= fa || fc >= fb {
        return Err(Error::Domain("minimum could not be bracketed".into()));
    }

    // Golden section on [a, b] with interior points x1 < x2.
    let mut x1 = a + INV_PHI2 * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while (b - a) > opts.abs_tol && iterations < opts.max_iter {
        iterations += 1;
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = a + INV_PHI2 * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    let (mut x, mut fx) = if f1 < f2 { (x1, f1) } else { (x2, f2) };

    if opts.derivative_polish {
        if let Some(r) = polish(&f, x, domain, opts) {
            let fr = f(r);
            if fr <= fx + 1e-14 * fx.abs().max(1.0) {
                x = r;
                fx = fr;
            }
        }
    }
    Ok(Minimum { argmin: x, value: fx, iterations })
}

/// Maximizes `f`; see [`minimize`].
pub fn maximize<F: Fn(f64) -> f64>(
    f: F,
    guess: (f64, f64),
    domain: (f64, f64),
    opts: &MinimizeOptions,
) -> Result<Minimum> {
    let m = minimize(|x| -f(x), guess, domain, opts)?;
    Ok(Minimum { value: -m.value, ..m })
}

fn polish<F: Fn(f64) -> f64>(f: &F, x: f64, domain: (f64, f64), opts: &MinimizeOptions) -> Option<f64> {
    let h = 1e-5 * x.abs().max(1.0);
    let deriv = |t: f64| (f(t + h) - f(t - h)) / (2.0 * h);
    let width = 1e-6 * x.abs().max(1.0);
    let lo = (x - width).max(domain.0 + h);
    let hi = (x + width).min(domain.1 - h);
    if lo >= hi {
        return None;
    }
    let (dl, dh) = (deriv(lo), deriv(hi));
    if !(dl < 0.0 && dh > 0.0) {
        return None;
    }
    bisect(|t| deriv(t), lo, hi, opts.abs_tol * 1e-2, opts.max_iter).ok()
}

/// Bisection for a sign change of `g` on `[lo, hi]`.
pub fn bisect<G: Fn(f64) -> f64>(g: G, lo: f64, hi: f64, tol: f64, max_iter: usize) -> Result<f64> {
    let (mut a, mut b) = (lo, hi);
    let ga = g(a);
    let gb = g(b);
    if ga == 0.0 {
        return Ok(a);
    }
    if gb == 0.0 {
        return Ok(b);
    }
    if ga.signum() == gb.signum() {
        return Err(Error::Domain(format!("no sign change on [{lo}, {hi}]")));
    }
    let sa = ga.signum();
    for _ in 0..max_iter {
        let m = 0.5 * (a + b);
        if m <= a || m >= b || (b - a) <= tol {
            break;
        }
        let gm = g(m);
        if gm == 0.0 {
            return Ok(m);
        }
        if gm.signum() == sa {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}
