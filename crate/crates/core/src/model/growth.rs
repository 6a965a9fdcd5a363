use std::sync::Arc;

use super::{right_eval, ScalarFn};
use crate::error::{Error, Result};

/// How the deterministic growth between splits is specified.
///
/// Either the scale `s` is known in closed form (together with its inverse
/// and the speed `c = 1/s'`), or only the speed `c` is given and `s` is
/// built numerically as `s(x) = ∫₁ˣ dy / c(y)` by the flow engine.
#[derive(Clone)]
pub enum GrowthSpec {
    Explicit {
        label: String,
        s: ScalarFn,
        s_inv: ScalarFn,
        speed: ScalarFn,
        /// `s(0+)`, `-inf` when the boundary at zero is not an entrance.
        s_zero: f64,
    },
    Speed {
        label: String,
        c: ScalarFn,
        kinks: Vec<f64>,
    },
}

impl std::fmt::Debug for GrowthSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GrowthSpec::Explicit { label, s_zero, .. } => {
                write!(f, "GrowthSpec::Explicit({label}, s(0+)={s_zero})")
            }
            GrowthSpec::Speed { label, kinks, .. } => write!(f, "GrowthSpec::Speed({label}, kinks={kinks:?})"),
        }
    }
}

impl GrowthSpec {
    /// `c ≡ c0`, so `s(x) = (x - 1)/c0`.
    pub fn constant(c0: f64) -> Result<Self> {
        positive("c0", c0)?;
        Ok(GrowthSpec::Explicit {
            label: format!("constant(c0={c0})"),
            s: Arc::new(move |x| (x - 1.0) / c0),
            s_inv: Arc::new(move |v| 1.0 + c0 * v),
            speed: Arc::new(move |_| c0),
            s_zero: -1.0 / c0,
        })
    }

    /// `c(x) = c0·x`, so `s(x) = ln(x)/c0`.
    pub fn linear(c0: f64) -> Result<Self> {
        positive("c0", c0)?;
        Ok(GrowthSpec::Explicit {
            label: format!("linear(c0={c0})"),
            s: Arc::new(move |x: f64| x.ln() / c0),
            s_inv: Arc::new(move |v: f64| (c0 * v).exp()),
            speed: Arc::new(move |x| c0 * x),
            s_zero: f64::NEG_INFINITY,
        })
    }

    /// `c(x) = c0·x^e` with `e ≤ 1` (larger exponents explode in finite time).
    pub fn power(c0: f64, e: f64) -> Result<Self> {
        positive("c0", c0)?;
        if e > 1.0 {
            return Err(Error::InvalidModel(format!(
                "growth exponent {e} > 1 gives s(+inf) < inf (finite-time explosion)"
            )));
        }
        if e == 1.0 {
            return Self::linear(c0);
        }
        let k = c0 * (1.0 - e);
        let p = 1.0 - e;
        Ok(GrowthSpec::Explicit {
            label: format!("power(c0={c0}, e={e})"),
            s: Arc::new(move |x: f64| (x.powf(p) - 1.0) / k),
            s_inv: Arc::new(move |v: f64| (1.0 + k * v).max(0.0).powf(1.0 / p)),
            speed: Arc::new(move |x: f64| c0 * x.powf(e)),
            s_zero: -1.0 / k,
        })
    }

    /// `c(x) = √|x − 1|`: a non-Lipschitz speed vanishing at 1, for which
    /// `s(x) = sign(x−1)·2√|x−1|` is still a homeomorphism.
    pub fn sqrt_abs() -> Self {
        GrowthSpec::Explicit {
            label: "sqrt_abs".into(),
            s: Arc::new(|x: f64| {
                let d = x - 1.0;
                d.signum() * 2.0 * d.abs().sqrt()
            }),
            s_inv: Arc::new(|v: f64| 1.0 + v.signum() * 0.25 * v * v),
            speed: Arc::new(|x: f64| (x - 1.0).abs().sqrt()),
            s_zero: -2.0,
        }
    }

    /// `c(x) = c0·x` below `xc`, `c_inf·x` above; `s` is piecewise logarithmic.
    pub fn piecewise_linear(c0: f64, c_inf: f64, xc: f64) -> Result<Self> {
        positive("c0", c0)?;
        positive("c_inf", c_inf)?;
        positive("x_c", xc)?;
        // Anchor: s(1) = 0.
        let lc = xc.ln();
        let s = move |x: f64| {
            let lx = x.ln();
            if xc >= 1.0 {
                if x <= xc { lx / c0 } else { lc / c0 + (lx - lc) / c_inf }
            } else if x >= xc {
                lx / c_inf
            } else {
                lc / c_inf + (lx - lc) / c0
            }
        };
        let sc = s(xc);
        let s_inv = move |v: f64| {
            if xc >= 1.0 {
                if v <= sc { (c0 * v).exp() } else { (lc + c_inf * (v - sc)).exp() }
            } else if v >= sc {
                (c_inf * v).exp()
            } else {
                (lc + c0 * (v - sc)).exp()
            }
        };
        Ok(GrowthSpec::Explicit {
            label: format!("piecewise_linear(c0={c0}, c_inf={c_inf}, x_c={xc})"),
            s: Arc::new(s),
            s_inv: Arc::new(s_inv),
            speed: Arc::new(move |x| if x <= xc { c0 * x } else { c_inf * x }),
            s_zero: f64::NEG_INFINITY,
        })
    }

    /// General positive right-continuous speed; `s` is tabulated numerically.
    pub fn speed<F>(label: impl Into<String>, c: F, kinks: Vec<f64>) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let mut kinks = kinks;
        kinks.sort_by(f64::total_cmp);
        kinks.dedup();
        GrowthSpec::Speed { label: label.into(), c: Arc::new(c), kinks }
    }

    /// Piecewise-linear interpolation of tabulated `(x, c)` pairs, constant
    /// beyond the first and last abscissae.
    pub fn tabulated(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidModel("tabulated growth needs at least two points".into()));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidModel("tabulated growth abscissae must increase".into()));
        }
        if let Some(&(x, c)) = points.iter().find(|p| !(p.0 > 0.0 && p.1 > 0.0)) {
            return Err(Error::InvalidModel(format!("tabulated growth needs x > 0 and c > 0, got ({x}, {c})")));
        }
        let kinks = points.iter().map(|p| p.0).collect();
        let pts = points;
        Ok(Self::speed(
            "tabulated",
            move |x| {
                let n = pts.len();
                if x <= pts[0].0 {
                    return pts[0].1;
                }
                if x >= pts[n - 1].0 {
                    return pts[n - 1].1;
                }
                let i = pts.partition_point(|p| p.0 <= x) - 1;
                let (x0, c0) = pts[i];
                let (x1, c1) = pts[i + 1];
                c0 + (c1 - c0) * (x - x0) / (x1 - x0)
            },
            kinks,
        ))
    }

    pub fn label(&self) -> &str {
        match self {
            GrowthSpec::Explicit { label, .. } | GrowthSpec::Speed { label, .. } => label,
        }
    }

    /// Growth speed `c(x) = ∂x/∂s`, right limit at declared kinks.
    pub fn speed_at(&self, x: f64) -> f64 {
        match self {
            GrowthSpec::Explicit { speed, .. } => speed(x),
            GrowthSpec::Speed { c, kinks, .. } => right_eval(c.as_ref(), x, kinks),
        }
    }

    pub fn kinks(&self) -> &[f64] {
        match self {
            GrowthSpec::Explicit { .. } => &[],
            GrowthSpec::Speed { kinks, .. } => kinks,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidModel(format!("{name} must be positive and finite, got {v}")))
    }
}
