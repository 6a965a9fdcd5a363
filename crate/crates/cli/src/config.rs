//! TOML run configuration.

use std::path::Path;

use gfspec::lyapunov::Regime;
use gfspec::model::{GrowthSpec, ModelSpec, RelativeMeasure};
use gfspec::pde::{Scheme, SizeGrid};
use gfspec::quad::QuadOptions;
use serde::Deserialize;
use sha2::{Digest, Sha256};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn bad(key: &str, why: impl std::fmt::Display) -> ConfigError {
    ConfigError(format!("`{key}`: {why}"))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub numerics: NumericsSection,
    pub run: RunSection,
    #[serde(default)]
    pub lyapunov: LyapunovSection,
}

/// `c(x) = c0 · x^exponent` unless `growth` names another family;
/// `K(x) = rate_coef · x^rate_exponent`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_growth")]
    pub growth: String,
    #[serde(default = "one")]
    pub c0: f64,
    #[serde(default)]
    pub exponent: f64,
    pub c_inf: Option<f64>,
    pub xc: Option<f64>,
    pub table: Option<Vec<[f64; 2]>>,
    pub kernel: String,
    pub kernel_coef: Option<f64>,
    pub kernel_exponent: Option<f64>,
    pub atoms: Option<Vec<[f64; 2]>>,
    #[serde(default = "one")]
    pub rate_coef: f64,
    #[serde(default)]
    pub rate_exponent: f64,
    /// Constant loss rate replacing `K` on the diagonal only.
    pub loss_rate: Option<f64>,
    #[serde(default)]
    pub kinks: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    #[serde(default = "default_grid")]
    pub grid: String,
    pub cells: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub dt: Option<f64>,
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default = "default_tol")]
    pub quad_tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_particles")]
    pub particles: usize,
    pub t_end: f64,
    #[serde(default = "default_x0")]
    pub x0: f64,
    #[serde(default)]
    pub checkpoints: Vec<f64>,
    /// Names from `one`, `id`, `indicator:a:b`.
    #[serde(default = "default_functions")]
    pub functions: Vec<String>,
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    #[serde(default)]
    pub eta_paths: usize,
    pub t_probe: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovSection {
    pub regime: Option<String>,
    pub alpha: Option<f64>,
    pub lambda0: Option<f64>,
    /// `psi` for the spectral normalization: `h`, `id` or `one`.
    pub psi: Option<String>,
}

fn default_growth() -> String {
    "power".into()
}
fn one() -> f64 {
    1.0
}
fn default_grid() -> String {
    "uniform".into()
}
fn default_scheme() -> String {
    "euler".into()
}
fn default_tol() -> f64 {
    1e-8
}
fn default_paths() -> usize {
    10_000
}
fn default_particles() -> usize {
    10_000
}
fn default_x0() -> f64 {
    1.0
}
fn default_functions() -> Vec<String> {
    vec!["one".into()]
}
fn default_burn_in() -> f64 {
    0.3
}

/// A parsed configuration with the SHA-256 of its text.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub hash: String,
}

pub fn hash_text(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load(path: &Path) -> Result<Loaded, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<Loaded, ConfigError> {
    let config: RunConfig = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
    config.validate()?;
    Ok(Loaded { config, hash: hash_text(text) })
}

#[derive(Clone, Debug)]
pub enum TestFunction {
    One,
    Id,
    Indicator(f64, f64),
}

impl TestFunction {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "one" => Ok(TestFunction::One),
            "id" => Ok(TestFunction::Id),
            _ => {
                let parts: Vec<&str> = s.split(':').collect();
                match parts.as_slice() {
                    ["indicator", a, b] => {
                        let a: f64 = a.parse().map_err(|e| bad("run.functions", e))?;
                        let b: f64 = b.parse().map_err(|e| bad("run.functions", e))?;
                        if !(a < b) {
                            return Err(bad("run.functions", format!("empty indicator [{a}, {b})")));
                        }
                        Ok(TestFunction::Indicator(a, b))
                    }
                    _ => Err(bad("run.functions", format!("unknown test function `{s}`"))),
                }
            }
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            TestFunction::One => 1.0,
            TestFunction::Id => x,
            TestFunction::Indicator(a, b) => {
                if x >= a && x < b {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl RunConfig {
    fn validate(&self) -> Result<(), ConfigError> {
        let n = &self.numerics;
        if !(n.x_min > 0.0 && n.x_min < 1.0 && n.x_max > 1.0 && n.x_max.is_finite()) {
            return Err(bad("numerics.x_min", "need 0 < x_min < 1 < x_max"));
        }
        if n.cells < 2 {
            return Err(bad("numerics.cells", "need at least 2 cells"));
        }
        if !(n.quad_tol > 0.0) {
            return Err(bad("numerics.quad_tol", "must be positive"));
        }
        if let Some(dt) = n.dt {
            if !(dt > 0.0) {
                return Err(bad("numerics.dt", "must be positive"));
            }
        }
        self.scheme()?;
        let r = &self.run;
        if r.n_paths == 0 {
            return Err(bad("run.n_paths", "must be positive"));
        }
        if r.particles == 0 {
            return Err(bad("run.particles", "must be positive"));
        }
        if !(r.t_end > 0.0) {
            return Err(bad("run.t_end", "must be positive"));
        }
        if !(r.x0 > 0.0) {
            return Err(bad("run.x0", "must be positive"));
        }
        if !(0.0..1.0).contains(&r.burn_in) {
            return Err(bad("run.burn_in", "must lie in [0, 1)"));
        }
        if r.checkpoints.iter().any(|&t| !(t > 0.0)) || r.checkpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(bad("run.checkpoints", "must be positive and increasing"));
        }
        for f in &r.functions {
            TestFunction::parse(f)?;
        }
        self.regime()?;
        self.model()?;
        Ok(())
    }

    pub fn scheme(&self) -> Result<Scheme, ConfigError> {
        match self.numerics.scheme.as_str() {
            "euler" => Ok(Scheme::Euler),
            "heun" => Ok(Scheme::Heun),
            other => Err(bad("numerics.scheme", format!("unknown scheme `{other}`"))),
        }
    }

    pub fn regime(&self) -> Result<Regime, ConfigError> {
        let s = self.lyapunov.regime.as_deref().unwrap_or("pseudo-entrance");
        s.parse().map_err(|e| bad("lyapunov.regime", e))
    }

    pub fn functions(&self) -> Vec<(String, TestFunction)> {
        self.run.functions.iter().map(|s| (s.clone(), TestFunction::parse(s).expect("validated"))).collect()
    }

    /// Checkpoints, or `t_end` alone.
    pub fn checkpoints(&self) -> Vec<f64> {
        if self.run.checkpoints.is_empty() { vec![self.run.t_end] } else { self.run.checkpoints.clone() }
    }

    pub fn model(&self) -> Result<ModelSpec, ConfigError> {
        let m = &self.model;
        let growth = match m.growth.as_str() {
            "power" => GrowthSpec::power(m.c0, m.exponent).map_err(|e| bad("model.exponent", e))?,
            "piecewise-linear" => {
                let c_inf = m.c_inf.ok_or_else(|| bad("model.c_inf", "required for piecewise-linear growth"))?;
                let xc = m.xc.ok_or_else(|| bad("model.xc", "required for piecewise-linear growth"))?;
                GrowthSpec::piecewise_linear(m.c0, c_inf, xc).map_err(|e| bad("model.growth", e))?
            }
            "sqrt-abs" => GrowthSpec::sqrt_abs(),
            "tabulated" => {
                let t = m.table.clone().ok_or_else(|| bad("model.table", "required for tabulated growth"))?;
                GrowthSpec::tabulated(t.into_iter().map(|p| (p[0], p[1])).collect()).map_err(|e| bad("model.table", e))?
            }
            other => return Err(bad("model.growth", format!("unknown growth `{other}`"))),
        };
        let p = match m.kernel.as_str() {
            "uniform" => RelativeMeasure::uniform_binary(),
            "mitosis" => RelativeMeasure::mitosis(),
            "power" => {
                let c = m.kernel_coef.ok_or_else(|| bad("model.kernel_coef", "required for a power kernel"))?;
                let e = m.kernel_exponent.ok_or_else(|| bad("model.kernel_exponent", "required for a power kernel"))?;
                RelativeMeasure::power(c, e).map_err(|e| bad("model.kernel", e))?
            }
            "atoms" => {
                let a = m.atoms.clone().ok_or_else(|| bad("model.atoms", "required for an atomic kernel"))?;
                RelativeMeasure::atoms(a.into_iter().map(|p| (p[0], p[1])).collect()).map_err(|e| bad("model.atoms", e))?
            }
            other => return Err(bad("model.kernel", format!("unknown kernel `{other}`"))),
        };
        let (rc, re) = (m.rate_coef, m.rate_exponent);
        if !(rc >= 0.0 && rc.is_finite() && re.is_finite()) {
            return Err(bad("model.rate_coef", "rate must be non-negative and finite"));
        }
        let rate = move |x: f64| if re == 0.0 { rc } else { rc * x.powf(re) };
        let n = &self.numerics;
        let mut model = ModelSpec::relative(growth, p, rate, (n.x_min, n.x_max))
            .map_err(|e| bad("numerics.x_min", e))?
            .with_quad(QuadOptions::default().with_rel_tol(n.quad_tol));
        if !m.kinks.is_empty() {
            model = model.with_rate_kinks(m.kinks.clone());
        }
        if let Some(k) = m.loss_rate {
            if !(k >= 0.0 && k.is_finite()) {
                return Err(bad("model.loss_rate", "must be non-negative"));
            }
            model = model.with_loss_rate(move |_| k);
        }
        Ok(model)
    }

    pub fn grid(&self) -> Result<SizeGrid, ConfigError> {
        let n = &self.numerics;
        let g = match n.grid.as_str() {
            "uniform" => SizeGrid::uniform(n.x_max, n.cells),
            "log" => SizeGrid::log(n.x_min, n.x_max, n.cells),
            "dyadic" => SizeGrid::dyadic(n.x_min, n.x_max, n.cells),
            other => return Err(bad("numerics.grid", format!("unknown grid `{other}`"))),
        };
        g.map_err(|e| bad("numerics.grid", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
kernel = "uniform"
rate_exponent = 1.0

[numerics]
cells = 64
x_min = 1e-3
x_max = 16.0

[run]
t_end = 2.0
"#;

    #[test]
    fn minimal_config() {
        let l = parse(MINIMAL).unwrap();
        assert_eq!(l.hash.len(), 64);
        assert_eq!(l.config.checkpoints(), vec![2.0]);
        let m = l.config.model().unwrap();
        assert_eq!(m.loss_rate(3.0), 3.0);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINIMAL.replace("cells = 64", "cells = 64\nbogus = 1");
        let e = parse(&text).unwrap_err();
        assert!(e.0.contains("bogus"), "{e}");
    }

    #[test]
    fn zero_paths_rejected() {
        let text = MINIMAL.replace("t_end = 2.0", "t_end = 2.0\nn_paths = 0");
        assert!(parse(&text).unwrap_err().0.contains("n_paths"));
    }
}
