use std::sync::Arc;

use rand::RngCore;

use super::{ScalarFn, KernelDensity, AtomsFn};
use crate::error::{Error, Result};
use crate::quad::{integrate_with_breaks, QuadOptions};
use crate::rng::open01;

/// Absolutely continuous part of a relative-size measure on (0,1).
#[derive(Clone)]
pub enum Density {
    /// `coef · u^exponent`. Exponents `≤ -1` give a σ-finite measure.
    Power { coef: f64, exponent: f64 },
    /// Arbitrary non-negative density with optional interior break points.
    Custom {
        f: ScalarFn,
        breaks: Vec<f64>,
        table: Arc<SampleTable>,
    },
}

impl std::fmt::Debug for Density {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Density::Power { coef, exponent } => write!(f, "Power({coef}·u^{exponent})"),
            Density::Custom { breaks, .. } => write!(f, "Custom(breaks={breaks:?})"),
        }
    }
}

/// Piecewise table used to sample a custom density: cumulative masses on a
/// geometric node set, then rejection inside the selected cell.
pub struct SampleTable {
    nodes: Vec<f64>,
    cumulative: Vec<f64>,
    bounds: Vec<f64>,
}

/// Relative-size measure `p` on (0,1): atoms plus an optional density.
#[derive(Clone, Debug)]
pub struct RelativeMeasure {
    atoms: Vec<(f64, f64)>,
    density: Option<Density>,
}

impl RelativeMeasure {
    pub fn new(atoms: Vec<(f64, f64)>, density: Option<Density>) -> Result<Self> {
        for &(u, w) in &atoms {
            if !(u > 0.0 && u < 1.0) {
                return Err(Error::InvalidKernel(format!("atom at u = {u} is not in (0,1)")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidKernel(format!("atom weight {w} at u = {u} must be positive")));
            }
        }
        if let Some(Density::Power { coef, exponent }) = &density {
            if !(*coef > 0.0 && coef.is_finite() && exponent.is_finite()) {
                return Err(Error::InvalidKernel(format!("bad power density {coef}·u^{exponent}")));
            }
        }
        if atoms.is_empty() && density.is_none() {
            return Err(Error::InvalidKernel("relative measure has neither atoms nor density".into()));
        }
        Ok(RelativeMeasure { atoms, density })
    }

    /// `p(du) = 2 du`: uniform binary splitting.
    pub fn uniform_binary() -> Self {
        Self::power(2.0, 0.0).expect("valid")
    }

    /// `p = 2 δ_{1/2}`: equal mitosis.
    pub fn mitosis() -> Self {
        Self::atoms(vec![(0.5, 2.0)]).expect("valid")
    }

    pub fn power(coef: f64, exponent: f64) -> Result<Self> {
        Self::new(vec![], Some(Density::Power { coef, exponent }))
    }

    pub fn atoms(atoms: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(atoms, None)
    }

    /// Custom density on (0,1). The density must be finite on (0,1); it may
    /// blow up at 0 as long as the requested integrals converge.
    pub fn custom<F>(f: F, breaks: Vec<f64>) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let f: ScalarFn = Arc::new(f);
        let mut breaks: Vec<f64> = breaks.into_iter().filter(|b| *b > 0.0 && *b < 1.0).collect();
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let table = Arc::new(SampleTable::build(&f, &breaks)?);
        Self::new(vec![], Some(Density::Custom { f, breaks, table }))
    }

    pub fn with_atoms(mut self, atoms: Vec<(f64, f64)>) -> Result<Self> {
        self.atoms.extend(atoms);
        Self::new(self.atoms, self.density)
    }

    pub fn atoms_list(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    /// The measure without its atoms.
    pub fn density_only(&self) -> RelativeMeasure {
        RelativeMeasure { atoms: vec![], density: self.density.clone() }
    }

    pub fn density(&self) -> Option<&Density> {
        self.density.as_ref()
    }

    /// `∫ g(u) p(du)` over (0,1). `breaks` are interior points (in u) where
    /// `g` has kinks.
    pub fn integrate<G: Fn(f64) -> f64>(&self, g: G, breaks: &[f64], opts: &QuadOptions) -> Result<f64> {
        let mut total: f64 = self.atoms.iter().map(|&(u, w)| w * g(u)).sum();
        if let Some(d) = &self.density {
            total += integrate_density(d, &g, breaks, opts)?;
        }
        if !total.is_finite() {
            return Err(Error::QuadratureDivergence { lo: 0.0, hi: 1.0, estimate: total, error: f64::INFINITY });
        }
        Ok(total)
    }

    /// `p((0,1))`; infinite for σ-finite densities.
    pub fn mass(&self) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|a| a.1).sum();
        atoms
            + match &self.density {
                None => 0.0,
                Some(Density::Power { coef, exponent }) => {
                    if *exponent > -1.0 { coef / (exponent + 1.0) } else { f64::INFINITY }
                }
                Some(Density::Custom { table, .. }) => table.total(),
            }
    }

    /// `∫ u^a p(du)`.
    pub fn moment(&self, a: f64) -> Result<f64> {
        let atoms: f64 = self.atoms.iter().map(|&(u, w)| w * u.powf(a)).sum();
        let dens = match &self.density {
            None => 0.0,
            Some(Density::Power { coef, exponent }) => {
                let q = a + exponent + 1.0;
                if q <= 0.0 {
                    return Err(Error::MomentDivergence(format!("∫ u^{a} p(du) diverges at 0")));
                }
                coef / q
            }
            Some(d @ Density::Custom { .. }) => integrate_density(d, &|u: f64| u.powf(a), &[], &QuadOptions::default())
                .map_err(|_| Error::MomentDivergence(format!("∫ u^{a} p(du) does not converge")))?,
        };
        Ok(atoms + dens)
    }

    /// `∫ (−ln u) p(du)`.
    pub fn log_moment(&self) -> Result<f64> {
        let atoms: f64 = self.atoms.iter().map(|&(u, w)| -w * u.ln()).sum();
        let dens = match &self.density {
            None => 0.0,
            Some(Density::Power { coef, exponent }) => {
                if *exponent <= -1.0 {
                    return Err(Error::MomentDivergence("∫ −ln u p(du) diverges at 0".into()));
                }
                coef / (exponent + 1.0).powi(2)
            }
            Some(d @ Density::Custom { .. }) => integrate_density(d, &|u: f64| -u.ln(), &[], &QuadOptions::default())
                .map_err(|_| Error::MomentDivergence("∫ −ln u p(du) does not converge".into()))?,
        };
        Ok(atoms + dens)
    }

    /// `∫ u (−ln u) p(du)`.
    pub fn u_log_moment(&self) -> Result<f64> {
        let atoms: f64 = self.atoms.iter().map(|&(u, w)| -w * u * u.ln()).sum();
        let dens = match &self.density {
            None => 0.0,
            Some(Density::Power { coef, exponent }) => {
                if *exponent <= -2.0 {
                    return Err(Error::MomentDivergence("∫ −u ln u p(du) diverges at 0".into()));
                }
                coef / (exponent + 2.0).powi(2)
            }
            Some(d @ Density::Custom { .. }) => {
                integrate_density(d, &|u: f64| -u * u.ln(), &[], &QuadOptions::default())
                    .map_err(|_| Error::MomentDivergence("∫ −u ln u p(du) does not converge".into()))?
            }
        };
        Ok(atoms + dens)
    }

    /// Whether `∫ u p(du) = 1` within 1e-8.
    pub fn is_mass_conserving(&self) -> bool {
        self.moment(1.0).map(|m| (m - 1.0).abs() <= 1e-8).unwrap_or(false)
    }

    /// `p([a, b))` for `0 ≤ a < b ≤ 1`.
    pub fn mass_between(&self, a: f64, b: f64, opts: &QuadOptions) -> Result<f64> {
        let (a, b) = (a.max(0.0), b.min(1.0));
        if b <= a {
            return Ok(0.0);
        }
        let atoms: f64 = self.atoms.iter().filter(|&&(u, _)| u >= a && u < b).map(|a| a.1).sum();
        let dens = match &self.density {
            None => 0.0,
            Some(Density::Power { coef, exponent }) => {
                let e1 = exponent + 1.0;
                if e1 > 0.0 {
                    coef / e1 * (b.powf(e1) - a.powf(e1))
                } else if a == 0.0 {
                    f64::INFINITY
                } else if e1 == 0.0 {
                    coef * (b / a).ln()
                } else {
                    coef / e1 * (b.powf(e1) - a.powf(e1))
                }
            }
            Some(Density::Custom { f, breaks, .. }) => {
                let mut pts = vec![a];
                pts.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
                pts.push(b);
                if a == 0.0 {
                    integrate_density(self.density.as_ref().expect("custom"), &|u: f64| if u < b { 1.0 } else { 0.0 }, &[b], opts)?
                } else {
                    integrate_with_breaks(|u| f(u), &pts, opts)?
                }
            }
        };
        Ok(atoms + dens)
    }

    /// Draws `u` from `p / p((0,1))`. Requires a finite measure.
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let atom_mass: f64 = self.atoms.iter().map(|a| a.1).sum();
        let dens_mass = self.mass() - atom_mass;
        if !dens_mass.is_finite() {
            return Err(Error::Unsupported("sampling from a σ-finite relative measure".into()));
        }
        let total = atom_mass + dens_mass;
        let mut v = open01(rng) * total;
        for &(u, w) in &self.atoms {
            if v < w {
                return Ok(u);
            }
            v -= w;
        }
        match &self.density {
            Some(Density::Power { exponent, .. }) => Ok(open01(rng).powf(1.0 / (exponent + 1.0))),
            Some(Density::Custom { f, table, .. }) => Ok(table.sample(f, rng)),
            // Rounding in the atom loop.
            None => Ok(self.atoms.last().expect("non-empty").0),
        }
    }
}

fn integrate_density<G: Fn(f64) -> f64>(d: &Density, g: &G, breaks: &[f64], opts: &QuadOptions) -> Result<f64> {
    let inner: Vec<f64> = breaks.iter().copied().filter(|b| *b > 0.0 && *b < 1.0).collect();
    match d {
        Density::Power { coef, exponent } if *exponent >= 0.0 => {
            let pts = with_ends(&inner);
            let e = *exponent;
            let plain = integrate_with_breaks(|u| coef * g(u) * pow_or_one(u, e), &pts, opts);
            plain.or_else(|_| dyadic(|u| coef * g(u) * pow_or_one(u, e), &inner, opts))
        }
        Density::Power { coef, exponent } if *exponent > -1.0 => {
            // u = v^{1/(e+1)} makes the measure uniform.
            let e1 = exponent + 1.0;
            let mapped: Vec<f64> = inner.iter().map(|b| b.powf(e1)).collect();
            let pts = with_ends(&mapped);
            let scale = coef / e1;
            let plain = integrate_with_breaks(|v: f64| scale * g(v.powf(1.0 / e1)), &pts, opts);
            let e = *exponent;
            plain.or_else(|_| dyadic(|u: f64| coef * g(u) * u.powf(e), &inner, opts))
        }
        Density::Power { coef, exponent } => {
            let e = *exponent;
            dyadic(|u: f64| coef * g(u) * u.powf(e), &inner, opts)
        }
        Density::Custom { f, breaks: own, .. } => {
            let mut all: Vec<f64> = inner.iter().chain(own.iter()).copied().collect();
            all.sort_by(f64::total_cmp);
            all.dedup();
            let pts = with_ends(&all);
            let plain = integrate_with_breaks(|u| f(u) * g(u), &pts, opts);
            plain.or_else(|_| dyadic(|u| f(u) * g(u), &all, opts))
        }
    }
}

#[inline]
fn pow_or_one(u: f64, e: f64) -> f64 {
    if e == 0.0 { 1.0 } else { u.powf(e) }
}

fn with_ends(inner: &[f64]) -> Vec<f64> {
    let mut pts = Vec::with_capacity(inner.len() + 2);
    pts.push(0.0);
    pts.extend_from_slice(inner);
    pts.push(1.0);
    pts
}

/// Integrates over (0,1) piece by piece on `[2^{-j-1}, 2^{-j}]`, stopping
/// once a geometric extrapolation of the remaining tail is negligible.
fn dyadic<F: Fn(f64) -> f64>(f: F, breaks: &[f64], opts: &QuadOptions) -> Result<f64> {
    let mut total = 0.0;
    let mut prev = f64::NAN;
    let mut hi: f64 = 1.0;
    for j in 0..1070 {
        let lo = hi * 0.5;
        let mut pts = vec![lo];
        pts.extend(breaks.iter().copied().filter(|&b| b > lo && b < hi));
        pts.push(hi);
        let piece = integrate_with_breaks(&f, &pts, opts)?;
        total += piece;
        if j >= 4 {
            let r = (piece / prev).abs();
            let tail = if r < 0.95 { piece.abs() * r / (1.0 - r) } else { f64::INFINITY };
            if tail <= 0.1 * opts.rel_tol * total.abs() || piece == 0.0 && prev == 0.0 {
                return Ok(total);
            }
        }
        prev = piece;
        hi = lo;
    }
    Err(Error::QuadratureDivergence { lo: 0.0, hi: 1.0, estimate: total, error: f64::INFINITY })
}

impl SampleTable {
    fn build(f: &ScalarFn, breaks: &[f64]) -> Result<Self> {
        let mut nodes: Vec<f64> = (0..=480).map(|i| 10f64.powf(-12.0 + 12.0 * i as f64 / 480.0)).collect();
        nodes.extend_from_slice(breaks);
        nodes.push(0.0);
        nodes.sort_by(f64::total_cmp);
        nodes.dedup();
        let opts = QuadOptions::default().with_max_subdivisions(200);
        let mut cumulative = Vec::with_capacity(nodes.len());
        let mut bounds = Vec::with_capacity(nodes.len() - 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in nodes.windows(2) {
            let (a, b) = (w[0], w[1]);
            let m = integrate_with_breaks(|u| f(u), &[a, b], &opts)?;
            if !(m >= 0.0) {
                return Err(Error::InvalidKernel(format!("density has negative mass on [{a}, {b}]")));
            }
            acc += m;
            cumulative.push(acc);
            let mut sup: f64 = 0.0;
            for k in 0..=16 {
                let u = a + (b - a) * (k as f64 + 0.5) / 17.0;
                sup = sup.max(f(u));
            }
            bounds.push(1.5 * sup.max(m / (b - a)));
        }
        if !(acc > 0.0 && acc.is_finite()) {
            return Err(Error::InvalidKernel(format!("custom density has total mass {acc}")));
        }
        Ok(SampleTable { nodes, cumulative, bounds })
    }

    fn total(&self) -> f64 {
        *self.cumulative.last().expect("non-empty")
    }

    fn sample<R: RngCore + ?Sized>(&self, f: &ScalarFn, rng: &mut R) -> f64 {
        let v = open01(rng) * self.total();
        let i = (self.cumulative.partition_point(|&c| c <= v).max(1) - 1).min(self.bounds.len() - 1);
        let (a, b) = (self.nodes[i], self.nodes[i + 1]);
        for _ in 0..10_000 {
            let u = a + (b - a) * open01(rng);
            if open01(rng) * self.bounds[i] <= f(u) {
                return u;
            }
        }
        0.5 * (a + b)
    }
}

/// General kernel `x ↦ k(x, ·)` on (0, x): a density in `y` and/or atoms.
#[derive(Clone)]
pub struct GeneralKernel {
    pub(crate) density: Option<KernelDensity>,
    pub(crate) atoms: Option<AtomsFn>,
}

impl GeneralKernel {
    pub fn new(density: Option<KernelDensity>, atoms: Option<AtomsFn>) -> Result<Self> {
        if density.is_none() && atoms.is_none() {
            return Err(Error::InvalidKernel("general kernel has neither atoms nor density".into()));
        }
        Ok(GeneralKernel { density, atoms })
    }

    pub fn from_density<F>(f: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        GeneralKernel { density: Some(Arc::new(f)), atoms: None }
    }
}

/// The fragmentation kernel `k(x, dy)`.
#[derive(Clone)]
pub enum FragmentationKernel {
    /// `k(x,·) = R(x) · p∘m_x⁻¹` with `m_x(u) = xu`.
    Relative { p: RelativeMeasure, rate: ScalarFn, rate_kinks: Vec<f64> },
    General(GeneralKernel),
}

impl std::fmt::Debug for FragmentationKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FragmentationKernel::Relative { p, .. } => write!(f, "Relative({p:?})"),
            FragmentationKernel::General(_) => write!(f, "General"),
        }
    }
}

impl FragmentationKernel {
    pub fn relative<F>(p: RelativeMeasure, rate: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        FragmentationKernel::Relative { p, rate: Arc::new(rate), rate_kinks: vec![] }
    }

    pub fn relative_measure(&self) -> Option<&RelativeMeasure> {
        match self {
            FragmentationKernel::Relative { p, .. } => Some(p),
            FragmentationKernel::General(_) => None,
        }
    }

    /// Intensity `R(x)` of a relative kernel.
    pub fn relative_rate(&self, x: f64) -> Option<f64> {
        match self {
            FragmentationKernel::Relative { rate, rate_kinks, .. } => Some(super::right_eval(rate.as_ref(), x, rate_kinks)),
            FragmentationKernel::General(_) => None,
        }
    }

    /// `∫_{(0,x)} f(y) k(x, dy)`; `y_breaks` are kinks of `f` in `y`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, x: f64, f: F, y_breaks: &[f64], opts: &QuadOptions) -> Result<f64> {
        match self {
            FragmentationKernel::Relative { p, .. } => {
                let r = self.relative_rate(x).expect("relative");
                if r == 0.0 {
                    return Ok(0.0);
                }
                let ub: Vec<f64> = y_breaks.iter().map(|y| y / x).filter(|u| *u > 0.0 && *u < 1.0).collect();
                Ok(r * p.integrate(|u| f(u * x), &ub, opts)?)
            }
            FragmentationKernel::General(g) => {
                let mut total = 0.0;
                if let Some(atoms) = &g.atoms {
                    for (y, w) in atoms(x) {
                        if !(y > 0.0 && y < x) {
                            return Err(Error::InvalidKernel(format!("atom at y = {y} outside (0, {x})")));
                        }
                        total += w * f(y);
                    }
                }
                if let Some(d) = &g.density {
                    let mut pts = vec![0.0];
                    pts.extend(y_breaks.iter().copied().filter(|&y| y > 0.0 && y < x));
                    pts.sort_by(f64::total_cmp);
                    pts.push(x);
                    let h = |y: f64| d(x, y) * f(y);
                    total += integrate_with_breaks(h, &pts, opts).or_else(|_| {
                        let ub: Vec<f64> = pts[1..pts.len() - 1].iter().map(|y| y / x).collect();
                        dyadic(|u| x * h(u * x), &ub, opts)
                    })?;
                }
                Ok(total)
            }
        }
    }

    /// Total fragment mass `k(x, (0, x))`.
    pub fn mass(&self, x: f64, opts: &QuadOptions) -> Result<f64> {
        match self {
            FragmentationKernel::Relative { p, .. } => Ok(self.relative_rate(x).expect("relative") * p.mass()),
            FragmentationKernel::General(_) => self.integrate(x, |_| 1.0, &[], opts),
        }
    }

    /// `k(x, [a, b))`.
    pub fn mass_between(&self, x: f64, a: f64, b: f64, opts: &QuadOptions) -> Result<f64> {
        let (a, b) = (a.max(0.0), b.min(x));
        if b <= a {
            return Ok(0.0);
        }
        match self {
            FragmentationKernel::Relative { p, .. } => {
                let r = self.relative_rate(x).expect("relative");
                if r == 0.0 {
                    return Ok(0.0);
                }
                Ok(r * p.mass_between(a / x, b / x, opts)?)
            }
            FragmentationKernel::General(g) => {
                let mut total = 0.0;
                if let Some(atoms) = &g.atoms {
                    total += atoms(x).into_iter().filter(|&(y, _)| y >= a && y < b).map(|a| a.1).sum::<f64>();
                }
                if let Some(d) = &g.density {
                    total += integrate_with_breaks(|y| d(x, y), &[a, b], opts)?;
                }
                Ok(total)
            }
        }
    }

    /// Draws a child size from `k(x, ·) / k(x, (0, x))`.
    pub fn sample_child<R: RngCore + ?Sized>(&self, x: f64, rng: &mut R, opts: &QuadOptions) -> Result<f64> {
        match self {
            FragmentationKernel::Relative { p, .. } => Ok(x * p.sample(rng)?),
            FragmentationKernel::General(g) => {
                let atom_list = g.atoms.as_ref().map(|a| a(x)).unwrap_or_default();
                let atom_mass: f64 = atom_list.iter().map(|a| a.1).sum();
                let dens_mass = match &g.density {
                    Some(d) => integrate_with_breaks(|y| d(x, y), &[0.0, x], opts)?,
                    None => 0.0,
                };
                let mut v = open01(rng) * (atom_mass + dens_mass);
                for &(y, w) in &atom_list {
                    if v < w {
                        return Ok(y);
                    }
                    v -= w;
                }
                g.sample_density(x, rng)
            }
        }
    }
}

impl GeneralKernel {
    /// Draws `y` from the normalized density part of `k(x, ·)` by rejection
    /// against a uniform proposal on `(0, x)`.
    pub(crate) fn sample_density<R: RngCore + ?Sized>(&self, x: f64, rng: &mut R) -> Result<f64> {
        let d = self.density.as_ref().ok_or_else(|| Error::InvalidKernel("kernel has no density part".into()))?;
        let mut sup: f64 = 0.0;
        for k in 0..64 {
            sup = sup.max(d(x, x * (k as f64 + 0.5) / 64.0));
        }
        let bound = 1.5 * sup;
        for _ in 0..1_000_000u32 {
            let y = x * open01(rng);
            if open01(rng) * bound <= d(x, y) {
                return Ok(y);
            }
        }
        Err(Error::RejectionStall { x, proposals: 1_000_000 })
    }
}
