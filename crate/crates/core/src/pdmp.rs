//! The h-transformed sub-Markov process: deterministic growth along the
//! flow, jumps to smaller sizes drawn from the tilted kernel
//! `k_h(x, dy) = h(y)/h(x) k(x, dy)`, and killing at rate `q = b − Ah/h`.
//!
//! The semigroup is recovered as `T_t f(x) = e^{bt} h(x) E_x[f(X_t)/h(X_t); t < ζ]`.

use std::io::Write;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::flow::FlowEngine;
use crate::model::{tilted_mass, FragmentationKernel, ModelSpec, WeightFunction};
use crate::rng::{exp1, open01, StreamId};

/// Thinning majorants above this value are treated as a mis-scaled model.
pub const MAJORANT_LIMIT: f64 = 1e12;
/// Maximum number of jumps along one path.
pub const MAX_JUMPS: u64 = 10_000_000;
/// Proposals before the tilted-child sampler gives up.
pub const MAX_PROPOSALS: u64 = 1_000_000;

const TABLE_PER_DECADE: f64 = 256.0;

/// Position of the process: a size in `(0, ∞)` or the cemetery `∂`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Position {
    Alive(f64),
    Cemetery,
}

impl Position {
    pub fn alive(self) -> Option<f64> {
        match self {
            Position::Alive(x) => Some(x),
            Position::Cemetery => None,
        }
    }
}

/// Current position, clock and random stream of one path.
#[derive(Clone, Debug)]
pub struct PdmpState {
    pub position: Position,
    pub clock: f64,
    pub stream: StreamId,
    pub jumps: u64,
    rng: ChaCha8Rng,
}

impl PdmpState {
    pub fn new(x0: f64, stream: StreamId) -> Self {
        PdmpState { position: Position::Alive(x0), clock: 0.0, stream, jumps: 0, rng: stream.rng() }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// A jump intensity evaluated along the flow.
pub trait JumpRate {
    fn rate(&self, x: f64) -> Result<f64>;

    /// Sizes where the rate may be discontinuous.
    fn kinks(&self) -> &[f64] {
        &[]
    }
}

/// Wraps a plain function as a [`JumpRate`].
pub struct FnRate<F>(pub F);

impl<F: Fn(f64) -> f64> JumpRate for FnRate<F> {
    fn rate(&self, x: f64) -> Result<f64> {
        Ok((self.0)(x))
    }
}

/// Counters of the thinning sampler.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ThinningStats {
    pub proposals: u64,
    pub accepted: u64,
    /// Proposals where the rate exceeded the windowed majorant.
    pub majorant_violations: u64,
}

impl ThinningStats {
    pub fn acceptance(&self) -> f64 {
        if self.proposals == 0 { 1.0 } else { self.accepted as f64 / self.proposals as f64 }
    }

    fn merge(&mut self, o: &ThinningStats) {
        self.proposals += o.proposals;
        self.accepted += o.accepted;
        self.majorant_violations += o.majorant_violations;
    }
}

fn guard_flow(engine: &FlowEngine, x: f64, t: f64) -> Result<f64> {
    engine.flow_at(x, t).map_err(|e| match e {
        Error::RangeExtensionFailure { requested, .. } => {
            Error::ExplosionGuard(format!("flow from x = {x} over t = {t} leaves the table (x = {requested})"))
        }
        other => other,
    })
}

/// Samples the first jump time of an inhomogeneous Poisson clock with
/// intensity `rate(φ(x, t))` by thinning, with majorants refreshed on
/// windows of length `horizon / 16`.
///
/// Returns `(τ, φ(x, τ))`, or `None` when no jump occurs before `horizon`.
pub fn next_jump_time<R: RngCore + ?Sized>(
    engine: &FlowEngine,
    rate: &dyn JumpRate,
    x: f64,
    horizon: f64,
    rng: &mut R,
    stats: &mut ThinningStats,
) -> Result<Option<(f64, f64)>> {
    if !(horizon > 0.0) {
        return Ok(None);
    }
    let delta = horizon / 16.0;
    let mut t0 = 0.0;
    let mut x0 = x;
    while t0 < horizon {
        let len = delta.min(horizon - t0);
        let x1 = guard_flow(engine, x0, len)?;
        let mut sup: f64 = 0.0;
        for k in 0..=16 {
            let y = if k == 16 { x1 } else { guard_flow(engine, x0, len * k as f64 / 16.0)? };
            sup = sup.max(rate.rate(y)?);
        }
        for &k in rate.kinks() {
            if k > x0 && k <= x1 {
                sup = sup.max(rate.rate(k * (1.0 - 1e-12))?);
            }
        }
        let majorant = 1.05 * sup;
        if majorant > MAJORANT_LIMIT || majorant.is_nan() {
            return Err(Error::MajorantOverflow { majorant });
        }
        if majorant > 0.0 {
            let mut t = 0.0;
            loop {
                t += exp1(rng) / majorant;
                if t >= len {
                    break;
                }
                stats.proposals += 1;
                let y = guard_flow(engine, x0, t)?;
                let r = rate.rate(y)?;
                if r > majorant {
                    stats.majorant_violations += 1;
                }
                if open01(rng) * majorant <= r {
                    stats.accepted += 1;
                    return Ok(Some((t0 + t, y)));
                }
            }
        }
        t0 += len;
        x0 = x1;
    }
    Ok(None)
}

/// Tabulated `x ↦ k_h(x, (0, x))`, linear in `ln x`; intervals containing
/// a kink fall back to direct quadrature.
#[derive(Clone, Debug)]
struct TiltedMassTable {
    ln_lo: f64,
    step: f64,
    values: Vec<f64>,
    kinks: Vec<f64>,
}

impl TiltedMassTable {
    fn build(model: &ModelSpec, h: &WeightFunction) -> Self {
        let lo = model.domain.0 * 1e-3;
        let hi = model.domain.1 * 1e3;
        let n = ((hi / lo).log10() * TABLE_PER_DECADE).ceil() as usize;
        let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
        let step = (ln_hi - ln_lo) / n as f64;
        let values = (0..=n)
            .into_par_iter()
            .map(|i| tilted_mass(model, h, (ln_lo + step * i as f64).exp()).unwrap_or(f64::NAN))
            .collect();
        let mut kinks: Vec<f64> = model.kinks();
        kinks.extend_from_slice(h.kinks());
        kinks.sort_by(f64::total_cmp);
        kinks.dedup();
        TiltedMassTable { ln_lo, step, values, kinks }
    }

    fn lookup(&self, x: f64) -> Option<f64> {
        let v = (x.ln() - self.ln_lo) / self.step;
        if !(v >= 0.0) {
            return None;
        }
        let i = v.floor() as usize;
        if i + 1 >= self.values.len() {
            return None;
        }
        let a = (self.ln_lo + self.step * i as f64).exp();
        let b = (self.ln_lo + self.step * (i + 1) as f64).exp();
        let j = self.kinks.partition_point(|&k| k < a * (1.0 - 1e-12));
        if j < self.kinks.len() && self.kinks[j] <= b * (1.0 + 1e-12) {
            return None;
        }
        let w = v - i as f64;
        let out = (1.0 - w) * self.values[i] + w * self.values[i + 1];
        out.is_finite().then_some(out)
    }
}

/// The jump mechanism of the h-transformed process.
#[derive(Clone, Debug)]
pub struct TiltedJumpLaw {
    pub model: ModelSpec,
    pub h: WeightFunction,
    pub engine: FlowEngine,
    b: f64,
    table: TiltedMassTable,
    kinks: Vec<f64>,
}

impl TiltedJumpLaw {
    /// `b` must bound `A h / h` from above; any such value gives the same
    /// semigroup.
    pub fn new(model: &ModelSpec, engine: &FlowEngine, h: &WeightFunction, b: f64) -> Result<Self> {
        if !b.is_finite() {
            return Err(Error::Domain(format!("b = {b} is not finite")));
        }
        let table = TiltedMassTable::build(model, h);
        let mut kinks = model.kinks();
        kinks.extend_from_slice(h.kinks());
        kinks.sort_by(f64::total_cmp);
        kinks.dedup();
        Ok(TiltedJumpLaw { model: model.clone(), h: h.clone(), engine: engine.clone(), b, table, kinks })
    }

    /// Adds `slack` to `b`; absorbs rounding in a numerically estimated supremum.
    pub fn with_slack(mut self, slack: f64) -> Self {
        self.b += slack;
        self
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// `k_h(x, (0, x)) = ∫ h(y)/h(x) k(x, dy)`.
    pub fn tilted_mass(&self, x: f64) -> Result<f64> {
        match self.table.lookup(x) {
            Some(v) => Ok(v),
            None => tilted_mass(&self.model, &self.h, x),
        }
    }

    /// `r(x) = k_h(x,(0,x)) + q(x) = b + K(x) − (∂h/∂s)/h (x)`.
    pub fn total_rate(&self, x: f64) -> f64 {
        self.b + self.model.loss_rate(x) - self.h.log_s_derivative(x)
    }

    /// `q(x) = b − A h(x)/h(x)`, checked to be non-negative up to rounding.
    pub fn killing_rate(&self, x: f64) -> Result<f64> {
        let kh = self.tilted_mass(x)?;
        let q = self.total_rate(x) - kh;
        if q < -1e-6 * (1.0 + self.b.abs() + kh) {
            return Err(Error::KillingRateNegative { x, q });
        }
        Ok(q.max(0.0))
    }

    /// Upper bound of `h(y)/h(x)` for `0 < y < x`: the declared one, or
    /// `1.25 ×` the maximum over 64 points.
    fn tilt_bound(&self, x: f64) -> Result<f64> {
        let w = match self.h.sup_ratio(x) {
            Some(w) => w,
            None => {
                let m = (0..64)
                    .map(|k| self.h.ratio(x * (k as f64 + 0.5) / 64.0, x))
                    .fold(0.0, f64::max);
                1.25 * m
            }
        };
        if !w.is_finite() {
            return Err(Error::Unsupported(format!("h(y)/h(x) is unbounded for y < x = {x}")));
        }
        Ok(w.max(1e-300))
    }

    fn reject<R: RngCore + ?Sized, P: FnMut(&mut R) -> Result<f64>>(&self, x: f64, rng: &mut R, mut propose: P) -> Result<f64> {
        let bound = self.tilt_bound(x)?;
        for _ in 0..MAX_PROPOSALS {
            let y = propose(rng)?;
            if open01(rng) * bound <= self.h.ratio(y, x) {
                return Ok(y);
            }
        }
        Err(Error::RejectionStall { x, proposals: MAX_PROPOSALS })
    }

    /// Given a jump at `x`: the cemetery with probability `q/r`, otherwise a
    /// child drawn from `k_h(x, ·) / k_h(x, (0, x))`.
    pub fn post_jump_sample<R: RngCore + ?Sized>(&self, x: f64, rng: &mut R) -> Result<Position> {
        let r = self.total_rate(x);
        let q = self.killing_rate(x)?;
        if open01(rng) * r < q {
            return Ok(Position::Cemetery);
        }
        self.sample_child(x, rng).map(Position::Alive)
    }

    /// Draws from the normalized tilted kernel at `x`. Atoms are weighted
    /// exactly; the density part is sampled by rejection on the tilt.
    pub fn sample_child<R: RngCore + ?Sized>(&self, x: f64, rng: &mut R) -> Result<f64> {
        let kh = self.tilted_mass(x)?;
        match &self.model.kernel {
            FragmentationKernel::Relative { p, .. } => {
                let rr = self.model.kernel.relative_rate(x).expect("relative");
                let atoms: Vec<(f64, f64)> = p.atoms_list().iter().map(|&(u, w)| (u * x, rr * w * self.h.ratio(u * x, x))).collect();
                let dens = p.density().map(|_| p.density_only());
                self.pick(x, kh, &atoms, dens.is_some(), rng, |rng: &mut R| {
                    Ok(x * dens.as_ref().expect("density part").sample(rng)?)
                })
            }
            FragmentationKernel::General(g) => {
                let list = g.atoms.as_ref().map(|a| a(x)).unwrap_or_default();
                let atoms: Vec<(f64, f64)> = list.iter().map(|&(y, w)| (y, w * self.h.ratio(y, x))).collect();
                self.pick(x, kh, &atoms, g.density.is_some(), rng, |rng: &mut R| g.sample_density(x, rng))
            }
        }
    }

    fn pick<R: RngCore + ?Sized, P: FnMut(&mut R) -> Result<f64>>(
        &self,
        x: f64,
        kh: f64,
        atoms: &[(f64, f64)],
        has_density: bool,
        rng: &mut R,
        propose: P,
    ) -> Result<f64> {
        let atom_mass: f64 = atoms.iter().map(|a| a.1).sum();
        let dens_mass = if has_density { (kh - atom_mass).max(0.0) } else { 0.0 };
        let total = atom_mass + dens_mass;
        if !(total > 0.0) {
            return Err(Error::Domain(format!("jump at x = {x} with empty tilted kernel")));
        }
        let mut v = open01(rng) * total;
        for &(y, w) in atoms {
            if v < w {
                return Ok(y);
            }
            v -= w;
        }
        if has_density {
            self.reject(x, rng, propose)
        } else {
            Ok(atoms.last().expect("non-empty").0)
        }
    }

    fn guard(&self, x: f64, jumps: u64) -> Result<()> {
        let cap = self.model.domain.1 * 1e3;
        if x > cap {
            return Err(Error::ExplosionGuard(format!("position {x} exceeds {cap}")));
        }
        if jumps > MAX_JUMPS {
            return Err(Error::ExplosionGuard(format!("more than {MAX_JUMPS} jumps")));
        }
        Ok(())
    }

    /// Advances `state` to time `t_end` (or to its killing time).
    pub fn advance(&self, state: &mut PdmpState, t_end: f64, stats: &mut ThinningStats, mut on_event: impl FnMut(TraceEvent)) -> Result<()> {
        while let Position::Alive(x) = state.position {
            let horizon = t_end - state.clock;
            if !(horizon > 0.0) {
                break;
            }
            match next_jump_time(&self.engine, self, x, horizon, &mut state.rng, stats)? {
                None => {
                    let y = guard_flow(&self.engine, x, horizon)?;
                    self.guard(y, state.jumps)?;
                    state.position = Position::Alive(y);
                    state.clock = t_end;
                }
                Some((tau, y)) => {
                    self.guard(y, state.jumps)?;
                    state.clock += tau;
                    state.jumps += 1;
                    let next = self.post_jump_sample(y, &mut state.rng)?;
                    let kind = if next == Position::Cemetery { EventKind::Kill } else { EventKind::Jump };
                    on_event(TraceEvent { t: state.clock, before: y, after: next, kind });
                    state.position = next;
                }
            }
        }
        Ok(())
    }
}

impl JumpRate for TiltedJumpLaw {
    fn rate(&self, x: f64) -> Result<f64> {
        Ok(self.total_rate(x))
    }

    fn kinks(&self) -> &[f64] {
        &self.kinks
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    Jump,
    Kill,
    End,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Jump => "jump",
            EventKind::Kill => "kill",
            EventKind::End => "end",
        }
    }
}

/// One row of a path trace: the pre-jump position reached along the flow
/// and the position right after.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEvent {
    pub t: f64,
    pub before: f64,
    pub after: Position,
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathTrace {
    pub x0: f64,
    pub stream: StreamId,
    pub events: Vec<TraceEvent>,
    pub stats: ThinningStats,
}

impl PathTrace {
    pub fn endpoint(&self) -> Position {
        self.events.last().map(|e| e.after).unwrap_or(Position::Alive(self.x0))
    }

    pub fn jump_count(&self) -> usize {
        self.events.iter().filter(|e| e.kind == EventKind::Jump).count()
    }

    /// CSV with columns `t, x_before, x, event`; `x` is `cemetery` after a kill.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::Domain(format!("csv output: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x_before", "x", "event"]).map_err(io)?;
        for e in &self.events {
            let x = match e.after {
                Position::Alive(x) => x.to_string(),
                Position::Cemetery => "cemetery".to_string(),
            };
            w.write_record([e.t.to_string(), e.before.to_string(), x, e.kind.as_str().to_string()]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Domain(format!("csv output: {e}")))?;
        Ok(())
    }
}

/// Simulates one path on `[0, t_end]`, recording every jump, the kill (if
/// any) and the endpoint.
pub fn simulate_path(law: &TiltedJumpLaw, x0: f64, t_end: f64, stream: StreamId) -> Result<PathTrace> {
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(Error::Domain(format!("x0 = {x0} must be positive")));
    }
    let mut state = PdmpState::new(x0, stream);
    let mut stats = ThinningStats::default();
    let mut events = vec![];
    law.advance(&mut state, t_end, &mut stats, |e| events.push(e))?;
    if let Position::Alive(x) = state.position {
        events.push(TraceEvent { t: t_end, before: x, after: state.position, kind: EventKind::End });
    }
    Ok(PathTrace { x0, stream, events, stats })
}

/// Positions of one path at increasing checkpoint times.
pub fn path_positions(law: &TiltedJumpLaw, x0: f64, times: &[f64], stream: StreamId, stats: &mut ThinningStats) -> Result<Vec<Position>> {
    let mut state = PdmpState::new(x0, stream);
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        law.advance(&mut state, t, stats, |_| {})?;
        out.push(state.position);
    }
    Ok(out)
}

/// A Monte Carlo estimate of `T_t f(x0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// `std_error / |estimate| > 1`.
    pub variance_blowup: bool,
}

impl Estimate {
    pub fn to_json(&self) -> Value {
        json!({
            "estimate": self.estimate,
            "std_error": self.std_error,
            "n_paths": self.n_paths,
            "seed": self.seed,
            "variance_blowup": self.variance_blowup,
        })
    }
}

/// Estimates for several test functions at several times from one set of paths.
#[derive(Clone, Debug)]
pub struct SemigroupEstimates {
    pub times: Vec<f64>,
    /// `estimates[i][j]` is `T_{times[j]} f_i (x0)`.
    pub estimates: Vec<Vec<Estimate>>,
    pub alive_fraction: Vec<f64>,
    pub stats: ThinningStats,
}

pub type TestFn<'a> = &'a (dyn Fn(f64) -> f64 + Sync);

/// `T_t f(x0) = e^{bt} h(x0) E[f(X_t)/h(X_t); alive]` for every `f` and
/// checkpoint `t`, with path `i` drawn from stream `(seed, i)`.
///
/// The standard error is the jackknife one, which for a sample mean is
/// `sd / √n`.
pub fn mc_semigroup_multi(law: &TiltedJumpLaw, fs: &[TestFn<'_>], x0: f64, times: &[f64], n_paths: usize, seed: u64) -> Result<SemigroupEstimates> {
    if n_paths < 2 {
        return Err(Error::Domain(format!("n_paths = {n_paths} must be at least 2")));
    }
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(Error::Domain(format!("x0 = {x0} must be positive")));
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted != times || times.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::Domain("checkpoint times must be non-negative and increasing".into()));
    }
    let paths: Vec<(Vec<Position>, ThinningStats)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut stats = ThinningStats::default();
            path_positions(law, x0, times, StreamId::new(seed, i), &mut stats).map(|p| (p, stats))
        })
        .collect::<Result<_>>()?;
    let mut stats = ThinningStats::default();
    for p in &paths {
        stats.merge(&p.1);
    }
    let ln_h0 = law.h.ln_value(x0);
    let n = n_paths as f64;
    let mut estimates = vec![];
    for f in fs {
        let mut row = vec![];
        for (j, &t) in times.iter().enumerate() {
            let vals: Vec<f64> = paths
                .iter()
                .map(|p| match p.0[j] {
                    Position::Alive(y) => {
                        let fy = f(y);
                        if fy == 0.0 { 0.0 } else { fy * (-law.h.ln_value(y)).exp() }
                    }
                    Position::Cemetery => 0.0,
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let scale = (law.b * t + ln_h0).exp();
            let estimate = scale * mean;
            let std_error = scale * (var / n).sqrt();
            row.push(Estimate {
                estimate,
                std_error,
                n_paths,
                seed,
                variance_blowup: std_error > estimate.abs(),
            });
        }
        estimates.push(row);
    }
    let alive_fraction = (0..times.len())
        .map(|j| paths.iter().filter(|p| p.0[j] != Position::Cemetery).count() as f64 / n)
        .collect();
    Ok(SemigroupEstimates { times: times.to_vec(), estimates, alive_fraction, stats })
}

/// Single-function, single-time form of [`mc_semigroup_multi`].
pub fn mc_semigroup(law: &TiltedJumpLaw, f: TestFn<'_>, x0: f64, t: f64, n_paths: usize, seed: u64) -> Result<Estimate> {
    Ok(mc_semigroup_multi(law, &[f], x0, &[t], n_paths, seed)?.estimates[0][0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GrowthSpec, RelativeMeasure};

    fn mitosis() -> (ModelSpec, FlowEngine) {
        let m = ModelSpec::relative(GrowthSpec::constant(1.0).unwrap(), RelativeMeasure::mitosis(), |_| 1.0, (1e-2, 20.0)).unwrap();
        let e = FlowEngine::from_model(&m).unwrap();
        (m, e)
    }

    #[test]
    fn constant_rate_mean() {
        let (_, e) = mitosis();
        let mut rng = StreamId::new(1, 0).rng();
        let mut st = ThinningStats::default();
        let n = 20_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += next_jump_time(&e, &FnRate(|_| 2.0), 1.0, 100.0, &mut rng, &mut st).unwrap().unwrap().0;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 3.0 * 0.5 / (n as f64).sqrt() + 1e-3, "{mean}");
        assert_eq!(st.majorant_violations, 0);
    }

    #[test]
    fn zero_rate_never_jumps() {
        let (_, e) = mitosis();
        let mut rng = StreamId::new(1, 0).rng();
        let mut st = ThinningStats::default();
        assert_eq!(next_jump_time(&e, &FnRate(|_| 0.0), 1.0, 5.0, &mut rng, &mut st).unwrap(), None);
    }

    #[test]
    fn overflow_is_reported() {
        let (_, e) = mitosis();
        let mut rng = StreamId::new(1, 0).rng();
        let mut st = ThinningStats::default();
        let r = next_jump_time(&e, &FnRate(|_| 1e13), 1.0, 5.0, &mut rng, &mut st);
        assert!(matches!(r, Err(Error::MajorantOverflow { .. })));
    }

    #[test]
    fn untilted_mitosis_halves() {
        let (m, e) = mitosis();
        let law = TiltedJumpLaw::new(&m, &e, &WeightFunction::constant(1.0), 1.0).unwrap();
        let mut rng = StreamId::new(3, 0).rng();
        for _ in 0..100 {
            assert_eq!(law.sample_child(3.0, &mut rng).unwrap(), 1.5);
        }
        assert!(law.killing_rate(3.0).unwrap().abs() < 1e-9);
    }

    #[test]
    fn mass_growth_of_mitosis() {
        let (m, e) = mitosis();
        let law = TiltedJumpLaw::new(&m, &e, &WeightFunction::constant(1.0), 1.0).unwrap();
        let est = mc_semigroup(&law, &|_| 1.0, 1.0, 1.0, 2000, 9).unwrap();
        // No killing: every path contributes e^{b t}.
        assert!((est.estimate - 1f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn traces_are_reproducible() {
        let (m, e) = mitosis();
        let law = TiltedJumpLaw::new(&m, &e, &WeightFunction::constant(1.0), 1.5).unwrap();
        let a = simulate_path(&law, 1.0, 10.0, StreamId::new(5, 7)).unwrap();
        let b = simulate_path(&law, 1.0, 10.0, StreamId::new(5, 7)).unwrap();
        assert_eq!(a, b);
        let mut buf = vec![];
        a.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,x_before,x,event"));
    }
}
