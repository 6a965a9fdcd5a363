//! Fleming–Viot particle estimates of the quasi-stationary objects of the
//! h-transformed process: the conditioned law `ν`, the survival decay rate
//! `λ0^X` and the survival profile `η`, from which `m` and `φ` follow by
//! `m(g) = ν(g/h)` and `φ = η h`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use rayon::prelude::*;
use serde_json::{json, Value};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::WeightFunction;
use crate::pde::SizeGrid;
use crate::pdmp::{next_jump_time, path_positions, Position, ThinningStats, TiltedJumpLaw};
use crate::rng::{open01, StreamId};

/// Stream id of the respawn selector; particle streams use `0..N`.
const RESPAWN_STREAM: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FvOptions {
    pub particles: usize,
    pub t_end: f64,
    /// Fraction of `t_end` discarded before averaging.
    pub burn_in: f64,
    pub batches: usize,
    pub snapshots: usize,
    /// Cap on the thinning horizon of a single particle step.
    pub step: f64,
    pub seed: u64,
}

impl Default for FvOptions {
    fn default() -> Self {
        FvOptions { particles: 10_000, t_end: 20.0, burn_in: 0.3, batches: 20, snapshots: 400, step: 1.0, seed: 0 }
    }
}

/// Positions of the particle system at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    pub positions: Vec<f64>,
    pub time: f64,
    pub kills: u64,
}

impl ParticleEnsemble {
    /// CSV with columns `particle, x`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::Domain(format!("csv output: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["particle", "x"]).map_err(io)?;
        for (i, x) in self.positions.iter().enumerate() {
            w.write_record([i.to_string(), x.to_string()]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Domain(format!("csv output: {e}")))?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FvResult {
    /// Post-burn-in kill rate per particle.
    pub lambda0x: f64,
    /// 95% batch-means interval.
    pub ci: (f64, f64),
    pub kills: u64,
    pub particles: usize,
    pub burn_in: f64,
    pub t_end: f64,
    /// Time-averaged empirical law on the bins of the supplied grid.
    pub nu: Vec<f64>,
    /// Same average of `1/h`, i.e. the untilted (unnormalized) measure.
    pub nu_over_h: Vec<f64>,
    /// Total variation between the first and second half of the averaging window.
    pub split_half_tv: f64,
    /// Per-batch kill rates.
    pub batch_rates: Vec<f64>,
    /// No kill after burn-in.
    pub stall: bool,
    pub final_ensemble: ParticleEnsemble,
    pub stats: ThinningStats,
}

impl FvResult {
    pub fn ci_half_width(&self) -> f64 {
        0.5 * (self.ci.1 - self.ci.0)
    }

    /// `exp(−kills/N)` at the end of each batch: the survival of the
    /// process without resampling, as seen through the kill counter.
    pub fn survival_proxy(&self) -> Vec<f64> {
        let dt = (1.0 - self.burn_in) * self.t_end / self.batch_rates.len() as f64;
        let mut acc = 0.0;
        self.batch_rates
            .iter()
            .map(|r| {
                acc += r * dt;
                (-acc).exp()
            })
            .collect()
    }

    pub fn to_json(&self) -> Value {
        json!({
            "lambda0X": self.lambda0x,
            "ci": [self.ci.0, self.ci.1],
            "N": self.particles,
            "burn_in": self.burn_in,
            "t_end": self.t_end,
            "kills": self.kills,
            "split_half_tv": self.split_half_tv,
            "stall": self.stall,
            "estimator": "fleming-viot",
        })
    }
}

#[derive(Clone, Copy, Debug)]
struct Pending {
    time: f64,
    index: usize,
}

impl PartialEq for Pending {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Pending {
    // Min-heap on (time, index).
    fn cmp(&self, o: &Self) -> Ordering {
        o.time.total_cmp(&self.time).then(o.index.cmp(&self.index))
    }
}

struct Particle {
    x: f64,
    t: f64,
    /// Position where the pending jump happens, if any.
    jump_at: Option<f64>,
    rng: rand_chacha::ChaCha8Rng,
}

fn schedule(law: &TiltedJumpLaw, p: &mut Particle, t_end: f64, step: f64, stats: &mut ThinningStats) -> Result<f64> {
    let horizon = step.min(t_end - p.t);
    if !(horizon > 0.0) {
        p.jump_at = None;
        return Ok(f64::INFINITY);
    }
    match next_jump_time(&law.engine, law, p.x, horizon, &mut p.rng, stats)? {
        Some((tau, y)) => {
            p.jump_at = Some(y);
            Ok(p.t + tau)
        }
        None => {
            p.jump_at = None;
            Ok(p.t + horizon)
        }
    }
}

fn position_at(law: &TiltedJumpLaw, p: &Particle, t: f64) -> Result<f64> {
    if t <= p.t { Ok(p.x) } else { law.engine.flow_at(p.x, t - p.t) }
}

fn tv(a: &[f64], b: &[f64]) -> f64 {
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    0.5 * a.iter().zip(b).map(|(x, y)| (x / sa - y / sb).abs()).sum::<f64>()
}

/// Runs `N` particles of the killed process; a killed particle restarts at
/// the current position of another particle chosen uniformly.
pub fn fv_run(law: &TiltedJumpLaw, x0: f64, grid: &SizeGrid, opts: &FvOptions) -> Result<FvResult> {
    let n = opts.particles;
    if n < 100 {
        return Err(Error::Domain(format!("Fleming–Viot needs at least 100 particles, got {n}")));
    }
    if !(opts.t_end > 0.0 && (0.0..1.0).contains(&opts.burn_in) && opts.batches >= 2 && opts.snapshots >= 2 && opts.step > 0.0) {
        return Err(Error::Domain("bad Fleming–Viot options".into()));
    }
    let mut stats = ThinningStats::default();
    let mut particles: Vec<Particle> = (0..n)
        .map(|i| Particle { x: x0, t: 0.0, jump_at: None, rng: StreamId::new(opts.seed, i as u64).rng() })
        .collect();
    let mut heap = BinaryHeap::with_capacity(n);
    for (i, p) in particles.iter_mut().enumerate() {
        let time = schedule(law, p, opts.t_end, opts.step, &mut stats)?;
        heap.push(Pending { time, index: i });
    }
    let mut respawn = StreamId::new(opts.seed, RESPAWN_STREAM).rng();
    let t0 = opts.burn_in * opts.t_end;
    let window = opts.t_end - t0;
    let batch_len = window / opts.batches as f64;
    let mut batch_kills = vec![0u64; opts.batches];
    let snap_times: Vec<f64> = (0..opts.snapshots).map(|k| t0 + window * (k as f64 + 0.5) / opts.snapshots as f64).collect();
    let bins = grid.len();
    let mut halves = [vec![0.0; bins], vec![0.0; bins]];
    let mut nu_h = vec![0.0; bins];
    let mut next_snap = 0;
    let mut kills = 0u64;

    loop {
        let ev = *heap.peek().expect("particle heap is never empty");
        while next_snap < snap_times.len() && snap_times[next_snap] <= ev.time.min(opts.t_end) {
            let ts = snap_times[next_snap];
            let half = usize::from(2 * next_snap >= opts.snapshots);
            for p in &particles {
                let x = position_at(law, p, ts)?;
                let b = grid.locate(x);
                halves[half][b] += 1.0;
                nu_h[b] += (-law.h.ln_value(x)).exp();
            }
            next_snap += 1;
        }
        if !(ev.time < opts.t_end) {
            break;
        }
        heap.pop();
        let i = ev.index;
        let p = &mut particles[i];
        let x_new = match p.jump_at {
            Some(y) => law.post_jump_sample(y, &mut p.rng)?,
            None => Position::Alive(law.engine.flow_at(p.x, ev.time - p.t)?),
        };
        let x_new = match x_new {
            Position::Alive(x) => x,
            Position::Cemetery => {
                kills += 1;
                if ev.time >= t0 {
                    let b = (((ev.time - t0) / batch_len) as usize).min(opts.batches - 1);
                    batch_kills[b] += 1;
                }
                let mut j = (open01(&mut respawn) * (n - 1) as f64) as usize;
                j = j.min(n - 2);
                if j >= i {
                    j += 1;
                }
                position_at(law, &particles[j], ev.time)?
            }
        };
        let p = &mut particles[i];
        p.x = x_new;
        p.t = ev.time;
        if !(x_new > 0.0) {
            return Err(Error::Extinction);
        }
        if x_new > law.model.domain.1 * 1e3 {
            return Err(Error::ExplosionGuard(format!("particle at {x_new}")));
        }
        let time = schedule(law, p, opts.t_end, opts.step, &mut stats)?;
        heap.push(Pending { time, index: i });
    }

    let batch_rates: Vec<f64> = batch_kills.iter().map(|&k| k as f64 / (n as f64 * batch_len)).collect();
    let nb = opts.batches as f64;
    let mean = batch_rates.iter().sum::<f64>() / nb;
    let sd = (batch_rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (nb - 1.0)).sqrt();
    let t = StudentsT::new(0.0, 1.0, nb - 1.0).map_err(|e| Error::Domain(e.to_string()))?;
    let half = t.inverse_cdf(0.975) * sd / nb.sqrt();
    let total_samples = (opts.snapshots * n) as f64;
    let nu: Vec<f64> = halves[0].iter().zip(&halves[1]).map(|(a, b)| (a + b) / total_samples).collect();
    let nu_over_h = nu_h.iter().map(|v| v / total_samples).collect();
    let split_half_tv = tv(&halves[0], &halves[1]);
    let final_ensemble = ParticleEnsemble {
        positions: particles.iter().map(|p| position_at(law, p, opts.t_end)).collect::<Result<_>>()?,
        time: opts.t_end,
        kills,
    };
    let post_kills: u64 = batch_kills.iter().sum();
    Ok(FvResult {
        lambda0x: mean,
        ci: (mean - half, mean + half),
        kills,
        particles: n,
        burn_in: opts.burn_in,
        t_end: opts.t_end,
        nu,
        nu_over_h,
        split_half_tv,
        batch_rates,
        stall: post_kills == 0,
        final_ensemble,
        stats,
    })
}

/// `m` on the grid cells from `ν/h`, normalized by `m(ψ) = 1`.
pub fn reconstruct_m(fv: &FvResult, grid: &SizeGrid, psi: &WeightFunction) -> Vec<f64> {
    let mass: f64 = fv.nu_over_h.iter().zip(grid.centers()).map(|(w, &x)| w * psi.value(x)).sum();
    fv.nu_over_h.iter().map(|w| w / mass).collect()
}

/// `φ = η h` at the probe points, normalized by `max |φ/ψ| = 1`.
pub fn reconstruct_phi(eta: &EtaEstimate, h: &WeightFunction, psi: &WeightFunction) -> Vec<f64> {
    let raw: Vec<f64> = eta.x.iter().zip(&eta.eta).map(|(&x, e)| e * (h.ln_value(x)).exp()).collect();
    let scale = raw.iter().zip(&eta.x).map(|(v, &x)| (v / psi.value(x)).abs()).fold(0.0, f64::max);
    raw.iter().map(|v| v / scale).collect()
}

/// Merges groups of `factor` adjacent cells.
pub fn coarsen(v: &[f64], factor: usize) -> Vec<f64> {
    v.chunks(factor.max(1)).map(|c| c.iter().sum()).collect()
}

/// Total variation between two non-negative vectors after normalizing
/// each to unit mass.
pub fn tv_distance(a: &[f64], b: &[f64]) -> f64 {
    tv(a, b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EtaEstimate {
    pub x: Vec<f64>,
    /// `e^{λ0^X t} P_x(t < ζ)` at `t_probe`.
    pub eta: Vec<f64>,
    /// The same at `1.5 t_probe`.
    pub eta_late: Vec<f64>,
    /// Relative standard errors of `eta`.
    pub rel_error: Vec<f64>,
    /// `max |η(t)/η(1.5t) − 1|`.
    pub drift: f64,
    pub t_probe: f64,
}

/// Survival Monte Carlo at each probe point; path `i` from probe `k` uses
/// stream `(seed, k·2³² + i)`.
pub fn eta_estimate(law: &TiltedJumpLaw, probes: &[f64], lambda0x: f64, t_probe: f64, n_paths: usize, seed: u64) -> Result<EtaEstimate> {
    if n_paths < 2 || !(t_probe > 0.0) {
        return Err(Error::Domain("eta estimate needs n_paths ≥ 2 and t_probe > 0".into()));
    }
    let times = [t_probe, 1.5 * t_probe];
    let rows: Vec<(f64, f64, f64)> = probes
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let alive: Vec<(u32, u32)> = (0..n_paths as u64)
                .into_par_iter()
                .map(|i| {
                    let mut st = ThinningStats::default();
                    let pos = path_positions(law, x, &times, StreamId::new(seed, ((k as u64) << 32) | i), &mut st)?;
                    Ok((u32::from(pos[0] != Position::Cemetery), u32::from(pos[1] != Position::Cemetery)))
                })
                .collect::<Result<_>>()?;
            let nf = n_paths as f64;
            let p1 = alive.iter().map(|a| a.0 as f64).sum::<f64>() / nf;
            let p2 = alive.iter().map(|a| a.1 as f64).sum::<f64>() / nf;
            Ok((p1, p2, ((1.0 - p1) / (p1 * nf)).sqrt()))
        })
        .collect::<Result<_>>()?;
    let eta: Vec<f64> = rows.iter().map(|r| (lambda0x * times[0]).exp() * r.0).collect();
    let eta_late: Vec<f64> = rows.iter().map(|r| (lambda0x * times[1]).exp() * r.1).collect();
    let rel_error = rows.iter().map(|r| r.2).collect();
    let drift = eta.iter().zip(&eta_late).map(|(a, b)| (a / b - 1.0).abs()).fold(0.0, f64::max);
    let out = EtaEstimate { x: probes.to_vec(), eta, eta_late, rel_error, drift, t_probe };
    if !(drift <= 0.1) {
        return Err(Error::InconsistentEta { drift });
    }
    Ok(out)
}
