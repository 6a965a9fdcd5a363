//! Perron eigenelements of the discrete operator and the decay rate towards
//! the asymptotic profile.
//!
//! `M` acts on cell masses, so its right Perron vector holds the masses of
//! the eigenmeasure `m` and its left Perron vector the values of the
//! eigenfunction `φ` at the cell centers. With `μ` the Perron eigenvalue of
//! `M`, `λ0 = −μ`, so that `m T_t = e^{−λ0 t} m`.

use std::collections::VecDeque;
use std::io::Write;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::model::WeightFunction;
use crate::pde::{pairing, DensityState, DiscreteOperator, Scheme, SizeGrid, Trajectory};

pub const MAX_ITERATIONS: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralTriple {
    pub lambda0: f64,
    /// `φ` at the cell centers, `max |φ/ψ| = 1`.
    pub phi: Vec<f64>,
    /// Cell masses of `m`, `m(ψ) = 1`.
    pub m: Vec<f64>,
    /// `(right, left)`: `‖Mv − μv‖∞ / ‖v‖∞` for the mass vector and the
    /// function vector.
    pub residuals: (f64, f64),
    pub iterations: usize,
    pub centers: Vec<f64>,
}

impl SpectralTriple {
    /// Perron eigenvalue `μ = −λ0` of the operator.
    pub fn growth(&self) -> f64 {
        -self.lambda0
    }

    pub fn m_of(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.centers.iter().zip(&self.m).map(|(&x, &w)| f(x) * w).sum()
    }

    /// `m(φ)`.
    pub fn m_phi(&self) -> f64 {
        self.phi.iter().zip(&self.m).map(|(a, b)| a * b).sum()
    }

    /// Limit of `e^{λ0 t} δ_{x0} T_t f`: `φ(x0) m(f) / m(φ)`, with `φ(x0)`
    /// read in the cell containing `x0`.
    pub fn projection(&self, grid: &SizeGrid, x0: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.phi[grid.locate(x0)] * self.m_of(f) / self.m_phi()
    }

    /// CSV with columns `x, phi, m`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::Domain(format!("csv output: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "phi", "m"]).map_err(io)?;
        for ((x, p), m) in self.centers.iter().zip(&self.phi).zip(&self.m) {
            w.write_record([x.to_string(), p.to_string(), m.to_string()]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Domain(format!("csv output: {e}")))?;
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        json!({
            "lambda0": self.lambda0,
            "residuals": {"right": self.residuals.0, "left": self.residuals.1},
            "iterations": self.iterations,
            "cells": self.m.len(),
        })
    }
}

/// Whether the sparsity graph of the off-diagonal part is strongly connected.
pub fn is_strongly_connected(op: &DiscreteOperator) -> bool {
    let n = op.len();
    let mut fwd = vec![vec![]; n];
    let mut rev = vec![vec![]; n];
    for i in 0..n {
        for (j, v) in op.row(i) {
            if v > 0.0 {
                // Mass flows from j to i.
                fwd[j].push(i);
                rev[i].push(j);
            }
        }
    }
    let reach = |adj: &Vec<Vec<usize>>| {
        let mut seen = vec![false; n];
        let mut q = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(a) = q.pop_front() {
            for &b in &adj[a] {
                if !seen[b] {
                    seen[b] = true;
                    count += 1;
                    q.push_back(b);
                }
            }
        }
        count == n
    };
    n > 0 && reach(&fwd) && reach(&rev)
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Left and right Perron vectors by simultaneous power iteration on
/// `I + τM`, `τ = 0.9 / max |M_ii|`, then normalized by `m(ψ) = 1` and
/// `max |φ/ψ| = 1`.
pub fn principal_eigen(op: &DiscreteOperator, psi: &WeightFunction) -> Result<SpectralTriple> {
    if !is_strongly_connected(op) {
        return Err(Error::Reducible);
    }
    let n = op.len();
    let tau = op.cfl_bound();
    let tau = if tau.is_finite() { tau } else { 1.0 };
    let mut v = vec![1.0 / n as f64; n];
    let mut w = vec![1.0; n];
    let mut mv = vec![0.0; n];
    let mut mw = vec![0.0; n];
    let mut mu_prev = f64::NAN;
    let mut res = (f64::INFINITY, f64::INFINITY);
    for it in 1..=MAX_ITERATIONS {
        op.apply(&v, &mut mv);
        op.apply_transpose(&w, &mut mw);
        let mu = dot(&w, &mv) / dot(&w, &v);
        let (nv, nw) = (sup_norm(&v), sup_norm(&w));
        let rr = mv.iter().zip(&v).map(|(a, b)| (a - mu * b).abs()).fold(0.0, f64::max) / nv;
        let rl = mw.iter().zip(&w).map(|(a, b)| (a - mu * b).abs()).fold(0.0, f64::max) / nw;
        res = (rr, rl);
        if (mu - mu_prev).abs() < 1e-10 * (1.0 + mu.abs()) && rr <= 1e-8 && rl <= 1e-8 {
            return Ok(normalize(op, psi, mu, v, w, res, it));
        }
        mu_prev = mu;
        for i in 0..n {
            v[i] += tau * mv[i];
            w[i] += tau * mw[i];
        }
        let (nv, nw) = (sup_norm(&v), sup_norm(&w));
        if !(nv > 0.0 && nw > 0.0 && nv.is_finite() && nw.is_finite()) {
            return Err(Error::NoConvergence { iterations: it, residual: f64::NAN });
        }
        v.iter_mut().for_each(|x| *x /= nv);
        w.iter_mut().for_each(|x| *x /= nw);
    }
    Err(Error::NoConvergence { iterations: MAX_ITERATIONS, residual: res.0.max(res.1) })
}

fn normalize(op: &DiscreteOperator, psi: &WeightFunction, mu: f64, mut m: Vec<f64>, mut phi: Vec<f64>, residuals: (f64, f64), iterations: usize) -> SpectralTriple {
    let centers = op.grid.centers().to_vec();
    let psi_v: Vec<f64> = centers.iter().map(|&x| psi.value(x)).collect();
    let mass = dot(&m, &psi_v);
    m.iter_mut().for_each(|x| *x = (*x / mass).max(0.0));
    let scale = phi.iter().zip(&psi_v).map(|(a, b)| (a / b).abs()).fold(0.0, f64::max);
    phi.iter_mut().for_each(|x| *x /= scale);
    SpectralTriple { lambda0: -mu, phi, m, residuals, iterations, centers }
}

/// Outcome of the comparison `λ0 ≤ λ2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundReport {
    pub lambda0: f64,
    pub lambda2: f64,
    /// `λ2 − λ0`.
    pub margin: f64,
    pub strict: bool,
}

/// Checks `λ0 ≤ λ2 + tolerance`, and `λ0 < λ2 − tolerance` when the ratio
/// `Aψ′/ψ′` is not constant.
pub fn lambda0_vs_bound(triple: &SpectralTriple, lambda2: f64, nonconstant: bool, tolerance: f64) -> Result<BoundReport> {
    let margin = lambda2 - triple.lambda0;
    let violated = if nonconstant { margin <= tolerance } else { margin < -tolerance };
    if violated {
        return Err(Error::BoundViolated { lambda0: triple.lambda0, lambda2, tolerance });
    }
    Ok(BoundReport { lambda0: triple.lambda0, lambda2, margin, strict: margin > tolerance })
}

/// `2 fine − coarse`: first-order Richardson extrapolation from grids of
/// size `N` and `2N`.
pub fn richardson(coarse: f64, fine: f64) -> f64 {
    2.0 * fine - coarse
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapFit {
    pub gamma: f64,
    pub r_squared: f64,
    pub points: usize,
}

pub const BURN_IN: f64 = 0.2;
pub const MIN_CHECKPOINTS: usize = 8;

/// Least-squares fit of `ln residual` against `t` after a 20% burn-in;
/// `γ = −slope`. Residuals below `floor` are dropped.
pub fn fit_gap_rate(times: &[f64], residuals: &[f64], floor: f64) -> Result<GapFit> {
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(residuals)
        .filter(|(t, r)| **t >= BURN_IN * horizon && **r > floor && r.is_finite())
        .map(|(&t, &r)| (t, r.ln()))
        .collect();
    if pts.len() < MIN_CHECKPOINTS {
        return Err(Error::TooFewCheckpoints { available: pts.len(), required: MIN_CHECKPOINTS });
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    if !(slope < 0.0) {
        return Err(Error::RatePositive { slope, r_squared });
    }
    Ok(GapFit { gamma: -slope, r_squared, points: pts.len() })
}

/// `ln` of the Perron eigenvalue of the one-step map, accumulated over the
/// steps [`solve`](crate::pde::solve) takes to reach each checkpoint.
fn discrete_log_growth(t0: f64, times: &[f64], dt: f64, scheme: Scheme, mu: f64) -> Vec<f64> {
    let factor = |h: f64| match scheme {
        Scheme::Euler => (1.0 + h * mu).ln(),
        Scheme::Heun => (1.0 + h * mu + 0.5 * (h * mu).powi(2)).ln(),
    };
    let full = factor(dt);
    let mut t = t0;
    let mut acc = 0.0;
    let mut out = vec![];
    for &tc in times {
        while tc - t > 1e-12 * (1.0 + tc.abs()) {
            let h = dt.min(tc - t);
            acc += if h == dt { full } else { factor(h) };
            t += h;
        }
        t = tc;
        out.push(acc);
    }
    out
}

/// `|⟨u_t, f⟩ / G_t − φ(x0) m(f)/m(φ)|` along a trajectory started from a
/// point mass at `x0`, where `G_t` is the discrete Perron growth.
pub fn gap_residuals(traj: &Trajectory, grid: &SizeGrid, triple: &SpectralTriple, x0: f64, f: impl Fn(f64) -> f64 + Copy) -> (Vec<f64>, Vec<f64>) {
    let times: Vec<f64> = traj.states.iter().map(|s| s.t).collect();
    let t0 = 0.0;
    let logs = discrete_log_growth(t0, &times, traj.dt, traj.scheme, triple.growth());
    let target = triple.projection(grid, x0, f);
    let res = traj
        .states
        .iter()
        .zip(&logs)
        .map(|(s, lg): (&DensityState, &f64)| (pairing(grid, s, f) * (-lg).exp() - target).abs())
        .collect();
    (times, res)
}

/// [`fit_gap_rate`] applied to [`gap_residuals`], with a floor of
/// `10⁻¹²` relative to the projection.
pub fn fit_gap_rate_trajectory(traj: &Trajectory, grid: &SizeGrid, triple: &SpectralTriple, x0: f64, f: impl Fn(f64) -> f64 + Copy) -> Result<GapFit> {
    let (t, r) = gap_residuals(traj, grid, triple, x0, f);
    let floor = 1e-12 * triple.projection(grid, x0, f).abs().max(1e-300);
    fit_gap_rate(&t, &r, floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let g = SizeGrid::from_edges(vec![1.0, 2.0, 3.0]).unwrap();
        let op = DiscreteOperator::from_dense(&[vec![-2.0, 1.0], vec![3.0, -1.0]], g).unwrap();
        let t = principal_eigen(&op, &WeightFunction::constant(1.0)).unwrap();
        // Eigenvalues of [[-2,1],[3,-1]]: (-3 ± √13)/2.
        let mu = (-3.0 + 13f64.sqrt()) / 2.0;
        assert!((t.growth() - mu).abs() < 1e-12);
        assert!((t.m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reducible_is_rejected() {
        let g = SizeGrid::from_edges(vec![1.0, 2.0, 3.0]).unwrap();
        let op = DiscreteOperator::from_dense(&[vec![-2.0, 0.0], vec![3.0, -1.0]], g).unwrap();
        assert_eq!(principal_eigen(&op, &WeightFunction::constant(1.0)), Err(Error::Reducible));
    }

    #[test]
    fn synthetic_rate() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let r: Vec<f64> = t.iter().map(|t| 3.0 * (-2.0 * t).exp()).collect();
        let fit = fit_gap_rate(&t, &r, 0.0).unwrap();
        assert!((fit.gamma - 2.0).abs() < 1e-9 && fit.r_squared > 0.999_999);
        let up: Vec<f64> = t.iter().map(|t| (0.1 * t).exp()).collect();
        assert!(matches!(fit_gap_rate(&t, &up, 0.0), Err(Error::RatePositive { .. })));
        assert!(matches!(fit_gap_rate(&t[..5], &r[..5], 0.0), Err(Error::TooFewCheckpoints { .. })));
    }
}
