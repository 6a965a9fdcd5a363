//! First-order upwind finite volumes for the density form of the equation,
//! `∂_t u + ∂_x(c u) = −K u + ∫ k(y, x) u(y) dy`.
//!
//! Unknowns are cell masses. The assembled matrix `M` is the discrete
//! adjoint of the generator: `d/dt U = M U`.

use std::io::Write;

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::model::ModelSpec;

/// Cell edges of the size grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SizeGrid {
    edges: Vec<f64>,
    centers: Vec<f64>,
    widths: Vec<f64>,
}

impl SizeGrid {
    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || !(edges[0] > 0.0) || edges.windows(2).any(|w| !(w[1] > w[0])) || !edges[edges.len() - 1].is_finite() {
            return Err(Error::Domain("grid edges must be positive, finite and strictly increasing".into()));
        }
        let centers = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let widths = edges.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(SizeGrid { edges, centers, widths })
    }

    /// `n` log-uniform cells on `[x_min, x_max]`.
    pub fn log(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if !(x_min > 0.0 && x_max > x_min && n >= 1) {
            return Err(Error::Domain(format!("bad log grid [{x_min}, {x_max}] with {n} cells")));
        }
        let r = (x_max / x_min).ln();
        Self::from_edges((0..=n).map(|i| x_min * (r * i as f64 / n as f64).exp()).collect())
    }

    /// Edges `i · x_max / n` for `i ≥ 1`; the first cell starts at
    /// `10⁻³ x_max / n` instead of 0.
    pub fn uniform(x_max: f64, n: usize) -> Result<Self> {
        if !(x_max > 0.0 && n >= 1) {
            return Err(Error::Domain(format!("bad uniform grid on (0, {x_max}] with {n} cells")));
        }
        let w = x_max / n as f64;
        let mut edges = vec![1e-3 * w];
        edges.extend((1..=n).map(|i| w * i as f64));
        Self::from_edges(edges)
    }

    /// Geometric edges `x_max · 2^{−k/m}` with `m` cells per octave, down to
    /// the first edge at or below `x_min`. Halving maps cells onto cells.
    pub fn dyadic(x_min: f64, x_max: f64, per_octave: usize) -> Result<Self> {
        if !(x_min > 0.0 && x_max > x_min && per_octave >= 1) {
            return Err(Error::Domain(format!("bad dyadic grid [{x_min}, {x_max}]")));
        }
        let octaves = (x_max / x_min).log2().ceil() as usize;
        let n = octaves * per_octave;
        let mut edges: Vec<f64> = (0..=n).map(|k| x_max * (-(k as f64) / per_octave as f64).exp2()).collect();
        edges.reverse();
        Self::from_edges(edges)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn max_width(&self) -> f64 {
        self.widths.iter().copied().fold(0.0, f64::max)
    }

    /// Index of the cell `[e_i, e_{i+1})` containing `x`, clamped to the grid.
    pub fn locate(&self, x: f64) -> usize {
        self.edges.partition_point(|&e| e <= x).saturating_sub(1).min(self.len() - 1)
    }
}

/// Sparse `M`: diagonal plus off-diagonal entries in row-compressed form.
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    pub grid: SizeGrid,
    diag: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    /// Fragment mass born below the first edge, per source cell; it is
    /// added to cell 0.
    below: Vec<f64>,
}

impl DiscreteOperator {
    /// Dense matrix, mainly for small test problems.
    pub fn from_dense(rows: &[Vec<f64>], grid: SizeGrid) -> Result<Self> {
        let n = rows.len();
        if grid.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Domain("matrix must be square and match the grid".into()));
        }
        let mut trip = vec![];
        let mut diag = vec![0.0; n];
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                if i == j {
                    diag[i] = v;
                } else if v != 0.0 {
                    if v < 0.0 {
                        return Err(Error::Domain(format!("off-diagonal entry ({i}, {j}) = {v} is negative")));
                    }
                    trip.push((i, j, v));
                }
            }
        }
        Ok(Self::from_triplets(grid, diag, trip, vec![0.0; n]))
    }

    fn from_triplets(grid: SizeGrid, diag: Vec<f64>, mut trip: Vec<(usize, usize, f64)>, below: Vec<f64>) -> Self {
        let n = diag.len();
        trip.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0; n + 1];
        for t in &trip {
            row_ptr[t.0 + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        DiscreteOperator {
            grid,
            diag,
            row_ptr,
            cols: trip.iter().map(|t| t.1).collect(),
            vals: trip.iter().map(|t| t.2).collect(),
            below,
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn nnz(&self) -> usize {
        self.vals.len() + self.diag.len()
    }

    /// Off-diagonal entries `(j, M_ij)` of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut d = vec![vec![0.0; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = self.diag[i];
            for (j, v) in self.row(i) {
                row[j] += v;
            }
        }
        d
    }

    /// `out = M u`.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let body = |(i, o): (usize, &mut f64)| {
            let mut acc = self.diag[i] * u[i];
            for (j, v) in self.row(i) {
                acc += v * u[j];
            }
            *o = acc;
        };
        if self.vals.len() > 200_000 {
            out.par_iter_mut().enumerate().for_each(body);
        } else {
            out.iter_mut().enumerate().for_each(body);
        }
    }

    /// `out = Mᵀ v`.
    pub fn apply_transpose(&self, v: &[f64], out: &mut [f64]) {
        for (o, (d, x)) in out.iter_mut().zip(self.diag.iter().zip(v)) {
            *o = d * x;
        }
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                for (j, m) in self.row(i) {
                    out[j] += m * vi;
                }
            }
        }
    }

    /// `Σ_i M_ij`, the net mass rate produced by a unit mass in cell `j`.
    pub fn column_sums(&self) -> Vec<f64> {
        let ones = vec![1.0; self.len()];
        let mut out = vec![0.0; self.len()];
        self.apply_transpose(&ones, &mut out);
        out
    }

    /// Largest stable explicit step, `0.9 / max_i |M_ii|`.
    pub fn cfl_bound(&self) -> f64 {
        let m = self.diag.iter().map(|d| d.abs()).fold(0.0, f64::max);
        if m == 0.0 { f64::INFINITY } else { 0.9 / m }
    }

    /// Per-cell mass born below the first edge.
    pub fn below_mass(&self) -> &[f64] {
        &self.below
    }
}

/// Assembles `M` for `model` on `grid`.
///
/// Transport: donor-cell flux `c(e_{i+1}) U_i / w_i` through the right edge
/// of cell `i`, lost at the last edge. Loss `−K(x_i)`. Inflow from cell `j`
/// to cell `i`: `k(x_j, [e_i, e_{i+1}))`, evaluated at the centers.
pub fn build_discrete_operator(model: &ModelSpec, grid: &SizeGrid) -> Result<DiscreteOperator> {
    let n = grid.len();
    let e = grid.edges();
    let x = grid.centers();
    let w = grid.widths();
    let outflow: Vec<f64> = (0..n).map(|i| model.speed(e[i + 1]) / w[i]).collect();
    if let Some(i) = outflow.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("growth speed at edge {} is not finite", e[i + 1])));
    }
    let columns: Vec<(Vec<(usize, usize, f64)>, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let xj = x[j];
            let mut trip = vec![];
            let mut self_inflow = 0.0;
            for i in 0..=j {
                let m = model.kernel.mass_between(xj, e[i], e[i + 1], &model.quad)?;
                if i == j {
                    self_inflow = m;
                } else if m > 0.0 {
                    trip.push((i, j, m));
                }
            }
            let below = model.kernel.mass_between(xj, 0.0, e[0], &model.quad)?;
            if j + 1 < n {
                trip.push((j + 1, j, outflow[j]));
            }
            Ok((trip, self_inflow, below))
        })
        .collect::<Result<_>>()?;
    let mut diag = vec![0.0; n];
    let mut trip = vec![];
    let mut below = vec![0.0; n];
    for (j, (t, self_in, b)) in columns.into_iter().enumerate() {
        diag[j] = -outflow[j] - model.loss_rate(x[j]) + self_in;
        below[j] = b;
        if b > 0.0 {
            if j == 0 {
                diag[0] += b;
            } else {
                trip.push((0, j, b));
            }
        }
        trip.extend(t);
    }
    // Merge duplicate (0, j) entries created by the below-grid inflow.
    trip.sort_by_key(|t| (t.0, t.1));
    let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(trip.len());
    for t in trip {
        match merged.last_mut() {
            Some(last) if last.0 == t.0 && last.1 == t.1 => last.2 += t.2,
            _ => merged.push(t),
        }
    }
    let op = DiscreteOperator::from_triplets(grid.clone(), diag, merged, below);
    if op.cfl_bound() < 1e-12 {
        return Err(Error::CflUnsatisfiable { dt: op.cfl_bound() });
    }
    Ok(op)
}

/// Cell masses at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityState {
    pub t: f64,
    pub masses: Vec<f64>,
}

impl DensityState {
    /// Unit mass in the cell containing `x0`.
    pub fn point_mass(grid: &SizeGrid, x0: f64) -> Self {
        let mut masses = vec![0.0; grid.len()];
        masses[grid.locate(x0)] = 1.0;
        DensityState { t: 0.0, masses }
    }

    /// Midpoint masses of a density.
    pub fn from_density(grid: &SizeGrid, u: impl Fn(f64) -> f64) -> Self {
        let masses = grid.centers().iter().zip(grid.widths()).map(|(&x, &w)| u(x) * w).collect();
        DensityState { t: 0.0, masses }
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }
}

/// `Σ_i f(x_i) U_i`.
pub fn pairing(grid: &SizeGrid, state: &DensityState, f: impl Fn(f64) -> f64) -> f64 {
    grid.centers().iter().zip(&state.masses).map(|(&x, &m)| if m == 0.0 { 0.0 } else { f(x) * m }).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    Euler,
    Heun,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveOptions {
    /// Time step; defaults to the CFL bound.
    pub dt: Option<f64>,
    pub scheme: Scheme,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<DensityState>,
    pub dt: f64,
    pub scheme: Scheme,
    /// Mass created below the first edge, relative to the final total mass.
    pub below_fraction: f64,
    /// `below_fraction > 10⁻³`.
    pub below_flag: bool,
}

impl Trajectory {
    /// CSV with columns `t, cell_center, mass`.
    pub fn write_csv<W: Write>(&self, grid: &SizeGrid, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::Domain(format!("csv output: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "cell_center", "mass"]).map_err(io)?;
        for s in &self.states {
            for (x, m) in grid.centers().iter().zip(&s.masses) {
                w.write_record([s.t.to_string(), x.to_string(), m.to_string()]).map_err(io)?;
            }
        }
        w.flush().map_err(|e| Error::Domain(format!("csv output: {e}")))?;
        Ok(())
    }

    /// Total mass and first moment per checkpoint.
    pub fn summary(&self, grid: &SizeGrid) -> Value {
        let rows: Vec<Value> = self
            .states
            .iter()
            .map(|s| json!({"t": s.t, "mass": s.total_mass(), "first_moment": pairing(grid, s, |x| x)}))
            .collect();
        json!({
            "dt": self.dt,
            "scheme": match self.scheme { Scheme::Euler => "euler", Scheme::Heun => "heun" },
            "below_fraction": self.below_fraction,
            "below_flag": self.below_flag,
            "checkpoints": rows,
        })
    }
}

/// Integrates `dU/dt = M U` from `u0`, recording the state at every
/// checkpoint (hit exactly by shortening the preceding step).
pub fn solve(op: &DiscreteOperator, u0: &DensityState, checkpoints: &[f64], opts: SolveOptions) -> Result<Trajectory> {
    let bound = op.cfl_bound();
    let dt = opts.dt.unwrap_or(bound);
    if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
        return Err(Error::CflViolation { dt, bound });
    }
    if dt < 1e-12 {
        return Err(Error::CflUnsatisfiable { dt });
    }
    if checkpoints.windows(2).any(|w| !(w[1] >= w[0])) || checkpoints.first().is_some_and(|&t| t < u0.t) {
        return Err(Error::Domain("checkpoints must be increasing and after the initial time".into()));
    }
    let n = op.len();
    let mut u = u0.masses.clone();
    let mut t = u0.t;
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut stage = vec![0.0; n];
    let mut below_total = 0.0;
    let mut states = vec![];
    for &tc in checkpoints {
        while tc - t > 1e-12 * (1.0 + tc.abs()) {
            let h = dt.min(tc - t);
            op.apply(&u, &mut k1);
            below_total += h * u.iter().zip(op.below_mass()).map(|(a, b)| a * b).sum::<f64>();
            match opts.scheme {
                Scheme::Euler => {
                    for i in 0..n {
                        u[i] += h * k1[i];
                    }
                }
                Scheme::Heun => {
                    for i in 0..n {
                        stage[i] = u[i] + h * k1[i];
                    }
                    op.apply(&stage, &mut k2);
                    for i in 0..n {
                        u[i] += 0.5 * h * (k1[i] + k2[i]);
                    }
                }
            }
            if let Some(cell) = u.iter().position(|&m| m < 0.0) {
                if u[cell] < -1e-14 * u.iter().map(|v| v.abs()).sum::<f64>() {
                    return Err(Error::NegativeMass { cell, mass: u[cell] });
                }
                for m in u.iter_mut() {
                    *m = m.max(0.0);
                }
            }
            t += h;
        }
        t = tc;
        states.push(DensityState { t, masses: u.clone() });
    }
    let total: f64 = u.iter().sum();
    let below_fraction = if total > 0.0 { below_total / total } else { 0.0 };
    Ok(Trajectory { states, dt, scheme: opts.scheme, below_fraction, below_flag: below_fraction > 1e-3 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GrowthSpec, RelativeMeasure};

    #[test]
    fn grids() {
        let g = SizeGrid::uniform(16.0, 1024).unwrap();
        assert_eq!(g.len(), 1024);
        assert_eq!(g.edges()[64], 1.0);
        assert_eq!(g.locate(2.0), 128);
        let d = SizeGrid::dyadic(1e-2, 8.0, 4).unwrap();
        assert!((d.edges()[d.len()] - 8.0).abs() < 1e-15);
        assert!(d.edges()[0] <= 1e-2);
    }

    #[test]
    fn transport_only_columns() {
        let m = ModelSpec::relative(GrowthSpec::constant(1.0).unwrap(), RelativeMeasure::uniform_binary(), |_| 0.0, (1e-2, 10.0)).unwrap();
        let g = SizeGrid::uniform(10.0, 100).unwrap();
        let op = build_discrete_operator(&m, &g).unwrap();
        let cs = op.column_sums();
        for s in &cs[..99] {
            assert!(s.abs() < 1e-12);
        }
        assert!((cs[99] + 10.0).abs() < 1e-12);
    }

    #[test]
    fn mitosis_mass_growth() {
        let m = ModelSpec::relative(GrowthSpec::constant(1.0).unwrap(), RelativeMeasure::mitosis(), |_| 1.0, (1e-3, 40.0)).unwrap();
        let g = SizeGrid::uniform(40.0, 2048).unwrap();
        let op = build_discrete_operator(&m, &g).unwrap();
        let tr = solve(&op, &DensityState::point_mass(&g, 1.0), &[1.0], SolveOptions::default()).unwrap();
        let mass = tr.states[0].total_mass();
        assert!((mass / 1f64.exp() - 1.0).abs() < 0.01, "{mass}");
    }

    #[test]
    fn heun_and_cfl() {
        let m = ModelSpec::relative(GrowthSpec::constant(1.0).unwrap(), RelativeMeasure::uniform_binary(), |x| x, (1e-3, 16.0)).unwrap();
        let g = SizeGrid::uniform(16.0, 256).unwrap();
        let op = build_discrete_operator(&m, &g).unwrap();
        let u0 = DensityState::point_mass(&g, 2.0);
        let bad = solve(&op, &u0, &[1.0], SolveOptions { dt: Some(1.0), scheme: Scheme::Euler });
        assert!(matches!(bad, Err(Error::CflViolation { .. })));
        let tr = solve(&op, &u0, &[0.5, 1.0], SolveOptions { dt: None, scheme: Scheme::Heun }).unwrap();
        assert_eq!(tr.states.len(), 2);
        assert_eq!(tr.states[1].t, 1.0);
        assert!(tr.states[1].masses.iter().all(|m| *m >= 0.0));
    }
}
