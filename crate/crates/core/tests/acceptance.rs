//! Acceptance suite. Each test prints one `PASS`/`FAIL` line to stderr
//! (unbuffered, so it shows without `--nocapture`).

use std::io::Write;

use gfspec::flow::FlowEngine;
use gfspec::lyapunov::{
    criterion_lnx, criterion_mitosis_kernel, criterion_pseudo_entrance, criterion_reggen, criterion_uniform_kernel,
    lambda2_bound, reggen_objective, AssumptionReport,
};
use gfspec::model::{log_grid, GrowthSpec, ModelSpec, RelativeMeasure, WeightFunction};
use gfspec::pde::{build_discrete_operator, pairing, solve, DensityState, Scheme, SizeGrid, SolveOptions};
use gfspec::pdmp::{mc_semigroup, mc_semigroup_multi, simulate_path, Estimate, TestFn, TiltedJumpLaw};
use gfspec::qsd::{coarsen, eta_estimate, fv_run, reconstruct_m, tv_distance, FvOptions};
use gfspec::rng::StreamId;
use gfspec::spectral::{fit_gap_rate_trajectory, lambda0_vs_bound, principal_eigen, richardson};
use gfspec::Error;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn report(n: u32, name: &str, r: &Outcome) {
    let line = match r {
        Ok(d) => format!("criterion {n} ({name}): PASS  {d}\n"),
        Err(d) => format!("criterion {n} ({name}): FAIL  {d}\n"),
    };
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok { Ok(()) } else { Err(msg()) }
}

fn canonical() -> ModelSpec {
    ModelSpec::relative(GrowthSpec::constant(1.0).unwrap(), RelativeMeasure::uniform_binary(), |x| x, (1e-3, 16.0)).unwrap()
}

fn canonical_law(m: &ModelSpec, e: &FlowEngine, alpha: f64) -> (TiltedJumpLaw, AssumptionReport) {
    let r = criterion_pseudo_entrance(m, alpha).unwrap();
    let law = TiltedJumpLaw::new(m, e, &r.h, r.b).unwrap().with_slack(1e-6 * (1.0 + r.b));
    (law, r)
}

fn within(e: &Estimate, exact: f64, k: f64) -> bool {
    (e.estimate - exact).abs() <= k * e.std_error + 1e-12 * exact.abs()
}

// 1 -------------------------------------------------------------------------

fn thresholds() -> Outcome {
    let u = criterion_uniform_kernel();
    let oracle = 3.0 + 2.0 * 2f64.sqrt();
    ensure((u.threshold - oracle).abs() < 1e-6 && (u.argmin - (1.0 + 2f64.sqrt())).abs() < 1e-6, || format!("uniform {u:?}"))?;
    let m = criterion_mitosis_kernel();
    ensure((m.threshold - 3.86).abs() <= 0.01, || format!("mitosis {m:?}"))?;
    let l = criterion_lnx(&RelativeMeasure::uniform_binary()).map_err(|e| e.to_string())?;
    ensure((l.low - 2.0).abs() < 1e-6 && (l.high - 2.0).abs() < 1e-6, || format!("lnx {l:?}"))?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let c_inf: f64 = rng.random_range(0.2..5.0);
        let c0 = c_inf * rng.random_range(1.01..1.99);
        let r = criterion_reggen(c0, c_inf).map_err(|e| e.to_string())?;
        let closed = 3.0 * c0 - c_inf - 2.0 * (2.0 * c0 * (c0 - c_inf)).sqrt();
        // Brute-force maximum on a fine grid, refined once around the best node.
        let n = 20_000;
        let best = (0..n).map(|i| c_inf * i as f64 / n as f64).max_by(|a, b| reggen_objective(c0, c_inf, *a).total_cmp(&reggen_objective(c0, c_inf, *b))).unwrap();
        let h = c_inf / n as f64;
        let brute = (0..=2000).map(|j| reggen_objective(c0, c_inf, (best - h + h * j as f64 / 1000.0).clamp(0.0, c_inf))).fold(f64::MIN, f64::max);
        ensure(r.closed_form_valid, || format!("closed form invalid at ({c0}, {c_inf})"))?;
        ensure((r.closed_form - closed).abs() < 1e-9 && (r.optimizer_max - closed).abs() < 1e-6 && (brute - closed).abs() < 1e-6, || {
            format!("reggen ({c0}, {c_inf}): closed {closed}, lib {r:?}, brute {brute}")
        })?;
        worst = worst.max((r.optimizer_max - closed).abs());
    }
    Ok(format!("uniform {:.9}, mitosis {:.4}, lnx ({:.6}, {:.6}), reggen max dev {worst:.1e}", u.threshold, m.threshold, l.low, l.high))
}

#[test]
fn criterion_1_thresholds() {
    let t = std::time::Instant::now();
    let r = thresholds().map(|d| format!("{d} [{:.2}s]", t.elapsed().as_secs_f64()));
    report(1, "threshold reproduction", &r);
    r.unwrap();
}

// 2 -------------------------------------------------------------------------

fn identities() -> Outcome {
    let times = [0.5, 1.0, 2.0];
    let mut notes = vec![];

    // Mitosis, K ≡ 1, c ≡ 1: A1 = 1. Weight 1 + x has A h = 2, so b = 2.
    let mit = ModelSpec::relative(GrowthSpec::constant(1.0).unwrap(), RelativeMeasure::mitosis(), |_| 1.0, (1e-3, 40.0)).unwrap();
    let e = FlowEngine::from_model(&mit).unwrap();
    let h = WeightFunction::new("1+x", |x| 1.0 + x, |_| 1.0).with_sup_below(|x| 1.0 + x);
    let law = TiltedJumpLaw::new(&mit, &e, &h, 2.0).unwrap();
    let est = mc_semigroup_multi(&law, &[&|_: f64| 1.0], 1.0, &times, 100_000, 1).map_err(|e| e.to_string())?;
    for (j, &t) in times.iter().enumerate() {
        let s = &est.estimates[0][j];
        ensure(within(s, t.exp(), 3.0), || format!("mitosis MC at t={t}: {} ± {} vs {}", s.estimate, s.std_error, t.exp()))?;
    }
    notes.push(format!("mitosis MC z={:.2}", (est.estimates[0][2].estimate - 2f64.exp()) / est.estimates[0][2].std_error));

    // Uniform kernel, c(x) = x, K ≡ 1: A id = id. Weight 1 + x² has
    // A h = 1 + 5x²/3, so b = 5/3.
    let lin = ModelSpec::relative(GrowthSpec::linear(1.0).unwrap(), RelativeMeasure::uniform_binary(), |_| 1.0, (1e-6, 1e3)).unwrap();
    let e = FlowEngine::from_model(&lin).unwrap();
    let h = WeightFunction::new("1+x^2", |x| 1.0 + x * x, |x| 2.0 * x * x).with_sup_below(|x| 1.0 + x * x);
    let law = TiltedJumpLaw::new(&lin, &e, &h, 5.0 / 3.0).unwrap();
    let est = mc_semigroup_multi(&law, &[&|x: f64| x], 1.0, &times, 100_000, 2).map_err(|e| e.to_string())?;
    for (j, &t) in times.iter().enumerate() {
        let s = &est.estimates[0][j];
        ensure(within(s, t.exp(), 3.0), || format!("linear-growth MC at t={t}: {} ± {} vs {}", s.estimate, s.std_error, t.exp()))?;
    }
    notes.push(format!("linear MC z={:.2}", (est.estimates[0][2].estimate - 2f64.exp()) / est.estimates[0][2].std_error));

    // Finite volumes at N = 2048, second-order in time. The c(x) = x grid
    // covers the support bound x0·e^2 ≈ 7.4 with margin.
    let heun = SolveOptions { dt: None, scheme: Scheme::Heun };
    let g = SizeGrid::uniform(40.0, 2048).unwrap();
    let op = build_discrete_operator(&mit, &g).map_err(|e| e.to_string())?;
    let tr = solve(&op, &DensityState::point_mass(&g, 1.0), &times, heun).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for s in &tr.states {
        worst = worst.max((s.total_mass() / s.t.exp() - 1.0).abs());
    }
    let g = SizeGrid::uniform(12.0, 2048).unwrap();
    let lin_pde = ModelSpec::relative(GrowthSpec::linear(1.0).unwrap(), RelativeMeasure::uniform_binary(), |_| 1.0, (1e-3, 12.0)).unwrap();
    let op = build_discrete_operator(&lin_pde, &g).map_err(|e| e.to_string())?;
    let tr2 = solve(&op, &DensityState::point_mass(&g, 1.0), &times, heun).map_err(|e| e.to_string())?;
    for s in &tr2.states {
        worst = worst.max((pairing(&g, s, |x| x) / s.t.exp() - 1.0).abs());
    }
    ensure(worst < 0.01, || format!("PDE relative error {worst}"))?;
    notes.push(format!("PDE max rel err {worst:.2e}"));
    Ok(notes.join(", "))
}

#[test]
fn criterion_2_semigroup_identities() {
    let t = std::time::Instant::now();
    let r = identities().map(|d| format!("{d} [{:.1}s]", t.elapsed().as_secs_f64()));
    report(2, "exact semigroup identities", &r);
    r.unwrap();
}

// 3 -------------------------------------------------------------------------

fn duality() -> Outcome {
    let m = canonical();
    let e = FlowEngine::from_model(&m).unwrap();
    let (law, _) = canonical_law(&m, &e, 1.0 + 2f64.sqrt());
    let (x0, t) = (2.0, 2.0);
    let one = |_: f64| 1.0;
    let id = |x: f64| x;
    let ind = |x: f64| if (1.0..=2.0).contains(&x) { 1.0 } else { 0.0 };
    let fs: [TestFn; 3] = [&one, &id, &ind];
    let mc = mc_semigroup_multi(&law, &fs, x0, &[t], 100_000, 3).map_err(|e| e.to_string())?;
    let pde_at = |n: usize| -> Result<Vec<f64>, String> {
        let g = SizeGrid::uniform(16.0, n).map_err(|e| e.to_string())?;
        let op = build_discrete_operator(&m, &g).map_err(|e| e.to_string())?;
        let tr = solve(&op, &DensityState::point_mass(&g, x0), &[t], SolveOptions::default()).map_err(|e| e.to_string())?;
        Ok(fs.iter().map(|f| pairing(&g, &tr.states[0], f)).collect())
    };
    let (coarse, fine) = (pde_at(1024)?, pde_at(2048)?);
    let names = ["1", "id", "1_[1,2]"];
    let mut notes = vec![];
    for i in 0..3 {
        let reference = richardson(coarse[i], fine[i]);
        let est = &mc.estimates[i][0];
        let budget = 3.0 * est.std_error + (fine[i] - coarse[i]).abs();
        let gap = (reference - est.estimate).abs();
        ensure(gap <= budget, || format!("f={}: PDE {reference} vs MC {} ± {}, budget {budget}", names[i], est.estimate, est.std_error))?;
        notes.push(format!("{}: |Δ|={gap:.3} ≤ {budget:.3}", names[i]));
    }
    Ok(notes.join(", "))
}

#[test]
fn criterion_3_duality() {
    let t = std::time::Instant::now();
    let r = duality().map(|d| format!("{d} [{:.1}s]", t.elapsed().as_secs_f64()));
    report(3, "MC vs PDE duality", &r);
    r.unwrap();
}

// 4 -------------------------------------------------------------------------

fn spectral_sign() -> Outcome {
    let m = canonical();
    let g = SizeGrid::uniform(16.0, 1024).unwrap();
    let op = build_discrete_operator(&m, &g).map_err(|e| e.to_string())?;
    let id = WeightFunction::identity(&m.growth);
    let tri = principal_eigen(&op, &id).map_err(|e| e.to_string())?;
    ensure(tri.lambda0 < 0.0, || format!("lambda0 = {}", tri.lambda0))?;
    let l2 = lambda2_bound(&m, &id).map_err(|e| e.to_string())?;
    let b = lambda0_vs_bound(&tri, l2.lambda2, !l2.constant, 1e-6).map_err(|e| e.to_string())?;

    // Dense oracle at N = 256.
    let g = SizeGrid::uniform(16.0, 256).unwrap();
    let op = build_discrete_operator(&m, &g).map_err(|e| e.to_string())?;
    let small = principal_eigen(&op, &id).map_err(|e| e.to_string())?;
    let dense = op.to_dense();
    let n = dense.len();
    let mat = nalgebra::DMatrix::from_fn(n, n, |i, j| dense[i][j]);
    let oracle = mat.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let dev = (small.growth() - oracle).abs();
    ensure(dev <= 1e-8, || format!("power iteration {} vs dense {oracle}", small.growth()))?;
    Ok(format!("lambda0 {:.6} ≤ lambda2 {:.6} (margin {:.4}), dense dev {dev:.1e}", tri.lambda0, b.lambda2, b.margin))
}

#[test]
fn criterion_4_spectral_sign_and_bound() {
    let t = std::time::Instant::now();
    let r = spectral_sign().map(|d| format!("{d} [{:.1}s]", t.elapsed().as_secs_f64()));
    report(4, "spectral sign and bound", &r);
    r.unwrap();
}

// 5 -------------------------------------------------------------------------

fn dichotomy() -> Outcome {
    let checkpoints = |t_end: f64| (1..=40).map(|i| t_end * i as f64 / 40.0).collect::<Vec<_>>();
    let opts = SolveOptions { dt: None, scheme: Scheme::Heun };

    let m = canonical();
    let g = SizeGrid::uniform(16.0, 1024).unwrap();
    let op = build_discrete_operator(&m, &g).map_err(|e| e.to_string())?;
    let tri = principal_eigen(&op, &WeightFunction::identity(&m.growth)).map_err(|e| e.to_string())?;
    // Past t ≈ 6 the residual e^{-2t} reaches the eigen-solver tolerance.
    let tr = solve(&op, &DensityState::point_mass(&g, 2.0), &checkpoints(5.0), opts).map_err(|e| e.to_string())?;
    let fit = fit_gap_rate_trajectory(&tr, &g, &tri, 2.0, |_| 1.0).map_err(|e| e.to_string())?;
    ensure(fit.gamma > 0.0 && fit.r_squared > 0.99, || format!("canonical fit {fit:?}"))?;

    // c(x) = x, K ≡ 1, uniform kernel: no gap.
    let crit = ModelSpec::relative(GrowthSpec::linear(1.0).unwrap(), RelativeMeasure::uniform_binary(), |_| 1.0, (1e-6, 1e6)).unwrap();
    let g = SizeGrid::log(1e-6, 1e6, 1024).unwrap();
    let op = build_discrete_operator(&crit, &g).map_err(|e| e.to_string())?;
    let tri_c = principal_eigen(&op, &WeightFunction::constant(1.0)).map_err(|e| e.to_string())?;
    let tr = solve(&op, &DensityState::point_mass(&g, 1.0), &checkpoints(10.0), opts).map_err(|e| e.to_string())?;
    let critical = match fit_gap_rate_trajectory(&tr, &g, &tri_c, 1.0, |_| 1.0) {
        Err(Error::RatePositive { slope, .. }) => format!("RatePositive (slope {slope:.1e})"),
        Ok(f) if f.r_squared < 0.9 => format!("r² {:.2}", f.r_squared),
        other => return Err(format!("critical model fit {other:?}")),
    };
    Ok(format!("canonical γ {:.3} r² {:.5}; critical {critical}", fit.gamma, fit.r_squared))
}

#[test]
fn criterion_5_gap_dichotomy() {
    let t = std::time::Instant::now();
    let r = dichotomy().map(|d| format!("{d} [{:.1}s]", t.elapsed().as_secs_f64()));
    report(5, "gap vs no-gap", &r);
    r.unwrap();
}

// 6 -------------------------------------------------------------------------

fn qsd_consistency() -> Outcome {
    let m = canonical();
    let e = FlowEngine::from_model(&m).unwrap();
    let (law, rep) = canonical_law(&m, &e, 1.0 + 2f64.sqrt());
    let id = WeightFunction::identity(&m.growth);
    let g = SizeGrid::uniform(16.0, 1024).unwrap();
    let op = build_discrete_operator(&m, &g).map_err(|e| e.to_string())?;
    let tri = principal_eigen(&op, &id).map_err(|e| e.to_string())?;
    let g2 = SizeGrid::uniform(16.0, 2048).unwrap();
    let op2 = build_discrete_operator(&m, &g2).map_err(|e| e.to_string())?;
    let tri2 = principal_eigen(&op2, &id).map_err(|e| e.to_string())?;
    let lambda0 = richardson(tri.lambda0, tri2.lambda0);
    let grid_tol = (tri.lambda0 - tri2.lambda0).abs();

    let fv = fv_run(&law, 2.0, &g, &FvOptions { seed: 4, ..FvOptions::default() }).map_err(|e| e.to_string())?;
    let est = fv.lambda0x - law.b();
    let tol = fv.ci_half_width() + grid_tol;
    ensure((est - lambda0).abs() <= tol, || format!("FV {est} vs spectral {lambda0}, tol {tol}"))?;

    let m_fv = reconstruct_m(&fv, &g, &id);
    let tv = tv_distance(&coarsen(&m_fv, 16), &coarsen(&tri.m, 16));
    ensure(tv <= 0.05, || format!("TV(m) = {tv}"))?;

    let probes = log_grid(0.2, 3.0, 16);
    let eta = eta_estimate(&law, &probes, fv.lambda0x, 2.5, 100_000, 5).map_err(|e| e.to_string())?;
    let ratio: Vec<f64> = probes
        .iter()
        .zip(&eta.eta)
        .map(|(&x, &v)| v * rep.h.value(x) / tri.phi[g.locate(x)])
        .collect();
    let central = &ratio[4..12];
    let scale = central.iter().map(|r| r.ln()).sum::<f64>() / central.len() as f64;
    let dev = central.iter().map(|r| (r / scale.exp() - 1.0).abs()).fold(0.0, f64::max);
    ensure(dev <= 0.05, || format!("eta·h/phi deviates by {dev}: {ratio:?}"))?;
    Ok(format!("λ0 FV {est:.4} vs spectral {lambda0:.4} (tol {tol:.4}), TV {tv:.3}, η·h/φ dev {dev:.3}"))
}

#[test]
fn criterion_6_qsd_consistency() {
    let t = std::time::Instant::now();
    let r = qsd_consistency().map(|d| format!("{d} [{:.1}s]", t.elapsed().as_secs_f64()));
    report(6, "QSD consistency", &r);
    r.unwrap();
}

// 7 -------------------------------------------------------------------------

fn invariants() -> Outcome {
    // Flow identity on a 64 × 64 lattice for several speeds.
    let speeds = [
        GrowthSpec::constant(1.0).unwrap(),
        GrowthSpec::linear(1.0).unwrap(),
        GrowthSpec::power(2.0, 0.5).unwrap(),
        GrowthSpec::piecewise_linear(2.0, 1.0, 1.0).unwrap(),
    ];
    let mut worst: f64 = 0.0;
    for c in &speeds {
        let e = FlowEngine::new(c, (1e-3, 1e3)).map_err(|e| e.to_string())?;
        for &x in &log_grid(1e-2, 10.0, 64) {
            for j in 0..64 {
                let t = 2.0 * j as f64 / 63.0;
                let y = e.flow_at(x, t).map_err(|e| e.to_string())?;
                let err = (e.s_of(y).unwrap() - e.s_of(x).unwrap() - t).abs();
                worst = worst.max(err);
            }
        }
    }
    ensure(worst <= 1e-10, || format!("flow identity error {worst}"))?;

    let m = canonical();
    let e = FlowEngine::from_model(&m).unwrap();
    let (law, _) = canonical_law(&m, &e, 1.0 + 2f64.sqrt());
    let (x0, t_end) = (2.0, 2.0);
    let violations: usize = (0..100_000u64)
        .into_par_iter()
        .map(|i| {
            let tr = simulate_path(&law, x0, t_end, StreamId::new(6, i)).unwrap();
            tr.events
                .iter()
                .filter(|ev| {
                    let cap = e.flow_at(x0, ev.t).unwrap() * (1.0 + 1e-12);
                    ev.before > cap || ev.after.alive().is_some_and(|x| x > cap)
                })
                .count()
        })
        .sum();
    ensure(violations == 0, || format!("{violations} support violations"))?;

    // Two admissible weights give the same semigroup.
    let (law2, _) = canonical_law(&m, &e, 2.0);
    let a = mc_semigroup(&law, &|x| x, x0, t_end, 100_000, 7).map_err(|e| e.to_string())?;
    let b = mc_semigroup(&law2, &|x| x, x0, t_end, 100_000, 8).map_err(|e| e.to_string())?;
    let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    ensure((a.estimate - b.estimate).abs() <= 3.0 * se, || format!("h-dependence: {} vs {} (se {se})", a.estimate, b.estimate))?;

    let rerun = mc_semigroup(&law, &|x| x, x0, t_end, 100_000, 7).map_err(|e| e.to_string())?;
    ensure(rerun.estimate.to_bits() == a.estimate.to_bits() && rerun.std_error.to_bits() == a.std_error.to_bits(), || {
        "rerun differs".into()
    })?;
    Ok(format!(
        "flow err {worst:.1e}, support ok on 1e5 paths, h-independence |Δ|/se {:.2}, reruns bit-identical",
        (a.estimate - b.estimate).abs() / se
    ))
}

#[test]
fn criterion_7_structural_invariants() {
    let t = std::time::Instant::now();
    let r = invariants().map(|d| format!("{d} [{:.1}s]", t.elapsed().as_secs_f64()));
    report(7, "structural invariants", &r);
    r.unwrap();
}
