//! Subcommand drivers. Each returns the JSON summary written to stdout and
//! to `<out>/<command>.json`.

use std::fs;
use std::path::Path;

use gfspec::flow::FlowEngine;
use gfspec::lyapunov::{
    criterion_entrance, criterion_k_constant, criterion_lnx_model, criterion_pseudo_entrance, criterion_relative, lambda2_bound,
    verify_assumption1, AssumptionReport, Regime,
};
use gfspec::model::{ModelSpec, WeightFunction};
use gfspec::pde::{build_discrete_operator, pairing, solve, DensityState, SolveOptions};
use gfspec::pdmp::{mc_semigroup_multi, simulate_path, TestFn, TiltedJumpLaw};
use gfspec::qsd::{eta_estimate, fv_run, reconstruct_m, FvOptions};
use gfspec::rng::StreamId;
use gfspec::spectral::{fit_gap_rate_trajectory, lambda0_vs_bound, principal_eigen, SpectralTriple};
use gfspec::{Error, Result};
use serde_json::{json, Value};

use crate::config::{ConfigError, Loaded, RunConfig};

/// Failure of a command, mapped to an exit code by `main`.
pub enum Failure {
    Config(ConfigError),
    Numeric(Error),
    /// The command ran but a checked criterion failed.
    Criterion(Value),
    Io(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Numeric(e)
    }
}

pub type Outcome = std::result::Result<Value, Failure>;

/// Slack added to `b` before simulation; `b` is a numerical supremum.
const B_SLACK: f64 = 1e-6;

pub struct Context<'a> {
    pub loaded: &'a Loaded,
    pub seed: u64,
    pub out: Option<&'a Path>,
}

impl Context<'_> {
    fn cfg(&self) -> &RunConfig {
        &self.loaded.config
    }

    fn header(&self, command: &str) -> serde_json::Map<String, Value> {
        let mut m = serde_json::Map::new();
        m.insert("command".into(), json!(command));
        m.insert("config_hash".into(), json!(self.loaded.hash));
        m.insert("seed".into(), json!(self.seed));
        m
    }

    fn write(&self, name: &str, bytes: &[u8]) -> std::result::Result<(), Failure> {
        if let Some(dir) = self.out {
            fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?;
        }
        Ok(())
    }

    fn finish(&self, command: &str, body: Value) -> Outcome {
        let mut m = self.header(command);
        if let Value::Object(b) = body {
            m.extend(b);
        }
        let v = Value::Object(m);
        self.write(&format!("{command}.json"), pretty(&v).as_bytes())?;
        Ok(v)
    }
}

pub fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn setup(ctx: &Context) -> std::result::Result<(ModelSpec, FlowEngine), Failure> {
    let model = ctx.cfg().model()?;
    let engine = FlowEngine::from_model(&model)?;
    model.validate(&engine)?;
    Ok((model, engine))
}

/// The report of the configured regime; `custom` uses `h ≡ 1`.
fn report(ctx: &Context, model: &ModelSpec, engine: &FlowEngine) -> std::result::Result<AssumptionReport, Failure> {
    let cfg = ctx.cfg();
    let r = match cfg.regime()? {
        Regime::PseudoEntrance => {
            let alpha = match cfg.lyapunov.alpha {
                Some(a) => a,
                None => {
                    let p = model.relative_measure().ok_or_else(|| Error::Unsupported("relative kernel required".into()))?;
                    criterion_relative(p)?.argmin
                }
            };
            criterion_pseudo_entrance(model, alpha)?
        }
        Regime::LnxCritical => criterion_lnx_model(model, engine)?,
        Regime::KConstantCritical => criterion_k_constant(model, engine)?,
        Regime::Entrance => {
            let l0 = cfg
                .lyapunov
                .lambda0
                .ok_or_else(|| ConfigError("`lyapunov.lambda0`: required for the entrance regime".into()))?;
            criterion_entrance(model, engine, l0)?
        }
        Regime::Custom => verify_assumption1(model, &WeightFunction::constant(1.0))?,
    };
    Ok(r)
}

pub fn check(ctx: &Context) -> Outcome {
    let (model, engine) = setup(ctx)?;
    let r = report(ctx, &model, &engine)?;
    let pass = r.passed();
    let v = ctx.finish("check", json!({ "report": r.to_json() }))?;
    if pass { Ok(v) } else { Err(Failure::Criterion(v)) }
}

fn law(ctx: &Context, model: &ModelSpec, engine: &FlowEngine) -> std::result::Result<(TiltedJumpLaw, AssumptionReport), Failure> {
    let r = report(ctx, model, engine)?;
    let law = TiltedJumpLaw::new(model, engine, &r.h, r.b)?.with_slack(B_SLACK * (1.0 + r.b.abs()));
    Ok((law, r))
}

pub fn simulate(ctx: &Context) -> Outcome {
    let cfg = ctx.cfg();
    let (model, engine) = setup(ctx)?;
    let (law, r) = law(ctx, &model, &engine)?;
    let times = cfg.checkpoints();
    let fns = cfg.functions();
    let closures: Vec<Box<dyn Fn(f64) -> f64 + Sync>> = fns.iter().map(|(_, f)| {
        let f = f.clone();
        Box::new(move |x| f.eval(x)) as Box<dyn Fn(f64) -> f64 + Sync>
    }).collect();
    let refs: Vec<TestFn<'_>> = closures.iter().map(|b| b.as_ref() as TestFn<'_>).collect();
    let est = mc_semigroup_multi(&law, &refs, cfg.run.x0, &times, cfg.run.n_paths, ctx.seed)?;
    let mut results = vec![];
    for (i, (name, _)) in fns.iter().enumerate() {
        for (j, &t) in times.iter().enumerate() {
            let e = &est.estimates[i][j];
            results.push(json!({
                "f": name,
                "t": t,
                "estimate": num(e.estimate)?,
                "std_error": num(e.std_error)?,
                "variance_blowup": e.variance_blowup,
            }));
        }
    }
    let trace = simulate_path(&law, cfg.run.x0, *times.last().expect("non-empty"), StreamId::new(ctx.seed, u64::MAX - 1))?;
    let mut buf = vec![];
    trace.write_csv(&mut buf)?;
    ctx.write("path.csv", &buf)?;
    ctx.finish(
        "simulate",
        json!({
            "regime": r.regime.as_str(),
            "b": num(law.b())?,
            "assumptions_pass": r.passed(),
            "n_paths": cfg.run.n_paths,
            "x0": cfg.run.x0,
            "alive_fraction": est.alive_fraction,
            "thinning_acceptance": num(est.stats.acceptance())?,
            "majorant_violations": est.stats.majorant_violations,
            "results": results,
        }),
    )
}

pub fn pde(ctx: &Context) -> Outcome {
    let cfg = ctx.cfg();
    let (model, _) = setup(ctx)?;
    let grid = cfg.grid()?;
    let op = build_discrete_operator(&model, &grid)?;
    let times = cfg.checkpoints();
    let traj = solve(&op, &DensityState::point_mass(&grid, cfg.run.x0), &times, SolveOptions { dt: cfg.numerics.dt, scheme: cfg.scheme()? })?;
    let mut buf = vec![];
    traj.write_csv(&grid, &mut buf)?;
    ctx.write("pde.csv", &buf)?;
    let mut results = vec![];
    for (name, f) in cfg.functions() {
        for s in &traj.states {
            results.push(json!({"f": name, "t": s.t, "pairing": num(pairing(&grid, s, |x| f.eval(x)))?}));
        }
    }
    ctx.finish("pde", json!({"cells": grid.len(), "summary": traj.summary(&grid), "results": results}))
}

fn psi_for(ctx: &Context, model: &ModelSpec, engine: &FlowEngine) -> std::result::Result<(WeightFunction, String), Failure> {
    let name = ctx.cfg().lyapunov.psi.clone().unwrap_or_else(|| "id".into());
    let psi = match name.as_str() {
        "id" => WeightFunction::identity(&model.growth),
        "one" => WeightFunction::constant(1.0),
        "h" => report(ctx, model, engine)?.psi,
        other => return Err(ConfigError(format!("`lyapunov.psi`: unknown weight `{other}`")).into()),
    };
    Ok((psi, name))
}

fn spectral_run(ctx: &Context, model: &ModelSpec, engine: &FlowEngine) -> std::result::Result<(SpectralTriple, Value), Failure> {
    let grid = ctx.cfg().grid()?;
    let op = build_discrete_operator(model, &grid)?;
    let (psi, psi_name) = psi_for(ctx, model, engine)?;
    let triple = principal_eigen(&op, &psi)?;
    let psi_prime = if model.is_mass_conserving() { WeightFunction::identity(&model.growth) } else { WeightFunction::constant(1.0) };
    let l2 = lambda2_bound(model, &psi_prime)?;
    let bound = lambda0_vs_bound(&triple, l2.lambda2, !l2.constant, 1e-6);
    let bound_json = match &bound {
        Ok(b) => json!({"lambda2": num(b.lambda2)?, "margin": num(b.margin)?, "strict": b.strict, "pass": true}),
        Err(_) => json!({"lambda2": num(l2.lambda2)?, "margin": num(l2.lambda2 - triple.lambda0)?, "strict": false, "pass": false}),
    };
    let mut buf = vec![];
    triple.write_csv(&mut buf)?;
    ctx.write("triple.csv", &buf)?;
    let summary = json!({
        "lambda0": num(triple.lambda0)?,
        "residuals": {"right": num(triple.residuals.0)?, "left": num(triple.residuals.1)?},
        "iterations": triple.iterations,
        "cells": grid.len(),
        "psi": psi_name,
        "bound": bound_json,
    });
    Ok((triple, summary))
}

pub fn spectral(ctx: &Context) -> Outcome {
    let (model, engine) = setup(ctx)?;
    let (_, summary) = spectral_run(ctx, &model, &engine)?;
    let pass = summary["bound"]["pass"].as_bool().unwrap_or(false);
    let v = ctx.finish("spectral", summary)?;
    if pass { Ok(v) } else { Err(Failure::Criterion(v)) }
}

pub fn qsd(ctx: &Context) -> Outcome {
    let cfg = ctx.cfg();
    let (model, engine) = setup(ctx)?;
    let (law, r) = law(ctx, &model, &engine)?;
    let grid = cfg.grid()?;
    let opts = FvOptions {
        particles: cfg.run.particles,
        t_end: cfg.run.t_end,
        burn_in: cfg.run.burn_in,
        seed: ctx.seed,
        ..FvOptions::default()
    };
    let fv = fv_run(&law, cfg.run.x0, &grid, &opts)?;
    let m = reconstruct_m(&fv, &grid, &r.psi);
    let mut buf = vec![];
    fv.final_ensemble.write_csv(&mut buf)?;
    ctx.write("ensemble.csv", &buf)?;
    let mut body = fv.to_json();
    body["b"] = num(law.b())?;
    body["lambda0"] = num(fv.lambda0x - law.b())?;
    body["m_total"] = num(m.iter().sum())?;
    if cfg.run.eta_paths > 0 {
        let probes = gfspec::model::log_grid(cfg.numerics.x_min.max(0.2), cfg.numerics.x_max.min(3.0), 16);
        let t_probe = cfg.run.t_probe.unwrap_or(2.5);
        let eta = eta_estimate(&law, &probes, fv.lambda0x, t_probe, cfg.run.eta_paths, ctx.seed)?;
        body["eta"] = json!({"x": eta.x, "eta": eta.eta, "drift": num(eta.drift)?, "t_probe": t_probe});
    }
    ctx.finish("qsd", body)
}

fn read_prior(ctx: &Context, model: &ModelSpec, engine: &FlowEngine) -> std::result::Result<(SpectralTriple, &'static str), Failure> {
    let Some(dir) = ctx.out else {
        return Ok((spectral_run(ctx, model, engine)?.0, "inline"));
    };
    let jpath = dir.join("spectral.json");
    if !jpath.exists() {
        return Ok((spectral_run(ctx, model, engine)?.0, "inline"));
    }
    let io = |e: std::io::Error| Failure::Io(format!("{}: {e}", jpath.display()));
    let prior: Value = serde_json::from_str(&fs::read_to_string(&jpath).map_err(io)?)
        .map_err(|e| Failure::Io(format!("{}: {e}", jpath.display())))?;
    if prior["config_hash"].as_str() != Some(ctx.loaded.hash.as_str()) {
        return Err(Failure::Numeric(Error::Domain(format!(
            "{} was produced from a different configuration (hash {}); refusing to combine",
            jpath.display(),
            prior["config_hash"]
        ))));
    }
    let lambda0 = prior["lambda0"].as_f64().ok_or_else(|| Failure::Io("spectral.json has no lambda0".into()))?;
    let cpath = dir.join("triple.csv");
    let mut rdr = csv::Reader::from_path(&cpath).map_err(|e| Failure::Io(format!("{}: {e}", cpath.display())))?;
    let (mut centers, mut phi, mut m) = (vec![], vec![], vec![]);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Failure::Io(format!("{}: {e}", cpath.display())))?;
        let get = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| Failure::Io(format!("{}: bad row", cpath.display())));
        centers.push(get(0)?);
        phi.push(get(1)?);
        m.push(get(2)?);
    }
    let residuals = (prior["residuals"]["right"].as_f64().unwrap_or(f64::NAN), prior["residuals"]["left"].as_f64().unwrap_or(f64::NAN));
    let iterations = prior["iterations"].as_u64().unwrap_or(0) as usize;
    Ok((SpectralTriple { lambda0, phi, m, residuals, iterations, centers }, "spectral.json"))
}

pub fn converge(ctx: &Context) -> Outcome {
    let cfg = ctx.cfg();
    let (model, engine) = setup(ctx)?;
    let (triple, source) = read_prior(ctx, &model, &engine)?;
    let grid = cfg.grid()?;
    if grid.len() != triple.m.len() {
        return Err(Failure::Numeric(Error::Domain("spectral triple does not match the grid".into())));
    }
    let times: Vec<f64> = if cfg.run.checkpoints.len() >= 8 {
        cfg.run.checkpoints.clone()
    } else {
        (1..=40).map(|i| cfg.run.t_end * i as f64 / 40.0).collect()
    };
    let op = build_discrete_operator(&model, &grid)?;
    let traj = solve(&op, &DensityState::point_mass(&grid, cfg.run.x0), &times, SolveOptions { dt: cfg.numerics.dt, scheme: cfg.scheme()? })?;
    let (name, f) = cfg.functions().into_iter().next().expect("at least one function");
    let body = match fit_gap_rate_trajectory(&traj, &grid, &triple, cfg.run.x0, |x| f.eval(x)) {
        Ok(fit) => json!({"f": name, "gamma": num(fit.gamma)?, "r_squared": num(fit.r_squared)?, "points": fit.points, "rate_positive": false}),
        Err(Error::RatePositive { slope, r_squared }) => {
            json!({"f": name, "gamma": Value::Null, "slope": num(slope)?, "r_squared": num(r_squared)?, "rate_positive": true})
        }
        Err(e) => return Err(e.into()),
    };
    let mut body = body;
    body["lambda0"] = num(triple.lambda0)?;
    body["triple_source"] = json!(source);
    ctx.finish("converge", body)
}

/// Non-finite numbers are errors in JSON output.
fn num(x: f64) -> Result<Value> {
    if x.is_finite() {
        Ok(json!(x))
    } else {
        Err(Error::Domain(format!("non-finite value {x} in output")))
    }
}
