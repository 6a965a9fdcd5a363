use gfspec::flow::FlowEngine;
use gfspec::model::{GrowthSpec, ModelSpec, RelativeMeasure, WeightFunction};
use gfspec::pdmp::{next_jump_time, path_positions, simulate_path, FnRate, Position, ThinningStats, TiltedJumpLaw};
use gfspec::rng::StreamId;

fn ks(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

/// 1% critical value of the one-sample KS statistic.
fn ks_crit(n: usize) -> f64 {
    1.63 / (n as f64).sqrt()
}

fn canonical() -> (ModelSpec, FlowEngine) {
    let m = ModelSpec::relative(GrowthSpec::constant(1.0).unwrap(), RelativeMeasure::uniform_binary(), |x| x, (1e-3, 16.0)).unwrap();
    let e = FlowEngine::from_model(&m).unwrap();
    (m, e)
}

#[test]
fn thinning_matches_inverse_cdf() {
    // r(x) = x along c ≡ 1 from x = 1: Λ(t) = t + t²/2.
    let (_, e) = canonical();
    let mut rng = StreamId::new(10, 0).rng();
    let mut st = ThinningStats::default();
    let n = 20_000;
    let ts: Vec<f64> = (0..n)
        .map(|_| next_jump_time(&e, &FnRate(|x: f64| x), 1.0, 50.0, &mut rng, &mut st).unwrap().unwrap().0)
        .collect();
    let d = ks(ts, |t| 1.0 - (-(t + 0.5 * t * t)).exp());
    assert!(d < ks_crit(n), "KS {d}");
    assert_eq!(st.majorant_violations, 0);
}

#[test]
fn tilted_child_law_cubic() {
    // Weight x²: the child fraction has density 3u².
    let (m, e) = canonical();
    let law = TiltedJumpLaw::new(&m, &e, &WeightFunction::power(&m.growth, 2.0), 10.0).unwrap();
    let mut rng = StreamId::new(11, 0).rng();
    let n = 20_000;
    let us: Vec<f64> = (0..n).map(|_| law.sample_child(3.0, &mut rng).unwrap() / 3.0).collect();
    let d = ks(us, |u| u.clamp(0.0, 1.0).powi(3));
    assert!(d < ks_crit(n), "KS {d}");
}

#[test]
fn tilted_child_law_linear_chi_square() {
    // Weight id: density 2u, 20 equiprobable bins.
    let (m, e) = canonical();
    let law = TiltedJumpLaw::new(&m, &e, &WeightFunction::identity(&m.growth), 10.0).unwrap();
    let mut rng = StreamId::new(12, 0).rng();
    let (n, bins) = (20_000, 20);
    let mut counts = vec![0usize; bins];
    for _ in 0..n {
        let u = law.sample_child(2.0, &mut rng).unwrap() / 2.0;
        counts[((u * u * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let expect = n as f64 / bins as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    // 99.9% quantile of χ² with 19 degrees of freedom.
    assert!(chi2 < 43.82, "chi2 {chi2}");
}

#[test]
fn jump_counts_are_poisson() {
    // Mitosis, K ≡ 1, h ≡ 1, b = 1: jumps at rate 2, no killing.
    let m = ModelSpec::relative(GrowthSpec::constant(1.0).unwrap(), RelativeMeasure::mitosis(), |_| 1.0, (1e-3, 20.0)).unwrap();
    let e = FlowEngine::from_model(&m).unwrap();
    let law = TiltedJumpLaw::new(&m, &e, &WeightFunction::constant(1.0), 1.0).unwrap();
    assert!((law.total_rate(0.7) - 2.0).abs() < 1e-12);
    let n = 10_000;
    let counts: Vec<f64> = (0..n).map(|i| simulate_path(&law, 1.0, 2.0, StreamId::new(13, i)).unwrap().jump_count() as f64).collect();
    let mean = counts.iter().sum::<f64>() / n as f64;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!((mean - 4.0).abs() < 4.0 * (4.0 / n as f64).sqrt(), "mean {mean}");
    // Var of the sample variance of Poisson(λ) ≈ (λ + 2λ²)/n.
    assert!((var - 4.0).abs() < 4.0 * (36.0 / n as f64).sqrt(), "var {var}");
}

#[test]
fn cemetery_is_absorbing() {
    let (m, e) = canonical();
    let r = gfspec::lyapunov::criterion_pseudo_entrance(&m, 1.0 + 2f64.sqrt()).unwrap();
    let law = TiltedJumpLaw::new(&m, &e, &r.h, r.b).unwrap().with_slack(1e-6 * (1.0 + r.b));
    let times: Vec<f64> = (1..=10).map(|i| 0.2 * i as f64).collect();
    let mut alive = vec![0usize; times.len()];
    for i in 0..2000 {
        let mut st = ThinningStats::default();
        let pos = path_positions(&law, 2.0, &times, StreamId::new(14, i), &mut st).unwrap();
        let first_dead = pos.iter().position(|p| *p == Position::Cemetery).unwrap_or(pos.len());
        assert!(pos[first_dead..].iter().all(|p| *p == Position::Cemetery));
        for (k, p) in pos.iter().enumerate() {
            alive[k] += usize::from(p.alive().is_some());
        }
    }
    assert!(alive.windows(2).all(|w| w[1] <= w[0]), "{alive:?}");
    assert!(alive[9] < alive[0]);
}
