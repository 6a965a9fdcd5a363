use approx::assert_relative_eq;
use gfspec::model::{GrowthSpec, ModelSpec, RelativeMeasure};
use gfspec::pde::{build_discrete_operator, solve, DensityState, Scheme, SizeGrid, SolveOptions};

#[test]
fn uniform_kernel_inflow_matches_closed_form() {
    // k(x, dy) = 2 K(x)/x dy on (0, x) with K(x) = x: inflow 2 |cell ∩ (0, x_j)|.
    let m = ModelSpec::relative(GrowthSpec::constant(1.0).unwrap(), RelativeMeasure::uniform_binary(), |x| x, (1e-3, 8.0)).unwrap();
    let g = SizeGrid::uniform(8.0, 64).unwrap();
    let op = build_discrete_operator(&m, &g).unwrap();
    let dense = op.to_dense();
    let (e, x) = (g.edges(), g.centers());
    for j in 0..g.len() {
        for i in 0..g.len() {
            let overlap = (e[i + 1].min(x[j]) - e[i]).max(0.0);
            let mut expect = 2.0 * overlap;
            if i == 0 {
                expect += 2.0 * e[0];
            }
            if i == j {
                // Outflow through the right edge (lost at the last one) and loss K(x_j).
                expect -= 1.0 / g.widths()[j] + x[j];
            } else if i == j + 1 {
                expect += 1.0 / g.widths()[j];
            }
            assert_relative_eq!(dense[i][j], expect, epsilon = 1e-9, max_relative = 1e-9);
        }
    }
}

#[test]
fn transport_conserves_mass_away_from_the_boundary() {
    let m = ModelSpec::relative(GrowthSpec::constant(1.0).unwrap(), RelativeMeasure::uniform_binary(), |_| 0.0, (1e-3, 8.0)).unwrap();
    let g = SizeGrid::uniform(8.0, 64).unwrap();
    let op = build_discrete_operator(&m, &g).unwrap();
    let u0 = DensityState::from_density(&g, |x| (-(x - 2.0) * (x - 2.0) * 4.0).exp());
    let tr = solve(&op, &u0, &[1.0], SolveOptions { dt: None, scheme: Scheme::Heun }).unwrap();
    assert_relative_eq!(tr.states[0].total_mass(), u0.total_mass(), max_relative = 1e-9);
}

#[test]
fn solutions_stay_non_negative() {
    let m = ModelSpec::relative(GrowthSpec::power(1.0, 0.5).unwrap(), RelativeMeasure::mitosis(), |x| x * x, (1e-3, 8.0)).unwrap();
    let g = SizeGrid::log(1e-3, 8.0, 200).unwrap();
    let op = build_discrete_operator(&m, &g).unwrap();
    let tr = solve(&op, &DensityState::point_mass(&g, 1.0), &[0.5, 1.0, 3.0], SolveOptions::default()).unwrap();
    for s in &tr.states {
        assert!(s.masses.iter().all(|&v| v >= 0.0));
    }
}
