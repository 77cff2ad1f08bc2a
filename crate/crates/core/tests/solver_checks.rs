//! Structural properties of the Dirichlet solver: comparison on ordered
//! data, translation equivariance, solve duality, and refinement behavior.

use nonlocal_core::grid::{ExteriorRule, GridFunction, GridGeometry};
use nonlocal_core::operator::{ClassParams, Sign};
use nonlocal_core::solver::{residual, solve, ProblemSpec, SolveOperator};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn plus_problem(
    sigma: f64,
    geom: GridGeometry,
    forcing: Vec<f64>,
    exterior: ExteriorRule,
) -> ProblemSpec {
    let class = ClassParams::new(geom.dim(), sigma, 1.0, 2.0).unwrap();
    let mut p = ProblemSpec::new(
        SolveOperator::Extremal {
            sign: Sign::Plus,
            class,
            symmetric: false,
        },
        geom,
        forcing,
        exterior,
    )
    .unwrap();
    p.tol = 1e-10;
    p
}

/// Random trigonometric data bounded by `amp`.
fn trig(rng: &mut ChaCha8Rng, amp: f64) -> impl Fn(f64) -> f64 {
    let a: f64 = rng.gen_range(0.2..1.0) * amp;
    let b: f64 = rng.gen_range(0.2..1.0) * amp;
    let ka: f64 = rng.gen_range(0.5..4.0);
    let kb: f64 = rng.gen_range(0.5..4.0);
    let pa: f64 = rng.gen_range(0.0..6.28);
    move |x: f64| 0.5 * (a * (ka * x + pa).sin() + b * (kb * x).cos())
}

#[test]
fn ordered_data_yields_ordered_solutions() {
    // Monotone scheme surrogate of the comparison principle: raising the
    // exterior data and lowering the forcing can only raise the solution,
    // up to the residual tolerance each solve stops at.
    let geom = GridGeometry::centered(1, 1.0, 65).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..10 {
        let g_low = std::sync::Arc::new(trig(&mut rng, 1.0));
        let bump_g: f64 = rng.gen_range(0.0..0.5);
        let f_low: Vec<f64> = {
            let ff = trig(&mut rng, 2.0);
            geom.nodes().map(|(_, x)| ff(x[0])).collect()
        };
        let bump_f: f64 = rng.gen_range(0.0..1.0);

        let g1 = ExteriorRule::bounded(
            {
                let g_low = g_low.clone();
                move |z: &[f64]| g_low(z[0]) + bump_g
            },
            2.0,
        )
        .unwrap();
        let g2 = ExteriorRule::bounded(move |z: &[f64]| g_low(z[0]), 2.0).unwrap();
        let f1: Vec<f64> = f_low.iter().map(|v| v - bump_f).collect();
        let f2 = f_low.clone();

        let p1 = plus_problem(1.5, geom.clone(), f1, g1);
        let p2 = plus_problem(1.5, geom.clone(), f2, g2);
        let (u1, r1) = solve(&p1).unwrap();
        let (u2, r2) = solve(&p2).unwrap();
        assert!(r1.converged && r2.converged, "trial {trial} did not settle");
        let slack = 1e-7;
        for (i, (a, b)) in u1.values.iter().zip(&u2.values).enumerate() {
            assert!(
                a >= &(b - slack),
                "trial {trial} node {i}: {a} < {b} with g1 >= g2, f1 <= f2"
            );
        }
    }
}

#[test]
fn translation_by_a_lattice_vector_shifts_the_solution_exactly() {
    // The shift is a dyadic rational, so shifted nodes are bit-identical
    // inputs and the whole march replays bit-identically.
    let h = 1.0 / 32.0;
    let shift = 3.0 * h;
    let geom1 = GridGeometry::new(vec![-1.0], vec![65], h).unwrap();
    let geom2 = GridGeometry::new(vec![-1.0 + shift], vec![65], h).unwrap();
    let forcing = |x: f64| 0.8 * (2.0 * x).cos();
    let data = |z: f64| 0.5 * z.sin();

    let f1: Vec<f64> = geom1.nodes().map(|(_, x)| forcing(x[0])).collect();
    let f2: Vec<f64> = geom2.nodes().map(|(_, x)| forcing(x[0] - shift)).collect();
    let g1 = ExteriorRule::bounded(move |z: &[f64]| data(z[0]), 1.0).unwrap();
    let g2 = ExteriorRule::bounded(move |z: &[f64]| data(z[0] - shift), 1.0).unwrap();

    let p1 = plus_problem(1.5, geom1, f1, g1);
    let p2 = plus_problem(1.5, geom2, f2, g2);
    let (u1, r1) = solve(&p1).unwrap();
    let (u2, r2) = solve(&p2).unwrap();
    assert!(r1.converged && r2.converged);
    assert_eq!(r1.iterations, r2.iterations);
    for (a, b) in u1.values.iter().zip(&u2.values) {
        assert_eq!(a.to_bits(), b.to_bits(), "{a} vs {b}");
    }
}

#[test]
fn solve_duality_swaps_the_extremal_sign() {
    let geom = GridGeometry::centered(2, 1.0, 17).unwrap();
    let class = ClassParams::new(2, 1.5, 1.0, 2.0).unwrap();
    let f: Vec<f64> = geom
        .nodes()
        .map(|(_, x)| (3.0 * x[0]).sin() * (2.0 * x[1]).cos())
        .collect();
    let g = |z: &[f64]| 0.3 * (z[0] + 0.5 * z[1]).tanh();
    let mk = |sign, forcing: Vec<f64>, ext: ExteriorRule| {
        let mut p = ProblemSpec::new(
            SolveOperator::Extremal {
                sign,
                class,
                symmetric: false,
            },
            geom.clone(),
            forcing,
            ext,
        )
        .unwrap();
        p.tol = 1e-9;
        p
    };
    let p_plus = mk(
        Sign::Plus,
        f.clone(),
        ExteriorRule::bounded(move |z: &[f64]| g(z), 1.0).unwrap(),
    );
    let p_minus = mk(
        Sign::Minus,
        f.iter().map(|v| -v).collect(),
        ExteriorRule::bounded(move |z: &[f64]| -g(z), 1.0).unwrap(),
    );
    let (u_plus, _) = solve(&p_plus).unwrap();
    let (u_minus, _) = solve(&p_minus).unwrap();
    for (a, b) in u_plus.values.iter().zip(&u_minus.values) {
        assert_eq!(a.to_bits(), (-b).to_bits(), "{a} vs {}", -b);
    }
    // And the converged iterate really solves its own problem.
    let check = residual(&u_plus, &p_plus).unwrap();
    assert!(check.max <= p_plus.tol * (1.0 + 1e-9));
}

#[test]
fn refinement_shrinks_the_solution_change() {
    // Halving h should change the solution less and less (empirical
    // order h^{min(sigma,1)}; only the monotone decrease is asserted).
    let sigma = 1.5;
    let mut sups = Vec::new();
    let mut prev: Option<GridFunction> = None;
    for nodes in [33usize, 65, 129] {
        let geom = GridGeometry::centered(1, 1.0, nodes).unwrap();
        let f = vec![-1.0; geom.len()];
        let class = ClassParams::new(1, sigma, 1.0, 2.0).unwrap();
        let mut p = ProblemSpec::new(
            SolveOperator::Extremal {
                sign: Sign::Plus,
                class,
                symmetric: true,
            },
            geom.clone(),
            f,
            ExteriorRule::Zero,
        )
        .unwrap();
        p.tol = 1e-9;
        let (u, rep) = solve(&p).unwrap();
        assert!(rep.converged);
        if let Some(coarse) = &prev {
            // Coarse nodes are a subset of fine nodes (same box, halved h).
            let d = coarse
                .geom
                .nodes()
                .map(|(i, x)| (coarse.values[i] - u.eval(&x)).abs())
                .fold(0.0f64, f64::max);
            sups.push(d);
        }
        prev = Some(u);
    }
    assert!(
        sups[1] < sups[0],
        "refinement change grew: {:?} (expected decay ~ h^{})",
        sups,
        sigma.min(1.0)
    );
}
