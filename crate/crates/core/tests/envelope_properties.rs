//! Cross-cutting properties of the concave envelope through the public
//! API: monotonicity across different data (and hence different slope
//! grids), idempotence on seeded instances, supergradient behavior on the
//! contact set, the gradient-ball containment of the cone argument, the
//! shell-to-half-ball deficit transfer, and dump roundtrips.

use nonlocal_core::envelope::{concave_envelope, contact_set, slope_image_contains};
use nonlocal_core::geom::norm;
use nonlocal_core::grid::{ExteriorRule, GridFunction, GridGeometry};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

#[test]
fn monotone_data_gives_monotone_envelopes() {
    let geom = GridGeometry::centered(2, 2.0, 49).unwrap();
    let radius = 1.0;
    let lower = GridFunction::from_fn(geom.clone(), ExteriorRule::Zero, |x| {
        let r2 = x[0] * x[0] + x[1] * x[1];
        0.5 * (1.0 - r2) - 0.1
    })
    .unwrap();
    let upper = GridFunction::from_fn(geom, ExteriorRule::Zero, |x| {
        let r2 = x[0] * x[0] + x[1] * x[1];
        0.8 * (1.0 - r2)
    })
    .unwrap();
    let env_lo = concave_envelope(lower, radius).unwrap();
    let env_hi = concave_envelope(upper, radius).unwrap();
    // Peaks differ, so the slope grids differ; each envelope sits within
    // O(spacing * extent) of the exact one, which is monotone.
    let slack =
        (env_lo.slope_spacing() + env_hi.slope_spacing()) * 2.0 * radius * 2f64.sqrt() + 1e-9;
    for (i, x) in env_lo.geometry().nodes() {
        if norm(&x) <= 2.0 * radius {
            assert!(
                env_lo.value(i) <= env_hi.value(i) + slack,
                "monotonicity violated at {x:?}: {} vs {}",
                env_lo.value(i),
                env_hi.value(i)
            );
        }
    }
}

fn seeded_instance(seed: u64, count: usize) -> GridFunction {
    // Smooth random data, nonnegative inside B_1 and zero outside it:
    // a quadratic window times a small random Fourier sum.
    let geom = GridGeometry::centered(2, 2.0, count).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.05..0.2),
            )
        })
        .collect();
    GridFunction::from_fn(geom, ExteriorRule::Zero, move |x| {
        let window = (1.0 - (x[0] * x[0] + x[1] * x[1])).max(0.0);
        let wiggle: f64 = modes
            .iter()
            .map(|&(k0, k1, phase, amp)| amp * (k0 * x[0] + k1 * x[1] + phase).cos())
            .sum();
        window * (0.5 + wiggle)
    })
    .unwrap()
}

#[test]
fn envelope_is_idempotent_on_seeded_data() {
    for seed in [11u64, 12, 13] {
        let u = seeded_instance(seed, 33);
        let env = concave_envelope(u, 1.0).unwrap();
        let env2 = env.re_envelope().unwrap();
        let tol = env.contact_tol().max(env2.contact_tol());
        for i in 0..env.values().len() {
            assert!(
                (env.value(i) - env2.value(i)).abs() <= tol,
                "seed {seed}: re-envelope moved node {i} by {}",
                (env.value(i) - env2.value(i)).abs()
            );
        }
    }
}

#[test]
fn contact_slopes_are_supergradients_of_the_data() {
    let u = seeded_instance(7, 33);
    let env = concave_envelope(u, 1.0).unwrap();
    let contact = contact_set(&env);
    assert!(!contact.is_empty());
    let geom = env.geometry();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0007);
    // Planes support the envelope on its domain B_2R; outside it the
    // envelope is defined as zero and domination is not claimed.
    let sample: Vec<usize> = std::iter::from_fn(|| Some(rng.gen_range(0..geom.len())))
        .filter(|&i| norm(&geom.node(i)) <= 2.0)
        .take(200)
        .collect();
    for node in contact.nodes.iter().take(25) {
        let px = env.value(node.flat);
        for &j in &sample {
            let y = geom.node(j);
            let plane = px
                + node
                    .slope
                    .iter()
                    .zip(y.iter().zip(&node.x))
                    .map(|(s, (a, b))| s * (a - b))
                    .sum::<f64>();
            let data = env.base().values[j].max(0.0);
            assert!(
                plane >= data - env.contact_tol() - 1e-9,
                "plane at contact {:?} dips below data at {y:?}",
                node.x
            );
        }
    }
}

#[test]
fn spike_slope_image_contains_the_gradient_ball() {
    // A spike of height M0 = 1 over B_R, R = 1, n = 2: the slope image
    // over the active region must contain the ball of radius
    // M0/(6 sqrt(n) R) around the origin; probed along 32 directions.
    let geom = GridGeometry::centered(2, 2.0, 65).unwrap();
    let h = geom.h;
    let u = GridFunction::from_fn(geom, ExteriorRule::Zero, |x| {
        if norm(x) < 0.5 * h { 1.0 } else { -0.02 }
    })
    .unwrap();
    let env = concave_envelope(u, 1.0).unwrap();
    let rho = 1.0 / (6.0 * 2.0f64.sqrt());
    for j in 0..32 {
        let theta = std::f64::consts::TAU * j as f64 / 32.0;
        let q = [0.999 * rho * theta.cos(), 0.999 * rho * theta.sin()];
        assert!(
            slope_image_contains(&env, 2.0, &q),
            "direction {j}: {q:?} escapes the slope image"
        );
    }
}

#[test]
fn shell_deficit_quantile_controls_the_half_ball() {
    // Concavity transfer: let h be the (1 - eps)-quantile of the plane
    // deficits on the shell S_r(x) = B_r(x) \ B_{r/2}(x); then the
    // supporting plane minus h stays below the envelope on all of
    // B_{r/2}(x).
    let eps = 0.05;
    let radius = 1.0;
    let r = 0.5 * radius;
    let mut checked = 0usize;
    for (label, u) in [
        (
            "dome",
            GridFunction::from_fn(
                GridGeometry::centered(2, 2.0, 65).unwrap(),
                ExteriorRule::Zero,
                |x| 0.6 * (1.0 - (x[0] * x[0] + x[1] * x[1])),
            )
            .unwrap(),
        ),
        ("seeded-21", seeded_instance(21, 49)),
        ("seeded-22", seeded_instance(22, 49)),
    ] {
        let env = concave_envelope(u, radius).unwrap();
        let contact = contact_set(&env);
        let geom = env.geometry();
        for node in contact
            .nodes
            .iter()
            .filter(|c| norm(&c.x) <= 0.5 * radius)
            .take(3)
        {
            let plane = |y: &[f64]| {
                env.value(node.flat)
                    + node
                        .slope
                        .iter()
                        .zip(y.iter().zip(&node.x))
                        .map(|(s, (a, b))| s * (a - b))
                        .sum::<f64>()
            };
            let mut deficits = Vec::new();
            let mut half_ball = Vec::new();
            for (i, y) in geom.nodes() {
                let d: f64 = norm(&y
                    .iter()
                    .zip(&node.x)
                    .map(|(a, b)| a - b)
                    .collect::<Vec<f64>>());
                if d >= 0.5 * r && d <= r {
                    deficits.push(plane(&y) - env.value(i));
                } else if d < 0.5 * r {
                    half_ball.push((i, y));
                }
            }
            assert!(deficits.len() > 50, "{label}: shell too sparse");
            deficits.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let idx = (((1.0 - eps) * (deficits.len() - 1) as f64).ceil()) as usize;
            let h = deficits[idx].max(0.0);
            for (i, y) in half_ball {
                assert!(
                    env.value(i) >= plane(&y) - h - env.contact_tol() - 1e-9,
                    "{label}: half-ball inequality fails at {y:?} (deficit {}, h {h})",
                    plane(&y) - env.value(i)
                );
            }
            checked += 1;
        }
    }
    assert!(checked >= 3, "too few contact points exercised");
}

#[test]
fn envelope_dump_roundtrips_through_grid_files() {
    let u = seeded_instance(31, 33);
    let env = concave_envelope(u, 1.0).unwrap();
    let gf = env.to_grid_function().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("envelope.bin");
    gf.write_dump(&path).unwrap();
    let back = GridFunction::read_dump(&path).unwrap();
    assert_eq!(gf.values, back.values);
    assert_eq!(gf.geom.counts, back.geom.counts);
}
