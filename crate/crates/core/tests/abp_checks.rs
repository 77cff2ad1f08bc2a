//! End-to-end checks of the ring estimates, the cube decomposition
//! recursion (including the flagged partial-decomposition path), JSON
//! export, and the coherence of the sup-bound report fields.

use nonlocal_core::abp::{
    abp_sup_bound_check, cube_decomposition, ring_measure_estimate, AbpConfig, Variant,
};
use nonlocal_core::envelope::{concave_envelope, contact_set, ConcaveEnvelope, ContactSet};
use nonlocal_core::geom::norm;
use nonlocal_core::grid::{ExteriorRule, GridFunction, GridGeometry};

#[test]
fn planar_dome_passes_the_first_ring() {
    // Smooth concave data in n = 2: mu^- = A |y|^2 stays below the
    // threshold 2A r^2 on every ring, so k = 0 passes with fraction zero.
    // sigma = 0.5 keeps the top ring wide enough for a 513^2 grid.
    let geom = GridGeometry::centered(2, 2.0, 513).unwrap();
    let u = GridFunction::from_fn(geom, ExteriorRule::Zero, |x| {
        0.6 * (1.0 - (x[0] * x[0] + x[1] * x[1]))
    })
    .unwrap();
    let env = concave_envelope(u, 1.0).unwrap();
    let center = env.geometry().nearest_node(&[0.0, 0.0]);
    let cfg = AbpConfig::default();
    let est = ring_measure_estimate(&env, center, 0.1, 1.2, 0.5, &cfg).unwrap();
    assert_eq!(est.k, 0);
    assert_eq!(est.fraction, 0.0);
    assert_eq!(est.gradient_norm, 0.0);
    assert!(est.node_count >= cfg.min_ring_nodes);
    // J_{1/2}(1) = 0, so the bound is C (f/M) exactly, for both variants.
    let expect = 10.0 * 0.1 / 1.2;
    approx::assert_relative_eq!(est.bound, expect, epsilon = 1e-13);
    approx::assert_relative_eq!(est.bound_eta, expect, epsilon = 1e-13);
    let est2 = ring_measure_estimate(&env, center, 0.1, 2.4, 0.5, &cfg).unwrap();
    approx::assert_relative_eq!(est2.bound, 0.5 * est.bound, epsilon = 1e-15);
}

fn spike_instance(count: usize, low: f64) -> (ConcaveEnvelope, ContactSet) {
    let geom = GridGeometry::centered(2, 2.0, count).unwrap();
    let h = geom.h;
    let u = GridFunction::from_fn(geom, ExteriorRule::Zero, move |x| {
        if norm(x) < 0.5 * h { 1.0 } else { low }
    })
    .unwrap();
    let env = concave_envelope(u, 1.0).unwrap();
    let contact = contact_set(&env);
    (env, contact)
}

#[test]
fn stubborn_cube_is_flagged_and_reported_partial() {
    // With f = 0 and R = 1 (so J_sigma(R) = 0) the integral condition (e)
    // has zero right side but positive curvature mass at the spike: no
    // refinement can satisfy it, so the recursion must stop at max_depth
    // with flagged cubes rather than fail.
    let (env, contact) = spike_instance(33, -0.05);
    let f = |_: &[f64]| 0.0;
    let cfg = AbpConfig {
        max_depth: 3,
        ..AbpConfig::default()
    };
    let dec = cube_decomposition(&env, &contact, &f, 1.5, Variant::Full, &cfg).unwrap();
    assert!(dec.aborted);
    assert!(!dec.cubes.is_empty());
    assert!(dec.splits > 0);
    for cube in &dec.cubes {
        assert!(cube.flagged);
        assert_eq!(cube.depth, 3);
        assert!(cube.condition_e_margin < 0.0);
        assert!(cube.diameter <= dec.base_diameter * (1.0 + 1e-12));
        // The offending curvature sits at the spike: every flagged cube
        // keeps the origin in its closure.
        let half = 0.5 * cube.side() + 1e-12;
        assert!(cube.center.iter().all(|&c| c.abs() <= half));
    }
    // Same-depth survivors tile distinct corners: pairwise disjoint.
    for i in 0..dec.cubes.len() {
        for j in i + 1..dec.cubes.len() {
            let (a, b) = (&dec.cubes[i], &dec.cubes[j]);
            let gap = a
                .center
                .iter()
                .zip(&b.center)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max);
            assert!(gap >= 0.5 * (a.side() + b.side()) - 1e-12);
        }
    }
}

#[test]
fn decomposition_exports_as_json() {
    let (env, contact) = spike_instance(33, -0.05);
    let f = |_: &[f64]| 50.0;
    let dec =
        cube_decomposition(&env, &contact, &f, 1.5, Variant::Full, &AbpConfig::default())
            .unwrap();
    let value = serde_json::to_value(&dec).unwrap();
    assert_eq!(
        value["cubes"].as_array().unwrap().len(),
        dec.cubes.len()
    );
    assert_eq!(value["variant"], "full");
    assert_eq!(value["max_depth"], 12);
    let first = &value["cubes"][0];
    assert!(first["center"].is_array());
    assert!(first["diameter"].is_number());
    assert_eq!(first["flagged"], false);
    // Text form parses back as a tree.
    let text = serde_json::to_string_pretty(&dec).unwrap();
    let reparsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(reparsed, value);
}

#[test]
fn sup_bound_report_fields_cohere() {
    let (env, contact) = spike_instance(33, -0.05);
    let f = |_: &[f64]| 50.0;
    let cfg = AbpConfig::default();
    let dec = cube_decomposition(&env, &contact, &f, 1.5, Variant::Full, &cfg).unwrap();
    let report = abp_sup_bound_check(&env, &dec, &f, &cfg).unwrap();
    assert_eq!(report.cube_count, dec.cubes.len());
    approx::assert_relative_eq!(
        report.rhs,
        cfg.c * env.radius() * report.xi_aggregate,
        epsilon = 1e-14
    );
    approx::assert_relative_eq!(
        report.xi_aggregate * report.xi_aggregate,
        report.sum_term,
        epsilon = 1e-12
    );
    let h = env.geometry().h;
    let expected_measure: f64 = dec
        .cubes
        .iter()
        .map(|c| c.contact_count as f64 * h * h)
        .sum();
    approx::assert_relative_eq!(report.contact_measure, expected_measure, epsilon = 1e-14);
    assert_eq!(report.sup_v, 1.0);
    assert_eq!(report.bound_holds, report.sup_v <= report.rhs);
    assert!(report.bound_holds);
}
