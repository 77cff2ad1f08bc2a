//! Measure-theoretic diagnostics on concave envelopes: dyadic ring
//! estimates at contact points, the tiling-split-discard cube
//! decomposition of the contact set, and a discrete
//! Aleksandrov-Bakelman-Pucci style sup bound assembled from the retained
//! cubes.
//!
//! All constants here (C, xi0, the ring fraction eps, the g_xi parameter)
//! are configuration values with conventional defaults. They are reported
//! and compared, never asserted to be the sharp constants of the
//! continuum statements, which are existential.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envelope::{ConcaveEnvelope, ContactSet};
use crate::error::{Error, Result};
use crate::geom::norm;

/// Base scale of the cube tiling: rho0 = 1/(16 sqrt(n)).
pub fn rho0(dim: usize) -> f64 {
    1.0 / (16.0 * (dim as f64).sqrt())
}

/// Truncation-cost factor J_sigma(R) = (1 - R^{1-sigma})/(1 - sigma),
/// extended by continuity to -ln R at sigma = 1. Cancellation-free via
/// expm1, so the sigma -> 1 limit is smooth.
pub fn j_sigma(sigma: f64, radius: f64) -> f64 {
    let a = 1.0 - sigma;
    if a == 0.0 {
        -radius.ln()
    } else {
        -f64::exp_m1(a * radius.ln()) / a
    }
}

/// Gradient weight g_xi(z) = (|z|^{n/(n-1)} + xi^{n/(n-1)})^{1-n}; its
/// n -> 1 limit is 1/max(|z|, xi).
pub fn g_weight(slope_norm: f64, xi: f64, dim: usize) -> f64 {
    if dim == 1 {
        1.0 / slope_norm.abs().max(xi)
    } else {
        let m = dim as f64 / (dim as f64 - 1.0);
        (slope_norm.abs().powf(m) + xi.powf(m)).powf(1.0 - dim as f64)
    }
}

/// Product of the negative parts of the eigenvalues of a symmetric matrix
/// (row-major, dimensions 1 to 3): det [A]^- in the sense of the
/// decomposition A = A^+ - A^-.
pub fn neg_part_det(hess: &[f64], dim: usize) -> f64 {
    match dim {
        1 => (-hess[0]).max(0.0),
        2 => {
            let (a, b, d) = (hess[0], hess[1], hess[3]);
            let mean = 0.5 * (a + d);
            let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            (-(mean + disc)).max(0.0) * (-(mean - disc)).max(0.0)
        }
        3 => {
            let eigs = sym3_eigenvalues(hess);
            eigs.iter().map(|&l| (-l).max(0.0)).product()
        }
        _ => panic!("neg_part_det supports dimensions 1 to 3"),
    }
}

/// Eigenvalues of a symmetric 3x3 matrix by the trigonometric method.
fn sym3_eigenvalues(a: &[f64]) -> [f64; 3] {
    let p1 = a[1] * a[1] + a[2] * a[2] + a[5] * a[5];
    let tr = a[0] + a[4] + a[8];
    if p1 == 0.0 {
        return [a[0], a[4], a[8]];
    }
    let q = tr / 3.0;
    let p2 = (a[0] - q).powi(2) + (a[4] - q).powi(2) + (a[8] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let det_b = {
        let b: Vec<f64> = (0..9)
            .map(|i| (a[i] - if i % 4 == 0 { q } else { 0.0 }) / p)
            .collect();
        b[0] * (b[4] * b[8] - b[5] * b[7]) - b[1] * (b[3] * b[8] - b[5] * b[6])
            + b[2] * (b[3] * b[7] - b[4] * b[6])
    };
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3 * 2.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    [e1, e2, e3]
}

/// Constants and guards for the ring and cube machinery. `c`, `xi0` and
/// `eps` play the roles of the universal constants in the measure
/// estimates; `xi` is the free g_xi parameter used while testing the
/// integral condition (e); `eps0` is the forcing slack of the sup bound.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AbpConfig {
    pub c: f64,
    pub xi0: f64,
    pub eps: f64,
    pub xi: f64,
    pub eps0: f64,
    pub max_depth: usize,
    pub min_ring_nodes: usize,
    pub max_ring_index: usize,
    pub increment_cutoff: f64,
    pub max_tiles_per_axis: usize,
}

impl Default for AbpConfig {
    fn default() -> Self {
        AbpConfig {
            c: 10.0,
            xi0: 0.1,
            eps: 0.05,
            xi: 1.0,
            eps0: 0.0,
            max_depth: 12,
            min_ring_nodes: 4,
            max_ring_index: 48,
            increment_cutoff: 1.0,
            max_tiles_per_axis: 1024,
        }
    }
}

impl AbpConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::config("abp constant c must be positive"));
        }
        if !(self.xi0 > 0.0 && self.xi0 <= 1.0) {
            return Err(Error::config("xi0 must lie in (0, 1]"));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::config("eps must lie in (0, 1)"));
        }
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return Err(Error::config("xi must be positive"));
        }
        if !(self.eps0 >= 0.0 && self.eps0.is_finite()) {
            return Err(Error::config("eps0 must be nonnegative"));
        }
        if self.max_depth == 0 || self.min_ring_nodes == 0 || self.max_ring_index == 0 {
            return Err(Error::config("depth and ring guards must be positive"));
        }
        if !(self.increment_cutoff > 0.0 && self.increment_cutoff.is_finite()) {
            return Err(Error::config("increment cutoff must be positive"));
        }
        if self.max_tiles_per_axis < 2 {
            return Err(Error::config("tile cap must be at least 2"));
        }
        Ok(())
    }
}

/// Which truncation factor the measure conditions use: the full variant
/// carries J_sigma(R), the eta variant (drift-classified contact) carries
/// R^{1-sigma}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    Eta,
}

fn truncation_factor(variant: Variant, sigma: f64, radius: f64) -> f64 {
    match variant {
        Variant::Full => j_sigma(sigma, radius),
        Variant::Eta => radius.powf(1.0 - sigma),
    }
}

// ---------------------------------------------------------------------------
// Ring measure estimates
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct RingRow {
    pub k: usize,
    pub r_outer: f64,
    pub node_count: usize,
    /// Fraction of ring nodes where mu^- >= M r_k^2.
    pub fraction: f64,
    pub bound: f64,
    pub bound_eta: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RingEstimate {
    /// First ring index satisfying the fraction bound.
    pub k: usize,
    pub fraction: f64,
    pub bound: f64,
    pub bound_eta: f64,
    pub r_outer: f64,
    pub node_count: usize,
    pub gradient_norm: f64,
    pub rows: Vec<RingRow>,
}

/// Measures, ring by ring, how much of R_k = B_{r_k} \ B_{r_k/2} around a
/// contact point violates the second-order drop mu^-(u, x, y; slope) <
/// M r_k^2, with r_k = rho0 2^{-1/(2-sigma)-k} R. Returns at the first k
/// whose measured node fraction is within C R^{sigma-2} (f(x) +
/// T |slope|)/M, where T is J_sigma(R) for the reported bound and
/// R^{1-sigma} for the eta-variant bound. Fails when the rings run out of
/// grid nodes before any index passes.
pub fn ring_measure_estimate(
    env: &ConcaveEnvelope,
    x_flat: usize,
    f_value: f64,
    m_threshold: f64,
    sigma: f64,
    cfg: &AbpConfig,
) -> Result<RingEstimate> {
    cfg.check()?;
    if !(sigma > 0.0 && sigma < 2.0) {
        return Err(Error::domain(format!("sigma must lie in (0, 2), got {sigma}")));
    }
    if !(m_threshold > 0.0 && m_threshold.is_finite()) {
        return Err(Error::domain("threshold M must be positive"));
    }
    if !(f_value >= 0.0 && f_value.is_finite()) {
        return Err(Error::domain("forcing value must be nonnegative"));
    }
    let geom = env.geometry();
    let n = geom.dim();
    let base = env.base();
    let gap = env.value(x_flat) - base.values[x_flat];
    if gap > env.contact_tol() {
        return Err(Error::domain(format!(
            "node {x_flat} is not in contact (gap {gap:.3e} exceeds tol {:.3e})",
            env.contact_tol()
        )));
    }
    let x = geom.node(x_flat);
    if norm(&x) > env.radius() * (1.0 + 1e-12) {
        return Err(Error::domain("contact point must lie in the inner ball"));
    }

    let radius = env.radius();
    let g = env.slope(x_flat).to_vec();
    let gn = norm(&g);
    let jt = j_sigma(sigma, radius);
    let jt_eta = radius.powf(1.0 - sigma);
    let scale = cfg.c * radius.powf(sigma - 2.0) / m_threshold;
    let bound = scale * (f_value + jt * gn);
    let bound_eta = scale * (f_value + jt_eta * gn);

    let x_multi: Vec<i64> = geom.multi(x_flat).iter().map(|&m| m as i64).collect();
    let ux = base.values[x_flat];
    let h = geom.h;
    let r_top = rho0(n) * 2.0f64.powf(-1.0 / (2.0 - sigma)) * radius;

    let mut rows = Vec::new();
    for k in 0..=cfg.max_ring_index {
        let r_out = r_top * 2.0f64.powi(-(k as i32));
        let r_in = 0.5 * r_out;
        let reach = (r_out / h).ceil() as i64;
        let mut count = 0usize;
        let mut exceed = 0usize;
        let mut offset = vec![-reach; n];
        'odometer: loop {
            let y: Vec<f64> = offset.iter().map(|&m| m as f64 * h).collect();
            let r = norm(&y);
            if r >= r_in && r < r_out {
                count += 1;
                let shifted: Vec<i64> =
                    x_multi.iter().zip(&offset).map(|(a, b)| a + b).collect();
                let uy = base.lattice_value(&shifted);
                let grad_term = if r < cfg.increment_cutoff {
                    g.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>()
                } else {
                    0.0
                };
                let mu = uy - ux - grad_term;
                if (-mu).max(0.0) >= m_threshold * r_out * r_out {
                    exceed += 1;
                }
            }
            for a in (0..n).rev() {
                offset[a] += 1;
                if offset[a] <= reach {
                    continue 'odometer;
                }
                offset[a] = -reach;
            }
            break;
        }
        if count < cfg.min_ring_nodes {
            let finest = if k == 0 {
                "none".to_string()
            } else {
                format!("{}", k - 1)
            };
            return Err(Error::Resolution(format!(
                "no ring satisfied the measure bound before running out of nodes; \
                 finest usable ring k = {finest} (ring {k} holds only {count} nodes, \
                 need {})",
                cfg.min_ring_nodes
            )));
        }
        let fraction = exceed as f64 / count as f64;
        rows.push(RingRow {
            k,
            r_outer: r_out,
            node_count: count,
            fraction,
            bound,
            bound_eta,
        });
        if fraction <= bound {
            return Ok(RingEstimate {
                k,
                fraction,
                bound,
                bound_eta,
                r_outer: r_out,
                node_count: count,
                gradient_norm: gn,
                rows,
            });
        }
    }
    Err(Error::Resolution(format!(
        "no ring satisfied the measure bound up to index {}",
        cfg.max_ring_index
    )))
}

// ---------------------------------------------------------------------------
// Cube decomposition
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct Cube {
    pub center: Vec<f64>,
    pub diameter: f64,
    pub depth: usize,
    pub intersects_contact: bool,
    /// rhs - lhs of the integral condition (e); nonnegative when it holds.
    pub condition_e_margin: f64,
    /// Measured/required ratio of the measure condition (f); at least one
    /// when it holds.
    pub condition_f_fraction: f64,
    /// Contact nodes inside the closed cube (|Q*| = count * h^n).
    pub contact_count: usize,
    /// Set when the cube reached max_depth with (e) or (f) still failing.
    pub flagged: bool,
}

impl Cube {
    pub fn side(&self) -> f64 {
        self.diameter / (self.center.len() as f64).sqrt()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CubeDecomposition {
    pub cubes: Vec<Cube>,
    pub rho0: f64,
    pub max_depth: usize,
    /// True when some cube hit max_depth without satisfying (e) and (f);
    /// the result is then a partial decomposition.
    pub aborted: bool,
    pub variant: Variant,
    pub sigma: f64,
    pub radius: f64,
    pub xi: f64,
    /// Diameter of the level-0 tiles, rho0 2^{-1/(2-sigma)} R.
    pub base_diameter: f64,
    pub discarded: usize,
    pub splits: usize,
}

enum Step {
    Discard,
    Keep(Cube),
    Split,
}

/// Tiling-split-discard decomposition of B_R. Level 0 tiles have diameter
/// rho0 2^{-1/(2-sigma)} R; cubes whose closure misses the contact set are
/// discarded, cubes satisfying the integral condition (e) and the measure
/// condition (f) are retained, and the rest split into 2^n children until
/// max_depth, where stragglers are retained with a flag. The eta variant
/// restricts the contact set to nodes tagged eta_plus and replaces
/// J_sigma(R) by R^{1-sigma} in both conditions.
pub fn cube_decomposition(
    env: &ConcaveEnvelope,
    contact: &ContactSet,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    sigma: f64,
    variant: Variant,
    cfg: &AbpConfig,
) -> Result<CubeDecomposition> {
    cfg.check()?;
    if !(sigma > 0.0 && sigma < 2.0) {
        return Err(Error::domain(format!("sigma must lie in (0, 2), got {sigma}")));
    }
    let geom = env.geometry().clone();
    let n = geom.dim();
    if n > 3 {
        return Err(Error::domain("cube decompositions support dimensions 1 to 3"));
    }
    let radius = env.radius();
    let contact_pts: Vec<Vec<f64>> = match variant {
        Variant::Full => contact.nodes.iter().map(|c| c.x.clone()).collect(),
        Variant::Eta => {
            if !contact.is_empty() && contact.nodes.iter().all(|c| c.eta_plus.is_none()) {
                return Err(Error::domain(
                    "eta variant needs a drift-classified contact set (see contact_set_with_drift)",
                ));
            }
            contact
                .nodes
                .iter()
                .filter(|c| c.eta_plus == Some(true))
                .map(|c| c.x.clone())
                .collect()
        }
    };

    let base_diameter = rho0(n) * 2.0f64.powf(-1.0 / (2.0 - sigma)) * radius;
    let side0 = base_diameter / (n as f64).sqrt();
    let per_axis = (2.0 * radius / side0).ceil() as usize + 1;
    if per_axis > cfg.max_tiles_per_axis {
        return Err(Error::Resolution(format!(
            "initial tiling would need {per_axis} cubes per axis (cap {}); \
             this sigma = {sigma} makes the base tiles too small",
            cfg.max_tiles_per_axis
        )));
    }

    // Level-0 tiles: boxes [k s0, (k+1) s0)^n whose closure meets B_R.
    let k_hi = (radius / side0).ceil() as i64;
    let mut frontier: Vec<(Vec<f64>, f64, usize)> = Vec::new();
    let mut idx = vec![-k_hi - 1i64; n];
    'tiles: loop {
        let center: Vec<f64> = idx.iter().map(|&k| (k as f64 + 0.5) * side0).collect();
        let half = 0.5 * side0;
        let nearest_sq: f64 = center
            .iter()
            .map(|&c| {
                let clamped = 0.0f64.clamp(c - half, c + half);
                clamped * clamped
            })
            .sum();
        if nearest_sq <= radius * radius * (1.0 + 1e-12) {
            frontier.push((center, side0, 0));
        }
        for a in (0..n).rev() {
            idx[a] += 1;
            if idx[a] <= k_hi {
                continue 'tiles;
            }
            idx[a] = -k_hi - 1;
        }
        break 'tiles;
    }

    let gamma = env.to_grid_function()?;
    let jt = truncation_factor(variant, sigma, radius);
    let pos_tol = 1e-12 * (1.0 + radius);
    let h = geom.h;
    let hn = h.powi(n as i32);
    let nf = n as f64;
    let xi = cfg.xi;
    let dilation = 4.0 * nf.sqrt();

    let evaluate = |center: &[f64], side: f64, depth: usize| -> Step {
        let half = 0.5 * side;
        let c_count = contact_pts
            .iter()
            .filter(|x| {
                x.iter()
                    .zip(center)
                    .all(|(a, c)| (a - c).abs() <= half + pos_tol)
            })
            .count();
        if c_count == 0 {
            return Step::Discard;
        }

        // Integral condition (e): sum of g_xi(slope) det[D2 Gamma]^- over
        // the closure nodes against C R^{n(sigma-2)} sup(T^n + xi^{-n} f^n)
        // times the contact measure.
        let mut lhs = 0.0f64;
        let mut sup_e = f64::NEG_INFINITY;
        let mut sup_f = f64::NEG_INFINITY;
        for flat in nodes_in_box(&geom, center, half + pos_tol) {
            let xnode = geom.node(flat);
            let slope_norm = norm(env.slope(flat));
            let fx = f(&xnode).abs();
            sup_e = sup_e.max(jt.powf(nf) + xi.powf(-nf) * fx.powf(nf));
            sup_f = sup_f.max(fx + jt * slope_norm);
            if geom.margin_cells(flat) >= 1 {
                if let Ok(hess) = gamma.hessian(flat, 1) {
                    lhs += g_weight(slope_norm, xi, n) * neg_part_det(&hess, n) * hn;
                }
            }
        }
        if !sup_e.is_finite() {
            // Closure held contact points but no grid node: treat sups as
            // the values at the nearest node so the conditions stay
            // meaningful on sub-grid cubes.
            let flat = geom.nearest_node(center);
            let xnode = geom.node(flat);
            let slope_norm = norm(env.slope(flat));
            let fx = f(&xnode).abs();
            sup_e = jt.powf(nf) + xi.powf(-nf) * fx.powf(nf);
            sup_f = fx + jt * slope_norm;
        }
        let q_star = c_count as f64 * hn;
        let rhs_e = cfg.c * radius.powf(nf * (sigma - 2.0)) * sup_e * q_star;
        let margin_e = rhs_e - lhs;
        let ok_e = lhs <= rhs_e + 1e-12 * rhs_e.abs();

        // Measure condition (f): nodes of the 4 sqrt(n)-dilated cube where
        // the data sits within tau of the envelope.
        let diam = side * nf.sqrt();
        let tau = cfg.c * radius.powf(sigma - 2.0) * sup_f * diam * diam;
        let mut close = 0usize;
        for flat in nodes_in_box(&geom, center, 0.5 * dilation * side + pos_tol) {
            if env.base().values[flat] >= env.value(flat) - tau - 1e-14 {
                close += 1;
            }
        }
        let measured = close as f64 * hn;
        let required = cfg.xi0 * side.powi(n as i32);
        let fraction_f = measured / required;
        let ok_f = measured >= required * (1.0 - 1e-12);

        if ok_e && ok_f {
            Step::Keep(Cube {
                center: center.to_vec(),
                diameter: diam,
                depth,
                intersects_contact: true,
                condition_e_margin: margin_e,
                condition_f_fraction: fraction_f,
                contact_count: c_count,
                flagged: false,
            })
        } else if depth < cfg.max_depth {
            Step::Split
        } else {
            Step::Keep(Cube {
                center: center.to_vec(),
                diameter: diam,
                depth,
                intersects_contact: true,
                condition_e_margin: margin_e,
                condition_f_fraction: fraction_f,
                contact_count: c_count,
                flagged: true,
            })
        }
    };

    let mut cubes = Vec::new();
    let mut discarded = 0usize;
    let mut splits = 0usize;
    let mut aborted = false;
    while !frontier.is_empty() {
        let steps: Vec<Step> = frontier
            .par_iter()
            .map(|(c, s, d)| evaluate(c, *s, *d))
            .collect();
        let mut next = Vec::new();
        for ((center, side, depth), step) in frontier.into_iter().zip(steps) {
            match step {
                Step::Discard => discarded += 1,
                Step::Keep(cube) => {
                    aborted |= cube.flagged;
                    cubes.push(cube);
                }
                Step::Split => {
                    splits += 1;
                    let quarter = 0.25 * side;
                    for mask in 0..(1usize << n) {
                        let child: Vec<f64> = (0..n)
                            .map(|a| {
                                center[a] + if mask >> a & 1 == 1 { quarter } else { -quarter }
                            })
                            .collect();
                        next.push((child, 0.5 * side, depth + 1));
                    }
                }
            }
        }
        frontier = next;
    }

    Ok(CubeDecomposition {
        cubes,
        rho0: rho0(n),
        max_depth: cfg.max_depth,
        aborted,
        variant,
        sigma,
        radius,
        xi,
        base_diameter,
        discarded,
        splits,
    })
}

/// Flat indices of the grid nodes inside the closed box of the given
/// half-extent around a center.
fn nodes_in_box(geom: &crate::grid::GridGeometry, center: &[f64], half: f64) -> Vec<usize> {
    let n = geom.dim();
    let mut ranges = Vec::with_capacity(n);
    for a in 0..n {
        let lo = ((center[a] - half - geom.lo[a]) / geom.h).ceil().max(0.0) as usize;
        let hi_f = ((center[a] + half - geom.lo[a]) / geom.h).floor();
        if hi_f < lo as f64 {
            return Vec::new();
        }
        let hi = (hi_f as usize).min(geom.counts[a] - 1);
        if lo > hi {
            return Vec::new();
        }
        ranges.push((lo, hi));
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
    'fill: loop {
        out.push(geom.flat(&idx));
        for a in (0..n).rev() {
            idx[a] += 1;
            if idx[a] <= ranges[a].1 {
                continue 'fill;
            }
            idx[a] = ranges[a].0;
        }
        break;
    }
    out
}

// ---------------------------------------------------------------------------
// Sup bound report
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct AbpReport {
    /// sup of the positive part of the data over the B_R nodes.
    pub sup_v: f64,
    /// C R (sum_j sup_{Q_j}((f + eps0)/R^2)^n |Q*_j|)^{1/n}.
    pub rhs: f64,
    /// sup_v / rhs; zero when both sides vanish.
    pub ratio: f64,
    /// The aggregate (sum ...)^{1/n}, the paper-style choice of xi.
    pub xi_aggregate: f64,
    pub sum_term: f64,
    pub cube_count: usize,
    /// Total contact measure sum |Q*_j| over retained cubes.
    pub contact_measure: f64,
    pub bound_holds: bool,
}

/// Evaluates both sides of the discrete ABP-style inequality
/// sup v <= C R (sum_j sup((f + eps0)/R^2)^n |Q*_j|)^{1/n} on a computed
/// decomposition. Report-only: the ratio is an empirical surrogate for the
/// constant, never asserted.
pub fn abp_sup_bound_check(
    env: &ConcaveEnvelope,
    decomp: &CubeDecomposition,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    cfg: &AbpConfig,
) -> Result<AbpReport> {
    cfg.check()?;
    if (decomp.radius - env.radius()).abs() > 1e-12 * env.radius() {
        return Err(Error::domain(
            "decomposition and envelope were built for different radii",
        ));
    }
    let geom = env.geometry();
    let n = geom.dim();
    let nf = n as f64;
    let radius = env.radius();
    let h = geom.h;
    let hn = h.powi(n as i32);
    let ball = radius * (1.0 + 1e-12);
    let mut sup_v = 0.0f64;
    for (i, x) in geom.nodes() {
        if norm(&x) <= ball {
            sup_v = sup_v.max(env.base().values[i]);
        }
    }

    let terms: Vec<(f64, f64)> = decomp
        .cubes
        .par_iter()
        .map(|cube| {
            let half = 0.5 * cube.side() + 1e-12 * (1.0 + radius);
            let mut sup = f64::NEG_INFINITY;
            for flat in nodes_in_box(geom, &cube.center, half) {
                sup = sup.max(f(&geom.node(flat)).abs() + cfg.eps0);
            }
            if !sup.is_finite() {
                sup = f(&geom.node(geom.nearest_node(&cube.center))).abs() + cfg.eps0;
            }
            let q_star = cube.contact_count as f64 * hn;
            ((sup / (radius * radius)).powf(nf) * q_star, q_star)
        })
        .collect();
    let sum_term: f64 = terms.iter().map(|t| t.0).sum();
    let contact_measure: f64 = terms.iter().map(|t| t.1).sum();
    let xi_aggregate = sum_term.powf(1.0 / nf);
    let rhs = cfg.c * radius * xi_aggregate;
    let ratio = if rhs > 0.0 {
        sup_v / rhs
    } else if sup_v == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(AbpReport {
        sup_v,
        rhs,
        ratio,
        xi_aggregate,
        sum_term,
        cube_count: decomp.cubes.len(),
        contact_measure,
        bound_holds: sup_v <= rhs || sup_v == 0.0,
    })
}
