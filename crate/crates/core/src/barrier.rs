//! Radial subsolution barriers and certified annulus margins.
//!
//! Two closed-form families: a capped inverse power min((delta R)^{-p}, |x|^{-p}),
//! effective when the order sigma sits above an empirical threshold, and a
//! stretched exponential exp(-p |x|^{sigma/4}) for orders at or below 1. A
//! third shape glues a downward paraboloid onto either family inside radius
//! R/4 with C^{1,1} contact, subtracts the value at 2 sqrt(n) R, and clamps
//! to zero beyond, producing a bounded bump that dominates 2 on the
//! concentric cube of side 3R. A certificate records the minimal extremal
//! value of the minimal operator over log-spaced radii of an annulus along
//! with the worst certified quadrature error; `pass` holds exactly when the
//! margin clears that error budget.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{ClassParams, Sign};
use crate::radial::{extremal_radial, ProfilePiece, RadialProfile, RadialQuadConfig};

/// Barrier family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BarrierKind {
    /// min((delta R)^{-p}, |x|^{-p})
    Power,
    /// exp(-p |x|^{sigma/4})
    Exponential,
    /// Paraboloid-capped, far-clamped bump built on one of the other two.
    PsiCapped,
}

/// A radial barrier with its closed-form profile. Values and gradients come
/// from the piecewise profile, so they stay exactly consistent with what the
/// extremal evaluator integrates.
#[derive(Debug, Clone, Serialize)]
pub struct BarrierFunction {
    pub kind: BarrierKind,
    /// Power exponent or exponential rate.
    pub p: f64,
    /// Plateau fraction of the power family (plateau radius delta R).
    pub delta: Option<f64>,
    /// Overall scale of the capped bump.
    pub amplitude: Option<f64>,
    /// Reference radius R of the cap geometry.
    pub radius: Option<f64>,
    pub sigma: f64,
    profile: RadialProfile,
}

impl BarrierFunction {
    /// Value at a point.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_radial(norm(x))
    }

    /// Value at radius z >= 0.
    pub fn eval_radial(&self, z: f64) -> f64 {
        self.profile.eval(z.max(0.0))
    }

    /// Gradient at a point: F'(|x|) x/|x|, zero at the origin and wherever
    /// the profile is flat.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let s = norm(x);
        if s == 0.0 {
            return vec![0.0; x.len()];
        }
        let g = self.profile.deriv(s) / s;
        x.iter().map(|&xi| g * xi).collect()
    }

    /// The underlying radial profile.
    pub fn profile(&self) -> &RadialProfile {
        &self.profile
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Capped inverse power min((delta R)^{-p}, |x|^{-p}).
pub fn make_power_barrier(p: f64, delta: f64, radius: f64, sigma: f64) -> Result<BarrierFunction> {
    if !(p > 0.0 && p <= 128.0) {
        return Err(Error::domain(format!("power exponent out of (0, 128]: {p}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("plateau fraction out of (0, 1): {delta}")));
    }
    if !(radius > 0.0 && radius <= 1.0) {
        return Err(Error::domain(format!("reference radius out of (0, 1]: {radius}")));
    }
    if !(sigma > 0.0 && sigma < 2.0) {
        return Err(Error::domain(format!("order out of (0, 2): {sigma}")));
    }
    let edge = delta * radius;
    let cap = edge.powf(-p);
    let profile = RadialProfile::new(
        vec![
            ProfilePiece::Constant { value: cap },
            ProfilePiece::Power { coef: 1.0, p, offset: 0.0 },
        ],
        vec![edge],
    )?;
    Ok(BarrierFunction {
        kind: BarrierKind::Power,
        p,
        delta: Some(delta),
        amplitude: None,
        radius: Some(radius),
        sigma,
        profile,
    })
}

/// Stretched exponential exp(-p |x|^{sigma/4}), defined for sigma <= 1.
pub fn make_exp_barrier(p: f64, sigma: f64) -> Result<BarrierFunction> {
    if !(p > 0.0 && p <= 128.0) {
        return Err(Error::domain(format!("exponential rate out of (0, 128]: {p}")));
    }
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(Error::domain(format!(
            "exponential barrier needs order in (0, 1], got {sigma}"
        )));
    }
    let profile = RadialProfile::new(
        vec![ProfilePiece::Exp { coef: 1.0, rate: p, beta: 0.25 * sigma, offset: 0.0 }],
        vec![],
    )?;
    Ok(BarrierFunction {
        kind: BarrierKind::Exponential,
        p,
        delta: None,
        amplitude: None,
        radius: None,
        sigma,
        profile,
    })
}

/// One certified sample of the minimal extremal operator along a ray.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CertificateSample {
    pub radius: f64,
    pub value: f64,
    pub error: f64,
}

/// Outcome of sampling the minimal operator over an annulus. `pass` holds
/// exactly when `worst_margin >= -quad_tolerance`: the certificate may only
/// be claimed up to the certified quadrature error.
#[derive(Debug, Clone, Serialize)]
pub struct BarrierCertificate {
    pub barrier: BarrierFunction,
    pub annulus: (f64, f64),
    pub worst_margin: f64,
    pub quad_tolerance: f64,
    pub sample_count: usize,
    pub pass: bool,
    pub samples: Vec<CertificateSample>,
}

/// Canonical certification annulus for a cap geometry of reference radius R:
/// inner radius R/4, outer radius 2 sqrt(n) R.
pub fn standard_annulus(dim: usize, radius: f64) -> (f64, f64) {
    (0.25 * radius, 2.0 * (dim as f64).sqrt() * radius)
}

/// Sample the minimal extremal operator of the barrier at log-spaced radii
/// of the annulus and certify the sign of the worst margin. Radii are nudged
/// off profile seams so every sample carries a tight quadrature enclosure.
pub fn certify_subsolution(
    barrier: &BarrierFunction,
    dim: usize,
    lambda: f64,
    big_lambda: f64,
    annulus: (f64, f64),
    samples: usize,
    cfg: &RadialQuadConfig,
) -> Result<BarrierCertificate> {
    let (a, b) = annulus;
    if !(a > 0.0 && b > a) {
        return Err(Error::domain(format!("degenerate annulus ({a}, {b})")));
    }
    if samples < 2 {
        return Err(Error::config("certification needs at least two radial samples"));
    }
    let class = ClassParams::new(dim, barrier.sigma, lambda, big_lambda)?;
    let nudge = 8.0 * cfg.t_min;
    let mid = (a * b).sqrt();
    let ratio = b / a;
    let radii: Vec<f64> = (0..samples)
        .map(|i| {
            let mut r = a * ratio.powf(i as f64 / (samples - 1) as f64);
            for &e in barrier.profile.edges() {
                if (r / e - 1.0).abs() < nudge {
                    r = e * if r < mid { 1.0 + nudge } else { 1.0 - nudge };
                }
            }
            r
        })
        .collect();
    let evals: Result<Vec<CertificateSample>> = radii
        .par_iter()
        .map(|&r| {
            let v = extremal_radial(&barrier.profile, &class, Sign::Minus, r, cfg)?;
            Ok(CertificateSample { radius: r, value: v.value, error: v.error })
        })
        .collect();
    let samples_out = evals?;
    let worst_margin = samples_out.iter().map(|s| s.value).fold(f64::INFINITY, f64::min);
    let quad_tolerance = samples_out.iter().map(|s| s.error).fold(0.0, f64::max);
    Ok(BarrierCertificate {
        barrier: barrier.clone(),
        annulus,
        worst_margin,
        quad_tolerance,
        sample_count: samples_out.len(),
        pass: worst_margin >= -quad_tolerance,
        samples: samples_out,
    })
}

/// Result of a parameter search: the first (smallest-exponent) certifying
/// barrier with a fresh certificate at the caller's resolution.
#[derive(Debug, Clone, Serialize)]
pub struct ParameterSearch {
    pub barrier: BarrierFunction,
    pub certificate: BarrierCertificate,
    /// Number of certificates evaluated before success.
    pub trials: usize,
}

const P_GRID: [f64; 15] = [
    0.5, 0.7071067811865476, 1.0, 1.4142135623730951, 2.0, 2.8284271247461903, 4.0,
    5.656854249492381, 8.0, 11.313708498984761, 16.0, 22.627416997969522, 32.0,
    45.254833995939045, 64.0,
];
const DELTA_GRID: [f64; 6] = [0.01, 0.05, 0.1, 0.2, 0.35, 0.5];

/// Lighter quadrature used while scanning parameters; winners are re-checked
/// at the caller's resolution before being returned.
fn scan_config(cfg: &RadialQuadConfig) -> RadialQuadConfig {
    RadialQuadConfig {
        gl_order: cfg.gl_order.min(10),
        angular: cfg.angular.min(16),
        t_min: cfg.t_min.max(1e-5),
        max_log_width: cfg.max_log_width.max(0.7),
        rel_tol: cfg.rel_tol.max(1e-6),
        max_refine: cfg.max_refine.min(60),
        cutoff: cfg.cutoff,
        tail_rel_tol: cfg.tail_rel_tol.max(1e-9),
    }
}

fn build_kind(
    kind: BarrierKind,
    p: f64,
    delta: Option<f64>,
    radius: f64,
    sigma: f64,
) -> Result<BarrierFunction> {
    match kind {
        BarrierKind::Power => make_power_barrier(p, delta.unwrap_or(0.5), radius, sigma),
        BarrierKind::Exponential => make_exp_barrier(p, sigma),
        BarrierKind::PsiCapped => Err(Error::domain(
            "parameter search applies to the power and exponential families",
        )),
    }
}

/// Search exponents (log-spaced in [1/2, 64]) and plateau fractions for the
/// smallest exponent whose certificate clears margin >= 0 on the canonical
/// annulus. Scans run at reduced resolution in parallel over the plateau
/// grid; the winner is re-certified at the caller's resolution and must
/// clear zero again. Fails with the best margin seen if nothing certifies.
pub fn find_parameters(
    kind: BarrierKind,
    dim: usize,
    lambda: f64,
    big_lambda: f64,
    sigma: f64,
    radius: f64,
    samples: usize,
    cfg: &RadialQuadConfig,
) -> Result<ParameterSearch> {
    if kind == BarrierKind::PsiCapped {
        return Err(Error::domain(
            "parameter search applies to the power and exponential families",
        ));
    }
    let annulus = standard_annulus(dim, radius);
    let light = scan_config(cfg);
    let scan_samples = samples.clamp(4, 12);
    let deltas: Vec<Option<f64>> = match kind {
        BarrierKind::Power => DELTA_GRID.iter().map(|&d| Some(d)).collect(),
        _ => vec![None],
    };
    let mut best = f64::NEG_INFINITY;
    let mut trials = 0usize;
    for &p in &P_GRID {
        let outcomes: Result<Vec<(Option<f64>, f64)>> = deltas
            .par_iter()
            .map(|&d| {
                let b = build_kind(kind, p, d, radius, sigma)?;
                let cert =
                    certify_subsolution(&b, dim, lambda, big_lambda, annulus, scan_samples, &light)?;
                Ok((d, cert.worst_margin))
            })
            .collect();
        let outcomes = outcomes?;
        trials += outcomes.len();
        let (d_best, m_best) = outcomes
            .into_iter()
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .expect("delta grid is nonempty");
        best = best.max(m_best);
        if m_best >= 0.0 {
            let barrier = build_kind(kind, p, d_best, radius, sigma)?;
            let certificate =
                certify_subsolution(&barrier, dim, lambda, big_lambda, annulus, samples, cfg)?;
            trials += 1;
            best = best.max(certificate.worst_margin);
            if certificate.worst_margin >= 0.0 {
                return Ok(ParameterSearch { barrier, certificate, trials });
            }
        }
    }
    Err(Error::search(format!(
        "no certifying barrier in the {kind:?} family at order {sigma}: best margin {best:.6e} over {trials} trials"
    )))
}

/// Margins of the power family across an ascending grid of orders, with the
/// first grid point whose best margin clears zero. The threshold is an
/// empirical witness, not a proof: refining the grid can only move it down.
#[derive(Debug, Clone, Serialize)]
pub struct SigmaThreshold {
    pub grid: Vec<f64>,
    pub margins: Vec<f64>,
    pub first_pass: Option<f64>,
}

/// Scan the power family over orders, recording per-order best margins over
/// a coarse exponent/plateau grid.
pub fn sigma_star_scan(
    dim: usize,
    lambda: f64,
    big_lambda: f64,
    radius: f64,
    sigma_grid: &[f64],
    samples: usize,
    cfg: &RadialQuadConfig,
) -> Result<SigmaThreshold> {
    if sigma_grid.is_empty() || sigma_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("order grid must be ascending and nonempty"));
    }
    if sigma_grid.iter().any(|&s| !(s > 0.0 && s < 2.0)) {
        return Err(Error::domain("order grid must lie in (0, 2)"));
    }
    let annulus = standard_annulus(dim, radius);
    let light = scan_config(cfg);
    let coarse_p = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
    let coarse_d = [0.05, 0.2, 0.5];
    let mut margins = Vec::with_capacity(sigma_grid.len());
    for &sigma in sigma_grid {
        let grid: Vec<(f64, f64)> = coarse_p
            .iter()
            .flat_map(|&p| coarse_d.iter().map(move |&d| (p, d)))
            .collect();
        let outcome: Result<Vec<f64>> = grid
            .par_iter()
            .map(|&(p, d)| {
                let b = make_power_barrier(p, d, radius, sigma)?;
                let cert = certify_subsolution(
                    &b,
                    dim,
                    lambda,
                    big_lambda,
                    annulus,
                    samples.clamp(4, 12),
                    &light,
                )?;
                Ok(cert.worst_margin)
            })
            .collect();
        margins.push(outcome?.into_iter().fold(f64::NEG_INFINITY, f64::max));
    }
    let first_pass = sigma_grid
        .iter()
        .zip(&margins)
        .find(|(_, &m)| m >= 0.0)
        .map(|(&s, _)| s);
    Ok(SigmaThreshold { grid: sigma_grid.to_vec(), margins, first_pass })
}

/// Piecewise-linear radial forcing profile supported in a ball.
#[derive(Debug, Clone, Serialize)]
pub struct ForcingProfile {
    pub support_radius: f64,
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    /// Conservative supremum: worst sampled value plus its quadrature error.
    pub sup: f64,
}

impl ForcingProfile {
    /// Piecewise-linear interpolant; identically zero outside the support
    /// ball, flat below the first sample radius.
    pub fn eval(&self, r: f64) -> f64 {
        if r >= self.support_radius || self.radii.is_empty() {
            return 0.0;
        }
        let n = self.radii.len();
        if r <= self.radii[0] {
            return self.values[0];
        }
        if r >= self.radii[n - 1] {
            // taper linearly to zero at the support edge
            let w = self.support_radius - self.radii[n - 1];
            if w <= 0.0 {
                return 0.0;
            }
            return self.values[n - 1] * ((self.support_radius - r) / w).max(0.0);
        }
        let i = self.radii.partition_point(|&x| x <= r) - 1;
        let (r0, r1) = (self.radii[i], self.radii[i + 1]);
        let w = (r - r0) / (r1 - r0);
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }
}

/// The capped bump with its certificate and the forcing it needs inside the
/// glue ball.
#[derive(Debug, Clone, Serialize)]
pub struct PsiBundle {
    pub barrier: BarrierFunction,
    pub certificate: BarrierCertificate,
    /// max(0, -R^sigma M^- Psi) sampled on the glue ball; zero outside it.
    pub forcing: ForcingProfile,
    /// Psi(0), the global maximum.
    pub max_value: f64,
    /// Psi at the corner radius of the concentric cube of side 3R (the
    /// minimum over that cube, by radial monotonicity).
    pub cube_min: f64,
}

/// Build the capped bump on reference radius R: search the base family
/// (power above order 1, stretched exponential otherwise), scale it so the
/// cube of side 3R sits above 2, glue a paraboloid inside R/4 with matching
/// value and slope, clamp to zero beyond 2 sqrt(n) R, certify the annulus,
/// and sample the forcing concentrated in the glue ball.
pub fn build_psi(
    dim: usize,
    lambda: f64,
    big_lambda: f64,
    sigma: f64,
    radius: f64,
    samples: usize,
    cfg: &RadialQuadConfig,
) -> Result<PsiBundle> {
    if !(radius > 0.0 && radius <= 1.0) {
        return Err(Error::domain(format!("reference radius out of (0, 1]: {radius}")));
    }
    let kind = if sigma <= 1.0 { BarrierKind::Exponential } else { BarrierKind::Power };
    let base = find_parameters(kind, dim, lambda, big_lambda, sigma, radius, samples, cfg)?;
    let f = &base.barrier;
    let sqn = (dim as f64).sqrt();
    let r4 = 0.25 * radius;
    let r_out = 2.0 * sqn * radius;
    let corner = 1.5 * sqn * radius;
    let f_out = f.eval_radial(r_out);
    let span = f.eval_radial(corner) - f_out;
    if !(span > 1e-10 * f.eval_radial(corner).abs().max(1e-300)) {
        return Err(Error::search(
            "base barrier cannot separate the cube corner from the clamp radius with bounded amplitude",
        ));
    }
    let c = 2.1 / span;
    let fp4 = f.profile.deriv(r4);
    let b = -c * fp4 / (2.0 * r4);
    let a = c * (f.eval_radial(r4) - f_out) + b * r4 * r4;

    let mut pieces = vec![ProfilePiece::Parabola { a, b }];
    let mut edges = vec![r4];
    match kind {
        BarrierKind::Power => {
            let delta = f.delta.expect("power family carries a plateau fraction");
            let cap_edge = delta * radius;
            if cap_edge > r4 {
                pieces.push(ProfilePiece::Constant {
                    value: c * (f.eval_radial(cap_edge) - f_out),
                });
                edges.push(cap_edge);
            }
            pieces.push(ProfilePiece::Power { coef: c, p: f.p, offset: -c * f_out });
        }
        BarrierKind::Exponential => {
            pieces.push(ProfilePiece::Exp {
                coef: c,
                rate: f.p,
                beta: 0.25 * sigma,
                offset: -c * f_out,
            });
        }
        BarrierKind::PsiCapped => unreachable!("base search never returns the capped family"),
    }
    edges.push(r_out);
    pieces.push(ProfilePiece::Constant { value: 0.0 });
    let profile = RadialProfile::new(pieces, edges)?;
    let psi = BarrierFunction {
        kind: BarrierKind::PsiCapped,
        p: f.p,
        delta: f.delta,
        amplitude: Some(c),
        radius: Some(radius),
        sigma,
        profile,
    };
    let certificate =
        certify_subsolution(&psi, dim, lambda, big_lambda, (r4, r_out), samples, cfg)?;

    // Forcing: sample M^- Psi at glue-ball midpoint radii. The certificate
    // covers everything outside, so the forcing vanishes there.
    let class = ClassParams::new(dim, sigma, lambda, big_lambda)?;
    let m = samples.max(8);
    let rfac = radius.powf(sigma);
    let mut radii = Vec::with_capacity(m);
    let mut values = Vec::with_capacity(m);
    let mut sup = 0.0f64;
    for j in 1..=m {
        let s = r4 * (2 * j - 1) as f64 / (2 * m) as f64;
        let v = extremal_radial(psi.profile(), &class, Sign::Minus, s, cfg)?;
        let val = (-rfac * v.value).max(0.0);
        sup = sup.max(val + rfac * v.error);
        radii.push(s);
        values.push(val);
    }
    let forcing = ForcingProfile { support_radius: r4, radii, values, sup };
    let cube_min = psi.eval_radial(corner);
    Ok(PsiBundle { barrier: psi, certificate, forcing, max_value: a, cube_min })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn light() -> RadialQuadConfig {
        RadialQuadConfig {
            gl_order: 10,
            angular: 16,
            t_min: 1e-5,
            max_log_width: 0.7,
            rel_tol: 1e-6,
            max_refine: 60,
            cutoff: 1.0,
            tail_rel_tol: 1e-9,
        }
    }

    #[test]
    fn power_barrier_matches_closed_form_samples() {
        let f = make_power_barrier(1.0, 0.5, 1.0, 1.5).unwrap();
        assert_eq!(f.eval(&[0.25]), 2.0);
        assert_eq!(f.eval(&[0.0]), 2.0);
        assert_eq!(f.eval(&[2.0]), 0.5);
        assert_eq!(f.eval(&[0.0, 2.0]), 0.5);
        let g = f.gradient(&[2.0]);
        assert_relative_eq!(g[0], -0.25, max_relative = 1e-14);
        assert_eq!(f.gradient(&[0.1])[0], 0.0);
        assert_eq!(f.gradient(&[0.0])[0], 0.0);
        assert!(make_power_barrier(0.0, 0.5, 1.0, 1.5).is_err());
        assert!(make_power_barrier(1.0, 1.0, 1.0, 1.5).is_err());
        assert!(make_power_barrier(1.0, 0.5, 2.0, 1.5).is_err());
    }

    #[test]
    fn exp_barrier_matches_closed_form_samples() {
        let f = make_exp_barrier(4.0, 1.0).unwrap();
        assert_eq!(f.eval_radial(0.0), 1.0);
        assert_relative_eq!(f.eval(&[1.0]), (-4.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(f.eval(&[0.6, 0.8]), (-4.0f64).exp(), max_relative = 1e-14);
        // gradient: -p (sigma/4) |x|^{sigma/4 - 1} f(|x|) x_hat
        let g = f.gradient(&[1.0]);
        assert_relative_eq!(g[0], -(-4.0f64).exp(), max_relative = 1e-12);
        assert!(make_exp_barrier(4.0, 1.5).is_err());
        assert!(make_exp_barrier(0.0, 0.5).is_err());
    }

    #[test]
    fn power_family_certifies_near_order_two() {
        let cfg = light();
        let got = find_parameters(BarrierKind::Power, 1, 1.0, 1.0, 1.9, 0.05, 8, &cfg).unwrap();
        assert!(got.certificate.pass);
        assert!(got.certificate.worst_margin >= 0.0);
        assert_eq!(got.barrier.kind, BarrierKind::Power);
        // re-certification at double resolution keeps the verdict
        let fine = RadialQuadConfig {
            gl_order: 20,
            angular: 32,
            rel_tol: 1e-8,
            max_refine: 120,
            ..cfg
        };
        let again = certify_subsolution(
            &got.barrier,
            1,
            1.0,
            1.0,
            got.certificate.annulus,
            16,
            &fine,
        )
        .unwrap();
        assert!(again.pass);
    }

    #[test]
    fn exponential_family_certifies_at_low_order() {
        let cfg = light();
        let got =
            find_parameters(BarrierKind::Exponential, 1, 1.0, 2.0, 0.5, 0.1, 8, &cfg).unwrap();
        assert!(got.certificate.pass);
        assert!(got.barrier.delta.is_none());
    }

    #[test]
    fn underpowered_certificate_fails_with_negative_margin() {
        let cfg = light();
        let f = make_power_barrier(0.1, 0.1, 0.05, 1.5).unwrap();
        let cert =
            certify_subsolution(&f, 1, 1.0, 2.0, standard_annulus(1, 0.05), 8, &cfg).unwrap();
        assert!(!cert.pass);
        assert!(cert.worst_margin < 0.0);
    }

    #[test]
    fn capped_bump_clamps_dominates_and_glues() {
        let cfg = light();
        let bundle = build_psi(1, 1.0, 2.0, 1.9, 0.05, 6, &cfg).unwrap();
        let psi = &bundle.barrier;
        let r4 = 0.0125;
        let r_out = 2.0 * 0.05;
        // clamp outside
        assert_eq!(psi.eval_radial(r_out), 0.0);
        assert_eq!(psi.eval_radial(10.0), 0.0);
        // dominates 2 on the cube, bounded by the center value
        assert!(bundle.cube_min > 2.0);
        assert!(bundle.max_value >= bundle.cube_min);
        assert_relative_eq!(bundle.cube_min, 2.1, max_relative = 1e-12);
        // C^1 glue at the cap radius
        let dl = psi.profile().deriv(r4 * (1.0 - 1e-9));
        let dr = psi.profile().deriv(r4 * (1.0 + 1e-9));
        assert_relative_eq!(dl, dr, max_relative = 1e-6);
        let h = 1e-7;
        let fd = (psi.eval_radial(r4 + h) - psi.eval_radial(r4 - h)) / (2.0 * h);
        assert_relative_eq!(fd, dl, max_relative = 1e-4);
        // certificate over the annulus
        assert!(bundle.certificate.pass);
        // forcing: supported in the glue ball, positive somewhere
        assert_eq!(bundle.forcing.support_radius, r4);
        assert_eq!(bundle.forcing.eval(r4), 0.0);
        assert_eq!(bundle.forcing.eval(0.05), 0.0);
        assert!(bundle.forcing.sup > 0.0);
        assert!(bundle.forcing.values.iter().any(|&v| v > 0.0));
        // interpolant reproduces nodes and stays nonnegative
        for (r, v) in bundle.forcing.radii.iter().zip(&bundle.forcing.values) {
            assert_relative_eq!(bundle.forcing.eval(*r), *v, max_relative = 1e-12);
        }
    }
}
