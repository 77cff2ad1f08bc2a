//! Small vector helpers and sphere/ball measures.
//!
//! Points are plain `&[f64]` slices; dimensions stay small (1 to 3 in
//! practice) so nothing here tries to be clever.

use rand::Rng;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|x| c * x).collect()
}

fn gamma_half_integer(twice: usize) -> f64 {
    // Gamma(twice / 2) for twice >= 1.
    match twice {
        1 => std::f64::consts::PI.sqrt(),
        2 => 1.0,
        t => (t as f64 / 2.0 - 1.0) * gamma_half_integer(t - 2),
    }
}

/// Surface measure of the unit sphere S^{n-1} in R^n. For n = 1 this is the
/// counting measure of {-1, +1}, i.e. 2.
pub fn sphere_measure(n: usize) -> f64 {
    assert!(n >= 1, "dimension must be at least 1");
    2.0 * std::f64::consts::PI.powf(n as f64 / 2.0) / gamma_half_integer(n)
}

/// Volume of the unit ball in R^n.
pub fn ball_volume(n: usize, r: f64) -> f64 {
    sphere_measure(n) / n as f64 * r.powi(n as i32)
}

/// Uniformly distributed direction on S^{n-1}.
pub fn random_direction<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    if n == 1 {
        return vec![if rng.gen::<bool>() { 1.0 } else { -1.0 }];
    }
    loop {
        // Box-Muller pairs, normalized.
        let v: Vec<f64> = (0..n)
            .map(|_| {
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        let r = norm(&v);
        if r > 1e-8 {
            return scale(&v, 1.0 / r);
        }
    }
}
