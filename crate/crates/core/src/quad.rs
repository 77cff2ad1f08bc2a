//! Quadrature primitives: Gauss-Legendre nodes, logarithmic radial panels,
//! and simple product rules on small spheres.



/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(k: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(k >= 1);
    let mut nodes = vec![0.0; k];
    let mut weights = vec![0.0; k];
    let kf = k as f64;
    for i in 0..k.div_ceil(2) {
        // Tricomi-style initial guess, then Newton on P_k.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (kf + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(k, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(k, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[k - 1 - i] = x;
        weights[i] = w;
        weights[k - 1 - i] = w;
    }
    if k % 2 == 1 {
        let mid = k / 2;
        nodes[mid] = 0.0;
        let (_, d) = legendre_with_derivative(k, 0.0);
        weights[mid] = 2.0 / (d * d);
    }
    (nodes, weights)
}

fn legendre_with_derivative(k: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if k == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=k {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let d = k as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Panels covering [r_lo, r_hi], split so that no panel exceeds
/// `max_log_width` in log space. Both endpoints must be positive.
pub fn log_panels(r_lo: f64, r_hi: f64, max_log_width: f64) -> Vec<(f64, f64)> {
    assert!(r_lo > 0.0 && r_hi > r_lo && max_log_width > 0.0);
    let width = (r_hi / r_lo).ln();
    let count = (width / max_log_width).ceil().max(1.0) as usize;
    let step = width / count as f64;
    (0..count)
        .map(|i| {
            let a = r_lo * (step * i as f64).exp();
            let b = if i + 1 == count {
                r_hi
            } else {
                r_lo * (step * (i + 1) as f64).exp()
            };
            (a, b)
        })
        .collect()
}

/// Like `log_panels`, but panel edges are forced at the interior
/// breakpoints (integrand kinks: cutoff radii, box-exit radii, seams).
pub fn log_panels_with_breaks(
    r_lo: f64,
    r_hi: f64,
    breaks: &[f64],
    max_log_width: f64,
) -> Vec<(f64, f64)> {
    let mut edges: Vec<f64> = vec![r_lo, r_hi];
    for &b in breaks {
        if b > r_lo * (1.0 + 1e-12) && b < r_hi * (1.0 - 1e-12) {
            edges.push(b);
        }
    }
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    edges.dedup_by(|a, b| (*a / *b - 1.0).abs() < 1e-12);
    let mut panels = Vec::new();
    for w in edges.windows(2) {
        panels.extend(log_panels(w[0], w[1], max_log_width));
    }
    panels
}

/// Direction/weight pairs integrating functions over S^{n-1}. Weights sum
/// to the sphere measure. `m` controls the angular resolution; n = 1 always
/// returns the two signs with unit weights.
pub fn sphere_rule(n: usize, m: usize) -> Vec<(Vec<f64>, f64)> {
    match n {
        1 => vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)],
        2 => {
            let m = m.max(4);
            let w = 2.0 * std::f64::consts::PI / m as f64;
            (0..m)
                .map(|j| {
                    let th = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / m as f64;
                    (vec![th.cos(), th.sin()], w)
                })
                .collect()
        }
        3 => {
            let mp = m.max(4);
            let ma = 2 * mp;
            let (cs, ws) = gauss_legendre(mp);
            let wa = 2.0 * std::f64::consts::PI / ma as f64;
            let mut rule = Vec::with_capacity(mp * ma);
            for (c, wc) in cs.iter().zip(&ws) {
                let s = (1.0 - c * c).max(0.0).sqrt();
                for j in 0..ma {
                    let ph = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / ma as f64;
                    rule.push((vec![s * ph.cos(), s * ph.sin(), *c], wc * wa));
                }
            }
            rule
        }
        _ => panic!("sphere_rule supports n in 1..=3, got {n}"),
    }
}

/// Integrate f over [a, b] with a k-point Gauss-Legendre rule applied in
/// log space (the radial integrals here all live on (0, inf)).
pub fn integrate_log_gl(a: f64, b: f64, k: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    let (nodes, weights) = gauss_legendre(k);
    let (la, lb) = (a.ln(), b.ln());
    let mid = 0.5 * (la + lb);
    let half = 0.5 * (lb - la);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(&weights) {
        let r = (mid + half * x).exp();
        acc += w * half * r * f(r);
    }
    acc
}
