//! Empirical regularity measurements on grid functions: level-set decay
//! exponents, Harnack ratios, and pointwise Holder / C^{1,alpha}
//! seminorms. Fits are least squares on log-log tails; the smallest
//! quarter of the abscissas is excluded because the estimates being
//! probed are tail statements.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ExteriorRule, GridFunction, GridGeometry};

/// Controls for the log-log tail fits.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FitConfig {
    /// Fraction of the smallest abscissas dropped before fitting.
    pub exclude_smallest: f64,
    /// Minimum points a fit needs after the trim.
    pub min_levels: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            exclude_smallest: 0.25,
            min_levels: 4,
        }
    }
}

impl FitConfig {
    fn check(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.exclude_smallest) {
            return Err(Error::config("exclude_smallest must lie in [0, 1)"));
        }
        if self.min_levels < 2 {
            return Err(Error::config("min_levels: fits need at least 2 points"));
        }
        Ok(())
    }
}

/// Least squares line through (x, y): slope, intercept, rms residual.
fn fit_line(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let rms = (pts
        .iter()
        .map(|&(x, y)| (y - slope * x - intercept).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, intercept, rms)
}

/// Geometric grid of `count` levels from lo to hi inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && lo.is_finite() && hi.is_finite()) {
        return Err(Error::domain("log grid needs 0 < lo < hi"));
    }
    if count < 2 {
        return Err(Error::domain("log grid needs at least 2 levels"));
    }
    let step = (hi / lo).ln() / (count - 1) as f64;
    Ok((0..count)
        .map(|i| lo * (step * i as f64).exp())
        .collect())
}

fn ball_nodes(geom: &GridGeometry, center: &[f64], radius: f64) -> Result<Vec<usize>> {
    if center.len() != geom.dim() {
        return Err(Error::domain("center dimension does not match the grid"));
    }
    let nodes: Vec<usize> = geom
        .nodes()
        .filter(|(_, x)| {
            x.iter()
                .zip(center)
                .map(|(a, c)| (a - c) * (a - c))
                .sum::<f64>()
                .sqrt()
                <= radius
        })
        .map(|(i, _)| i)
        .collect();
    if nodes.is_empty() {
        return Err(Error::Resolution(format!(
            "no grid nodes inside the ball of radius {radius}"
        )));
    }
    Ok(nodes)
}

// ---------------------------------------------------------------------------
// Level-set decay
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LevelRow {
    pub t: f64,
    /// |{u > t} ∩ B| / |B| by node count.
    pub fraction: f64,
    /// Entered the tail fit (strictly between 0 and 1, above the trim).
    pub used: bool,
}

/// Fitted tail law fraction(t) ≈ C t^{-eps_star}.
#[derive(Clone, Debug, Serialize)]
pub struct LevelDecayFit {
    pub eps_star: f64,
    pub big_c: f64,
    /// Raw fit slope before clamping the exponent at zero.
    pub raw_slope: f64,
    pub fit_rms: f64,
    pub used_levels: usize,
    pub rows: Vec<LevelRow>,
}

/// Measures |{u > t} ∩ B_radius(center)| over the level grid and fits the
/// decay exponent on the informative tail.
pub fn level_decay(
    u: &GridFunction,
    center: &[f64],
    radius: f64,
    t_grid: &[f64],
    cfg: &FitConfig,
) -> Result<LevelDecayFit> {
    cfg.check()?;
    if t_grid.len() < 2 || t_grid.windows(2).any(|w| w[0] >= w[1]) || t_grid[0] <= 0.0 {
        return Err(Error::config(
            "t_grid must be positive and strictly increasing",
        ));
    }
    let nodes = ball_nodes(&u.geom, center, radius)?;
    let values: Vec<f64> = nodes.iter().map(|&i| u.values[i]).collect();
    let floor = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if floor < -1e-12 {
        return Err(Error::domain(format!(
            "level decay needs nonnegative data on the ball; min value {floor}"
        )));
    }
    let total = values.len() as f64;
    let mut rows: Vec<LevelRow> = t_grid
        .iter()
        .map(|&t| {
            let count = values.iter().filter(|&&v| v > t).count();
            LevelRow {
                t,
                fraction: count as f64 / total,
                used: false,
            }
        })
        .collect();

    let informative: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.fraction > 0.0 && r.fraction < 1.0)
        .map(|(i, _)| i)
        .collect();
    if informative.is_empty() {
        return Err(Error::search(
            "level measure is a step across the probed levels (constant data has no tail); \
             nothing to fit",
        ));
    }
    let trim = (informative.len() as f64 * cfg.exclude_smallest).floor() as usize;
    let kept = &informative[trim..];
    if kept.len() < cfg.min_levels {
        return Err(Error::Resolution(format!(
            "only {} usable levels after trimming the smallest {}; the fit needs {}",
            kept.len(),
            trim,
            cfg.min_levels
        )));
    }
    for &i in kept {
        rows[i].used = true;
    }
    let pts: Vec<(f64, f64)> = kept
        .iter()
        .map(|&i| (rows[i].t.ln(), rows[i].fraction.ln()))
        .collect();
    let (slope, intercept, rms) = fit_line(&pts);
    Ok(LevelDecayFit {
        eps_star: (-slope).max(0.0),
        big_c: intercept.exp(),
        raw_slope: slope,
        fit_rms: rms,
        used_levels: kept.len(),
        rows,
    })
}

// ---------------------------------------------------------------------------
// Harnack ratio
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize)]
pub struct HarnackRatio {
    pub sup: f64,
    pub inf: f64,
    pub c0: f64,
    /// sup / (inf + c0) over the probed half ball.
    pub ratio: f64,
}

/// Ratio sup u / (inf u + c0) over B_{r_half}(center) grid nodes. Degree-0
/// homogeneous: scaling u and c0 together leaves it unchanged.
pub fn harnack_ratio(
    u: &GridFunction,
    center: &[f64],
    r_half: f64,
    c0: f64,
) -> Result<HarnackRatio> {
    let nodes = ball_nodes(&u.geom, center, r_half)?;
    let mut sup = f64::NEG_INFINITY;
    let mut inf = f64::INFINITY;
    for &i in &nodes {
        sup = sup.max(u.values[i]);
        inf = inf.min(u.values[i]);
    }
    let shifted = inf + c0;
    if shifted <= 0.0 {
        return Err(Error::domain(format!(
            "Harnack ratio needs inf + C0 > 0; got inf {inf} with C0 {c0}"
        )));
    }
    Ok(HarnackRatio {
        sup,
        inf,
        c0,
        ratio: sup / shifted,
    })
}

// ---------------------------------------------------------------------------
// Holder seminorm
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ShellRow {
    /// Outer radius of the dyadic shell.
    pub radius: f64,
    /// sup |u - u(center)| over the shell's nodes.
    pub oscillation: f64,
    pub nodes: usize,
    pub used: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct HolderReport {
    pub alpha: f64,
    /// sup |u(x) - u(center)| / |x - center|^alpha over the ball.
    pub seminorm: f64,
    /// Exponent fitted from shell oscillations; None when the data is
    /// flat near the center or too few shells survive the trim.
    pub fitted_alpha: Option<f64>,
    pub fit_rms: f64,
    pub shells: Vec<ShellRow>,
    pub diagnostic: Option<String>,
}

fn ball_inside_grid(geom: &GridGeometry, center: &[f64], ball: f64) -> Result<()> {
    let hi = geom.hi();
    for a in 0..geom.dim() {
        if center[a] - ball < geom.lo[a] - 1e-12 || center[a] + ball > hi[a] + 1e-12 {
            return Err(Error::domain(format!(
                "probe ball of radius {ball} leaves the grid along axis {a}"
            )));
        }
    }
    Ok(())
}

/// Pointwise Holder quotient against the center, plus an exponent fitted
/// on dyadic shells. alpha = 0 degenerates to the exact oscillation.
pub fn holder_seminorm(
    u: &GridFunction,
    center: &[f64],
    alpha: f64,
    ball: f64,
) -> Result<HolderReport> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::domain("Holder exponent must lie in [0, 1]"));
    }
    if !(ball > 0.0 && ball.is_finite()) {
        return Err(Error::domain("probe ball must have positive radius"));
    }
    if center.len() != u.geom.dim() {
        return Err(Error::domain("center dimension does not match the grid"));
    }
    ball_inside_grid(&u.geom, center, ball)?;
    let uc = u.eval(center);
    let h = u.geom.h;

    let mut seminorm = 0.0f64;
    // Dyadic shells (ball/2^{j+1}, ball/2^j], innermost one holding at
    // least a node step.
    let mut shell_count = 0usize;
    while ball / (1 << (shell_count + 1)) as f64 > h && shell_count < 40 {
        shell_count += 1;
    }
    let mut shells: Vec<ShellRow> = (0..=shell_count)
        .map(|j| ShellRow {
            radius: ball / (1 << j) as f64,
            oscillation: 0.0,
            nodes: 0,
            used: false,
        })
        .collect();

    for (i, x) in u.geom.nodes() {
        let d = x
            .iter()
            .zip(center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>()
            .sqrt();
        if d > ball || d == 0.0 {
            continue;
        }
        let osc = (u.values[i] - uc).abs();
        seminorm = seminorm.max(osc / d.powf(alpha));
        // Shell index: largest j with d <= ball / 2^j.
        let j = ((ball / d).ln() / std::f64::consts::LN_2).floor() as usize;
        let j = j.min(shell_count);
        shells[j].nodes += 1;
        shells[j].oscillation = shells[j].oscillation.max(osc);
    }

    let scale = 1e-13 * (1.0 + uc.abs());
    let informative: Vec<usize> = (0..shells.len())
        .filter(|&j| shells[j].nodes > 0 && shells[j].oscillation > scale)
        .collect();
    let cfg = FitConfig::default();
    // Shells are indexed by decreasing radius; the trim drops the tail of
    // the list (smallest radii).
    let trim = (informative.len() as f64 * cfg.exclude_smallest).floor() as usize;
    let kept = &informative[..informative.len() - trim];
    let (fitted_alpha, fit_rms, diagnostic) = if informative.is_empty() {
        (
            None,
            0.0,
            Some("oscillation at rounding level on every shell: data is constant near the center".into()),
        )
    } else if kept.len() < 3 {
        (
            None,
            0.0,
            Some(format!(
                "only {} informative shells after the trim; exponent fit skipped",
                kept.len()
            )),
        )
    } else {
        let pts: Vec<(f64, f64)> = kept
            .iter()
            .map(|&j| (shells[j].radius.ln(), shells[j].oscillation.ln()))
            .collect();
        let (slope, _, rms) = fit_line(&pts);
        for &j in kept {
            shells[j].used = true;
        }
        (Some(slope), rms, None)
    };

    Ok(HolderReport {
        alpha,
        seminorm,
        fitted_alpha,
        fit_rms,
        shells,
        diagnostic,
    })
}

// ---------------------------------------------------------------------------
// C^{1,alpha} probe
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct C1AlphaReport {
    pub alpha: f64,
    pub ball: f64,
    /// sup |u| over the ball.
    pub sup_u: f64,
    /// Largest axis difference-quotient magnitude over the ball.
    pub sup_du: f64,
    /// Worst per-axis Holder seminorm of the difference quotients.
    pub du_seminorm: f64,
    /// sup|u| + R sup|Du| + R^{1+alpha} [Du]_alpha.
    pub composite: f64,
    pub per_axis: Vec<HolderReport>,
}

/// Central difference quotients of u along each axis, living on the grid
/// shrunk by one cell per side.
fn difference_quotients(u: &GridFunction) -> Result<Vec<GridFunction>> {
    let geom = &u.geom;
    let n = geom.dim();
    let h = geom.h;
    let lo: Vec<f64> = geom.lo.iter().map(|v| v + h).collect();
    let counts: Vec<usize> = geom.counts.iter().map(|c| c - 2).collect();
    let inner = GridGeometry::new(lo, counts, h)?;
    let mut out = Vec::with_capacity(n);
    for a in 0..n {
        let stride = geom.strides()[a] as i64;
        let mut vals = Vec::with_capacity(inner.len());
        for flat in 0..inner.len() {
            let inner_multi = inner.multi(flat);
            let outer_multi: Vec<usize> = inner_multi.iter().map(|&i| i + 1).collect();
            let outer_flat = geom.flat(&outer_multi) as i64;
            let up = u.values[(outer_flat + stride) as usize];
            let um = u.values[(outer_flat - stride) as usize];
            vals.push((up - um) / (2.0 * h));
        }
        out.push(GridFunction::new(inner.clone(), vals, ExteriorRule::Zero)?);
    }
    Ok(out)
}

/// Applies holder_seminorm to each axis difference quotient and reports
/// the rescaled composite norm sup|u| + R sup|Du| + R^{1+alpha}[Du]_alpha.
pub fn c1alpha_probe(
    u: &GridFunction,
    center: &[f64],
    ball: f64,
    alpha: f64,
) -> Result<C1AlphaReport> {
    let geom = &u.geom;
    let h = geom.h;
    if ball < 4.0 * h {
        return Err(Error::Resolution(format!(
            "difference quotients need at least 9 nodes per axis inside the probe ball; \
             radius {ball} spans under {} cells",
            (ball / h).floor()
        )));
    }
    ball_inside_grid(geom, center, ball + h)?;
    let quotients = difference_quotients(u)?;

    let mut sup_u = 0.0f64;
    for (i, x) in geom.nodes() {
        let d = x
            .iter()
            .zip(center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>()
            .sqrt();
        if d <= ball {
            sup_u = sup_u.max(u.values[i].abs());
        }
    }

    let mut sup_du = 0.0f64;
    let mut du_seminorm = 0.0f64;
    let mut per_axis = Vec::with_capacity(quotients.len());
    for dq in &quotients {
        for (i, x) in dq.geom.nodes() {
            let d = x
                .iter()
                .zip(center)
                .map(|(a, c)| (a - c) * (a - c))
                .sum::<f64>()
                .sqrt();
            if d <= ball {
                sup_du = sup_du.max(dq.values[i].abs());
            }
        }
        let rep = holder_seminorm(dq, center, alpha, ball)?;
        du_seminorm = du_seminorm.max(rep.seminorm);
        per_axis.push(rep);
    }

    Ok(C1AlphaReport {
        alpha,
        ball,
        sup_u,
        sup_du,
        du_seminorm,
        composite: sup_u + ball * sup_du + ball.powf(1.0 + alpha) * du_seminorm,
        per_axis,
    })
}
