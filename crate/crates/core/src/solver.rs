//! Explicit monotone marching solver for Iu = f on a box with exterior
//! Dirichlet data, where I is an extremal operator, a single linear
//! operator, or a finite Bellman/Isaacs combination of linear operators.
//!
//! The discrete operator evaluates jump increments on the lattice up to a
//! stencil radius. Increment pairs {y, -y} shorter than the gradient
//! cutoff are compensated by their own odd part, which reduces them to
//! second differences; this keeps the scheme monotone without forming a
//! gradient. With a zero or constant exterior the extremal operators add
//! the exact closed-form tail beyond the stencil radius (the stencil
//! default makes every tail point exterior); otherwise the kernel support
//! is truncated at the stencil radius.
//!
//! The extremal operator comes in two flavors. The symmetric one takes
//! the class envelope over symmetric kernels, so every pair contributes a
//! second difference and affine data is an exact fixed point for sigma >
//! 1. The nonsymmetric one lets the kernel weight each side of a pair
//! independently beyond the cutoff, matching the pointwise envelope that
//! the operator evaluator computes; it carries a genuine drift on affine
//! data. Inside the cutoff the two coincide: compensating each pair by
//! its own odd part is the same as using a central-difference gradient,
//! which collapses the two one-sided increments to half a second
//! difference each.

use rayon::prelude::*;
use serde::Serialize;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::geom::sphere_measure;
use crate::grid::{ExteriorRule, GridFunction, GridGeometry};
use crate::kernel::KernelSpec;
use crate::operator::{ClassParams, Sign};

/// Operator side of the discrete Dirichlet problem.
#[derive(Clone)]
pub enum SolveOperator {
    /// Class extremal operator M+ or M-. With `symmetric` the envelope
    /// runs over symmetric kernels only (pairs enter as second
    /// differences); otherwise each side of an uncompensated pair is
    /// weighted independently.
    Extremal {
        sign: Sign,
        class: ClassParams,
        symmetric: bool,
    },
    /// One linear operator.
    Linear { kernel: KernelSpec },
    /// max (is_max) or min over a finite kernel family.
    Bellman {
        kernels: Vec<KernelSpec>,
        is_max: bool,
    },
    /// min over families of max within each family.
    Isaacs { families: Vec<Vec<KernelSpec>> },
}

impl SolveOperator {
    pub fn dim(&self) -> usize {
        match self {
            SolveOperator::Extremal { class, .. } => class.dim,
            SolveOperator::Linear { kernel } => kernel.dim,
            SolveOperator::Bellman { kernels, .. } => kernels[0].dim,
            SolveOperator::Isaacs { families } => families[0][0].dim,
        }
    }

    pub fn sigma(&self) -> f64 {
        match self {
            SolveOperator::Extremal { class, .. } => class.sigma,
            SolveOperator::Linear { kernel } => kernel.sigma,
            SolveOperator::Bellman { kernels, .. } => kernels[0].sigma,
            SolveOperator::Isaacs { families } => families[0][0].sigma,
        }
    }

    fn kernels(&self) -> Vec<&KernelSpec> {
        match self {
            SolveOperator::Extremal { .. } => Vec::new(),
            SolveOperator::Linear { kernel } => vec![kernel],
            SolveOperator::Bellman { kernels, .. } => kernels.iter().collect(),
            SolveOperator::Isaacs { families } => families.iter().flatten().collect(),
        }
    }

    fn check(&self) -> Result<()> {
        let empty = match self {
            SolveOperator::Extremal { .. } => false,
            SolveOperator::Linear { .. } => false,
            SolveOperator::Bellman { kernels, .. } => kernels.is_empty(),
            SolveOperator::Isaacs { families } => {
                families.is_empty() || families.iter().any(|f| f.is_empty())
            }
        };
        if empty {
            return Err(Error::domain("operator families must be nonempty"));
        }
        let dim = self.dim();
        let sigma = self.sigma();
        for k in self.kernels() {
            if k.dim != dim {
                return Err(Error::domain("kernel dimensions disagree"));
            }
            if (k.sigma - sigma).abs() > 1e-12 {
                return Err(Error::domain(
                    "kernel family must share one order sigma for a common time step",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ExplicitMarching,
}

/// Full description of one Dirichlet solve.
pub struct ProblemSpec {
    pub operator: SolveOperator,
    pub geom: GridGeometry,
    /// Forcing sampled at the grid nodes (marched nodes are the ones that
    /// matter).
    pub forcing: Vec<f64>,
    /// Dirichlet data on the complement of the marched region.
    pub exterior: ExteriorRule,
    pub scheme: Scheme,
    /// dt = dt_safety / diagonal mass; must stay below 1 for
    /// monotonicity.
    pub dt_safety: f64,
    pub tol: f64,
    pub max_iters: usize,
    /// Lattice jump radius. None picks box diameter + cutoff, which makes
    /// every point beyond it exterior (exact tails for zero/constant
    /// rules).
    pub stencil_radius: Option<f64>,
    /// Node rings at the box edge held at the exterior data.
    pub band_cells: usize,
    /// Gradient-compensation cutoff of the increment.
    pub cutoff: f64,
}

impl ProblemSpec {
    pub fn new(
        operator: SolveOperator,
        geom: GridGeometry,
        forcing: Vec<f64>,
        exterior: ExteriorRule,
    ) -> Result<Self> {
        let p = ProblemSpec {
            operator,
            geom,
            forcing,
            exterior,
            scheme: Scheme::ExplicitMarching,
            dt_safety: 0.9,
            tol: 1e-8,
            max_iters: 200_000,
            stencil_radius: None,
            band_cells: 2,
            cutoff: 1.0,
        };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<()> {
        self.operator.check()?;
        if self.operator.dim() != self.geom.dim() {
            return Err(Error::domain("operator and grid dimensions disagree"));
        }
        if self.forcing.len() != self.geom.len() {
            return Err(Error::domain("forcing length must match the grid"));
        }
        if self.forcing.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("forcing must be finite"));
        }
        if !(self.dt_safety > 0.0 && self.dt_safety < 1.0) {
            return Err(Error::config("dt_safety must lie in (0, 1)"));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::config("tolerance must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters must be positive"));
        }
        if let Some(r) = self.stencil_radius {
            if !(r > self.geom.h && r.is_finite()) {
                return Err(Error::config("stencil radius must exceed the spacing"));
            }
        }
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return Err(Error::config("cutoff must be positive"));
        }
        if self.band_cells == 0 {
            return Err(Error::config("the Dirichlet band needs at least one cell"));
        }
        let min_count = self.geom.counts.iter().min().copied().unwrap_or(0);
        if min_count < 2 * self.band_cells + 3 {
            return Err(Error::Resolution(format!(
                "grid too coarse for a band of {} cells per side",
                self.band_cells
            )));
        }
        Ok(())
    }

    fn resolved_stencil_radius(&self) -> f64 {
        self.stencil_radius.unwrap_or_else(|| {
            let diam: f64 = self
                .geom
                .counts
                .iter()
                .map(|&c| ((c - 1) as f64 * self.geom.h).powi(2))
                .sum::<f64>()
                .sqrt();
            diam + self.cutoff
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Max over marched nodes of |Iu - f| at the returned iterate.
    pub residual: f64,
    pub dt: f64,
    pub converged: bool,
    /// Wall time; excluded from serialized reports so they stay
    /// reproducible.
    #[serde(skip)]
    pub wall_seconds: f64,
}

// ---------------------------------------------------------------------------
// Discrete operator
// ---------------------------------------------------------------------------

struct Pair {
    /// Flat offset in the extended lattice.
    off: isize,
    /// Pair shorter than the cutoff: compensated to a second difference.
    compensated: bool,
    /// Extremal weight (2 - sigma) |y|^{-n-sigma} h^n; kernel weights live
    /// in the per-kernel tables.
    w: f64,
}

struct Discrete {
    pairs: Vec<Pair>,
    /// Per kernel: (weight at +y, weight at -y) aligned with `pairs`.
    kernel_weights: Vec<Vec<(f64, f64)>>,
    /// Exact tail of the extremal operator beyond the stencil radius:
    /// weight and the constant exterior value it sees. None for bounded
    /// exteriors and kernel-family operators (truncated there).
    tail: Option<(f64, f64)>,
    /// Diagonal mass: Lipschitz bound of the node update, sets dt.
    diag: f64,
    /// Extended-lattice values: exterior entries fixed, box entries
    /// refreshed from the iterate.
    frozen: Vec<f64>,
    /// (box flat, extended flat) of the marched nodes.
    marched: Vec<(usize, usize)>,
    /// Extended flats of all box nodes, in box order.
    box_ext: Vec<usize>,
}

fn build_discrete(p: &ProblemSpec) -> Result<Discrete> {
    let geom = &p.geom;
    let n = geom.dim();
    let h = geom.h;
    let hn = h.powi(n as i32);
    let sigma = p.operator.sigma();
    let r_st = p.resolved_stencil_radius();
    let reach = (r_st / h).ceil() as usize;
    if (reach * 2 + 1).pow(n as u32) > 80_000_000 {
        return Err(Error::Resolution(
            "stencil would not fit in memory; shrink the stencil radius".into(),
        ));
    }

    // Half lattice: first nonzero component positive.
    let mut offsets: Vec<Vec<i64>> = Vec::new();
    let mut idx = vec![-(reach as i64); n];
    'walk: loop {
        if idx.iter().find(|&&v| v != 0).is_some_and(|&v| v > 0) {
            let r2: f64 = idx.iter().map(|&m| (m as f64 * h).powi(2)).sum();
            if r2.sqrt() <= r_st {
                offsets.push(idx.clone());
            }
        }
        for a in (0..n).rev() {
            idx[a] += 1;
            if idx[a] <= reach as i64 {
                continue 'walk;
            }
            idx[a] = -(reach as i64);
        }
        break;
    }

    let ext_counts: Vec<usize> = geom.counts.iter().map(|&c| c + 2 * reach).collect();
    let mut ext_strides = vec![1usize; n];
    for a in (0..n.saturating_sub(1)).rev() {
        ext_strides[a] = ext_strides[a + 1] * ext_counts[a + 1];
    }

    let kernels = p.operator.kernels();
    let extremal_class = match &p.operator {
        SolveOperator::Extremal { class, .. } => Some(*class),
        _ => None,
    };

    let mut pairs = Vec::with_capacity(offsets.len());
    let mut kernel_weights: Vec<Vec<(f64, f64)>> =
        vec![Vec::with_capacity(offsets.len()); kernels.len()];
    for m in &offsets {
        let y: Vec<f64> = m.iter().map(|&v| v as f64 * h).collect();
        let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let off: isize = m
            .iter()
            .zip(&ext_strides)
            .map(|(&v, &s)| v as isize * s as isize)
            .sum();
        let w = (2.0 - sigma) * r.powf(-(n as f64) - sigma) * hn;
        pairs.push(Pair {
            off,
            compensated: r < p.cutoff,
            w,
        });
        let y_neg: Vec<f64> = y.iter().map(|v| -v).collect();
        for (k, tab) in kernels.iter().zip(kernel_weights.iter_mut()) {
            tab.push((k.eval(&y) * hn, k.eval(&y_neg) * hn));
        }
    }

    // Tail beyond the stencil: only meaningful (and exact) when the data
    // there is a known constant and the operator is extremal.
    let tail_weight = (2.0 - sigma) * sphere_measure(n) * r_st.powf(-sigma) / sigma;
    let tail = match (&extremal_class, &p.exterior) {
        (Some(_), ExteriorRule::Zero) => Some((tail_weight, 0.0)),
        (Some(_), ExteriorRule::Constant(c)) => Some((tail_weight, *c)),
        _ => None,
    };

    // Diagonal mass: each pair moves the node value with slope at most
    // 2 sup-coefficient times its weight; the tail adds its own mass.
    let diag = match &p.operator {
        SolveOperator::Extremal { class, .. } => {
            let mass: f64 = pairs.iter().map(|pr| 2.0 * pr.w).sum();
            class.big_lambda * (mass + tail.map_or(0.0, |(wt, _)| wt))
        }
        _ => kernel_weights
            .iter()
            .map(|tab| tab.iter().map(|&(a, b)| a + b).sum::<f64>())
            .fold(0.0f64, f64::max),
    };
    if !(diag > 0.0 && diag.is_finite()) {
        return Err(Error::domain("discrete operator has no mass"));
    }

    // Extended lattice: exterior and band entries frozen at the Dirichlet
    // data, marched entries refreshed from the iterate.
    let mut frozen = vec![0.0f64; ext_counts.iter().product()];
    let mut eidx = vec![0usize; n];
    let mut pos = 0usize;
    'fill: loop {
        let z: Vec<f64> = (0..n)
            .map(|a| geom.lo[a] + (eidx[a] as f64 - reach as f64) * h)
            .collect();
        let inside = (0..n).all(|a| eidx[a] >= reach && eidx[a] < reach + geom.counts[a]);
        frozen[pos] = if inside { f64::NAN } else { p.exterior.eval(&z) };
        pos += 1;
        for a in (0..n).rev() {
            eidx[a] += 1;
            if eidx[a] < ext_counts[a] {
                continue 'fill;
            }
            eidx[a] = 0;
        }
        break;
    }

    let mut marched = Vec::new();
    let mut box_ext = Vec::with_capacity(geom.len());
    for flat in 0..geom.len() {
        let multi = geom.multi(flat);
        let ext_flat: usize = multi
            .iter()
            .zip(&ext_strides)
            .map(|(&i, &s)| (i + reach) * s)
            .sum();
        box_ext.push(ext_flat);
        if geom.margin_cells(flat) >= p.band_cells {
            marched.push((flat, ext_flat));
        } else {
            frozen[ext_flat] = p.exterior.eval(&geom.node(flat));
        }
    }
    if marched.is_empty() {
        return Err(Error::Resolution("no marched nodes inside the band".into()));
    }

    Ok(Discrete {
        pairs,
        kernel_weights,
        tail,
        diag,
        frozen,
        marched,
        box_ext,
    })
}

impl Discrete {
    /// Pucci-style pair sum: coefficient hi on positive increments, lo on
    /// negative ones. Symmetric mode treats every pair as one second
    /// difference; otherwise uncompensated pairs keep two one-sided
    /// increments.
    fn apply_extremal(&self, vals: &[f64], ex: usize, hi: f64, lo: f64, symmetric: bool) -> f64 {
        let ux = vals[ex];
        let mut acc = 0.0f64;
        for pr in &self.pairs {
            let up = vals[(ex as isize + pr.off) as usize];
            let um = vals[(ex as isize - pr.off) as usize];
            if pr.compensated || symmetric {
                let d = up + um - 2.0 * ux;
                acc += pr.w * d * if d >= 0.0 { hi } else { lo };
            } else {
                let mp = up - ux;
                let mm = um - ux;
                acc += pr.w * (mp * if mp >= 0.0 { hi } else { lo })
                    + pr.w * (mm * if mm >= 0.0 { hi } else { lo });
            }
        }
        if let Some((wt, c)) = self.tail {
            // Constant exterior makes both sides of a tail pair equal, so
            // the symmetric and one-sided forms agree here.
            let mt = c - ux;
            acc += wt * mt * if mt >= 0.0 { hi } else { lo };
        }
        acc
    }

    fn apply_kernel(&self, vals: &[f64], ex: usize, table: &[(f64, f64)]) -> f64 {
        let ux = vals[ex];
        let mut acc = 0.0f64;
        for (pr, &(wp, wm)) in self.pairs.iter().zip(table) {
            let up = vals[(ex as isize + pr.off) as usize];
            let um = vals[(ex as isize - pr.off) as usize];
            if pr.compensated {
                acc += 0.5 * (wp + wm) * (up + um - 2.0 * ux);
            } else {
                acc += wp * (up - ux) + wm * (um - ux);
            }
        }
        acc
    }

    fn apply(&self, op: &SolveOperator, vals: &[f64], ex: usize) -> f64 {
        match op {
            SolveOperator::Extremal {
                sign,
                class,
                symmetric,
            } => match sign {
                Sign::Plus => {
                    self.apply_extremal(vals, ex, class.big_lambda, class.lambda, *symmetric)
                }
                Sign::Minus => {
                    self.apply_extremal(vals, ex, class.lambda, class.big_lambda, *symmetric)
                }
            },
            SolveOperator::Linear { .. } => self.apply_kernel(vals, ex, &self.kernel_weights[0]),
            SolveOperator::Bellman { is_max, .. } => {
                let vals_k = self
                    .kernel_weights
                    .iter()
                    .map(|tab| self.apply_kernel(vals, ex, tab));
                if *is_max {
                    vals_k.fold(f64::NEG_INFINITY, f64::max)
                } else {
                    vals_k.fold(f64::INFINITY, f64::min)
                }
            }
            SolveOperator::Isaacs { families } => {
                let mut start = 0usize;
                let mut outer = f64::INFINITY;
                for fam in families {
                    let mut inner = f64::NEG_INFINITY;
                    for tab in &self.kernel_weights[start..start + fam.len()] {
                        inner = inner.max(self.apply_kernel(vals, ex, tab));
                    }
                    start += fam.len();
                    outer = outer.min(inner);
                }
                outer
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Solve
// ---------------------------------------------------------------------------

/// Multilinear blend of the exterior data sampled one cell outside each
/// box face: bounded, cheap, and exact on constants.
fn initial_guess(p: &ProblemSpec, flat: usize) -> f64 {
    let geom = &p.geom;
    let n = geom.dim();
    let x = geom.node(flat);
    let hi = geom.hi();
    let mut acc = 0.0f64;
    for a in 0..n {
        let span = hi[a] - geom.lo[a];
        let t = if span > 0.0 { (x[a] - geom.lo[a]) / span } else { 0.5 };
        let mut zl = x.clone();
        zl[a] = geom.lo[a] - geom.h;
        let mut zh = x.clone();
        zh[a] = hi[a] + geom.h;
        acc += (1.0 - t) * p.exterior.eval(&zl) + t * p.exterior.eval(&zh);
    }
    acc / n as f64
}

fn march(p: &ProblemSpec, dt: f64) -> Result<(GridFunction, SolveReport)> {
    let start = Instant::now();
    let mut disc = build_discrete(p)?;
    for &(flat, ext_flat) in &disc.marched {
        disc.frozen[ext_flat] = initial_guess(p, flat);
    }
    let disc = disc;
    let mut cur = disc.frozen.clone();
    let mut next = cur.clone();

    let mut history: Vec<f64> = Vec::new();
    let mut iterations = 0usize;
    let mut residual;
    let mut converged = false;
    loop {
        let updates: Vec<(f64, f64)> = disc
            .marched
            .par_iter()
            .map(|&(flat, ex)| {
                let res = disc.apply(&p.operator, &cur, ex) - p.forcing[flat];
                (cur[ex] + dt * res, res.abs())
            })
            .collect();
        residual = updates.iter().map(|u| u.1).fold(0.0f64, f64::max);
        if !residual.is_finite() {
            return Err(Error::Diverged(format!(
                "residual became non-finite at iteration {iterations}"
            )));
        }
        history.push(residual);
        if residual <= p.tol {
            converged = true;
            break;
        }
        if iterations >= 100 {
            let prev = history[iterations - 100];
            if residual > 10.0 * prev {
                return Err(Error::Diverged(format!(
                    "residual grew from {prev:.3e} to {residual:.3e} over 100 iterations \
                     (iteration {iterations}, dt {dt:.3e}); last residuals: {:?}",
                    &history[history.len().saturating_sub(5)..]
                )));
            }
        }
        if iterations >= p.max_iters {
            break;
        }
        for (&(_, ex), &(val, _)) in disc.marched.iter().zip(&updates) {
            next[ex] = val;
        }
        std::mem::swap(&mut cur, &mut next);
        iterations += 1;
    }

    let values: Vec<f64> = disc.box_ext.iter().map(|&ex| cur[ex]).collect();
    let u = GridFunction::new(p.geom.clone(), values, p.exterior.clone())?;
    Ok((
        u,
        SolveReport {
            iterations,
            residual,
            dt,
            converged,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Runs the explicit marching scheme to the residual tolerance. Returns a
/// non-converged report when max_iters runs out; true divergence (10x
/// residual growth over 100 iterations) is an error.
pub fn solve(p: &ProblemSpec) -> Result<(GridFunction, SolveReport)> {
    p.check()?;
    let disc = build_discrete(p)?;
    let dt = p.dt_safety / disc.diag;
    drop(disc);
    march(p, dt)
}

/// Residual field |Iu - f| of an iterate: zero on the Dirichlet band,
/// pointwise elsewhere, with max and mean-absolute summaries.
pub struct ResidualReport {
    pub grid: GridFunction,
    pub max: f64,
    pub l1: f64,
}

pub fn residual(u: &GridFunction, p: &ProblemSpec) -> Result<ResidualReport> {
    p.check()?;
    if u.geom.counts != p.geom.counts
        || u.geom
            .lo
            .iter()
            .zip(&p.geom.lo)
            .any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + b.abs()))
        || (u.geom.h - p.geom.h).abs() > 1e-12 * p.geom.h
    {
        return Err(Error::domain("iterate and problem grids disagree"));
    }
    let mut disc = build_discrete(p)?;
    for &(flat, ext_flat) in &disc.marched {
        disc.frozen[ext_flat] = u.values[flat];
    }
    let vals = &disc.frozen;
    let per_node: Vec<(usize, f64)> = disc
        .marched
        .par_iter()
        .map(|&(flat, ex)| {
            (
                flat,
                (disc.apply(&p.operator, vals, ex) - p.forcing[flat]).abs(),
            )
        })
        .collect();
    let mut grid_vals = vec![0.0f64; p.geom.len()];
    let mut max = 0.0f64;
    let mut sum = 0.0f64;
    for &(flat, r) in &per_node {
        grid_vals[flat] = r;
        max = max.max(r);
        sum += r;
    }
    let grid = GridFunction::new(p.geom.clone(), grid_vals, ExteriorRule::Zero)?;
    Ok(ResidualReport {
        grid,
        max,
        l1: sum / per_node.len() as f64,
    })
}
