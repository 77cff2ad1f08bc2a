//! Discrete concave envelopes on uniform grids: least concave majorants of
//! the positive part of node data over a ball, their supporting slopes,
//! contact sets, and slope-image (gradient-image) diagnostics.
//!
//! The envelope of node data u on B_{2R} is realized as the pointwise
//! minimum of a finite family of affine planes, each of which dominates
//! u+ = max(u, 0) at every node of B_{2R}; outside B_{2R} the envelope is
//! zero by definition. In one dimension the family comes from the exact
//! upper hull of the node set, so the result is the exact discrete
//! envelope. In higher dimensions planes are indexed by a uniform slope
//! grid with per-axis range [-2 M0/R, 2 M0/R], M0 = max u+, and the
//! envelope is the double discrete Legendre transform of u+ restricted to
//! that grid: b*(p) = max_x (u+(x) - p.x) over B_{2R} nodes, then
//! Gamma(x) = min_p (p.x + b*(p)). Every such plane dominates u+ exactly,
//! so Gamma is a true concave majorant; it overshoots the unconstrained
//! discrete envelope by at most O(slope spacing * R).
//!
//! Each node stores one supporting slope (an element of the
//! superdifferential). Ties are broken toward the smallest-norm slope so
//! results are deterministic; at kinks the full superdifferential is still
//! visible through the per-axis difference intervals used by the
//! slope-image diagnostics.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::norm;
use crate::grid::{ExteriorRule, GridFunction, GridGeometry};

/// Controls for envelope construction. `slope_count` is the number of
/// slope-grid points per axis (odd, so the zero slope is representable);
/// `contact_tol` overrides the default contact tolerance.
#[derive(Clone, Debug, Serialize)]
pub struct EnvelopeConfig {
    pub slope_count: usize,
    pub contact_tol: Option<f64>,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        EnvelopeConfig {
            slope_count: 65,
            contact_tol: None,
        }
    }
}

impl EnvelopeConfig {
    fn check(&self) -> Result<()> {
        if self.slope_count < 3 || self.slope_count % 2 == 0 {
            return Err(Error::config(format!(
                "slope_count must be odd and at least 3, got {}",
                self.slope_count
            )));
        }
        if let Some(t) = self.contact_tol {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::config("contact_tol must be positive and finite"));
            }
        }
        Ok(())
    }
}

/// Concave majorant of u+ over the nodes of B_{2R}, with one supporting
/// slope per node. Values and slopes are stored for every grid node; nodes
/// outside B_{2R} are inactive and carry value 0 and slope 0.
#[derive(Clone, Debug)]
pub struct ConcaveEnvelope {
    base: GridFunction,
    radius: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
    active: Vec<bool>,
    contact_tol: f64,
    slope_spacing: f64,
    slope_range: f64,
    slope_count: usize,
    peak: f64,
}

impl ConcaveEnvelope {
    pub fn base(&self) -> &GridFunction {
        &self.base
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.base.geom
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// M0 = max u+ over the active nodes.
    pub fn peak(&self) -> f64 {
        self.peak
    }

    pub fn contact_tol(&self) -> f64 {
        self.contact_tol
    }

    /// Spacing of the nominal slope grid (cell side for image volumes).
    pub fn slope_spacing(&self) -> f64 {
        self.slope_spacing
    }

    /// Per-axis slope bound 2 M0 / R.
    pub fn slope_range(&self) -> f64 {
        self.slope_range
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, flat: usize) -> f64 {
        self.values[flat]
    }

    pub fn slope(&self, flat: usize) -> &[f64] {
        let n = self.base.dim();
        &self.slopes[flat * n..(flat + 1) * n]
    }

    pub fn is_active(&self, flat: usize) -> bool {
        self.active[flat]
    }

    /// Envelope values as a grid function (zero exterior), for dumps.
    pub fn to_grid_function(&self) -> Result<GridFunction> {
        GridFunction::new(self.base.geom.clone(), self.values.clone(), ExteriorRule::Zero)
    }

    /// Envelope of the envelope's own values. The sign hypothesis is
    /// deliberately skipped: Gamma is nonnegative inside B_{2R} by
    /// construction, which a fresh `concave_envelope` call would reject.
    /// Idempotence means the result equals this envelope within
    /// `contact_tol`.
    pub fn re_envelope(&self) -> Result<ConcaveEnvelope> {
        let data = GridFunction::new(
            self.base.geom.clone(),
            self.values.clone(),
            ExteriorRule::Zero,
        )?;
        let cfg = EnvelopeConfig {
            slope_count: self.slope_count,
            contact_tol: Some(self.contact_tol),
        };
        envelope_core(data, self.radius, &cfg)
    }

    /// Per-axis supergradient interval [d+, d-] at a node from one-sided
    /// differences, falling back to the stored slope component where a
    /// neighbor is missing or inactive. For concave data d+ <= d-; the
    /// stored slope always lies inside.
    pub fn slope_box(&self, flat: usize) -> Option<Vec<(f64, f64)>> {
        if !self.active[flat] {
            return None;
        }
        let geom = &self.base.geom;
        let n = geom.dim();
        let multi = geom.multi(flat);
        let strides = geom.strides();
        let h = geom.h;
        let stored = self.slope(flat);
        let mut out = Vec::with_capacity(n);
        for a in 0..n {
            let up = if multi[a] + 1 < geom.counts[a] && self.active[flat + strides[a]] {
                (self.values[flat + strides[a]] - self.values[flat]) / h
            } else {
                stored[a]
            };
            let down = if multi[a] > 0 && self.active[flat - strides[a]] {
                (self.values[flat] - self.values[flat - strides[a]]) / h
            } else {
                stored[a]
            };
            let lo = up.min(stored[a]).min(down);
            let hi = down.max(stored[a]).max(up);
            out.push((lo, hi));
        }
        Some(out)
    }
}

/// Least concave majorant of u+ on the B_{2R} node set. The data must
/// satisfy the one-sided sign hypothesis u <= 0 at every node outside B_R
/// (the grid box has to cover B_{2R}).
pub fn concave_envelope(u: GridFunction, radius: f64) -> Result<ConcaveEnvelope> {
    concave_envelope_with(u, radius, &EnvelopeConfig::default())
}

pub fn concave_envelope_with(
    u: GridFunction,
    radius: f64,
    cfg: &EnvelopeConfig,
) -> Result<ConcaveEnvelope> {
    cfg.check()?;
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::domain(format!("radius must be positive, got {radius}")));
    }
    let geom = &u.geom;
    let n = geom.dim();
    if n > 3 {
        return Err(Error::domain("envelopes support dimensions 1 to 3"));
    }
    let slack = 1e-9 * (1.0 + 2.0 * radius);
    let hi = geom.hi();
    for a in 0..n {
        if geom.lo[a] > -2.0 * radius + slack || hi[a] < 2.0 * radius - slack {
            return Err(Error::domain(format!(
                "grid box must cover the ball of radius {} (axis {a} spans [{}, {}])",
                2.0 * radius,
                geom.lo[a],
                hi[a]
            )));
        }
    }
    // Sign hypothesis: u <= 0 outside B_R. Interior nodes are checked
    // directly; a constant exterior rule is checked too, closure-valued
    // exteriors are trusted.
    let outer = radius * (1.0 + 1e-12);
    for (i, x) in geom.nodes() {
        if norm(&x) > outer && u.values[i] > 0.0 {
            return Err(Error::domain(format!(
                "data is positive ({:.3e}) at |x| = {:.6} outside the ball of radius {radius}; \
                 the envelope requires u <= 0 there",
                u.values[i],
                norm(&x)
            )));
        }
    }
    if let ExteriorRule::Constant(c) = u.exterior {
        if c > 0.0 {
            return Err(Error::domain(
                "exterior rule is a positive constant; the envelope requires u <= 0 outside the ball",
            ));
        }
    }
    envelope_core(u, radius, cfg)
}

/// Shared builder; assumes the geometry checks passed and skips the sign
/// hypothesis (see `re_envelope`).
fn envelope_core(u: GridFunction, radius: f64, cfg: &EnvelopeConfig) -> Result<ConcaveEnvelope> {
    let geom = u.geom.clone();
    let n = geom.dim();
    let len = geom.len();
    let ball = 2.0 * radius * (1.0 + 1e-12);
    let active: Vec<bool> = (0..len).map(|i| norm(&geom.node(i)) <= ball).collect();
    let peak = (0..len)
        .filter(|&i| active[i])
        .map(|i| u.values[i])
        .fold(0.0f64, f64::max);

    if peak <= 0.0 {
        // u+ vanishes: the zero plane is the envelope.
        let tol = cfg.contact_tol.unwrap_or(1e-12);
        return Ok(ConcaveEnvelope {
            base: u,
            radius,
            values: vec![0.0; len],
            slopes: vec![0.0; len * n],
            active,
            contact_tol: tol,
            slope_spacing: 0.0,
            slope_range: 0.0,
            slope_count: cfg.slope_count,
            peak: 0.0,
        });
    }

    let slope_range = 2.0 * peak / radius;
    let p_count = cfg.slope_count;
    let slope_spacing = 2.0 * slope_range / (p_count - 1) as f64;

    let (values, slopes) = if n == 1 {
        hull_envelope(&u, &active)
    } else {
        transform_envelope(&u, &active, slope_range, p_count)
    };

    let contact_tol = cfg.contact_tol.unwrap_or(if n == 1 {
        // Exact hull: only rounding separates contact values.
        1e-12 * (1.0 + peak)
    } else {
        // Slope quantization flattens contact by O(h) per unit of slope
        // error.
        2.0 * geom.h * slope_spacing + 1e-12
    });

    Ok(ConcaveEnvelope {
        base: u,
        radius,
        values,
        slopes,
        active,
        contact_tol,
        slope_spacing,
        slope_range,
        slope_count: p_count,
        peak,
    })
}

/// Smallest-norm element of the slope interval [a, b] (a <= b, possibly
/// infinite): zero when the interval brackets it, else the nearer end.
fn min_norm_in(a: f64, b: f64) -> f64 {
    if a <= 0.0 && 0.0 <= b {
        0.0
    } else if a > 0.0 {
        a
    } else {
        b
    }
}

/// Exact 1-D envelope: upper hull of the active nodes by monotone chain.
fn hull_envelope(u: &GridFunction, active: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let geom = &u.geom;
    let len = geom.len();
    let act: Vec<usize> = (0..len).filter(|&i| active[i]).collect();
    let xs: Vec<f64> = act.iter().map(|&i| geom.node(i)[0]).collect();
    let vs: Vec<f64> = act.iter().map(|&i| u.values[i].max(0.0)).collect();
    let m = act.len();

    // Upper hull, left to right: pop while the middle point fails to make
    // a right turn (collinear points are dropped too).
    let mut hull: Vec<usize> = Vec::with_capacity(m);
    for i in 0..m {
        while hull.len() >= 2 {
            let o = hull[hull.len() - 2];
            let a = hull[hull.len() - 1];
            let ccw = (xs[a] - xs[o]) * (vs[i] - vs[o]) - (vs[a] - vs[o]) * (xs[i] - xs[o]);
            if ccw >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }

    let seg_slope = |s: usize| -> f64 {
        let (a, b) = (hull[s], hull[s + 1]);
        (vs[b] - vs[a]) / (xs[b] - xs[a])
    };

    let mut values = vec![0.0; len];
    let mut slopes = vec![0.0; len];
    let mut seg = 0usize;
    for (k, &flat) in act.iter().enumerate() {
        while seg + 1 < hull.len() - 1 && k >= hull[seg + 1] {
            seg += 1;
        }
        let (a, b) = (hull[seg], hull[seg + 1]);
        if k == a || k == b {
            // Hull vertex: value is the data point, slope interval spans
            // the adjacent segments (unbounded at the ends).
            let v = if k == a { vs[a] } else { vs[b] };
            let idx = if k == a { seg } else { seg + 1 };
            let right = if idx < hull.len() - 1 {
                seg_slope(idx)
            } else {
                f64::NEG_INFINITY
            };
            let left = if idx > 0 {
                seg_slope(idx - 1)
            } else {
                f64::INFINITY
            };
            values[flat] = v;
            slopes[flat] = min_norm_in(right, left);
        } else {
            let t = (xs[k] - xs[a]) / (xs[b] - xs[a]);
            values[flat] = vs[a] + t * (vs[b] - vs[a]);
            slopes[flat] = seg_slope(seg);
        }
    }
    (values, slopes)
}

/// One axis pass of a separable transform over a mixed-shape array:
/// out[.., q, ..] = opt_t (out_coords[q] * in_coords[t] + in[.., t, ..]).
/// Minimizing passes can record argmins (ties prefer the smaller
/// |in_coords|, then the earlier index) for slope backtracking.
fn transform_axis(
    data: &[f64],
    shape: &[usize],
    axis: usize,
    out_coords: &[f64],
    in_coords: &[f64],
    maximize: bool,
    record_args: bool,
) -> (Vec<f64>, Option<Vec<u32>>) {
    let n = shape.len();
    let l_in = shape[axis];
    let l_out = out_coords.len();
    let post: usize = shape[axis + 1..n].iter().product();
    let pre: usize = shape[..axis].iter().product();
    let out_len = pre * l_out * post;

    let mut out = vec![0.0f64; out_len];
    let mut args = if record_args { vec![0u32; out_len] } else { Vec::new() };

    let in_slab = l_in * post;
    let out_slab = l_out * post;
    debug_assert_eq!(pre * in_slab, data.len());

    // Parallel over the leading (pre) blocks; each block's output slab is
    // contiguous, so writes never alias.
    if record_args {
        out.par_chunks_mut(out_slab)
            .zip(args.par_chunks_mut(out_slab))
            .enumerate()
            .for_each(|(p, (out_chunk, arg_chunk))| {
                let src = &data[p * in_slab..(p + 1) * in_slab];
                let mut line = vec![0.0f64; l_in];
                for post_i in 0..post {
                    for t in 0..l_in {
                        line[t] = src[t * post + post_i];
                    }
                    for q in 0..l_out {
                        let c = out_coords[q];
                        let mut best = c * in_coords[0] + line[0];
                        let mut best_t = 0usize;
                        for t in 1..l_in {
                            let v = c * in_coords[t] + line[t];
                            if v < best {
                                best = v;
                                best_t = t;
                            } else if v == best && in_coords[t].abs() < in_coords[best_t].abs() {
                                best_t = t;
                            }
                        }
                        out_chunk[q * post + post_i] = best;
                        arg_chunk[q * post + post_i] = best_t as u32;
                    }
                }
            });
        (out, Some(args))
    } else {
        out.par_chunks_mut(out_slab).enumerate().for_each(|(p, out_chunk)| {
            let src = &data[p * in_slab..(p + 1) * in_slab];
            let mut line = vec![0.0f64; l_in];
            for post_i in 0..post {
                for t in 0..l_in {
                    line[t] = src[t * post + post_i];
                }
                for q in 0..l_out {
                    let c = out_coords[q];
                    let mut best = c * in_coords[0] + line[0];
                    for t in 1..l_in {
                        let v = c * in_coords[t] + line[t];
                        let better = if maximize { v > best } else { v < best };
                        if better {
                            best = v;
                        }
                    }
                    out_chunk[q * post + post_i] = best;
                }
            }
        });
        (out, None)
    }
}

/// Double discrete Legendre transform for n >= 2. Inactive nodes carry a
/// -inf sentinel so they never constrain the plane family.
fn transform_envelope(
    u: &GridFunction,
    active: &[bool],
    slope_range: f64,
    p_count: usize,
) -> (Vec<f64>, Vec<f64>) {
    let geom = &u.geom;
    let n = geom.dim();
    let len = geom.len();
    let ds = 2.0 * slope_range / (p_count - 1) as f64;
    let slope_vals: Vec<f64> = (0..p_count).map(|j| -slope_range + j as f64 * ds).collect();
    let neg_slope_vals: Vec<f64> = slope_vals.iter().map(|p| -p).collect();
    let axis_coords: Vec<Vec<f64>> = (0..n)
        .map(|a| {
            (0..geom.counts[a])
                .map(|i| geom.lo[a] + geom.h * i as f64)
                .collect()
        })
        .collect();

    // First transform: b*(p) = max_x (u+(x) - p.x), one axis at a time.
    let mut data: Vec<f64> = (0..len)
        .map(|i| if active[i] { u.values[i].max(0.0) } else { f64::NEG_INFINITY })
        .collect();
    let mut shape: Vec<usize> = geom.counts.clone();
    for a in 0..n {
        let (next, _) =
            transform_axis(&data, &shape, a, &neg_slope_vals, &axis_coords[a], true, false);
        data = next;
        shape[a] = p_count;
    }

    // Second transform: Gamma(x) = min_p (p.x + b*(p)), recording argmins
    // per axis for slope backtracking.
    let mut arg_layers: Vec<(Vec<u32>, Vec<usize>)> = Vec::with_capacity(n);
    for a in 0..n {
        let (next, args) =
            transform_axis(&data, &shape, a, &axis_coords[a], &slope_vals, false, true);
        data = next;
        shape[a] = geom.counts[a];
        arg_layers.push((args.expect("argmin recording requested"), shape.clone()));
    }

    let mut values = vec![0.0f64; len];
    let mut slopes = vec![0.0f64; len * n];
    let layer_strides: Vec<Vec<usize>> = arg_layers
        .iter()
        .map(|(_, shp)| {
            let mut s = vec![1usize; n];
            for a in (0..n - 1).rev() {
                s[a] = s[a + 1] * shp[a + 1];
            }
            s
        })
        .collect();

    for flat in 0..len {
        if !active[flat] {
            continue;
        }
        values[flat] = data[flat];
        let multi = geom.multi(flat);
        // Backtrack from the last pass: layer a is indexed by node indices
        // on axes 0..=a and slope indices on axes a+1..n.
        let mut p_idx = vec![0usize; n];
        for a in (0..n).rev() {
            let (layer, _) = &arg_layers[a];
            let strides = &layer_strides[a];
            let mut pos = 0usize;
            for b in 0..n {
                let idx = if b <= a { multi[b] } else { p_idx[b] };
                pos += idx * strides[b];
            }
            p_idx[a] = layer[pos] as usize;
        }
        for a in 0..n {
            slopes[flat * n + a] = slope_vals[p_idx[a]];
        }
    }
    (values, slopes)
}

/// Grid point in contact with the envelope, together with its supporting
/// slope and (optional) drift-sign tags for the eta-restricted contact
/// subsets.
#[derive(Clone, Debug, Serialize)]
pub struct ContactNode {
    pub flat: usize,
    pub x: Vec<f64>,
    /// Gamma(x) - u(x) at the node (within the contact tolerance).
    pub gap: f64,
    pub slope: Vec<f64>,
    /// True when the supplied direction functional satisfies B+(slope) <= 0.
    pub eta_plus: Option<bool>,
    pub eta_minus: Option<bool>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ContactSet {
    pub nodes: Vec<ContactNode>,
    pub tol: f64,
    pub radius: f64,
}

impl ContactSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Binary search by flat index (nodes are emitted in flat order).
    pub fn contains_flat(&self, flat: usize) -> bool {
        self.nodes.binary_search_by_key(&flat, |c| c.flat).is_ok()
    }
}

/// Nodes of B_R where the data touches its envelope (Gamma - u within the
/// contact tolerance). With u identically zero every node of B_R is in
/// contact; that degenerate case is intended behavior.
pub fn contact_set(env: &ConcaveEnvelope) -> ContactSet {
    contact_set_with_drift(env, None, None)
}

/// Contact set with drift-sign classification: when a direction functional
/// is supplied, each node is tagged with B(slope) <= 0 for the
/// eta-restricted subsets.
pub fn contact_set_with_drift(
    env: &ConcaveEnvelope,
    drift_plus: Option<&dyn Fn(&[f64]) -> f64>,
    drift_minus: Option<&dyn Fn(&[f64]) -> f64>,
) -> ContactSet {
    let geom = env.geometry();
    let ball = env.radius * (1.0 + 1e-12);
    let mut nodes = Vec::new();
    for (i, x) in geom.nodes() {
        if !env.active[i] || norm(&x) > ball {
            continue;
        }
        let gap = env.values[i] - env.base.values[i];
        if gap <= env.contact_tol {
            let slope = env.slope(i).to_vec();
            nodes.push(ContactNode {
                flat: i,
                x,
                gap,
                eta_plus: drift_plus.map(|f| f(&slope) <= 0.0),
                eta_minus: drift_minus.map(|f| f(&slope) <= 0.0),
                slope,
            });
        }
    }
    ContactSet {
        nodes,
        tol: env.contact_tol,
        radius: env.radius,
    }
}

/// Cell-counting volume of the slope image over the nodes of B_radius:
/// each node contributes its per-axis supergradient interval, and the
/// volume is the measure of the union of slope-grid cells (side =
/// `slope_spacing`) touched by those boxes. For n >= 2 the per-axis box
/// overestimates the true superdifferential, so this is a diagnostic
/// surrogate, exact in one dimension.
pub fn gradient_image_volume(env: &ConcaveEnvelope, radius: f64) -> f64 {
    let ds = env.slope_spacing;
    if ds == 0.0 {
        return 0.0;
    }
    let geom = env.geometry();
    let n = geom.dim();
    let ball = radius * (1.0 + 1e-12);
    let mut cells: HashSet<Vec<i32>> = HashSet::new();
    for (i, x) in geom.nodes() {
        if !env.active[i] || norm(&x) > ball {
            continue;
        }
        let boxes = match env.slope_box(i) {
            Some(b) => b,
            None => continue,
        };
        // Per-axis index ranges of slope cells intersecting the interval.
        let ranges: Vec<(i32, i32)> = boxes
            .iter()
            .map(|&(lo, hi)| {
                let lo_j = ((lo + env.slope_range) / ds - 0.5).ceil() as i32;
                let hi_j = ((hi + env.slope_range) / ds + 0.5).floor() as i32;
                let cap = (env.slope_count - 1) as i32;
                (lo_j.clamp(0, cap), hi_j.clamp(0, cap))
            })
            .collect();
        let mut idx: Vec<i32> = ranges.iter().map(|r| r.0).collect();
        'fill: loop {
            cells.insert(idx.clone());
            for a in (0..n).rev() {
                idx[a] += 1;
                if idx[a] <= ranges[a].1 {
                    continue 'fill;
                }
                idx[a] = ranges[a].0;
            }
            break;
        }
    }
    cells.len() as f64 * ds.powi(n as i32)
}

/// True when the slope q lies in some node's supergradient box over
/// B_radius, with half a slope cell of slack (cell-level membership, the
/// same resolution as `gradient_image_volume`).
pub fn slope_image_contains(env: &ConcaveEnvelope, radius: f64, q: &[f64]) -> bool {
    let geom = env.geometry();
    let n = geom.dim();
    assert_eq!(q.len(), n, "slope dimension mismatch");
    let slack = env.slope_spacing * 0.5;
    let ball = radius * (1.0 + 1e-12);
    for (i, x) in geom.nodes() {
        if !env.active[i] || norm(&x) > ball {
            continue;
        }
        if let Some(boxes) = env.slope_box(i) {
            if boxes
                .iter()
                .zip(q)
                .all(|(&(lo, hi), &qa)| qa >= lo - slack && qa <= hi + slack)
            {
                return true;
            }
        }
    }
    false
}
