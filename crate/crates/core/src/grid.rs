//! Uniform tensor-product grids over axis-aligned boxes, with an explicit
//! rule for values outside the box. Functions here are "grid functions":
//! node values plus an exterior rule, evaluated anywhere by multilinear
//! interpolation inside the closed box and by the rule outside.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub lo: Vec<f64>,
    pub counts: Vec<usize>,
    pub h: f64,
}

impl GridGeometry {
    pub fn new(lo: Vec<f64>, counts: Vec<usize>, h: f64) -> Result<Self> {
        if lo.is_empty() || lo.len() != counts.len() {
            return Err(Error::domain("grid lo/counts dimension mismatch"));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::domain(format!("grid spacing must be positive, got {h}")));
        }
        if counts.iter().any(|&c| c < 2) {
            return Err(Error::domain("grids need at least 2 nodes per axis"));
        }
        if lo.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("grid origin must be finite"));
        }
        Ok(GridGeometry { lo, counts, h })
    }

    /// Symmetric box [-a, a]^n with `count` nodes per axis.
    pub fn centered(dim: usize, a: f64, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::domain("need at least 2 nodes per axis"));
        }
        let h = 2.0 * a / (count - 1) as f64;
        GridGeometry::new(vec![-a; dim], vec![count; dim], h)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn hi(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.counts)
            .map(|(l, c)| l + self.h * (c - 1) as f64)
            .collect()
    }

    pub fn strides(&self) -> Vec<usize> {
        let n = self.dim();
        let mut s = vec![1usize; n];
        for a in (0..n.saturating_sub(1)).rev() {
            s[a] = s[a + 1] * self.counts[a + 1];
        }
        s
    }

    pub fn flat(&self, multi: &[usize]) -> usize {
        let strides = self.strides();
        multi.iter().zip(&strides).map(|(m, s)| m * s).sum()
    }

    pub fn multi(&self, flat: usize) -> Vec<usize> {
        let mut rem = flat;
        let strides = self.strides();
        strides
            .iter()
            .map(|s| {
                let q = rem / s;
                rem %= s;
                q
            })
            .collect()
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi(flat)
            .iter()
            .zip(&self.lo)
            .map(|(m, l)| l + self.h * *m as f64)
            .collect()
    }

    /// True when x lies in the closed box.
    pub fn contains(&self, x: &[f64]) -> bool {
        let eps = 1e-12 * self.h;
        x.iter()
            .zip(self.lo.iter().zip(self.hi()))
            .all(|(xi, (lo, hi))| *xi >= lo - eps && *xi <= hi + eps)
    }

    /// Distance from a node to the nearest box face, in whole cells.
    pub fn margin_cells(&self, flat: usize) -> usize {
        self.multi(flat)
            .iter()
            .zip(&self.counts)
            .map(|(m, c)| (*m).min(c - 1 - m))
            .min()
            .unwrap()
    }

    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let multi: Vec<usize> = x
            .iter()
            .zip(self.lo.iter().zip(&self.counts))
            .map(|(xi, (lo, c))| {
                let t = ((xi - lo) / self.h).round();
                (t.max(0.0) as usize).min(c - 1)
            })
            .collect();
        self.flat(&multi)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (usize, Vec<f64>)> + '_ {
        (0..self.len()).map(|i| (i, self.node(i)))
    }
}

type BoundedFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Values outside the grid box. `Bounded` carries its own sup bound so
/// tail estimates stay finite; constructors reject non-finite data.
#[derive(Clone)]
pub enum ExteriorRule {
    Zero,
    Constant(f64),
    Bounded { f: BoundedFn, sup_abs: f64 },
}

impl fmt::Debug for ExteriorRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExteriorRule::Zero => write!(f, "Zero"),
            ExteriorRule::Constant(c) => write!(f, "Constant({c})"),
            ExteriorRule::Bounded { sup_abs, .. } => write!(f, "Bounded {{ sup_abs: {sup_abs} }}"),
        }
    }
}

impl ExteriorRule {
    pub fn constant(c: f64) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::domain("exterior constant must be finite"));
        }
        Ok(ExteriorRule::Constant(c))
    }

    pub fn bounded(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static, sup_abs: f64) -> Result<Self> {
        if !(sup_abs.is_finite() && sup_abs >= 0.0) {
            return Err(Error::domain("exterior sup bound must be finite and nonnegative"));
        }
        Ok(ExteriorRule::Bounded {
            f: Arc::new(f),
            sup_abs,
        })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ExteriorRule::Zero => 0.0,
            ExteriorRule::Constant(c) => *c,
            ExteriorRule::Bounded { f, .. } => f(x),
        }
    }

    pub fn sup_abs(&self) -> f64 {
        match self {
            ExteriorRule::Zero => 0.0,
            ExteriorRule::Constant(c) => c.abs(),
            ExteriorRule::Bounded { sup_abs, .. } => *sup_abs,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GridFunction {
    pub geom: GridGeometry,
    pub values: Vec<f64>,
    pub exterior: ExteriorRule,
}

impl GridFunction {
    pub fn new(geom: GridGeometry, values: Vec<f64>, exterior: ExteriorRule) -> Result<Self> {
        if values.len() != geom.len() {
            return Err(Error::domain(format!(
                "value count {} does not match grid size {}",
                values.len(),
                geom.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("grid values must be finite"));
        }
        Ok(GridFunction {
            geom,
            values,
            exterior,
        })
    }

    /// Sample a closure at every node.
    pub fn from_fn(
        geom: GridGeometry,
        exterior: ExteriorRule,
        f: impl Fn(&[f64]) -> f64,
    ) -> Result<Self> {
        let values: Vec<f64> = (0..geom.len()).map(|i| f(&geom.node(i))).collect();
        GridFunction::new(geom, values, exterior)
    }

    pub fn dim(&self) -> usize {
        self.geom.dim()
    }

    /// Multilinear interpolation inside the closed box, exterior rule
    /// outside.
    pub fn eval(&self, x: &[f64]) -> f64 {
        if !self.geom.contains(x) {
            return self.exterior.eval(x);
        }
        let n = self.dim();
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0f64; n];
        for a in 0..n {
            let t = (x[a] - self.geom.lo[a]) / self.geom.h;
            let cells = self.geom.counts[a] - 1;
            let i = (t.floor().max(0.0) as usize).min(cells - 1 + usize::from(cells == 0));
            let i = i.min(cells.saturating_sub(1));
            base[a] = i;
            frac[a] = (t - i as f64).clamp(0.0, 1.0);
        }
        let strides = self.geom.strides();
        let base_flat: usize = base.iter().zip(&strides).map(|(b, s)| b * s).sum();
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut off = 0usize;
            for a in 0..n {
                if corner >> a & 1 == 1 {
                    w *= frac[a];
                    off += strides[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w != 0.0 {
                acc += w * self.values[base_flat + off];
            }
        }
        acc
    }

    /// Catmull-Rom tensor interpolation: third-order accurate on smooth
    /// data and exact on quadratics. Falls back to the linear weights on
    /// axes whose four-node window would leave the box. Not monotone; the
    /// marching solver must keep using `eval`.
    pub fn eval_cubic(&self, x: &[f64]) -> f64 {
        if !self.geom.contains(x) {
            return self.exterior.eval(x);
        }
        let n = self.dim();
        let strides = self.geom.strides();
        // Per-axis taps: (first node index, weights).
        let mut axis_taps: Vec<(usize, [f64; 4], usize)> = Vec::with_capacity(n);
        for a in 0..n {
            let t = (x[a] - self.geom.lo[a]) / self.geom.h;
            let cells = self.geom.counts[a] - 1;
            let i = (t.floor().max(0.0) as usize).min(cells.saturating_sub(1));
            let f = (t - i as f64).clamp(0.0, 1.0);
            if i >= 1 && i + 2 <= cells {
                let f2 = f * f;
                let f3 = f2 * f;
                let w = [
                    0.5 * (-f3 + 2.0 * f2 - f),
                    0.5 * (3.0 * f3 - 5.0 * f2 + 2.0),
                    0.5 * (-3.0 * f3 + 4.0 * f2 + f),
                    0.5 * (f3 - f2),
                ];
                axis_taps.push((i - 1, w, 4));
            } else {
                axis_taps.push((i, [1.0 - f, f, 0.0, 0.0], 2));
            }
        }
        let mut acc = 0.0;
        let total: usize = axis_taps.iter().map(|t| t.2).product();
        for combo in 0..total {
            let mut rem = combo;
            let mut w = 1.0;
            let mut flat = 0usize;
            for a in 0..n {
                let (start, ws, m) = axis_taps[a];
                let j = rem % m;
                rem /= m;
                w *= ws[j];
                flat += (start + j) * strides[a];
            }
            if w != 0.0 {
                acc += w * self.values[flat];
            }
        }
        acc
    }

    /// Value at a lattice position that may fall outside the stored box;
    /// exterior positions use the rule.
    pub fn lattice_value(&self, multi: &[i64]) -> f64 {
        let n = self.dim();
        let mut flat = 0usize;
        let strides = self.geom.strides();
        for a in 0..n {
            let m = multi[a];
            if m < 0 || m as usize >= self.geom.counts[a] {
                let x: Vec<f64> = (0..n)
                    .map(|b| self.geom.lo[b] + self.geom.h * multi[b] as f64)
                    .collect();
                return self.exterior.eval(&x);
            }
            flat += m as usize * strides[a];
        }
        self.values[flat]
    }

    pub fn sup_interior(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn sup_everywhere(&self) -> f64 {
        self.sup_interior().max(self.exterior.sup_abs())
    }

    /// Centered-difference gradient at a node (needs one cell of margin).
    pub fn gradient(&self, flat: usize) -> Result<Vec<f64>> {
        if self.geom.margin_cells(flat) < 1 {
            return Err(Error::domain(format!(
                "gradient needs one interior cell at node {flat}"
            )));
        }
        let strides = self.geom.strides();
        Ok((0..self.dim())
            .map(|a| {
                (self.values[flat + strides[a]] - self.values[flat - strides[a]])
                    / (2.0 * self.geom.h)
            })
            .collect())
    }

    /// Centered second differences with the given cell stride, returned as
    /// a dense symmetric matrix in row-major order.
    pub fn hessian(&self, flat: usize, stride_cells: usize) -> Result<Vec<f64>> {
        let s = stride_cells.max(1);
        if self.geom.margin_cells(flat) < s {
            return Err(Error::domain(format!(
                "second differences need {s} interior cells at node {flat}"
            )));
        }
        let n = self.dim();
        let strides = self.geom.strides();
        let hh = (self.geom.h * s as f64).powi(2);
        let mut out = vec![0.0; n * n];
        for a in 0..n {
            let sa = strides[a] * s;
            out[a * n + a] =
                (self.values[flat + sa] - 2.0 * self.values[flat] + self.values[flat - sa]) / hh;
            for b in a + 1..n {
                let sb = strides[b] * s;
                let v = (self.values[flat + sa + sb] - self.values[flat + sa - sb]
                    - self.values[flat - sa + sb]
                    + self.values[flat - sa - sb])
                    / (4.0 * hh);
                out[a * n + b] = v;
                out[b * n + a] = v;
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Flat binary dumps with a JSON sidecar
// ---------------------------------------------------------------------------

pub const GRID_SCHEMA: &str = "grid-dump/1";

#[derive(Debug, Serialize, Deserialize)]
pub struct GridSidecar {
    pub schema: String,
    pub geometry: GridGeometry,
    pub exterior: ExteriorSidecar,
    pub value_count: usize,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExteriorSidecar {
    Zero,
    Constant { value: f64 },
    Bounded { sup_abs: f64 },
}

impl GridFunction {
    /// Write node values as little-endian f64 (C order, last axis fastest)
    /// next to a JSON sidecar describing the geometry.
    pub fn write_dump(&self, bin_path: &Path) -> Result<()> {
        let mut bin = std::fs::File::create(bin_path)?;
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        bin.write_all(&buf)?;
        let exterior = match &self.exterior {
            ExteriorRule::Zero => ExteriorSidecar::Zero,
            ExteriorRule::Constant(c) => ExteriorSidecar::Constant { value: *c },
            ExteriorRule::Bounded { sup_abs, .. } => ExteriorSidecar::Bounded { sup_abs: *sup_abs },
        };
        let sidecar = GridSidecar {
            schema: GRID_SCHEMA.to_string(),
            geometry: self.geom.clone(),
            exterior,
            value_count: self.values.len(),
            min: self.values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        };
        let json = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| Error::Serialization(e.to_string()))?;
        std::fs::write(bin_path.with_extension("json"), json)?;
        Ok(())
    }

    /// Read a dump written by `write_dump`. Closure-valued exteriors are
    /// not reconstructible and are rejected.
    pub fn read_dump(bin_path: &Path) -> Result<GridFunction> {
        let sidecar_text = std::fs::read_to_string(bin_path.with_extension("json"))?;
        let sidecar: GridSidecar = serde_json::from_str(&sidecar_text)
            .map_err(|e| Error::Serialization(e.to_string()))?;
        if sidecar.schema != GRID_SCHEMA {
            return Err(Error::Serialization(format!(
                "unexpected grid schema `{}`",
                sidecar.schema
            )));
        }
        let exterior = match sidecar.exterior {
            ExteriorSidecar::Zero => ExteriorRule::Zero,
            ExteriorSidecar::Constant { value } => ExteriorRule::constant(value)?,
            ExteriorSidecar::Bounded { .. } => {
                return Err(Error::Serialization(
                    "bounded exterior rules cannot be reloaded from a dump".into(),
                ))
            }
        };
        let mut bytes = Vec::new();
        std::fs::File::open(bin_path)?.read_to_end(&mut bytes)?;
        if bytes.len() != sidecar.value_count * 8 {
            return Err(Error::Serialization(format!(
                "binary payload holds {} bytes, sidecar promises {} values",
                bytes.len(),
                sidecar.value_count
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        GridFunction::new(sidecar.geometry, values, exterior)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn grid_2d() -> GridFunction {
        let geom = GridGeometry::centered(2, 1.0, 33).unwrap();
        GridFunction::from_fn(geom, ExteriorRule::Zero, |x| {
            1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1]
        })
        .unwrap()
    }

    #[test]
    fn interpolation_reproduces_multilinear_data_exactly() {
        let g = grid_2d();
        // Bilinear data is reproduced everywhere, not just at nodes.
        for (x, y) in [(0.13, -0.41), (0.999, 0.999), (-1.0, 1.0), (0.0, 0.0)] {
            let p = [x, y];
            assert_relative_eq!(
                g.eval(&p),
                1.0 + 2.0 * x - y + 0.5 * x * y,
                epsilon = 1e-13
            );
        }
    }

    #[test]
    fn exterior_rules_take_over_outside_the_box() {
        let geom = GridGeometry::centered(1, 1.0, 5).unwrap();
        let g = GridFunction::from_fn(geom.clone(), ExteriorRule::constant(7.0).unwrap(), |_| 1.0)
            .unwrap();
        assert_relative_eq!(g.eval(&[1.5]), 7.0);
        assert_relative_eq!(g.eval(&[0.5]), 1.0);

        let b = GridFunction::from_fn(
            geom,
            ExteriorRule::bounded(|x| x[0].min(3.0), 3.0).unwrap(),
            |_| 0.0,
        )
        .unwrap();
        assert_relative_eq!(b.eval(&[2.0]), 2.0);
        assert_relative_eq!(b.exterior.sup_abs(), 3.0);
    }

    #[test]
    fn construction_rejects_bad_data() {
        let geom = GridGeometry::centered(1, 1.0, 5).unwrap();
        assert!(GridFunction::new(geom.clone(), vec![0.0; 4], ExteriorRule::Zero).is_err());
        assert!(GridFunction::new(geom, vec![f64::NAN; 5], ExteriorRule::Zero).is_err());
        assert!(ExteriorRule::constant(f64::INFINITY).is_err());
        assert!(GridGeometry::new(vec![0.0], vec![5], 0.0).is_err());
    }

    #[test]
    fn derivatives_match_smooth_data() {
        let geom = GridGeometry::centered(2, 1.0, 65).unwrap();
        let g = GridFunction::from_fn(geom.clone(), ExteriorRule::Zero, |x| {
            x[0] * x[0] - 3.0 * x[0] * x[1] + 2.0 * x[1] * x[1]
        })
        .unwrap();
        let idx = geom.nearest_node(&[0.25, -0.25]);
        let grad = g.gradient(idx).unwrap();
        let x = geom.node(idx);
        assert_relative_eq!(grad[0], 2.0 * x[0] - 3.0 * x[1], epsilon = 1e-10);
        assert_relative_eq!(grad[1], -3.0 * x[0] + 4.0 * x[1], epsilon = 1e-10);
        let hess = g.hessian(idx, 1).unwrap();
        assert_relative_eq!(hess[0], 2.0, epsilon = 1e-8);
        assert_relative_eq!(hess[1], -3.0, epsilon = 1e-8);
        assert_relative_eq!(hess[3], 4.0, epsilon = 1e-8);
        // Stride-2 stencil agrees on quadratic data.
        let hess2 = g.hessian(idx, 2).unwrap();
        assert_relative_eq!(hess2[1], -3.0, epsilon = 1e-8);
    }

    #[test]
    fn gradient_requires_margin() {
        let g = grid_2d();
        assert!(g.gradient(0).is_err());
        assert!(g.hessian(0, 1).is_err());
    }

    #[test]
    fn lattice_values_extend_past_the_box() {
        let geom = GridGeometry::centered(1, 1.0, 3).unwrap();
        let g = GridFunction::new(geom, vec![1.0, 2.0, 3.0], ExteriorRule::constant(-5.0).unwrap())
            .unwrap();
        assert_relative_eq!(g.lattice_value(&[1]), 2.0);
        assert_relative_eq!(g.lattice_value(&[-1]), -5.0);
        assert_relative_eq!(g.lattice_value(&[3]), -5.0);
    }

    #[test]
    fn dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.bin");
        let g = grid_2d();
        g.write_dump(&path).unwrap();
        let back = GridFunction::read_dump(&path).unwrap();
        assert_eq!(back.values, g.values);
        assert_eq!(back.geom, g.geom);
        // Sidecar is valid JSON with the schema marker.
        let sidecar = std::fs::read_to_string(path.with_extension("json")).unwrap();
        assert!(sidecar.contains(GRID_SCHEMA));
    }

    #[test]
    fn cubic_interpolation_is_exact_on_quadratics() {
        let geom = GridGeometry::centered(2, 2.0, 33).unwrap();
        let g = GridFunction::from_fn(geom, ExteriorRule::Zero, |x| {
            1.0 + 0.5 * x[0] - x[1] + x[0] * x[0] + 0.25 * x[0] * x[1]
        })
        .unwrap();
        let probe = [
            [0.31, -0.77],
            [1.13, 0.05],
            [-0.49, -1.02],
            [0.0, 0.625],
        ];
        for p in probe {
            let exact = 1.0 + 0.5 * p[0] - p[1] + p[0] * p[0] + 0.25 * p[0] * p[1];
            assert_abs_diff_eq!(g.eval_cubic(&p), exact, epsilon = 1e-12);
        }
        // Near the boundary the axis window degrades to linear but stays finite.
        let edge = g.eval_cubic(&[1.97, 1.99]);
        assert!(edge.is_finite());
        // Outside the box the exterior rule wins.
        assert_eq!(g.eval_cubic(&[5.0, 0.0]), 0.0);
    }
}
