//! Vertex-centered tensor grid on the cube `[-R, R]^n`, with the thin plane
//! `{x_n = 0}` as an exact lattice layer, and the nodal fields living on it.
//!
//! Lattice indices run over `0..width` in every dimension, node `i` sitting at
//! `(i - N) h` with `N = R / h`. Dimension 0 varies fastest and `x_n` slowest,
//! so a layer of constant `x_n` is one contiguous block of indices.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Default minimum number of cells across the domain diameter.
pub const MIN_CELLS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub n: usize,
    pub s: f64,
    pub a: f64,
    pub h: f64,
    pub r_dom: f64,
}

impl ProblemParams {
    /// Parameters on the unit ball with `a = 1 - 2s`.
    pub fn new(n: usize, s: f64, h: f64) -> Result<Self> {
        let p = Self { n, s, a: 1.0 - 2.0 * s, h, r_dom: 1.0 };
        p.validate()?;
        Ok(p)
    }

    pub fn with_domain(mut self, r_dom: f64) -> Result<Self> {
        self.r_dom = r_dom;
        self.validate()?;
        Ok(self)
    }

    pub fn with_spacing(mut self, h: f64) -> Result<Self> {
        self.h = h;
        self.validate()?;
        Ok(self)
    }

    /// Checks everything except the minimum cell count, which belongs to
    /// grid construction.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LabError::InvalidParams(m));
        if !(2..=3).contains(&self.n) {
            return bad(format!("dimension n = {} is not supported (2 or 3)", self.n));
        }
        if !(self.s > 0.0 && self.s < 1.0) {
            return bad(format!("s = {} must lie in (0, 1)", self.s));
        }
        if self.a != 1.0 - 2.0 * self.s {
            return bad(format!("a = {} must equal 1 - 2s = {}", self.a, 1.0 - 2.0 * self.s));
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return bad(format!("grid spacing h = {} must be positive", self.h));
        }
        if !(self.r_dom.is_finite() && self.r_dom > 0.0) {
            return bad(format!("domain radius {} must be positive", self.r_dom));
        }
        let ratio = self.r_dom / self.h;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return bad(format!("h = {} does not divide R = {}", self.h, self.r_dom));
        }
        Ok(())
    }

    /// Number of lattice cells from `-R` to `R`.
    pub fn cells_across(&self) -> usize {
        2 * (self.r_dom / self.h).round() as usize
    }
}

/// Tensor lattice covering `[-R, R]^n` plus the mask of the closed ball.
#[derive(Debug)]
pub struct Grid {
    params: ProblemParams,
    half: usize,
    width: usize,
    len: usize,
    inside: Vec<bool>,
    plane: Vec<usize>,
}

/// Builds a grid requiring at least [`MIN_CELLS`] cells across.
pub fn build_grid(params: ProblemParams) -> Result<Arc<Grid>> {
    Grid::build(params)
}

impl Grid {
    pub fn build(params: ProblemParams) -> Result<Arc<Grid>> {
        Self::build_with_min_cells(params, MIN_CELLS)
    }

    pub fn build_with_min_cells(params: ProblemParams, min_cells: usize) -> Result<Arc<Grid>> {
        params.validate()?;
        let cells = params.cells_across();
        if cells < min_cells {
            return Err(LabError::GridTooCoarse { cells, min: min_cells });
        }
        let half = cells / 2;
        let width = cells + 1;
        let len = width.pow(params.n as u32);
        let mut grid = Grid { params, half, width, len, inside: Vec::new(), plane: Vec::new() };
        // integer test avoids rounding on the sphere itself
        let r2 = (half * half) as i64;
        grid.inside = (0..len)
            .map(|idx| {
                let m = grid.signed_index(idx);
                m[..params.n].iter().map(|&k| k * k).sum::<i64>() <= r2
            })
            .collect();
        let layer = grid.layer_stride();
        grid.plane = (half * layer..(half + 1) * layer).filter(|&i| grid.inside[i]).collect();
        Ok(Arc::new(grid))
    }

    pub fn params(&self) -> &ProblemParams {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn h(&self) -> f64 {
        self.params.h
    }

    /// `N = R / h`; lattice index `N` is the coordinate origin.
    pub fn half(&self) -> usize {
        self.half
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of lattice nodes (active or not).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn stride(&self, d: usize) -> usize {
        self.width.pow(d as u32)
    }

    /// Number of nodes in one layer of constant `x_n`.
    pub fn layer_stride(&self) -> usize {
        self.stride(self.params.n - 1)
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let mut m = [0; 3];
        let mut rest = idx;
        for slot in m.iter_mut().take(self.params.n) {
            *slot = rest % self.width;
            rest /= self.width;
        }
        m
    }

    /// Lattice offsets from the origin node.
    pub fn signed_index(&self, idx: usize) -> [i64; 3] {
        let m = self.multi_index(idx);
        let mut out = [0; 3];
        for d in 0..self.params.n {
            out[d] = m[d] as i64 - self.half as i64;
        }
        out
    }

    pub fn index(&self, m: [usize; 3]) -> usize {
        (0..self.params.n).rev().fold(0, |acc, d| acc * self.width + m[d])
    }

    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - self.half as f64) * self.params.h
    }

    /// Node coordinates, padded with zeros beyond dimension `n`.
    pub fn node(&self, idx: usize) -> [f64; 3] {
        let m = self.multi_index(idx);
        let mut x = [0.0; 3];
        for d in 0..self.params.n {
            x[d] = self.coord(m[d]);
        }
        x
    }

    /// Signed layer of a node along `x_n`.
    pub fn layer(&self, idx: usize) -> i64 {
        (idx / self.layer_stride()) as i64 - self.half as i64
    }

    pub fn is_plane(&self, idx: usize) -> bool {
        self.layer(idx) == 0
    }

    /// Index of the node reflected through the plane.
    pub fn mirror(&self, idx: usize) -> usize {
        let layer = self.layer_stride();
        let k = idx / layer;
        (self.width - 1 - k) * layer + idx % layer
    }

    pub fn inside(&self, idx: usize) -> bool {
        self.inside[idx]
    }

    pub fn inside_mask(&self) -> &[bool] {
        &self.inside
    }

    /// Plane nodes inside the closed ball, in lattice order.
    pub fn plane_nodes(&self) -> &[usize] {
        &self.plane
    }

    pub fn active_count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    /// Locates the lattice cell containing `p` and the local coordinates in
    /// `[0, 1]`. Points with `p_d` on a lattice line belong to the upper cell,
    /// except on the far face of the hull.
    pub fn locate(&self, p: &[f64]) -> Result<([usize; 3], [f64; 3])> {
        let n = self.params.n;
        if p.len() != n {
            return Err(LabError::InvalidParams(format!("point has {} coordinates, grid dimension is {n}", p.len())));
        }
        let r = self.params.r_dom;
        let h = self.params.h;
        let mut cell = [0; 3];
        let mut frac = [0.0; 3];
        for d in 0..n {
            let t = (p[d] + r) / h;
            let tol = 1e-12 * self.width as f64;
            if !(t >= -tol && t <= (self.width - 1) as f64 + tol) {
                return Err(LabError::OutsideHull(p.to_vec()));
            }
            let i = (t.floor().max(0.0) as usize).min(self.width - 2);
            cell[d] = i;
            frac[d] = (t - i as f64).clamp(0.0, 1.0);
        }
        Ok((cell, frac))
    }

    pub(crate) fn check_point(&self, p: &[f64]) -> Result<[f64; 3]> {
        if p.len() != self.params.n {
            return Err(LabError::InvalidParams(format!(
                "point has {} coordinates, grid dimension is {}",
                p.len(),
                self.params.n
            )));
        }
        let mut out = [0.0; 3];
        out[..p.len()].copy_from_slice(p);
        Ok(out)
    }

    /// Fails unless `x0` lies on the plane and `B_r(x0)` stays in the domain.
    pub fn check_ball(&self, x0: &[f64], r: f64) -> Result<[f64; 3]> {
        let c = self.check_point(x0)?;
        if c[self.params.n - 1] != 0.0 {
            return Err(LabError::CenterOffPlane(x0.to_vec()));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(LabError::InvalidParams(format!("radius {r} must be positive")));
        }
        let reach = norm(&c) + r;
        if reach > self.params.r_dom * (1.0 + 1e-12) {
            return Err(LabError::OutsideDomain { center: x0.to_vec(), r, reach });
        }
        Ok(c)
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b) || (a.params == b.params && a.len == b.len)
}

/// Nodal samples of a function on every lattice node.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Arc<Grid>, c: f64) -> Self {
        Self { grid: grid.clone(), values: vec![c; grid.len()] }
    }

    pub fn from_values(grid: &Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(LabError::GridMismatch);
        }
        Ok(Self { grid: grid.clone(), values })
    }

    /// Samples `f` at every lattice node.
    pub fn from_fn<F>(grid: &Arc<Grid>, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let n = grid.n();
        let values = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let x = grid.node(idx);
                f(&x[..n])
            })
            .collect();
        Self { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|v| t * v).collect() }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// `self + t * other`.
    pub fn axpy(&self, t: f64, other: &ScalarField) -> Result<Self> {
        if !same_grid(&self.grid, &other.grid) {
            return Err(LabError::GridMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(u, v)| u + t * v).collect();
        Ok(Self { grid: self.grid.clone(), values })
    }

    /// The field composed with `x_n -> -x_n`.
    pub fn reflected(&self) -> Self {
        let g = &self.grid;
        let values = (0..g.len()).map(|i| self.values[g.mirror(i)]).collect();
        Self { grid: g.clone(), values }
    }

    /// Largest mismatch between a value and its mirror over active nodes.
    pub fn symmetry_defect(&self) -> f64 {
        let g = &self.grid;
        (0..g.len())
            .filter(|&i| g.inside(i))
            .map(|i| (self.values[i] - self.values[g.mirror(i)]).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.symmetry_defect() <= tol
    }

    pub fn max_abs_active(&self) -> f64 {
        self.values.iter().zip(self.grid.inside_mask()).filter(|(_, &m)| m).map(|(v, _)| v.abs()).fold(0.0, f64::max)
    }

    /// Largest nodal difference over active nodes.
    pub fn max_diff_active(&self, other: &ScalarField) -> Result<f64> {
        if !same_grid(&self.grid, &other.grid) {
            return Err(LabError::GridMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .zip(self.grid.inside_mask())
            .filter(|(_, &m)| m)
            .map(|((u, v), _)| (u - v).abs())
            .fold(0.0, f64::max))
    }

    pub fn all_finite_active(&self) -> bool {
        self.values.iter().zip(self.grid.inside_mask()).all(|(v, &m)| !m || v.is_finite())
    }

    /// Multilinear interpolation from the enclosing lattice cell.
    pub fn interpolate(&self, p: &[f64]) -> Result<f64> {
        let (cell, frac) = self.grid.locate(p)?;
        Ok(multilinear(&self.grid, cell, frac, |idx| self.values[idx]))
    }

    pub fn gradient(&self) -> VectorField {
        gradient(self)
    }

    /// Value and gradient of the tensor-product cubic interpolant through the
    /// 4^n nodes around `p`. Stencils never straddle the plane, so an even
    /// field with a kink across `{x_n = 0}` is read from the side containing
    /// `p`; points on the plane use the upper side.
    pub fn value_and_gradient(&self, p: &[f64]) -> Result<(f64, [f64; 3])> {
        let g = &*self.grid;
        let n = g.n();
        let (cell, frac) = g.locate(p)?;
        let w = g.width();
        let half = g.half();
        let mut start = [0usize; 3];
        let mut basis = [[0.0; 4]; 3];
        let mut deriv = [[0.0; 4]; 3];
        for d in 0..n {
            let mut s0 = cell[d].saturating_sub(1).min(w - 4);
            if d == n - 1 {
                if p[d] >= 0.0 {
                    s0 = s0.max(half);
                } else {
                    s0 = s0.min(half - 3);
                }
            }
            start[d] = s0;
            let x = (cell[d] - s0) as f64 + frac[d];
            lagrange4(x, &mut basis[d], &mut deriv[d]);
        }
        let h = g.h();
        let mut val = 0.0;
        let mut grad = [0.0; 3];
        let kz = if n == 3 { 4 } else { 1 };
        for k in 0..kz {
            for j in 0..4 {
                let row = g.index([start[0], start[1] + j, if n == 3 { start[2] + k } else { 0 }]);
                let (bj, dj) = (basis[1][j], deriv[1][j]);
                let (bk, dk) = if n == 3 { (basis[2][k], deriv[2][k]) } else { (1.0, 0.0) };
                for i in 0..4 {
                    let v = self.values[row + i];
                    let (bi, di) = (basis[0][i], deriv[0][i]);
                    val += bi * bj * bk * v;
                    grad[0] += di * bj * bk * v;
                    grad[1] += bi * dj * bk * v;
                    grad[2] += bi * bj * dk * v;
                }
            }
        }
        for c in grad.iter_mut().take(n) {
            *c /= h;
        }
        Ok((val, grad))
    }
}

/// Cubic Lagrange basis on the nodes 0, 1, 2, 3 and its derivative at `x`.
fn lagrange4(x: f64, b: &mut [f64; 4], d: &mut [f64; 4]) {
    let t = [x, x - 1.0, x - 2.0, x - 3.0];
    let denom = [-6.0, 2.0, -2.0, 6.0];
    for k in 0..4 {
        let mut prod = 1.0;
        let mut dsum = 0.0;
        for m in 0..4 {
            if m == k {
                continue;
            }
            let mut term = 1.0;
            for l in 0..4 {
                if l != k && l != m {
                    term *= t[l];
                }
            }
            dsum += term;
            prod *= t[m];
        }
        b[k] = prod / denom[k];
        d[k] = dsum / denom[k];
    }
}

fn multilinear(grid: &Grid, cell: [usize; 3], frac: [f64; 3], value: impl Fn(usize) -> f64) -> f64 {
    let n = grid.n();
    let base = grid.index(cell);
    let mut acc = 0.0;
    for corner in 0..(1usize << n) {
        let mut w = 1.0;
        let mut idx = base;
        for (d, &t) in frac.iter().enumerate().take(n) {
            if corner >> d & 1 == 1 {
                w *= t;
                idx += grid.stride(d);
            } else {
                w *= 1.0 - t;
            }
        }
        if w != 0.0 {
            acc += w * value(idx);
        }
    }
    acc
}

/// Multilinear interpolation of a scalar field at `p`.
pub fn interpolate(f: &ScalarField, p: &[f64]) -> Result<f64> {
    f.interpolate(p)
}

/// Nodal gradient of a scalar field.
///
/// At plane nodes the normal derivative is one-sided: `values` holds the
/// limit from `x_n > 0` and [`VectorField::lower_normal`] the limit from
/// `x_n < 0`, so that interpolation never averages across the kink that an
/// even function has on its contact set.
#[derive(Debug, Clone)]
pub struct VectorField {
    grid: Arc<Grid>,
    values: Vec<[f64; 3]>,
    lower_n: Vec<f64>,
}

impl VectorField {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[[f64; 3]] {
        &self.values
    }

    /// Normal derivative from below at the plane layer, indexed by the
    /// position of the node inside the layer.
    pub fn lower_normal(&self) -> &[f64] {
        &self.lower_n
    }

    pub fn interpolate(&self, p: &[f64]) -> Result<[f64; 3]> {
        let g = &self.grid;
        let n = g.n();
        let (cell, frac) = g.locate(p)?;
        let below = p[n - 1] < 0.0;
        let layer = g.layer_stride();
        let plane_block = g.half() * layer;
        let mut out = [0.0; 3];
        for (d, slot) in out.iter_mut().enumerate().take(n) {
            let lower = below && d == n - 1;
            *slot = multilinear(g, cell, frac, |idx| {
                if lower && idx >= plane_block && idx < plane_block + layer {
                    self.lower_n[idx - plane_block]
                } else {
                    self.values[idx][d]
                }
            });
        }
        Ok(out)
    }
}

/// Second-order central differences, one-sided second order at the lattice
/// edges and, for `∂_n`, at the plane layer.
pub fn gradient(f: &ScalarField) -> VectorField {
    let g = &f.grid;
    let n = g.n();
    let h = g.h();
    let w = g.width();
    let u = &f.values;
    let d1 = |idx: usize, d: usize, i: usize, one_sided_at: Option<usize>| -> f64 {
        let st = g.stride(d);
        if i == 0 {
            (-3.0 * u[idx] + 4.0 * u[idx + st] - u[idx + 2 * st]) / (2.0 * h)
        } else if i == w - 1 {
            (3.0 * u[idx] - 4.0 * u[idx - st] + u[idx - 2 * st]) / (2.0 * h)
        } else if Some(i) == one_sided_at {
            (-3.0 * u[idx] + 4.0 * u[idx + st] - u[idx + 2 * st]) / (2.0 * h)
        } else {
            (u[idx + st] - u[idx - st]) / (2.0 * h)
        }
    };
    let values: Vec<[f64; 3]> = (0..g.len())
        .into_par_iter()
        .map(|idx| {
            let m = g.multi_index(idx);
            let mut out = [0.0; 3];
            for d in 0..n {
                let kink = (d == n - 1).then_some(g.half());
                out[d] = d1(idx, d, m[d], kink);
            }
            out
        })
        .collect();
    let layer = g.layer_stride();
    let st = layer;
    let lower_n = (0..layer)
        .map(|k| {
            let idx = g.half() * layer + k;
            (3.0 * u[idx] - 4.0 * u[idx - st] + u[idx - 2 * st]) / (2.0 * h)
        })
        .collect();
    VectorField { grid: g.clone(), values, lower_n }
}
