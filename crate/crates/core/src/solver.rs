//! Discrete thin obstacle problem and its projected SOR solver.
//!
//! The energy is the edge sum
//!
//! ```text
//!   ℰ_h(u) = h^{n−2} Σ_edges ω_e (u_i − u_j)²
//! ```
//!
//! over lattice edges with at least one endpoint strictly inside the ball.
//! Edges leaving the ball are cut at the sphere (Shortley–Weller): an edge
//! of relative length `θ` ending on `∂B_R` at `x_b` contributes
//! `(ω_e/θ)(u_i − g(x_b))²`. Vertical edges carry `|x_n|^a` at their
//! midpoint; horizontal edges at layer `k` carry the mean of `|t|^a` over
//! `[(k − ½)h, (k + ½)h]`, which stays finite on the plane for every `a`.
//!
//! Near the contact set a solution behaves like `|x_n|^{1−a}` in the normal
//! direction rather than like an even smooth function, and the midpoint
//! weight misjudges the flux through the first layer by a factor
//! `2^{−a}/(1−a)`. [`solve_adapted`] therefore reassembles with the harmonic
//! mean of `|x_n|^a` on the vertical edges at contact nodes, which is exact
//! for that profile, until the contact set stops changing.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::exact::{h_e_unchecked, ConeElement};
use crate::grid::{norm, Grid, ScalarField};
use crate::quadrature::power_weight_mean;

/// Nodes closer than this fraction of `h` to the sphere are Dirichlet nodes.
const ON_SPHERE: f64 = 1e-6;
const ENERGY_CHECK_EVERY: usize = 50;
const RATE_WINDOW: usize = 10;

/// Boundary datum `g`, evaluated wherever the scheme meets `∂B_R` and used
/// to fill lattice nodes outside the ball.
#[derive(Clone)]
pub struct BoundaryData {
    label: String,
    f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundaryData").field("label", &self.label).finish()
    }
}

impl BoundaryData {
    pub fn new(label: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { label: label.into(), f: Arc::new(f) }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("constant {c}"), move |_| c)
    }

    pub fn cone(c: ConeElement, s: f64) -> Self {
        Self::new(format!("{} h_e, e = {:?}", c.lambda, c.e), move |x| c.lambda * h_e_unchecked(x, &c.e, s))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    pub fn scaled(&self, t: f64) -> Self {
        let f = self.f.clone();
        Self::new(format!("{t} × ({})", self.label), move |x| t * f(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    Boundary,
    Exterior,
}

/// One row of the full-grid operator at an interior node.
#[derive(Debug, Clone, Default)]
pub struct Row {
    /// Interior neighbours and edge weights.
    pub coupled: Vec<(usize, f64)>,
    /// Dirichlet contributions `(weight, g)`, cut edges already divided by `θ`.
    pub fixed: Vec<(f64, f64)>,
}

impl Row {
    pub fn diag(&self) -> f64 {
        self.coupled.iter().map(|c| c.1).sum::<f64>() + self.fixed.iter().map(|c| c.0).sum::<f64>()
    }

    pub fn rhs(&self) -> f64 {
        self.fixed.iter().map(|c| c.0 * c.1).sum()
    }
}

/// Assembled obstacle problem on a grid.
#[derive(Debug, Clone)]
pub struct DiscreteProblem {
    grid: Arc<Grid>,
    g: BoundaryData,
    kind: Vec<NodeKind>,
    /// Lattice values of the datum at boundary and exterior nodes.
    fill: Vec<f64>,
    /// Interior nodes of the full grid in lattice order.
    interior: Vec<usize>,
    rows: Vec<Row>,
    row_of: Vec<usize>,
    /// Upper-half unknowns (`x_n ≥ 0`) with mirrored couplings.
    half: Vec<HalfRow>,
    scale: f64,
    /// Plane nodes assembled with harmonic vertical weights.
    contact: Vec<usize>,
}

#[derive(Debug, Clone)]
struct HalfRow {
    node: usize,
    diag: f64,
    rhs: f64,
    coupled: Vec<(usize, f64)>,
    constrained: bool,
}

fn horizontal_weight(a: f64, h: f64, layer: i64) -> f64 {
    let y = layer as f64 * h;
    power_weight_mean(a, y - 0.5 * h, y + 0.5 * h)
}

/// Weight of the vertical edge `[t0, t1]`: `|t|^a` at the midpoint, or the
/// harmonic mean of `|t|^a`, which is the exact conductance for profiles
/// with `|t|^a u'` constant along the edge.
fn vertical_weight(a: f64, t0: f64, t1: f64, harmonic: bool) -> f64 {
    if harmonic {
        1.0 / power_weight_mean(-a, t0.min(t1), t0.max(t1))
    } else {
        (0.5 * (t0 + t1)).abs().powf(a)
    }
}

/// Assembles the problem with datum `g` on `grid`.
pub fn assemble(grid: &Arc<Grid>, g: BoundaryData) -> Result<DiscreteProblem> {
    DiscreteProblem::assemble(grid, g)
}

impl DiscreteProblem {
    pub fn assemble(grid: &Arc<Grid>, g: BoundaryData) -> Result<Self> {
        Self::assemble_with_contact(grid, g, &[])
    }

    /// Assembly with harmonic vertical weights at the given plane nodes.
    pub fn assemble_with_contact(grid: &Arc<Grid>, g: BoundaryData, contact: &[usize]) -> Result<Self> {
        let p = *grid.params();
        let mut harmonic = vec![false; grid.len()];
        for &i in contact {
            if i >= grid.len() || !grid.is_plane(i) {
                return Err(LabError::InvalidParams(format!("node {i} is not a plane node")));
            }
            harmonic[i] = true;
        }
        let mut contact: Vec<usize> = contact.to_vec();
        contact.sort_unstable();
        contact.dedup();
        let n = p.n;
        let h = p.h;
        let rd = p.r_dom;
        let len = grid.len();
        let kind: Vec<NodeKind> = (0..len)
            .map(|i| {
                let d = norm(&grid.node(i)[..n]) - rd;
                if d.abs() <= ON_SPHERE * h {
                    NodeKind::Boundary
                } else if d < 0.0 {
                    NodeKind::Interior
                } else {
                    NodeKind::Exterior
                }
            })
            .collect();
        let fill: Vec<f64> =
            (0..len).map(|i| if kind[i] == NodeKind::Interior { 0.0 } else { g.eval(&grid.node(i)[..n]) }).collect();

        let interior: Vec<usize> = (0..len).filter(|&i| kind[i] == NodeKind::Interior).collect();
        let mut row_of = vec![usize::MAX; len];
        for (k, &i) in interior.iter().enumerate() {
            row_of[i] = k;
        }

        // boundary samples used for the compatibility checks
        let mut samples: Vec<[f64; 3]> = Vec::new();
        let mut rows = Vec::with_capacity(interior.len());
        for &i in &interior {
            let x = grid.node(i);
            let m = grid.multi_index(i);
            let layer = grid.layer(i);
            let mut row = Row::default();
            for d in 0..n {
                for sign in [-1i64, 1] {
                    let mi = m[d] as i64 + sign;
                    debug_assert!(mi >= 0 && (mi as usize) < grid.width());
                    let j = if sign < 0 { i - grid.stride(d) } else { i + grid.stride(d) };
                    let vertical = d == n - 1;
                    let w = if vertical {
                        let y = layer as f64 * h;
                        vertical_weight(p.a, y, y + sign as f64 * h, harmonic[i] || harmonic[j])
                    } else {
                        horizontal_weight(p.a, h, layer)
                    };
                    match kind[j] {
                        NodeKind::Interior => row.coupled.push((j, w)),
                        NodeKind::Boundary => {
                            samples.push(grid.node(j));
                            row.fixed.push((w, fill[j]));
                        }
                        NodeKind::Exterior => {
                            let theta = crossing(&x[..n], d, sign as f64 * h, rd);
                            let mut xb = x;
                            xb[d] += sign as f64 * theta * h;
                            let w = if vertical {
                                vertical_weight(p.a, x[d], x[d] + sign as f64 * theta * h, harmonic[i])
                            } else {
                                w
                            };
                            samples.push(xb);
                            row.fixed.push((w / theta, g.eval(&xb[..n])));
                        }
                    }
                }
            }
            rows.push(row);
        }

        let mut scale: f64 = 0.0;
        for x in &samples {
            let v = g.eval(&x[..n]);
            if !v.is_finite() {
                return Err(LabError::IncompatibleDatum(format!("g({:?}) is not finite", &x[..n])));
            }
            scale = scale.max(v.abs());
        }
        let scale = if scale > 0.0 { scale } else { 1.0 };
        for x in &samples {
            let v = g.eval(&x[..n]);
            let mut y = *x;
            y[n - 1] = -y[n - 1];
            let w = g.eval(&y[..n]);
            if (v - w).abs() > 1e-12 * scale {
                return Err(LabError::IncompatibleDatum(format!(
                    "datum is not even in x_n at {:?}: {v} vs {w}",
                    &x[..n]
                )));
            }
            if x[n - 1] == 0.0 && v < -1e-14 * scale {
                return Err(LabError::IncompatibleDatum(format!(
                    "datum is negative on the plane at {:?}: {v}",
                    &x[..n]
                )));
            }
        }

        let mut half = Vec::new();
        for (k, &i) in interior.iter().enumerate() {
            let layer = grid.layer(i);
            if layer < 0 {
                continue;
            }
            let row = &rows[k];
            let mut coupled: Vec<(usize, f64)> = Vec::with_capacity(row.coupled.len());
            for &(j, w) in &row.coupled {
                let j = if grid.layer(j) < 0 { grid.mirror(j) } else { j };
                if let Some(c) = coupled.iter_mut().find(|c| c.0 == j) {
                    c.1 += w;
                } else {
                    coupled.push((j, w));
                }
            }
            half.push(HalfRow { node: i, diag: row.diag(), rhs: row.rhs(), coupled, constrained: layer == 0 });
        }

        Ok(Self { grid: grid.clone(), g, kind, fill, interior, rows, row_of, half, scale, contact })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Plane nodes whose vertical edges carry harmonic weights.
    pub fn contact_nodes(&self) -> &[usize] {
        &self.contact
    }

    pub fn datum(&self) -> &BoundaryData {
        &self.g
    }

    pub fn kind(&self, idx: usize) -> NodeKind {
        self.kind[idx]
    }

    /// Largest `|g|` over the boundary samples; tolerances are relative to it.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    /// Full-grid operator row of an interior node.
    pub fn row(&self, idx: usize) -> Option<&Row> {
        self.row_of.get(idx).and_then(|&k| self.rows.get(k))
    }

    /// Number of upper-half unknowns.
    pub fn unknowns(&self) -> usize {
        self.half.len()
    }

    /// Plane nodes carrying the constraint `u ≥ 0`.
    pub fn constrained_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.half.iter().filter(|r| r.constrained).map(|r| r.node)
    }

    /// Field equal to the datum off the interior and to `inner` inside.
    pub fn with_datum(&self, inner: impl Fn(usize) -> f64) -> Vec<f64> {
        (0..self.grid.len()).map(|i| if self.kind[i] == NodeKind::Interior { inner(i) } else { self.fill[i] }).collect()
    }

    /// `(L u)_i = Σ_j ω_ij (u_j − u_i)` at an interior node, Dirichlet values
    /// taken from the datum.
    pub fn apply(&self, u: &[f64], idx: usize) -> Option<f64> {
        let row = self.row(idx)?;
        let ui = u[idx];
        let mut acc = 0.0;
        for &(j, w) in &row.coupled {
            acc += w * (u[j] - ui);
        }
        for &(w, g) in &row.fixed {
            acc += w * (g - ui);
        }
        Some(acc)
    }

    /// `ℰ_h(u)`; Dirichlet values come from the datum, not from `u`.
    pub fn energy_of(&self, u: &[f64]) -> f64 {
        let h = self.grid.h();
        let mut acc = 0.0;
        for (k, &i) in self.interior.iter().enumerate() {
            let row = &self.rows[k];
            for &(j, w) in &row.coupled {
                if j > i {
                    acc += w * (u[i] - u[j]).powi(2);
                }
            }
            for &(w, g) in &row.fixed {
                acc += w * (u[i] - g).powi(2);
            }
        }
        acc * h.powi(self.grid.n() as i32 - 2)
    }

    pub fn energy(&self, u: &ScalarField) -> f64 {
        self.energy_of(u.values())
    }

    /// Discrete `R_a u ≈ (L u)_i / (2h)` at the constrained nodes.
    pub fn discrete_flux(&self, u: &ScalarField) -> Vec<(usize, f64)> {
        let h = self.grid.h();
        self.constrained_nodes().map(|i| (i, self.apply(u.values(), i).unwrap_or(0.0) / (2.0 * h))).collect()
    }

    fn mirror_lower(&self, u: &mut [f64]) {
        for &i in &self.interior {
            if self.grid.layer(i) < 0 {
                u[i] = u[self.grid.mirror(i)];
            }
        }
    }

    /// Equation residual at each interior node scaled by its diagonal,
    /// i.e. the Jacobi correction.
    fn scaled_residual(&self, u: &[f64], idx: usize) -> Option<f64> {
        let row = self.row(idx)?;
        Some(self.apply(u, idx)? / row.diag())
    }

    /// KKT certificate of a discrete solution.
    pub fn kkt_check(&self, sol: &Solution, tol: f64) -> KktReport {
        let u = sol.field.values();
        let thr = tol * self.scale;
        let mut rep = KktReport {
            max_residual_free: 0.0,
            min_plane: f64::INFINITY,
            max_positive_flux: 0.0,
            max_complementarity: 0.0,
            contact_count: 0,
        };
        for &i in &self.interior {
            let r = self.scaled_residual(u, i).unwrap_or(0.0);
            if self.grid.is_plane(i) {
                rep.min_plane = rep.min_plane.min(u[i]);
                rep.max_positive_flux = rep.max_positive_flux.max(r);
                rep.max_complementarity = rep.max_complementarity.max((u[i] * r).abs());
                if u[i] <= thr {
                    rep.contact_count += 1;
                } else {
                    rep.max_residual_free = rep.max_residual_free.max(r.abs());
                }
            } else {
                rep.max_residual_free = rep.max_residual_free.max(r.abs());
            }
        }
        for &i in self.grid.plane_nodes() {
            rep.min_plane = rep.min_plane.min(u[i]);
        }
        rep
    }
}

/// Relative position `θ ∈ (0, 1]` where the edge from `x` along `step e_d`
/// crosses the sphere of radius `r`.
fn crossing(x: &[f64], d: usize, step: f64, r: f64) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    // |x + t step e_d|² = r²  ⇒  step² t² + 2 x_d step t + (|x|² − r²) = 0
    let b = x[d] * step;
    let c = r2 - r * r;
    let disc = (b * b - step * step * c).max(0.0);
    let t = (-b + disc.sqrt()) / (step * step);
    t.clamp(f64::MIN_POSITIVE, 1.0)
}

/// Outcome of a PSOR solve.
#[derive(Debug, Clone)]
pub struct Solution {
    pub field: ScalarField,
    pub iterations: usize,
    pub final_update: f64,
    pub energy: f64,
    /// Stopping tolerance, relative to the datum scale.
    pub tol: f64,
    /// Datum scale (largest `|g|` on the boundary).
    pub scale: f64,
}

impl Solution {
    /// Contact threshold `10 · tol · scale`.
    pub fn contact_threshold(&self) -> f64 {
        10.0 * self.tol * self.scale
    }
}

pub fn energy(sol: &Solution) -> f64 {
    sol.energy
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktReport {
    /// Largest Jacobi-scaled residual of the equation off the contact set.
    pub max_residual_free: f64,
    /// Minimum of `u` over plane nodes.
    pub min_plane: f64,
    /// Largest positive part of the scaled flux at plane nodes.
    pub max_positive_flux: f64,
    /// Largest `|u_i λ_i|` at plane nodes.
    pub max_complementarity: f64,
    /// Plane nodes with `u` below the tolerance.
    pub contact_count: usize,
}

impl KktReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_residual_free <= tol
            && self.min_plane >= -tol
            && self.max_positive_flux <= tol
            && self.max_complementarity <= tol
    }
}

#[derive(Debug, Clone, Default)]
pub enum InitialGuess {
    #[default]
    Zero,
    /// Unconstrained weighted-harmonic extension of the datum.
    HarmonicExtension,
    Field(ScalarField),
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub omega: f64,
    /// Relative to the datum scale.
    pub tol: f64,
    pub max_iter: usize,
    pub initial: InitialGuess,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { omega: 1.5, tol: 1e-10, max_iter: 200_000, initial: InitialGuess::Zero }
    }
}

impl SolverOptions {
    /// Defaults with the relaxation factor tuned to the grid.
    pub fn tuned(grid: &Grid) -> Self {
        Self { omega: optimal_omega(grid), ..Self::default() }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_initial(mut self, initial: InitialGuess) -> Self {
        self.initial = initial;
        self
    }
}

/// SOR factor from the first Dirichlet eigenvalue of the ball.
pub fn optimal_omega(grid: &Grid) -> f64 {
    let p = grid.params();
    let lambda1 = if p.n == 2 { 5.783 } else { 9.870 } / (p.r_dom * p.r_dom);
    2.0 / (1.0 + p.h * (lambda1 / p.n as f64).sqrt())
}

/// Projected SOR with explicit parameters and a zero initial guess.
pub fn solve_psor(p: &DiscreteProblem, omega: f64, tol: f64, max_iter: usize) -> Result<Solution> {
    solve(p, &SolverOptions { omega, tol, max_iter, initial: InitialGuess::Zero })
}

/// Projected SOR on the upper half-grid.
///
/// Stops once the largest update falls below `tol · scale · (1 − ρ)`, where
/// `ρ` is the contraction rate observed over the last sweeps, so that the
/// remaining distance to the fixed point is about `tol · scale`.
pub fn solve(p: &DiscreteProblem, opts: &SolverOptions) -> Result<Solution> {
    if !(opts.omega > 0.0 && opts.omega < 2.0) {
        return Err(LabError::InvalidParams(format!("omega = {} must lie in (0, 2)", opts.omega)));
    }
    if !(opts.tol > 0.0) {
        return Err(LabError::InvalidParams(format!("tol = {} must be positive", opts.tol)));
    }
    let mut u = match &opts.initial {
        InitialGuess::Zero => p.with_datum(|_| 0.0),
        InitialGuess::Field(f) => {
            if f.values().len() != p.grid.len() {
                return Err(LabError::GridMismatch);
            }
            p.with_datum(|i| f.values()[i])
        }
        InitialGuess::HarmonicExtension => {
            let start = p.with_datum(|_| 0.0);
            let (v, _, _) = iterate(p, start, opts, false)?;
            v
        }
    };
    if !matches!(opts.initial, InitialGuess::Zero) {
        for r in p.half.iter().filter(|r| r.constrained) {
            u[r.node] = u[r.node].max(0.0);
        }
    }
    let (mut u, iterations, final_update) = iterate(p, u, opts, true)?;
    p.mirror_lower(&mut u);
    let energy = p.energy_of(&u);
    let field = ScalarField::from_values(&p.grid, u)?;
    let sol = Solution { field, iterations, final_update, energy, tol: opts.tol, scale: p.scale };
    if final_update.is_nan() || iterations >= opts.max_iter && final_update > 0.0 {
        return Err(LabError::NotConverged { iterations, last_update: final_update, solution: Box::new(sol) });
    }
    Ok(sol)
}

/// Maximum number of reassemblies in [`solve_adapted`].
pub const MAX_ADAPTATIONS: usize = 6;

/// Solves, then reassembles with harmonic vertical weights at the contact
/// nodes and re-solves from the previous solution until the contact set is
/// stable. Returns the final problem with its solution.
///
/// For `a = 0` both weights coincide and a single solve is performed.
pub fn solve_adapted(p: &DiscreteProblem, opts: &SolverOptions) -> Result<(DiscreteProblem, Solution)> {
    let mut problem = p.clone();
    let mut sol = solve(&problem, opts)?;
    if problem.grid.params().a == 0.0 {
        return Ok((problem, sol));
    }
    for _ in 0..MAX_ADAPTATIONS {
        let thr = sol.contact_threshold();
        let grid = &problem.grid;
        let contact: Vec<usize> = (0..grid.len())
            .filter(|&i| grid.is_plane(i) && problem.row(i).is_some() && sol.field.values()[i] <= thr)
            .collect();
        if contact == problem.contact {
            break;
        }
        problem = DiscreteProblem::assemble_with_contact(&problem.grid, problem.g.clone(), &contact)?;
        let warm = opts.clone().with_initial(InitialGuess::Field(sol.field.clone()));
        sol = solve(&problem, &warm)?;
    }
    Ok((problem, sol))
}

/// Largest number of unknowns accepted by [`solve_dense`].
pub const DENSE_LIMIT: usize = 2000;

/// Primal-dual active-set solution of the full-grid problem with dense
/// factorizations. Intended as an oracle on coarse grids.
pub fn solve_dense(p: &DiscreteProblem) -> Result<ScalarField> {
    let nodes = p.interior_nodes();
    let m = nodes.len();
    if m > DENSE_LIMIT {
        return Err(LabError::Precondition(format!("{m} unknowns exceed the dense limit {DENSE_LIMIT}")));
    }
    let mut pos = vec![usize::MAX; p.grid.len()];
    for (k, &i) in nodes.iter().enumerate() {
        pos[i] = k;
    }
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut b = DVector::<f64>::zeros(m);
    for (k, &i) in nodes.iter().enumerate() {
        let row = &p.rows[p.row_of[i]];
        a[(k, k)] = row.diag();
        b[k] = row.rhs();
        for &(j, w) in &row.coupled {
            a[(k, pos[j])] -= w;
        }
    }
    let constrained: Vec<bool> = nodes.iter().map(|&i| p.grid.is_plane(i)).collect();
    let mut active = vec![false; m];
    for _ in 0..=m {
        let free: Vec<usize> = (0..m).filter(|&k| !active[k]).collect();
        let af = DMatrix::from_fn(free.len(), free.len(), |r, c| a[(free[r], free[c])]);
        let bf = DVector::from_fn(free.len(), |r, _| b[free[r]]);
        let uf = af.lu().solve(&bf).ok_or_else(|| LabError::Precondition("singular free block".into()))?;
        let mut u = DVector::<f64>::zeros(m);
        for (r, &k) in free.iter().enumerate() {
            u[k] = uf[r];
        }
        let lam = &a * &u - &b;
        let next: Vec<bool> = (0..m).map(|k| constrained[k] && lam[k] - u[k] > 0.0).collect();
        if next == active {
            let mut full = p.with_datum(|_| 0.0);
            for (k, &i) in nodes.iter().enumerate() {
                full[i] = u[k];
            }
            return ScalarField::from_values(&p.grid, full);
        }
        active = next;
    }
    Err(LabError::Precondition("active set did not settle".into()))
}

/// Runs (projected) SOR sweeps; returns the iterate, the sweep count, and
/// the last update. Hitting `max_iter` is signalled by `iterations ==
/// max_iter` with a positive update.
fn iterate(
    p: &DiscreteProblem,
    mut u: Vec<f64>,
    opts: &SolverOptions,
    project: bool,
) -> Result<(Vec<f64>, usize, f64)> {
    let omega = opts.omega;
    let target = opts.tol * p.scale;
    let mut history: Vec<f64> = Vec::new();
    let mut last_energy: Option<f64> = None;
    for sweep in 1..=opts.max_iter {
        let mut upd: f64 = 0.0;
        for r in &p.half {
            let mut acc = r.rhs;
            for &(j, w) in &r.coupled {
                acc += w * u[j];
            }
            let old = u[r.node];
            let mut new = old + omega * (acc / r.diag - old);
            if project && r.constrained && new < 0.0 {
                new = 0.0;
            }
            upd = upd.max((new - old).abs());
            u[r.node] = new;
        }
        if !upd.is_finite() {
            return Ok((u, sweep, f64::NAN));
        }
        history.push(upd);
        if sweep % ENERGY_CHECK_EVERY == 0 {
            p.mirror_lower(&mut u);
            let e = p.energy_of(&u);
            if let Some(before) = last_energy {
                if e > before + 1e-12 * before.abs() + 1e-14 * p.scale * p.scale {
                    return Err(LabError::EnergyIncrease { before, after: e, sweep });
                }
            }
            last_energy = Some(e);
        }
        if upd == 0.0 {
            return Ok((u, sweep, 0.0));
        }
        if sweep > RATE_WINDOW {
            let prev = history[sweep - 1 - RATE_WINDOW];
            let rho = (upd / prev).powf(1.0 / RATE_WINDOW as f64).clamp(0.0, 1.0 - 1e-4);
            if upd < target * (1.0 - rho) {
                return Ok((u, sweep, upd));
            }
        }
    }
    let last = history.last().copied().unwrap_or(0.0);
    Ok((u, opts.max_iter, last))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::sample_cone_element;
    use crate::grid::{build_grid, ProblemParams};

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid(s: f64, h: f64) -> Arc<Grid> {
        build_grid(ProblemParams::new(2, s, h).unwrap()).unwrap()
    }

    fn he_datum(s: f64) -> BoundaryData {
        BoundaryData::cone(ConeElement::new(1.0, vec![1.0]).unwrap(), s)
    }

    #[test]
    fn constant_datum_gives_constant_solution() {
        let g = grid(0.5, 1.0 / 16.0);
        let p = assemble(&g, BoundaryData::constant(1.0)).unwrap();
        let sol = solve_psor(&p, 1.5, 1e-12, 100_000).unwrap();
        assert!(sol.field.values().iter().all(|v| (v - 1.0).abs() < 1e-11));
        assert!(sol.energy.abs() < 1e-20);
        let rep = p.kkt_check(&sol, 1e-10);
        assert_eq!(rep.contact_count, 0);
        assert!(rep.passes(1e-10), "{rep:?}");
    }

    #[test]
    fn asymmetric_or_negative_data_are_rejected() {
        let g = grid(0.5, 1.0 / 16.0);
        let odd = BoundaryData::new("odd", |x: &[f64]| 1.0 + x[1]);
        assert!(matches!(assemble(&g, odd), Err(LabError::IncompatibleDatum(_))));
        let neg = BoundaryData::cone(ConeElement::new(1.0, vec![1.0]).unwrap(), 0.5).scaled(-1.0);
        assert!(matches!(assemble(&g, neg), Err(LabError::IncompatibleDatum(_))));
    }

    #[test]
    fn energy_of_cone_samples() {
        let g = grid(0.5, 1.0 / 64.0);
        let p = assemble(&g, he_datum(0.5)).unwrap();
        let he = sample_cone_element(&ConeElement::new(1.0, vec![1.0]).unwrap(), &g).unwrap();
        let e = p.energy(&he);
        assert!((e - 3.0 * PI).abs() < 3.0 * PI * 5.0 * g.h(), "{e}");
        let he2 = he.scaled(2.0);
        let p2 = assemble(&g, he_datum(0.5).scaled(2.0)).unwrap();
        assert!((p2.energy(&he2) - 4.0 * e).abs() < 1e-10 * e);
    }

    #[test]
    fn solves_cone_datum_and_certifies_kkt() {
        let g = grid(0.5, 1.0 / 32.0);
        let p = assemble(&g, he_datum(0.5)).unwrap();
        let sol = solve(&p, &SolverOptions::tuned(&g)).unwrap();
        let he = sample_cone_element(&ConeElement::new(1.0, vec![1.0]).unwrap(), &g).unwrap();
        let err = sol.field.max_diff_active(&he).unwrap();
        assert!(err < 0.05, "{err}");
        let rep = p.kkt_check(&sol, 1e-8);
        assert!(rep.passes(1e-8), "{rep:?}");
        assert!(rep.contact_count > 0);
        assert_eq!(sol.field.symmetry_defect(), 0.0);
    }

    #[test]
    fn contact_weights_recover_the_cone_for_small_s() {
        let g = grid(0.25, 1.0 / 32.0);
        let p = assemble(&g, he_datum(0.25)).unwrap();
        let he = sample_cone_element(&ConeElement::new(1.0, vec![1.0]).unwrap(), &g).unwrap();
        let plain = solve(&p, &SolverOptions::tuned(&g)).unwrap();
        let (q, adapted) = solve_adapted(&p, &SolverOptions::tuned(&g)).unwrap();
        let e_plain = plain.field.max_diff_active(&he).unwrap();
        let e_adapted = adapted.field.max_diff_active(&he).unwrap();
        assert!(e_adapted < 5e-3 && e_plain > 10.0 * e_adapted, "{e_plain} {e_adapted}");
        assert!(!q.contact_nodes().is_empty());
        assert!(q.contact_nodes().iter().all(|&i| g.node(i)[0] < 0.0));
        assert!(q.kkt_check(&adapted, 1e-8).passes(1e-8));
    }

    #[test]
    fn corrupted_plane_value_is_flagged() {
        let g = grid(0.5, 1.0 / 16.0);
        let p = assemble(&g, BoundaryData::constant(1.0)).unwrap();
        let mut sol = solve_psor(&p, 1.5, 1e-12, 100_000).unwrap();
        let i = g.index([16, 16, 0]);
        sol.field.values_mut()[i] = -0.1;
        let rep = p.kkt_check(&sol, 1e-10);
        assert!(rep.min_plane <= -0.1);
        assert!(!rep.passes(1e-10));
    }

    #[test]
    fn non_convergence_returns_iterate() {
        let g = grid(0.5, 1.0 / 16.0);
        let p = assemble(&g, he_datum(0.5)).unwrap();
        match solve_psor(&p, 1.5, 1e-12, 5) {
            Err(LabError::NotConverged { iterations, solution, .. }) => {
                assert_eq!(iterations, 5);
                assert!(solution.field.all_finite_active());
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn minimality_against_feasible_perturbations() {
        let g = grid(0.5, 1.0 / 16.0);
        let p = assemble(&g, he_datum(0.5)).unwrap();
        let sol = solve(&p, &SolverOptions::tuned(&g).with_tol(1e-13)).unwrap();
        let e0 = sol.energy;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let mut v = sol.field.values().to_vec();
            for &i in p.interior_nodes() {
                let j = if g.layer(i) < 0 { g.mirror(i) } else { i };
                if j == i {
                    v[i] += 1e-3 * rng.random_range(-1.0..1.0);
                }
            }
            for &i in p.interior_nodes() {
                if g.layer(i) < 0 {
                    v[i] = v[g.mirror(i)];
                }
                if g.is_plane(i) {
                    v[i] = v[i].max(0.0);
                }
            }
            assert!(p.energy_of(&v) >= e0 - 1e-12);
        }
    }

    #[test]
    fn initial_guesses_agree() {
        let g = grid(0.5, 1.0 / 32.0);
        let p = assemble(&g, he_datum(0.5)).unwrap();
        let tol = 1e-10;
        let base = SolverOptions::tuned(&g).with_tol(tol);
        let a = solve(&p, &base).unwrap();
        let b = solve(&p, &base.clone().with_initial(InitialGuess::HarmonicExtension)).unwrap();
        let d = a.field.max_diff_active(&b.field).unwrap();
        assert!(d <= 10.0 * tol * p.scale(), "{d}");
    }

    /// Dense primal-dual active-set solve of the full-grid QP
    /// `min ½ uᵀAu − bᵀu, u_i ≥ 0 on the plane`.
    #[test]
    fn psor_matches_dense_active_set() {
        let g = grid(0.5, 1.0 / 8.0);
        for datum in [he_datum(0.5), he_datum(0.5).scaled(0.3)] {
            let p = assemble(&g, datum).unwrap();
            assert!(p.interior_nodes().len() <= 200);
            let sol = solve(&p, &SolverOptions::default().with_tol(1e-13)).unwrap();
            let oracle = solve_dense(&p).unwrap();
            let diff = sol.field.values().iter().zip(oracle.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-9, "{diff}");
        }
    }

    #[test]
    fn discrete_flux_approximates_r_a() {
        let g = grid(0.5, 1.0 / 64.0);
        let p = assemble(&g, he_datum(0.5)).unwrap();
        let he = sample_cone_element(&ConeElement::new(1.0, vec![1.0]).unwrap(), &g).unwrap();
        for (i, flux) in p.discrete_flux(&he) {
            let t = g.node(i)[0];
            if (-0.8..=-0.2).contains(&t) {
                let want = crate::exact::r_a_h(t, 0.5);
                assert!((flux - want).abs() < 0.05 * want.abs(), "t={t}: {flux} vs {want}");
            }
        }
    }
}
