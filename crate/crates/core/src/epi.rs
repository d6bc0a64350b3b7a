//! Homogeneous extensions and the empirical epiperimetric gap.
//!
//! A datum is a trace `c` on the unit sphere, even in `x_n` and nonnegative
//! where the sphere meets the plane. Its `(1+s)`-homogeneous extension is an
//! admissible competitor for the obstacle problem in `B_1` with datum `c`, so
//! the minimizer can only lower the energy. Both energies are measured with
//! the solver's discrete energy `ℰ_h`, and the boundary term
//! `(1+s)∫_{∂B_1} c² |x_n|^a` is shared.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics::FieldProbe;
use crate::error::{LabError, Result};
use crate::exact::{h_e_eval, h_e_unchecked, r_a_h, ConeElement};
use crate::grid::{norm, Grid, ScalarField};
use crate::integrals::{BallRule, SphereRule};
use crate::quadrature::gauss_jacobi_01;
use crate::solver::{BoundaryData, DiscreteProblem, InitialGuess, Solution, SolverOptions};

/// `W_c` below this is treated as zero.
pub const DEGENERATE_ABS: f64 = 1e-8;
/// `W_c` below `DEGENERATE_CELLS · h · ℰ_h(c)` is treated as zero: on the
/// cone the discrete `W_c` is a discretization error of relative size `O(h)`.
pub const DEGENERATE_CELLS: f64 = 0.25;
/// Allowed excess of `W_star` over `W_c`.
pub const ADMISSIBILITY_SLACK: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-12;
const TRACE_RES_2D: [usize; 2] = [4096, 0];
const TRACE_RES_3D: [usize; 2] = [128, 256];
const PAIRING_POINTS: usize = 4;

type Trace = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Trace of a `(1+s)`-homogeneous datum on `∂B_1`.
#[derive(Clone)]
pub struct HomogeneousDatum {
    id: String,
    n: usize,
    s: f64,
    trace: Trace,
    /// Trace values at the nodes of the unit sphere rule.
    samples: Vec<f64>,
    symmetric: bool,
    /// Minimum of the trace on `∂B_1 ∩ {x_n = 0}`.
    plane_min: f64,
    /// `∫_{∂B_1} c² |x_n|^a`.
    h_c: f64,
}

impl std::fmt::Debug for HomogeneousDatum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HomogeneousDatum")
            .field("id", &self.id)
            .field("n", &self.n)
            .field("s", &self.s)
            .field("plane_min", &self.plane_min)
            .field("h_c", &self.h_c)
            .finish()
    }
}

fn unit_rule(n: usize, a: f64) -> SphereRule {
    let res = if n == 2 { TRACE_RES_2D } else { TRACE_RES_3D };
    SphereRule::with_resolution(n, a, &[0.0; 3][..n], 1.0, res)
}

fn plane_circle(n: usize) -> Vec<Vec<f64>> {
    if n == 2 {
        vec![vec![1.0, 0.0], vec![-1.0, 0.0]]
    } else {
        let m = TRACE_RES_3D[1] * 4;
        (0..m)
            .map(|k| {
                let phi = 2.0 * PI * k as f64 / m as f64;
                vec![phi.cos(), phi.sin(), 0.0]
            })
            .collect()
    }
}

impl HomogeneousDatum {
    /// Validates and samples a trace given as a function on the unit sphere.
    pub fn new(
        id: impl Into<String>,
        n: usize,
        s: f64,
        trace: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(n == 2 || n == 3) {
            return Err(LabError::InvalidParams(format!("dimension {n} must be 2 or 3")));
        }
        if !(s > 0.0 && s < 1.0) {
            return Err(LabError::InvalidParams(format!("s = {s} must lie in (0, 1)")));
        }
        let id = id.into();
        let trace: Trace = Arc::new(trace);
        let rule = unit_rule(n, 1.0 - 2.0 * s);
        let samples: Vec<f64> = rule.points.iter().map(|p| trace(&p[..n])).collect();
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(LabError::IncompatibleDatum(format!("{id}: trace is not finite")));
        }
        let scale = samples.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let defect = rule
            .points
            .iter()
            .zip(&samples)
            .map(|(p, v)| {
                let mut q = p[..n].to_vec();
                q[n - 1] = -q[n - 1];
                (trace(&q) - v).abs()
            })
            .fold(0.0, f64::max);
        let symmetric = defect <= SYMMETRY_TOL * scale;
        if !symmetric {
            return Err(LabError::IncompatibleDatum(format!("{id}: trace is not even in x_n (defect {defect:e})")));
        }
        let plane_min = plane_circle(n).iter().map(|p| trace(p)).fold(f64::INFINITY, f64::min);
        if plane_min < 0.0 {
            return Err(LabError::IncompatibleDatum(format!("{id}: trace is negative on the plane ({plane_min:e})")));
        }
        let h_c = rule.weights.iter().zip(&samples).map(|(w, v)| w * v * v).sum();
        Ok(Self { id, n, s, trace, samples, symmetric, plane_min, h_c })
    }

    /// Trace of `λ h_e`.
    pub fn cone(c: &ConeElement, s: f64) -> Result<Self> {
        let n = c.e.len() + 1;
        let c = c.clone();
        Self::new(format!("cone-{}", c.lambda), n, s, move |x| c.lambda * h_e_unchecked(x, &c.e, s))
    }

    /// Constant trace.
    pub fn constant(n: usize, s: f64, value: f64) -> Result<Self> {
        Self::new(format!("constant-{value}"), n, s, move |_| value)
    }

    /// Trace of `h_e + ε q_k` with `q_k = 1 + (−1)^k cos(k θ_e)`, where `θ_e`
    /// is the angle between the point and `e`. `q_k` is even in `x_n`,
    /// nonnegative, and equals 2 at `−e`, inside the contact set of `h_e`.
    pub fn perturbed_cone(e: &[f64], s: f64, k: u32, eps: f64) -> Result<Self> {
        let n = e.len() + 1;
        h_e_eval(&vec![0.0; n], e, s)?;
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(LabError::InvalidParams(format!("perturbation size {eps} must be ≥ 0")));
        }
        let sign = if e[0] >= 0.0 { '+' } else { '-' };
        let id = format!("q{k}-eps{eps}-e{sign}");
        let e = e.to_vec();
        Self::new(id, n, s, move |x| {
            let t: f64 = x.iter().zip(&e).map(|(a, b)| a * b).sum();
            let q = 1.0 + if k % 2 == 0 { 1.0 } else { -1.0 } * (k as f64 * t.clamp(-1.0, 1.0).acos()).cos();
            h_e_unchecked(x, &e, s) + eps * q
        })
    }

    pub fn scaled(&self, gamma: f64) -> Result<Self> {
        let f = self.trace.clone();
        Self::new(format!("{gamma}x{}", self.id), self.n, self.s, move |x| gamma * f(x))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn plane_min(&self) -> f64 {
        self.plane_min
    }

    /// `∫_{∂B_1} c² |x_n|^a dH^{n−1}`.
    pub fn boundary_term(&self) -> f64 {
        self.h_c
    }

    /// Value of the trace at a point of `∂B_1`.
    pub fn trace(&self, x: &[f64]) -> f64 {
        (self.trace)(x)
    }

    /// `|x|^{1+s} c(x/|x|)`, zero at the origin.
    pub fn extension(&self, x: &[f64]) -> f64 {
        let r = norm(x);
        if r == 0.0 {
            return 0.0;
        }
        let unit: Vec<f64> = x.iter().map(|v| v / r).collect();
        r.powf(1.0 + self.s) * (self.trace)(&unit)
    }

    fn boundary_data(&self) -> BoundaryData {
        let d = self.clone();
        BoundaryData::new(self.id.clone(), move |x| d.extension(x))
    }

    fn check_grid(&self, g: &Grid) -> Result<()> {
        let p = g.params();
        if p.n != self.n || p.s != self.s {
            return Err(LabError::GridMismatch);
        }
        if (p.r_dom - 1.0).abs() > 1e-12 {
            return Err(LabError::InvalidParams(format!(
                "the unit ball problem needs domain radius 1, got {}",
                p.r_dom
            )));
        }
        Ok(())
    }
}

/// Samples of the homogeneous extension at every lattice node.
pub fn homogeneous_extension(c: &HomogeneousDatum, g: &Arc<Grid>) -> Result<ScalarField> {
    if g.n() != c.n || g.params().s != c.s {
        return Err(LabError::GridMismatch);
    }
    Ok(ScalarField::from_fn(g, |x| c.extension(x)))
}

fn solve_from_extension(c: &HomogeneousDatum, g: &Arc<Grid>) -> Result<(DiscreteProblem, ScalarField, Solution)> {
    c.check_grid(g)?;
    let p = DiscreteProblem::assemble(g, c.boundary_data())?;
    let ext = homogeneous_extension(c, g)?;
    let opts = SolverOptions::tuned(g).with_initial(InitialGuess::Field(ext.clone()));
    let (p, sol) = crate::solver::solve_adapted(&p, &opts)?;
    Ok((p, ext, sol))
}

/// Minimizer of the obstacle problem in `B_1` with datum `c`, started from
/// the extension. `g` must have domain radius 1.
pub fn inner_minimize(c: &HomogeneousDatum, g: &Arc<Grid>) -> Result<Solution> {
    Ok(solve_from_extension(c, g)?.2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpiStatus {
    Ok,
    Degenerate,
    Violated,
}

impl EpiStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::Degenerate => "degenerate",
            Self::Violated => "violated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpiReport {
    pub id: String,
    /// `W` of the homogeneous extension.
    pub w_c: f64,
    /// `W` of the inner minimizer.
    pub w_star: f64,
    /// `1 − W_star / W_c`, absent when degenerate.
    pub kappa: Option<f64>,
    pub status: EpiStatus,
}

impl EpiReport {
    /// Classifies a pair of energies against a degeneracy threshold.
    pub fn from_energies(id: impl Into<String>, w_c: f64, w_star: f64, threshold: f64) -> Self {
        let threshold = threshold.max(DEGENERATE_ABS);
        let status = if w_star > w_c + ADMISSIBILITY_SLACK {
            EpiStatus::Violated
        } else if w_c <= threshold {
            EpiStatus::Degenerate
        } else {
            EpiStatus::Ok
        };
        let kappa = (w_c > threshold).then(|| 1.0 - w_star / w_c);
        Self { id: id.into(), w_c, w_star, kappa, status }
    }
}

/// Empirical epiperimetric gap of one datum on a unit-ball grid.
pub fn epiperimetric_gap(c: &HomogeneousDatum, g: &Arc<Grid>) -> Result<EpiReport> {
    let (p, ext, sol) = solve_from_extension(c, g)?;
    let e_c = p.energy(&ext);
    let bdry = (1.0 + c.s) * c.h_c;
    Ok(EpiReport::from_energies(c.id.clone(), e_c - bdry, sol.energy - bdry, degeneracy_threshold(e_c, g.h())))
}

/// `max(DEGENERATE_ABS, DEGENERATE_CELLS · h · ℰ_h(c))`.
pub fn degeneracy_threshold(energy_c: f64, h: f64) -> f64 {
    DEGENERATE_ABS.max(DEGENERATE_CELLS * h * energy_c.abs())
}

pub const EPI_CSV_HEADER: &str = "datum_id,W_c,W_star,kappa_emp,status";

#[derive(Debug, Clone, Serialize)]
pub struct KappaSweep {
    pub min_kappa: f64,
    pub reports: Vec<EpiReport>,
}

impl KappaSweep {
    pub fn violations(&self) -> usize {
        self.reports.iter().filter(|r| r.status == EpiStatus::Violated).count()
    }

    pub fn to_csv(&self) -> String {
        epi_csv(&self.reports)
    }
}

pub fn epi_csv(reports: &[EpiReport]) -> String {
    let mut out = String::from(EPI_CSV_HEADER);
    out.push('\n');
    for r in reports {
        let kappa = r.kappa.map_or(String::new(), |k| format!("{k:.16e}"));
        let _ = writeln!(out, "{},{:.16e},{:.16e},{},{}", r.id, r.w_c, r.w_star, kappa, r.status.as_str());
    }
    out
}

/// Minimum of `κ` over the non-degenerate reports.
pub fn summarize(reports: Vec<EpiReport>) -> Result<KappaSweep> {
    let min_kappa = reports.iter().filter_map(|r| r.kappa).fold(f64::INFINITY, f64::min);
    if !min_kappa.is_finite() {
        return Err(LabError::Precondition("every datum of the family is degenerate".into()));
    }
    Ok(KappaSweep { min_kappa, reports })
}

/// Runs [`epiperimetric_gap`] over a family in parallel.
pub fn kappa_sweep(family: &[HomogeneousDatum], g: &Arc<Grid>) -> Result<KappaSweep> {
    if family.is_empty() {
        return Err(LabError::Precondition("empty datum family".into()));
    }
    let reports = family.par_iter().map(|c| epiperimetric_gap(c, g)).collect::<Result<Vec<_>>>()?;
    summarize(reports)
}

/// The shipped family: `h_e + ε q_k` for `k = 0..4`, `ε ∈ {0.1, 0.2}` and
/// `e = ±e_1`, twenty data in all.
pub fn default_family(n: usize, s: f64) -> Result<Vec<HomogeneousDatum>> {
    let mut out = Vec::with_capacity(20);
    for sign in [1.0, -1.0] {
        let mut e = ConeElement::e1(n);
        e[0] = sign;
        for k in 0..5 {
            for eps in [0.1, 0.2] {
                out.push(HomogeneousDatum::perturbed_cone(&e, s, k, eps)?);
            }
        }
    }
    Ok(out)
}

/// Input of the auxiliary functional `𝒢_j`.
#[derive(Clone)]
pub struct AuxiliaryInput {
    pub z: ScalarField,
    pub theta: f64,
    /// Direction of `h = h_e`.
    pub e: Vec<f64>,
    /// Boundary trace `z_j` on `∂B_1`.
    pub trace: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

/// `∫_{B_1} |∇f|² dμ_a` with the polar rule and the cubic gradient.
pub fn dirichlet_energy(probe: &FieldProbe) -> Result<f64> {
    let g = probe.u.grid();
    let n = g.n();
    BallRule::polar(g, &vec![0.0; n], 1.0, true)?.try_integrate(|p| {
        let (_, gr) = probe.eval(p)?;
        Ok((0..n).map(|k| gr[k] * gr[k]).sum())
    })
}

/// `∫_{B'_1} f R_a(h_e) dH^{n−1}`. The integrand vanishes on `{x̂·e > 0}`;
/// on the other half it is `−(1+s)(2|t|)^{1−s} f`, integrated in
/// `|t| = x̂·(−e)` with Gauss–Jacobi on the first panel.
pub fn contact_pairing(probe: &FieldProbe, e: &[f64]) -> Result<f64> {
    let g = probe.u.grid();
    let n = g.n();
    let s = g.params().s;
    h_e_eval(&vec![0.0; n], e, s)?;
    let h = g.h();
    let b = 1.0 - s;
    let panels = ((1.0 / h).ceil() as usize).max(1);
    let dx = 1.0 / panels as f64;
    let (jx, jw) = gauss_jacobi_01(b, PAIRING_POINTS);
    let (gx, gw) = gauss_jacobi_01(0.0, PAIRING_POINTS);
    let mut radial = Vec::with_capacity(panels * PAIRING_POINTS);
    for k in 0..PAIRING_POINTS {
        radial.push((dx * jx[k], dx.powf(b + 1.0) * jw[k]));
    }
    for m in 1..panels {
        for k in 0..PAIRING_POINTS {
            let x = dx * (m as f64 + gx[k]);
            radial.push((x, dx * gw[k] * x.powf(b)));
        }
    }
    let coef = r_a_h(-1.0, s);
    let at = |p: &[f64]| -> Result<f64> { Ok(probe.eval(p)?.0) };
    let mut acc = 0.0;
    for &(x, w) in &radial {
        if n == 2 {
            acc += w * at(&[-x * e[0], 0.0])?;
        } else {
            let half = (1.0 - x * x).max(0.0).sqrt();
            let cells = ((2.0 * half / h).ceil() as usize).max(1);
            let dw = 2.0 * half / cells as f64;
            let mut line = 0.0;
            for c in 0..cells {
                for k in 0..PAIRING_POINTS {
                    let v = -half + dw * (c as f64 + gx[k]);
                    let p = [-x * e[0] - v * e[1], -x * e[1] + v * e[0], 0.0];
                    line += dw * gw[k] * at(&p)?;
                }
            }
            acc += w * line;
        }
    }
    Ok(coef * acc)
}

/// `𝒢_j(z) = ∫|∇z|² dμ_a − (1+s)∫_{∂B_1} z_j² |x_n|^a − 4θ∫_{B'_1} z R_a(h)`
/// for `z` in the admissible class, `+∞` otherwise. Membership requires
/// `z + θh ≥ 0` at the plane nodes of `B_1` and the trace of `z` to match
/// `z_j` on `∂B_1` within `4h` relative to the largest trace value.
pub fn auxiliary_functional(inp: &AuxiliaryInput) -> Result<f64> {
    let g = inp.z.grid();
    let n = g.n();
    let p = g.params();
    let s = p.s;
    h_e_eval(&vec![0.0; n], &inp.e, s)?;
    if !(inp.theta >= 0.0) {
        return Err(LabError::InvalidParams(format!("theta = {} must be ≥ 0", inp.theta)));
    }
    let rule = SphereRule::on_grid(g, &vec![0.0; n], 1.0, true)?;
    let trace: Vec<f64> = rule.points.iter().map(|q| (inp.trace)(&q[..n])).collect();
    let scale = trace.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let probe = FieldProbe::new(inp.z.clone());
    let mut mismatch: f64 = 0.0;
    for (q, t) in rule.points.iter().zip(&trace) {
        mismatch = mismatch.max((probe.eval(&q[..n])?.0 - t).abs());
    }
    if mismatch > 4.0 * p.h * scale.max(inp.z.max_abs_active()) + 1e-12 {
        return Ok(f64::INFINITY);
    }
    let z = inp.z.values();
    for &i in g.plane_nodes() {
        let x = g.node(i);
        if norm(&x[..n]) > 1.0 {
            continue;
        }
        let hv = h_e_unchecked(&x[..n], &inp.e, s);
        if z[i] + inp.theta * hv < -1e-12 * (1.0 + scale) {
            return Ok(f64::INFINITY);
        }
    }
    let boundary: f64 = rule.weights.iter().zip(&trace).map(|(w, t)| w * t * t).sum();
    let pairing = if inp.theta == 0.0 { 0.0 } else { contact_pairing(&probe, &inp.e)? };
    Ok(dirichlet_energy(&probe)? - (1.0 + s) * boundary - 4.0 * inp.theta * pairing)
}

/// `W(1, c) = ∫_{B_1}|∇c|² dμ_a − (1+s)∫_{∂B_1} c² |x_n|^a` of a sampled field.
pub fn weiss_at_unit(probe: &FieldProbe) -> Result<f64> {
    let g = probe.u.grid();
    let n = g.n();
    let s = g.params().s;
    let rule = SphereRule::on_grid(g, &vec![0.0; n], 1.0, true)?;
    let h = rule.try_integrate(|q, _| Ok(probe.eval(q)?.0.powi(2)))?;
    Ok(dirichlet_energy(probe)? - (1.0 + s) * h)
}
