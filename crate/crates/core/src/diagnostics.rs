//! Frequency, Weiss energy and the integral identities behind them.
//!
//! For a field `u`, a plane center `x0` and a radius `r`:
//!
//! ```text
//!   H(r) = ∫_{∂B_r} u² |x_n|^a          D(r) = ∫_{B_r} |∇u|² |x_n|^a
//!   N(r) = r D / H                      W(r) = D / r^{n+1} − (1+s) H / r^{n+2}
//! ```
//!
//! Radii must stay in the trusted region `|x0| + r ≤ 0.8 R`, away from the
//! Dirichlet layer of the solver.

use std::fmt::Write as _;
use std::io;

use serde::Serialize;

use crate::blowup::FreeBoundary;
use crate::error::{LabError, Result};
use crate::grid::{norm, ScalarField};
use crate::integrals::{BallRule, SphereRule};

/// Fraction of the domain radius usable for diagnostics.
pub const TRUSTED_FRACTION: f64 = 0.8;
/// Ratio between consecutive default radii.
pub const RADIUS_RATIO: f64 = 0.85;
/// Relative tolerance for monotonicity checks.
pub const TOL_MONO: f64 = 1e-6;

/// A field read through its piecewise cubic interpolant, which gives the
/// value and gradient at every quadrature node.
#[derive(Debug, Clone)]
pub struct FieldProbe {
    pub u: ScalarField,
}

impl FieldProbe {
    pub fn new(u: ScalarField) -> Self {
        Self { u }
    }

    pub fn eval(&self, p: &[f64]) -> Result<(f64, [f64; 3])> {
        self.u.value_and_gradient(p)
    }

    fn s(&self) -> f64 {
        self.u.grid().params().s
    }

    fn n(&self) -> usize {
        self.u.grid().n()
    }
}

/// Boundary and volume integrals at one radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub r: f64,
    /// `∫_{∂B_r} u² w`
    pub h: f64,
    /// `∫_{B_r} |∇u|² w`
    pub d: f64,
    /// `∫_{∂B_r} u u_ν w`
    pub u_unu: f64,
    /// `∫_{∂B_r} u_ν² w`
    pub unu2: f64,
    /// `∫_{∂B_r} |∇u|² w`
    pub grad2: f64,
    /// `∫_{∂B_r} (u_ν − (1+s) u / r)² w`
    pub euler2: f64,
}

fn check_trusted(probe: &FieldProbe, x0: &[f64], r: f64) -> Result<()> {
    let g = probe.u.grid();
    let c = g.check_point(x0)?;
    let reach = norm(&c) + r;
    let limit = TRUSTED_FRACTION * g.params().r_dom;
    if reach > limit * (1.0 + 1e-12) {
        return Err(LabError::OutsideDomain { center: x0.to_vec(), r, reach });
    }
    Ok(())
}

fn moments_unchecked(probe: &FieldProbe, x0: &[f64], r: f64) -> Result<Moments> {
    let g = probe.u.grid();
    let n = probe.n();
    let k1 = (1.0 + probe.s()) / r;
    let sphere = SphereRule::on_grid(g, x0, r, true)?;
    let parts: Vec<[f64; 5]> = {
        use rayon::prelude::*;
        (0..sphere.len())
            .into_par_iter()
            .map(|k| -> Result<[f64; 5]> {
                let p = &sphere.points[k][..n];
                let nu = &sphere.normals[k];
                let (u, gr) = probe.eval(p)?;
                let unu: f64 = (0..n).map(|d| gr[d] * nu[d]).sum();
                let g2: f64 = (0..n).map(|d| gr[d] * gr[d]).sum();
                let w = sphere.weights[k];
                let eu = unu - k1 * u;
                Ok([w * u * u, w * u * unu, w * unu * unu, w * g2, w * eu * eu])
            })
            .collect::<Result<Vec<_>>>()?
    };
    let mut acc = [0.0; 5];
    for p in &parts {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    let ball = BallRule::polar(g, x0, r, true)?;
    let d = ball.try_integrate(|p| {
        let (_, gr) = probe.eval(p)?;
        Ok((0..n).map(|k| gr[k] * gr[k]).sum())
    })?;
    Ok(Moments { r, h: acc[0], d, u_unu: acc[1], unu2: acc[2], grad2: acc[3], euler2: acc[4] })
}

/// All integrals at `(x0, r)`; `r` must lie in the trusted region.
pub fn moments(probe: &FieldProbe, x0: &[f64], r: f64) -> Result<Moments> {
    check_trusted(probe, x0, r)?;
    moments_unchecked(probe, x0, r)
}

/// `(H_a(r), D_a(r))`.
pub fn h_d_at(u: &FieldProbe, x0: &[f64], r: f64) -> Result<(f64, f64)> {
    let m = moments(u, x0, r)?;
    Ok((m.h, m.d))
}

pub fn frequency_from(m: &Moments) -> Result<f64> {
    if !(m.h > 0.0) {
        return Err(LabError::UndefinedFrequency(m.h));
    }
    Ok(m.r * m.d / m.h)
}

/// Almgren frequency `N = r D / H`.
pub fn frequency(u: &FieldProbe, x0: &[f64], r: f64) -> Result<f64> {
    frequency_from(&moments(u, x0, r)?)
}

/// `W = D / r^{n+1} − (1+s) H / r^{n+2}`.
pub fn weiss_from(m: &Moments, n: usize, s: f64) -> f64 {
    m.d / m.r.powi(n as i32 + 1) - (1.0 + s) * m.h / m.r.powi(n as i32 + 2)
}

/// `(H / r^{n+2}) (N − (1+s))`, equal to [`weiss_from`] whenever `H > 0`.
pub fn weiss_via_frequency(m: &Moments, n: usize, s: f64) -> Result<f64> {
    Ok(m.h / m.r.powi(n as i32 + 2) * (frequency_from(m)? - (1.0 + s)))
}

pub fn weiss_energy(u: &FieldProbe, x0: &[f64], r: f64) -> Result<f64> {
    Ok(weiss_from(&moments(u, x0, r)?, u.n(), u.s()))
}

/// Absolute residual of an identity together with the size of its terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residual {
    pub value: f64,
    pub scale: f64,
}

impl Residual {
    fn new(lhs: f64, rhs: f64, scale: f64) -> Self {
        Self { value: (lhs - rhs).abs(), scale }
    }

    pub fn relative(&self) -> f64 {
        if self.scale > 0.0 {
            self.value / self.scale
        } else {
            self.value
        }
    }
}

/// Residuals of the identities at one radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityResiduals {
    /// `∫|∇u|² w = ((n−2+a)/r) D + 2∫u_ν² w` on `∂B_r`
    pub rellich: Residual,
    /// `H′ = ((n−2s)/r) H + 2∫u u_ν w`
    pub h_prime: Residual,
    /// `D′ = ((n−2+a)/r) D + 2∫u_ν² w`
    pub d_prime: Residual,
    /// `D = ∫u u_ν w`
    pub d_boundary: Residual,
    /// `W′ = (2/r^{n+1}) ∫(u_ν − (1+s)u/r)² w`
    pub weiss: Residual,
}

impl IdentityResiduals {
    pub fn all(&self) -> [Residual; 5] {
        [self.rellich, self.h_prime, self.d_prime, self.d_boundary, self.weiss]
    }
}

/// Central finite-difference step in `r`, in units of `h`.
pub const FD_STEP_CELLS: f64 = 2.0;

fn residuals_from(probe: &FieldProbe, m: &Moments, lo: &Moments, hi: &Moments) -> IdentityResiduals {
    let n = probe.n();
    let s = probe.s();
    let a = 1.0 - 2.0 * s;
    let r = m.r;
    let dr = hi.r - m.r;
    let fd = |qm: f64, qp: f64| (qp - qm) / (2.0 * dr);
    let kd = (n as f64 - 2.0 + a) / r;
    let kh = (n as f64 - 2.0 * s) / r;
    let rellich_rhs = kd * m.d + 2.0 * m.unu2;
    let rellich = Residual::new(m.grad2, rellich_rhs, m.grad2.abs().max(kd.abs() * m.d.abs() + 2.0 * m.unu2));
    let hp_rhs = kh * m.h + 2.0 * m.u_unu;
    let h_prime = Residual::new(fd(lo.h, hi.h), hp_rhs, kh.abs() * m.h + 2.0 * m.u_unu.abs());
    let d_prime = Residual::new(fd(lo.d, hi.d), rellich_rhs, kd.abs() * m.d.abs() + 2.0 * m.unu2);
    let d_boundary = Residual::new(m.d, m.u_unu, m.d.abs().max(m.u_unu.abs()));
    let w = |q: &Moments| weiss_from(q, n, s);
    let rn1 = r.powi(n as i32 + 1);
    let k = 1.0 + s;
    let weiss_rhs = 2.0 / rn1 * m.euler2;
    let weiss_scale = 2.0 / rn1 * (m.unu2 + k * k / (r * r) * m.h);
    let weiss = Residual::new(fd(w(lo), w(hi)), weiss_rhs, weiss_scale);
    IdentityResiduals { rellich, h_prime, d_prime, d_boundary, weiss }
}

fn stencil(probe: &FieldProbe, x0: &[f64], r: f64) -> Result<(Moments, Moments, Moments)> {
    check_trusted(probe, x0, r)?;
    let dr = FD_STEP_CELLS * probe.u.grid().h();
    if r <= dr {
        return Err(LabError::InvalidParams(format!("radius {r} is below the finite-difference step {dr}")));
    }
    Ok((moments_unchecked(probe, x0, r - dr)?, moments_unchecked(probe, x0, r)?, moments_unchecked(probe, x0, r + dr)?))
}

/// Residuals of the Rellich, `H′`, `D′`, boundary-`D` and Weiss-derivative
/// identities at `(x0, r)`.
pub fn identity_residuals(u: &FieldProbe, x0: &[f64], r: f64) -> Result<IdentityResiduals> {
    let (lo, m, hi) = stencil(u, x0, r)?;
    Ok(residuals_from(u, &m, &lo, &hi))
}

pub fn weiss_derivative_residual(u: &FieldProbe, x0: &[f64], r: f64) -> Result<Residual> {
    Ok(identity_residuals(u, x0, r)?.weiss)
}

/// One row of a diagnostics series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesRow {
    pub r: f64,
    pub h: f64,
    pub d: f64,
    pub n: f64,
    pub w: f64,
    pub residuals: IdentityResiduals,
    pub moments: Moments,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsSeries {
    pub center: Vec<f64>,
    pub dim: usize,
    pub s: f64,
    pub rows: Vec<SeriesRow>,
}

pub const CSV_HEADER: &str = "r,H,D,N,W,res_rellich,res_Hp,res_Dp,res_Db,res_weiss";

impl DiagnosticsSeries {
    pub fn radii(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.r).collect()
    }

    pub fn column(&self, which: Quantity) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| match which {
                Quantity::N => row.n,
                Quantity::W => row.w,
                Quantity::HOverR => row.h / row.r.powi(self.dim as i32 + 2),
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let res = row.residuals.all();
            let _ = write!(out, "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", row.r, row.h, row.d, row.n, row.w);
            for r in res {
                let _ = write!(out, ",{:.16e}", r.value);
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, mut w: impl io::Write) -> io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }
}

/// `r_max ρ^k` for `k = 0, 1, …` down to `r_min`, increasing.
pub fn geometric_radii(r_max: f64, r_min: f64, ratio: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = r_max;
    while r >= r_min * (1.0 - 1e-12) {
        out.push(r);
        r *= ratio;
    }
    out.reverse();
    out
}

/// Default radii: from the edge of the trusted region around `x0` down to
/// `8h`, ratio 0.85.
pub fn default_radii(u: &ScalarField, x0: &[f64]) -> Vec<f64> {
    let g = u.grid();
    let r_max = TRUSTED_FRACTION * g.params().r_dom - norm(x0) - FD_STEP_CELLS * g.h();
    geometric_radii(r_max, 8.0 * g.h(), RADIUS_RATIO)
}

/// Series of `H, D, N, W` and identity residuals at the given radii.
pub fn series(u: &FieldProbe, x0: &[f64], radii: &[f64]) -> Result<DiagnosticsSeries> {
    if radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::InvalidParams("radii must be strictly increasing".into()));
    }
    let n = u.n();
    let s = u.s();
    let mut rows = Vec::with_capacity(radii.len());
    for &r in radii {
        let (lo, m, hi) = stencil(u, x0, r)?;
        let residuals = residuals_from(u, &m, &lo, &hi);
        let freq = frequency_from(&m)?;
        rows.push(SeriesRow { r, h: m.h, d: m.d, n: freq, w: weiss_from(&m, n, s), residuals, moments: m });
    }
    Ok(DiagnosticsSeries { center: x0.to_vec(), dim: n, s, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Quantity {
    N,
    W,
    HOverR,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub quantity: Quantity,
    pub tol: f64,
    /// `(k, q_k − q_{k+1})` for each pair that drops by more than `tol`.
    pub violations: Vec<(usize, f64)>,
}

impl MonotonicityReport {
    pub fn passes(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Adjacent pairs where `q` decreases by more than `1e-6 · max|q|`.
pub fn monotonicity_of(values: &[f64], quantity: Quantity) -> Result<MonotonicityReport> {
    if values.len() < 3 {
        return Err(LabError::Precondition(format!("{} radii, need at least 3", values.len())));
    }
    let tol = TOL_MONO * values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let violations =
        values.windows(2).enumerate().filter(|(_, w)| w[0] - w[1] > tol).map(|(k, w)| (k, w[0] - w[1])).collect();
    Ok(MonotonicityReport { quantity, tol, violations })
}

pub fn monotonicity_scan(series: &DiagnosticsSeries, which: Quantity) -> Result<MonotonicityReport> {
    monotonicity_of(&series.column(which), which)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FloorReport {
    pub min_frequency: f64,
    pub floor: f64,
    pub passes: bool,
}

/// `min_r N(r) ≥ (1+s) − slack` at a free-boundary center.
pub fn frequency_floor_check(series: &DiagnosticsSeries, fb: &FreeBoundary, slack: f64) -> Result<FloorReport> {
    if !fb.near_boundary(&series.center) {
        return Err(LabError::Precondition(format!("center {:?} is not on the free boundary", series.center)));
    }
    let min_frequency = series.rows.iter().map(|r| r.n).fold(f64::INFINITY, f64::min);
    let floor = 1.0 + series.s - slack;
    Ok(FloorReport { min_frequency, floor, passes: min_frequency >= floor })
}

/// Least-squares power law `W ≈ C r^γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub c: f64,
    pub gamma: f64,
    /// Largest `|log W − log(C r^γ)|`.
    pub max_residual: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

/// Fits `log q = log C + γ log r` over samples with `q > 1e-12`; needs at
/// least five such samples.
pub fn power_law_fit(r: &[f64], q: &[f64]) -> Result<DecayFit> {
    log_log_fit(r, q, 5)
}

/// Least-squares line through `(log r, log q)` for the samples with
/// `q > 1e-12`.
pub fn log_log_fit(r: &[f64], q: &[f64], min_samples: usize) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = r.iter().zip(q).filter(|(_, &v)| v > 1e-12).map(|(&r, &v)| (r.ln(), v.ln())).collect();
    if pts.len() < min_samples.max(2) {
        return Err(LabError::DegenerateFit(format!("{} positive samples, need {}", pts.len(), min_samples.max(2))));
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (mx, my) = (sx / m, sy / m);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(LabError::DegenerateFit("all radii coincide".into()));
    }
    let gamma = sxy / sxx;
    let logc = my - gamma * mx;
    let max_residual = pts.iter().map(|p| (p.1 - logc - gamma * p.0).abs()).fold(0.0, f64::max);
    let rs: Vec<f64> = pts.iter().map(|p| p.0.exp()).collect();
    let window = (rs.iter().cloned().fold(f64::INFINITY, f64::min), rs.iter().cloned().fold(0.0, f64::max));
    Ok(DecayFit { c: logc.exp(), gamma, max_residual, window, samples: pts.len() })
}

/// Power-law fit of `W(r)` over the series.
pub fn decay_fit(series: &DiagnosticsSeries) -> Result<DecayFit> {
    power_law_fit(&series.radii(), &series.column(Quantity::W))
}

/// Decay exponent implied by an epiperimetric constant `κ`.
pub fn gamma_from_kappa(n: usize, kappa: f64) -> f64 {
    2.0 * (n as f64 + 1.0) * kappa / (1.0 - kappa)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Nondegeneracy {
    /// `min_r H(r) / r^{n+2}`
    pub h0: f64,
    pub positive: bool,
}

pub fn nondegeneracy_estimate(series: &DiagnosticsSeries) -> Nondegeneracy {
    let h0 = series.column(Quantity::HOverR).into_iter().fold(f64::INFINITY, f64::min);
    Nondegeneracy { h0, positive: h0 > 0.0 }
}
