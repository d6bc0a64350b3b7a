//! Closed-form `(1+s)`-homogeneous solutions `h_e`, the cone they span, its
//! tangent directions, and the two-variable profiles `z_∞`.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{Grid, ScalarField};
use crate::integrals::{BallRule, SphereRule};

/// `√(t² + y²) + t`, computed without cancellation for `t < 0`.
fn base(t: f64, y: f64) -> f64 {
    let rho = t.hypot(y);
    if t >= 0.0 {
        rho + t
    } else if rho > 0.0 {
        y * y / (rho - t)
    } else {
        0.0
    }
}

fn check_direction(e: &[f64], dim: usize) -> Result<()> {
    let len = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    if e.len() != dim || (len - 1.0).abs() > 1e-12 {
        return Err(LabError::BadDirection { e: e.to_vec(), dim });
    }
    Ok(())
}

fn split(x: &[f64], e: &[f64]) -> (f64, f64) {
    let n = x.len();
    let t = x[..n - 1].iter().zip(e).map(|(a, b)| a * b).sum();
    (t, x[n - 1])
}

/// `h_e(x) = (x̂·e/s − ρ)(ρ + x̂·e)^s` with `ρ = √((x̂·e)² + x_n²)`; `e` has
/// `n − 1` components and must be a unit vector.
pub fn h_e_eval(x: &[f64], e: &[f64], s: f64) -> Result<f64> {
    check_direction(e, x.len() - 1)?;
    Ok(h_e_unchecked(x, e, s))
}

pub(crate) fn h_e_unchecked(x: &[f64], e: &[f64], s: f64) -> f64 {
    let (t, y) = split(x, e);
    let b = base(t, y);
    if b <= 0.0 {
        return 0.0;
    }
    (t / s - t.hypot(y)) * b.powf(s)
}

/// Closed-form gradient of `h_e`; undefined on `{x_n = 0, x̂·e ≤ 0}`.
pub fn h_e_grad(x: &[f64], e: &[f64], s: f64) -> Result<Vec<f64>> {
    let n = x.len();
    check_direction(e, n - 1)?;
    let (t, y) = split(x, e);
    if y == 0.0 && t <= 0.0 {
        return Err(LabError::SingularPoint(x.to_vec()));
    }
    let b = base(t, y);
    let de = (1.0 - s * s) / s * b.powf(s);
    let mut g: Vec<f64> = e.iter().map(|ei| de * ei).collect();
    g.push(-(1.0 + s) * y * b.powf(s - 1.0));
    Ok(g)
}

/// `R_a h_e` on the plane as a function of `x̂·e`.
pub fn r_a_h(t: f64, s: f64) -> f64 {
    if t >= 0.0 {
        0.0
    } else {
        -(1.0 + s) * (2.0 * t.abs()).powf(1.0 - s)
    }
}

/// `R_a h_e` at a plane point `x̂`.
pub fn r_a_h_at(xhat: &[f64], e: &[f64], s: f64) -> Result<f64> {
    check_direction(e, xhat.len())?;
    let t = xhat.iter().zip(e).map(|(a, b)| a * b).sum();
    Ok(r_a_h(t, s))
}

/// `√2 Re((x̂·e + i|x_n|)^{m+1/2})`, harmonic off the half-plane
/// `{x_n = 0, x̂·e ≤ 0}` where it vanishes. For `s = 1/2`, `m = 1` gives `h_e`.
pub fn half_mode(x: &[f64], e: &[f64], m: u32) -> Result<f64> {
    check_direction(e, x.len() - 1)?;
    let (t, y) = split(x, e);
    let rho = t.hypot(y);
    if rho == 0.0 {
        return Ok(0.0);
    }
    let k = m as f64 + 0.5;
    Ok(SQRT_2 * rho.powf(k) * (k * y.abs().atan2(t)).cos())
}

/// `h_e + ε √2 Re((x̂·e + i|x_n|)^{5/2})` for `s = 1/2`. For `0 ≤ ε ≤ 3/5`
/// it solves the thin obstacle problem in `B_1` with its own trace as datum:
/// both modes vanish on the contact half-plane, the trace is positive on the
/// rest of the plane and `∂_n` stays nonpositive on the contact side.
pub fn two_mode_eval(x: &[f64], e: &[f64], eps: f64) -> Result<f64> {
    Ok(half_mode(x, e, 1)? + eps * half_mode(x, e, 2)?)
}

/// `λ h_e`, an element of the cone of `(1+s)`-homogeneous global solutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeElement {
    pub lambda: f64,
    pub e: Vec<f64>,
}

impl ConeElement {
    pub fn new(lambda: f64, e: Vec<f64>) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(LabError::InvalidParams(format!("cone scale {lambda} must be ≥ 0")));
        }
        check_direction(&e, e.len())?;
        Ok(Self { lambda, e })
    }

    /// Direction `e_1` of the plane `ℝ^{n−1}`.
    pub fn e1(n: usize) -> Vec<f64> {
        let mut e = vec![0.0; n - 1];
        e[0] = 1.0;
        e
    }

    /// `(cos φ, sin φ)` in 3D, `sign(cos φ)` in 2D.
    pub fn direction_from_angle(n: usize, phi: f64) -> Vec<f64> {
        if n == 2 {
            vec![if phi.cos() >= 0.0 { 1.0 } else { -1.0 }]
        } else {
            vec![phi.cos(), phi.sin()]
        }
    }

    pub fn eval(&self, x: &[f64], s: f64) -> Result<f64> {
        check_direction(&self.e, x.len() - 1)?;
        if self.lambda == 0.0 {
            return Ok(0.0);
        }
        Ok(self.lambda * h_e_unchecked(x, &self.e, s))
    }
}

/// Samples `λ h_e` at every lattice node.
pub fn sample_cone_element(c: &ConeElement, g: &Arc<Grid>) -> Result<ScalarField> {
    let n = g.n();
    check_direction(&c.e, n - 1)?;
    let s = g.params().s;
    if c.lambda == 0.0 {
        return Ok(ScalarField::zeros(g));
    }
    Ok(ScalarField::from_fn(g, |x| c.lambda * h_e_unchecked(x, &c.e, s)))
}

/// `α h_e + v_{e,ξ}` with `ξ ⟂ e` in the plane; `ξ` is empty for `n = 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub alpha: f64,
    pub xi: Vec<f64>,
}

/// `v_{e,ξ}(x) = (x̂·ξ)(ρ + x̂·e)^s`.
pub fn v_e_xi(x: &[f64], e: &[f64], xi: &[f64], s: f64) -> f64 {
    let (t, y) = split(x, e);
    let b = base(t, y);
    if b <= 0.0 {
        return 0.0;
    }
    let p: f64 = x[..x.len() - 1].iter().zip(xi).map(|(a, b)| a * b).sum();
    p * b.powf(s)
}

fn check_tangent(e: &[f64], t: &TangentVector, n: usize) -> Result<()> {
    check_direction(e, n - 1)?;
    if n == 2 && !t.xi.iter().all(|&v| v == 0.0) {
        return Err(LabError::BadTangent("S^0 has no tangent directions; ξ must be empty".into()));
    }
    if n == 3 {
        if t.xi.len() != 2 {
            return Err(LabError::BadTangent(format!("ξ needs 2 components, got {}", t.xi.len())));
        }
        let dot = t.xi[0] * e[0] + t.xi[1] * e[1];
        if dot.abs() > 1e-12 {
            return Err(LabError::BadTangent(format!("ξ·e = {dot} ≠ 0")));
        }
    }
    Ok(())
}

/// Samples the tangent vector `α h_e + v_{e,ξ}` on the grid.
pub fn tangent_field(e: &[f64], t: &TangentVector, g: &Arc<Grid>) -> Result<ScalarField> {
    let n = g.n();
    check_tangent(e, t, n)?;
    let s = g.params().s;
    let xi = if n == 2 { vec![0.0] } else { t.xi.clone() };
    Ok(ScalarField::from_fn(g, |x| t.alpha * h_e_unchecked(x, e, s) + v_e_xi(x, e, &xi, s)))
}

/// Coefficients of `z = a0 h_{e_{n−1}} + (Σ a_i x_i)(√(x_{n−1}² + x_n²) + x_{n−1})^s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppendixProfile {
    pub a0: f64,
    pub a_coeffs: Vec<f64>,
    pub s: f64,
}

pub fn appendix_profile_eval(p: &AppendixProfile, x: &[f64]) -> Result<f64> {
    let n = x.len();
    if p.a_coeffs.len() > n.saturating_sub(2) {
        return Err(LabError::InvalidParams(format!(
            "{} linear coefficients need n ≥ {}",
            p.a_coeffs.len(),
            p.a_coeffs.len() + 2
        )));
    }
    let (t, y) = (x[n - 2], x[n - 1]);
    let b = base(t, y);
    if b <= 0.0 {
        return Ok(0.0);
    }
    let lin: f64 = p.a_coeffs.iter().zip(x).map(|(a, xi)| a * xi).sum();
    Ok(p.a0 * (t / p.s - t.hypot(y)) * b.powf(p.s) + lin * b.powf(p.s))
}

/// Inner product used for cone projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionNorm {
    /// `∫_{∂B_1} f g |x_n|^a`
    SphereL2,
    /// `∫_{B_1} (f g + ∇f·∇g) dμ_a`
    #[default]
    H1,
}

struct Projector<'a> {
    f: &'a ScalarField,
    norm: ProjectionNorm,
    ball: Option<BallRule>,
    sphere: Option<SphereRule>,
    f_vals: Vec<f64>,
    f_grads: Vec<[f64; 3]>,
    ff: f64,
}

impl<'a> Projector<'a> {
    fn new(f: &'a ScalarField, norm: ProjectionNorm) -> Result<Self> {
        let g = f.grid();
        let n = g.n();
        let origin = vec![0.0; n];
        let (ball, sphere, pts): (_, _, Vec<[f64; 3]>) = match norm {
            ProjectionNorm::H1 => {
                let b = BallRule::on_grid(g, &origin, 1.0, true)?;
                let p = b.points.clone();
                (Some(b), None, p)
            }
            ProjectionNorm::SphereL2 => {
                let sr = SphereRule::on_grid(g, &origin, 1.0, true)?;
                let p = sr.points.clone();
                (None, Some(sr), p)
            }
        };
        let f_vals = pts.iter().map(|p| f.interpolate(&p[..n])).collect::<Result<Vec<_>>>()?;
        let f_grads = if norm == ProjectionNorm::H1 {
            let gf = f.gradient();
            pts.iter().map(|p| gf.interpolate(&p[..n])).collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let mut me = Self { f, norm, ball, sphere, f_vals, f_grads, ff: 0.0 };
        me.ff = me.inner_self();
        Ok(me)
    }

    fn weights(&self) -> &[f64] {
        match (&self.ball, &self.sphere) {
            (Some(b), _) => &b.weights,
            (_, Some(s)) => &s.weights,
            _ => unreachable!(),
        }
    }

    fn points(&self) -> &[[f64; 3]] {
        match (&self.ball, &self.sphere) {
            (Some(b), _) => &b.points,
            (_, Some(s)) => &s.points,
            _ => unreachable!(),
        }
    }

    fn inner_self(&self) -> f64 {
        let w = self.weights();
        let mut acc = 0.0;
        for k in 0..w.len() {
            let mut v = self.f_vals[k] * self.f_vals[k];
            if let Some(gr) = self.f_grads.get(k) {
                v += gr.iter().map(|c| c * c).sum::<f64>();
            }
            acc += w[k] * v;
        }
        acc
    }

    /// `(⟨f, h_e⟩, ⟨h_e, h_e⟩)`.
    fn against(&self, e: &[f64]) -> Result<(f64, f64)> {
        let g = self.f.grid();
        let n = g.n();
        let s = g.params().s;
        let w = self.weights();
        let pts = self.points();
        let he = ScalarField::from_fn(g, |x| h_e_unchecked(x, e, s));
        let hv = pts.iter().map(|p| he.interpolate(&p[..n])).collect::<Result<Vec<_>>>()?;
        let hg: Vec<[f64; 3]> = if self.norm == ProjectionNorm::H1 {
            let gh = he.gradient();
            pts.iter().map(|p| gh.interpolate(&p[..n])).collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let (mut fh, mut hh) = (0.0, 0.0);
        for k in 0..w.len() {
            let mut a = self.f_vals[k] * hv[k];
            let mut b = hv[k] * hv[k];
            if let Some(gh) = hg.get(k) {
                let gf = &self.f_grads[k];
                a += (0..n).map(|d| gf[d] * gh[d]).sum::<f64>();
                b += (0..n).map(|d| gh[d] * gh[d]).sum::<f64>();
            }
            fh += w[k] * a;
            hh += w[k] * b;
        }
        Ok((fh, hh))
    }

    /// Best scale for direction `e` and the squared residual.
    fn fit(&self, e: &[f64]) -> Result<(f64, f64)> {
        let (fh, hh) = self.against(e)?;
        let lambda = (fh / hh).max(0.0);
        let res2 = (self.ff - 2.0 * lambda * fh + lambda * lambda * hh).max(0.0);
        Ok((lambda, res2))
    }
}

/// `⟨f, g⟩` on the unit ball (or sphere) of the fields' grid. Cone samples
/// enter projections through the same discrete inner product.
pub fn inner_product(f: &ScalarField, g: &ScalarField, norm: ProjectionNorm) -> Result<f64> {
    let grid = f.grid();
    if g.grid().params() != grid.params() {
        return Err(LabError::GridMismatch);
    }
    let n = grid.n();
    let origin = vec![0.0; n];
    match norm {
        ProjectionNorm::SphereL2 => SphereRule::on_grid(grid, &origin, 1.0, true)?
            .try_integrate(|p, _| Ok(f.interpolate(p)? * g.interpolate(p)?)),
        ProjectionNorm::H1 => {
            let (gf, gg) = (f.gradient(), g.gradient());
            BallRule::on_grid(grid, &origin, 1.0, true)?.try_integrate(|p| {
                let (a, b) = (gf.interpolate(p)?, gg.interpolate(p)?);
                let dot: f64 = (0..n).map(|d| a[d] * b[d]).sum();
                Ok(f.interpolate(p)? * g.interpolate(p)? + dot)
            })
        }
    }
}

/// Nearest cone element to `f` in the chosen norm, with the residual
/// distance. The grid must contain the unit ball.
pub fn project_to_cone(f: &ScalarField, norm: ProjectionNorm) -> Result<(ConeElement, f64)> {
    let g = f.grid();
    let n = g.n();
    let scale = f.max_abs_active();
    if scale == 0.0 {
        return Ok((ConeElement { lambda: 0.0, e: ConeElement::e1(n) }, 0.0));
    }
    if f.symmetry_defect() > 1e-10 * scale {
        return Err(LabError::Precondition("projection needs a field even in x_n".into()));
    }
    let proj = Projector::new(f, norm)?;
    let best = if n == 2 {
        let mut best: Option<(Vec<f64>, f64, f64)> = None;
        for e in [vec![1.0], vec![-1.0]] {
            let (lambda, res2) = proj.fit(&e)?;
            if best.as_ref().is_none_or(|b| res2 < b.2) {
                best = Some((e, lambda, res2));
            }
        }
        best.expect("two candidates")
    } else {
        let obj = |phi: f64| proj.fit(&ConeElement::direction_from_angle(3, phi));
        let m = 64;
        let step = 2.0 * PI / m as f64;
        let mut k_best = 0;
        let mut r_best = f64::INFINITY;
        for k in 0..m {
            let (_, r2) = obj(k as f64 * step)?;
            if r2 < r_best {
                r_best = r2;
                k_best = k;
            }
        }
        let phi =
            golden_section(|p| obj(p).map(|v| v.1), (k_best as f64 - 1.0) * step, (k_best as f64 + 1.0) * step, 1e-10)?;
        let e = ConeElement::direction_from_angle(3, phi);
        let (lambda, res2) = proj.fit(&e)?;
        (e, lambda, res2)
    };
    let (e, lambda, res2) = best;
    let e = if lambda == 0.0 { ConeElement::e1(n) } else { e };
    Ok((ConeElement { lambda, e }, res2.sqrt()))
}

fn golden_section(f: impl Fn(f64) -> Result<f64>, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2)?;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, ProblemParams};

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    #[test]
    fn first_half_mode_is_h_e() {
        for x in [[0.3, 0.2], [-0.7, 0.1], [-0.2, -0.5], [0.9, 0.0], [-0.4, 0.0]] {
            let a = half_mode(&x, &[1.0], 1).unwrap();
            let b = h_e_eval(&x, &[1.0], 0.5).unwrap();
            assert!((a - b).abs() < 1e-14, "{x:?}: {a} {b}");
        }
        let e = [0.6, 0.8];
        let x = [0.1, -0.3, 0.25];
        assert!((half_mode(&x, &e, 1).unwrap() - h_e_eval(&x, &e, 0.5).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn two_mode_field_is_harmonic_and_vanishes_on_contact() {
        let d = 1e-3;
        for x in [[0.3, 0.2], [-0.5, 0.4], [-0.1, -0.3]] {
            let f = |p: [f64; 2]| two_mode_eval(&p, &[1.0], 0.4).unwrap();
            let lap = (f([x[0] + d, x[1]]) + f([x[0] - d, x[1]]) + f([x[0], x[1] + d]) + f([x[0], x[1] - d])
                - 4.0 * f(x))
                / (d * d);
            assert!(lap.abs() < 1e-4, "{x:?}: {lap}");
        }
        for t in [-0.9, -0.5, -0.01] {
            assert!(two_mode_eval(&[t, 0.0], &[1.0], 0.6).unwrap().abs() < 1e-15);
            let dy = two_mode_eval(&[t, 1e-7], &[1.0], 0.6).unwrap() / 1e-7;
            assert!(dy <= 1e-6, "{t}: {dy}");
        }
        assert!(two_mode_eval(&[0.5, 0.0], &[1.0], 0.6).unwrap() > 0.0);
    }

    #[test]
    fn h_e_point_values() {
        assert!((h_e_eval(&[1.0, 0.0], &[1.0], 0.5).unwrap() - SQRT2).abs() < 1e-15);
        for s in [0.1, 0.5, 0.9] {
            assert_eq!(h_e_eval(&[-1.0, 0.0], &[1.0], s).unwrap(), 0.0);
        }
        assert!((h_e_eval(&[0.0, 1.0], &[1.0], 0.5).unwrap() + 1.0).abs() < 1e-15);
        assert!(h_e_eval(&[0.0, 1.0], &[0.6], 0.5).is_err());
    }

    #[test]
    fn half_order_closed_form_in_polar_coordinates() {
        // s = 1/2: h_e = √2 ρ^{3/2} cos(3θ/2)
        for k in 0..40 {
            let th = -PI + 0.001 + k as f64 * (2.0 * PI - 0.002) / 39.0;
            let rho = 0.7;
            let x = [rho * th.cos(), rho * th.sin()];
            let want = SQRT2 * rho.powf(1.5) * (1.5 * th).cos();
            assert!((h_e_eval(&x, &[1.0], 0.5).unwrap() - want).abs() < 1e-13);
        }
    }

    #[test]
    fn gradient_point_values() {
        let g = h_e_grad(&[1.0, 0.0], &[1.0], 0.5).unwrap();
        assert!((g[0] - 1.5 * SQRT2).abs() < 1e-14 && g[1] == 0.0);
        let g = h_e_grad(&[0.0, 1.0], &[1.0], 0.5).unwrap();
        assert!((g[1] + 1.5).abs() < 1e-14);
        assert!(matches!(h_e_grad(&[-0.3, 0.0], &[1.0], 0.5), Err(LabError::SingularPoint(_))));
    }

    #[test]
    fn gradient_matches_richardson_differences() {
        let x = [0.3, 0.4];
        for s in [0.25, 0.5, 0.75] {
            let g = h_e_grad(&x, &[1.0], s).unwrap();
            for d in 0..2 {
                let fd = |del: f64| {
                    let mut p = x;
                    let mut m = x;
                    p[d] += del;
                    m[d] -= del;
                    (h_e_eval(&p, &[1.0], s).unwrap() - h_e_eval(&m, &[1.0], s).unwrap()) / (2.0 * del)
                };
                let rich = (4.0 * fd(1e-3) - fd(2e-3)) / 3.0;
                assert!((rich - g[d]).abs() < 1e-10, "s={s} d={d}");
            }
        }
    }

    #[test]
    fn flux_values_and_complementarity() {
        assert!((r_a_h(-1.0, 0.5) + 1.5 * SQRT2).abs() < 1e-14);
        assert_eq!(r_a_h(0.7, 0.5), 0.0);
        for k in -20..=20 {
            let t = k as f64 / 20.0;
            assert_eq!(h_e_eval(&[t, 0.0], &[1.0], 0.3).unwrap() * r_a_h(t, 0.3), 0.0);
        }
    }

    #[test]
    fn flux_is_limit_of_weighted_normal_derivative() {
        for s in [0.25, 0.5, 0.75] {
            let a = 1.0 - 2.0 * s;
            let y: f64 = 1e-7;
            let g = h_e_grad(&[-0.4, y], &[1.0], s).unwrap();
            let lim = y.powf(a) * g[1];
            assert!((lim - r_a_h(-0.4, s)).abs() < 1e-6, "s={s}");
        }
    }

    #[test]
    fn sampling_is_linear_and_even() {
        let g = build_grid(ProblemParams::new(2, 0.5, 1.0 / 16.0).unwrap()).unwrap();
        let one = sample_cone_element(&ConeElement::new(1.0, vec![1.0]).unwrap(), &g).unwrap();
        let two = sample_cone_element(&ConeElement::new(2.0, vec![1.0]).unwrap(), &g).unwrap();
        let zero = sample_cone_element(&ConeElement::new(0.0, vec![1.0]).unwrap(), &g).unwrap();
        assert_eq!(one.symmetry_defect(), 0.0);
        assert!(zero.values().iter().all(|&v| v == 0.0));
        for (a, b) in one.values().iter().zip(two.values()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn tangent_field_rules() {
        let g = build_grid(ProblemParams::new(2, 0.5, 1.0 / 16.0).unwrap()).unwrap();
        let t = TangentVector { alpha: 1.0, xi: vec![] };
        let f = tangent_field(&[1.0], &t, &g).unwrap();
        let h = sample_cone_element(&ConeElement::new(1.0, vec![1.0]).unwrap(), &g).unwrap();
        assert_eq!(f.values(), h.values());
        let bad = TangentVector { alpha: 1.0, xi: vec![1.0] };
        assert!(tangent_field(&[1.0], &bad, &g).is_err());

        let g3 = build_grid(ProblemParams::new(3, 0.5, 1.0 / 8.0).unwrap()).unwrap();
        let skew = TangentVector { alpha: 0.0, xi: vec![1.0, 0.1] };
        assert!(matches!(tangent_field(&[1.0, 0.0], &skew, &g3), Err(LabError::BadTangent(_))));
    }

    #[test]
    fn tangent_is_derivative_of_rotated_family() {
        let s = 0.5;
        let e = [1.0, 0.0];
        let xi = [0.0, 1.0];
        let t: f64 = 1e-4;
        let norm = (1.0 + t * t).sqrt();
        let et = [1.0 / norm, t / norm];
        for x in [[0.3, 0.5, 0.2], [-0.2, 0.4, 0.6], [0.7, -0.1, -0.3]] {
            let fd = (h_e_eval(&x, &et, s).unwrap() - h_e_eval(&x, &e, s).unwrap()) / t;
            let want = (1.0 / s - s) * v_e_xi(&x, &e, &xi, s);
            assert!((fd - want).abs() < 10.0 * t, "{fd} vs {want}");
        }
    }

    #[test]
    fn closed_form_profile_values() {
        let p = AppendixProfile { a0: 0.0, a_coeffs: vec![1.0], s: 0.5 };
        assert!((appendix_profile_eval(&p, &[1.0, 1.0, 0.0]).unwrap() - SQRT2).abs() < 1e-15);
        let q = AppendixProfile { a0: 1.0, a_coeffs: vec![0.0], s: 0.3 };
        let x = [0.2, -0.4, 0.5];
        let he = h_e_eval(&x, &[0.0, 1.0], 0.3).unwrap();
        assert!((appendix_profile_eval(&q, &x).unwrap() - he).abs() < 1e-15);
        let bad = AppendixProfile { a0: 1.0, a_coeffs: vec![1.0], s: 0.5 };
        assert!(appendix_profile_eval(&bad, &[0.1, 0.2]).is_err());
    }

    #[test]
    fn projection_of_cone_members_and_zero() {
        let g = build_grid(ProblemParams::new(2, 0.5, 1.0 / 32.0).unwrap()).unwrap();
        let f = sample_cone_element(&ConeElement::new(2.0, vec![1.0]).unwrap(), &g).unwrap();
        for norm in [ProjectionNorm::H1, ProjectionNorm::SphereL2] {
            let (c, dist) = project_to_cone(&f, norm).unwrap();
            assert_eq!(c.e, vec![1.0]);
            assert!((c.lambda - 2.0).abs() < 2.0 * g.h(), "{norm:?} {c:?}");
            assert!(dist < 5.0 * g.h(), "{norm:?} {dist}");
        }
        let (c, d) = project_to_cone(&ScalarField::zeros(&g), ProjectionNorm::H1).unwrap();
        assert_eq!((c.lambda, c.e, d), (0.0, vec![1.0], 0.0));
    }

    #[test]
    fn projection_in_three_dimensions_finds_direction() {
        let g = build_grid(ProblemParams::new(3, 0.5, 1.0 / 8.0).unwrap()).unwrap();
        let phi: f64 = 2.0;
        let e = vec![phi.cos(), phi.sin()];
        let f = sample_cone_element(&ConeElement::new(1.5, e.clone()).unwrap(), &g).unwrap();
        let (c, _) = project_to_cone(&f, ProjectionNorm::SphereL2).unwrap();
        let dot = c.e[0] * e[0] + c.e[1] * e[1];
        assert!(dot > 1.0 - 1e-3, "{c:?}");
        assert!((c.lambda - 1.5).abs() < 0.1);
    }
}
