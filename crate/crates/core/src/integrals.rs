//! Weighted quadrature over balls, spheres and thin disks centered on the
//! plane.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::grid::{Grid, ScalarField};
use crate::quadrature::{disk_rect_moments, gauss_jacobi_01, power_weight_integral, SinPowerPrimitive};

/// Angular nodes per unit length of the domain circumference (2D).
const SPHERE_DENSITY_2D: f64 = 2.0;
/// Same for the `ψ` and `t = cos φ` directions in 3D.
const SPHERE_DENSITY_3D: f64 = 1.0;
/// Gauss points per radial panel of the polar ball rule.
const RADIAL_POINTS: usize = 3;

/// Nodes, outward normals and weights of a quadrature rule on `∂B_r(x0)`.
#[derive(Debug, Clone)]
pub struct SphereRule {
    pub n: usize,
    pub center: [f64; 3],
    pub r: f64,
    pub points: Vec<[f64; 3]>,
    pub normals: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

fn round_up(m: usize, k: usize) -> usize {
    m.div_ceil(k) * k
}

impl SphereRule {
    /// Rule for `∂B_r(x0)` at the angular resolution of `grid`.
    ///
    /// The angular resolution depends on the domain radius and `h` but not on
    /// `r`, so integrals vary smoothly with the radius.
    pub fn on_grid(grid: &Grid, x0: &[f64], r: f64, weighted: bool) -> Result<Self> {
        let c = grid.check_ball(x0, r)?;
        let p = grid.params();
        let a = if weighted { p.a } else { 0.0 };
        Ok(Self::with_resolution(p.n, a, &c[..p.n], r, Self::grid_resolution(grid)))
    }

    fn grid_resolution(grid: &Grid) -> [usize; 2] {
        let p = grid.params();
        if p.n == 2 {
            let m = (SPHERE_DENSITY_2D * 2.0 * PI * p.r_dom / p.h).ceil() as usize;
            [round_up(m.max(64), 4), 0]
        } else {
            let mt = (SPHERE_DENSITY_3D * 2.0 * p.r_dom / p.h).ceil() as usize;
            let mpsi = (SPHERE_DENSITY_3D * 2.0 * PI * p.r_dom / p.h).ceil() as usize;
            [round_up(mt.max(32), 2), round_up(mpsi.max(64), 4)]
        }
    }

    /// Midpoint rule in angle with exact weight integrals per angular cell.
    /// `res = [M, 0]` in 2D and `[M_t, M_ψ]` in 3D.
    pub fn with_resolution(n: usize, a: f64, x0: &[f64], r: f64, res: [usize; 2]) -> Self {
        let mut center = [0.0; 3];
        center[..n].copy_from_slice(&x0[..n]);
        let mut points = Vec::new();
        let mut normals = Vec::new();
        let mut weights = Vec::new();
        if n == 2 {
            let m = res[0];
            let dtheta = 2.0 * PI / m as f64;
            let prim = SinPowerPrimitive::new(a);
            let scale = r.powf(1.0 + a);
            for k in 0..m {
                let t0 = k as f64 * dtheta;
                let theta = t0 + 0.5 * dtheta;
                let nu = [theta.cos(), theta.sin(), 0.0];
                points.push([center[0] + r * nu[0], center[1] + r * nu[1], 0.0]);
                normals.push(nu);
                weights.push(scale * prim.integral(t0, t0 + dtheta));
            }
        } else {
            let (mt, mpsi) = (res[0], res[1]);
            let dt = 2.0 / mt as f64;
            let dpsi = 2.0 * PI / mpsi as f64;
            let scale = r.powf(2.0 + a) * dpsi;
            for i in 0..mt {
                let t0 = -1.0 + i as f64 * dt;
                let t = t0 + 0.5 * dt;
                let st = (1.0 - t * t).max(0.0).sqrt();
                let w = scale * power_weight_integral(a, t0, t0 + dt);
                for j in 0..mpsi {
                    let psi = (j as f64 + 0.5) * dpsi;
                    let nu = [st * psi.cos(), st * psi.sin(), t];
                    points.push([center[0] + r * nu[0], center[1] + r * nu[1], r * nu[2]]);
                    normals.push(nu);
                    weights.push(w);
                }
            }
        }
        Self { n, center, r, points, normals, weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `Σ w_k f(x_k, ν_k)`, summed in node order.
    pub fn integrate<F>(&self, f: F) -> f64
    where
        F: Fn(&[f64], &[f64; 3]) -> f64 + Sync,
    {
        let n = self.n;
        let vals: Vec<f64> = (0..self.len())
            .into_par_iter()
            .map(|k| self.weights[k] * f(&self.points[k][..n], &self.normals[k]))
            .collect();
        vals.iter().sum()
    }

    /// Like [`integrate`](Self::integrate) for fallible integrands.
    pub fn try_integrate<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(&[f64], &[f64; 3]) -> Result<f64> + Sync,
    {
        let n = self.n;
        let vals: Result<Vec<f64>> = (0..self.len())
            .into_par_iter()
            .map(|k| Ok(self.weights[k] * f(&self.points[k][..n], &self.normals[k])?))
            .collect();
        Ok(vals?.iter().sum())
    }
}

/// Points and weights of a quadrature rule on `B_r(x0)`.
#[derive(Debug, Clone)]
pub struct BallRule {
    pub n: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

/// Weighted centroid of `[t0, t1]` under `|t|^a`.
fn weighted_centroid(a: f64, t0: f64, t1: f64) -> f64 {
    let m0 = power_weight_integral(a, t0, t1);
    // ∫ t |t|^a dt = |t|^{2+a} / (2+a)
    let m1 = (t1.abs().powf(2.0 + a) - t0.abs().powf(2.0 + a)) / (2.0 + a);
    m1 / m0
}

impl BallRule {
    /// Polar rule: radial panels of width at most `h` with three Gauss points
    /// each, times the grid's sphere rule. The innermost panel carries the
    /// Jacobian `ρ^{n−1+a}` in its Gauss weights.
    pub fn polar(grid: &Grid, x0: &[f64], r: f64, weighted: bool) -> Result<Self> {
        let c = grid.check_ball(x0, r)?;
        let p = grid.params();
        let n = p.n;
        let a = if weighted { p.a } else { 0.0 };
        let unit = SphereRule::with_resolution(n, a, &[0.0; 3][..n], 1.0, SphereRule::grid_resolution(grid));
        let b = n as f64 - 1.0 + a;
        let panels = ((r / p.h).ceil() as usize).max(1);
        let dr = r / panels as f64;
        let (gx, gw) = gauss_jacobi_01(0.0, RADIAL_POINTS);
        let (jx, jw) = gauss_jacobi_01(b, RADIAL_POINTS);
        let mut radial = Vec::with_capacity(panels * RADIAL_POINTS);
        for k in 0..RADIAL_POINTS {
            radial.push((dr * jx[k], dr.powf(b + 1.0) * jw[k]));
        }
        for m in 1..panels {
            for k in 0..RADIAL_POINTS {
                let rho = dr * (m as f64 + gx[k]);
                radial.push((rho, dr * gw[k] * rho.powf(b)));
            }
        }
        let mut points = Vec::with_capacity(radial.len() * unit.len());
        let mut weights = Vec::with_capacity(radial.len() * unit.len());
        for &(rho, wr) in &radial {
            for (nu, wa) in unit.normals.iter().zip(&unit.weights) {
                let mut pt = [0.0; 3];
                for d in 0..n {
                    pt[d] = c[d] + rho * nu[d];
                }
                points.push(pt);
                weights.push(wr * wa);
            }
        }
        Ok(Self { n, points, weights })
    }

    /// Lattice-cell rule: whole cells use one node at the (weighted)
    /// centroid, cells cut by the sphere are split and integrated over their
    /// exact intersection with the disk (2D) or by sub-cell inclusion (3D).
    pub fn on_grid(grid: &Grid, x0: &[f64], r: f64, weighted: bool) -> Result<Self> {
        let c = grid.check_ball(x0, r)?;
        let p = grid.params();
        let a = if weighted { p.a } else { 0.0 };
        let h = p.h;
        let n = p.n;
        let cells = grid.width() - 1;
        let lo = |d: usize| ((c[d] - r + p.r_dom) / h).floor().max(0.0) as usize;
        let hi = |d: usize| (((c[d] + r + p.r_dom) / h).ceil() as usize).min(cells);
        let ranges: Vec<(usize, usize)> = (0..n).map(|d| (lo(d), hi(d))).collect();
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let r2 = r * r;
        let dist2 = |lo: &[f64; 3], hi: &[f64; 3], far: bool| -> f64 {
            (0..n)
                .map(|d| {
                    let (u, v) = (lo[d] - c[d], hi[d] - c[d]);
                    if far {
                        u.abs().max(v.abs()).powi(2)
                    } else if u > 0.0 {
                        u * u
                    } else if v < 0.0 {
                        v * v
                    } else {
                        0.0
                    }
                })
                .sum()
        };
        let kz = if n == 3 { ranges[2] } else { (0, 1) };
        for k in kz.0..kz.1 {
            for j in ranges[1].0..ranges[1].1 {
                for i in ranges[0].0..ranges[0].1 {
                    let idx = [i, j, k];
                    let mut clo = [0.0; 3];
                    let mut chi = [0.0; 3];
                    for d in 0..n {
                        clo[d] = grid.coord(idx[d]);
                        chi[d] = clo[d] + h;
                    }
                    if dist2(&clo, &chi, false) >= r2 {
                        continue;
                    }
                    let full = dist2(&clo, &chi, true) <= r2;
                    let yn = n - 1;
                    if full {
                        let mut pt = [0.0; 3];
                        for d in 0..yn {
                            pt[d] = 0.5 * (clo[d] + chi[d]);
                        }
                        pt[yn] = weighted_centroid(a, clo[yn], chi[yn]);
                        points.push(pt);
                        weights.push(h.powi(yn as i32) * power_weight_integral(a, clo[yn], chi[yn]));
                    } else if n == 2 {
                        let sub = 2;
                        let hs = h / sub as f64;
                        for sj in 0..sub {
                            for si in 0..sub {
                                let x0s = clo[0] + si as f64 * hs;
                                let y0s = clo[1] + sj as f64 * hs;
                                let m = disk_rect_moments(r, x0s - c[0], x0s + hs - c[0], y0s, y0s + hs);
                                if let Some((cx, cy)) = m.centroid() {
                                    points.push([cx + c[0], cy, 0.0]);
                                    let mean_w = power_weight_integral(a, y0s, y0s + hs) / hs;
                                    weights.push(m.area * mean_w);
                                }
                            }
                        }
                    } else {
                        let sub = 4;
                        let hs = h / sub as f64;
                        for sk in 0..sub {
                            let z0 = clo[2] + sk as f64 * hs;
                            let wz = power_weight_integral(a, z0, z0 + hs);
                            for sj in 0..sub {
                                for si in 0..sub {
                                    let pt = [
                                        clo[0] + (si as f64 + 0.5) * hs,
                                        clo[1] + (sj as f64 + 0.5) * hs,
                                        z0 + 0.5 * hs,
                                    ];
                                    let d2: f64 = (0..3).map(|d| (pt[d] - c[d]).powi(2)).sum();
                                    if d2 <= r2 {
                                        points.push(pt);
                                        weights.push(hs * hs * wz);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(Self { n, points, weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn integrate<F>(&self, f: F) -> f64
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let n = self.n;
        let vals: Vec<f64> =
            (0..self.len()).into_par_iter().map(|k| self.weights[k] * f(&self.points[k][..n])).collect();
        vals.iter().sum()
    }

    pub fn try_integrate<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        let n = self.n;
        let vals: Result<Vec<f64>> =
            (0..self.len()).into_par_iter().map(|k| Ok(self.weights[k] * f(&self.points[k][..n])?)).collect();
        Ok(vals?.iter().sum())
    }
}

/// `∫_{B_r(x0)} f dμ_a` for a plane center `x0`.
pub fn weighted_volume_integral(f: &ScalarField, x0: &[f64], r: f64) -> Result<f64> {
    BallRule::on_grid(f.grid(), x0, r, true)?.try_integrate(|p| f.interpolate(p))
}

/// `∫_{∂B_r(x0)} f |x_n|^a dH^{n-1}`, or the unweighted surface integral.
pub fn sphere_integral(f: &ScalarField, x0: &[f64], r: f64, weighted: bool) -> Result<f64> {
    SphereRule::on_grid(f.grid(), x0, r, weighted)?.try_integrate(|p, _| f.interpolate(p))
}

/// `∫_{B'_r(x0)} f dH^{n-1}` over the flat disk in the plane, with one node
/// per plane lattice point and its dual cell clipped to the disk.
pub fn thin_disk_integral(f: &ScalarField, x0: &[f64], r: f64) -> Result<f64> {
    let g = f.grid();
    let c = g.check_ball(x0, r)?;
    let h = g.h();
    let layer = g.layer_stride();
    let base = g.half() * layer;
    let mut acc = 0.0;
    for k in 0..layer {
        let idx = base + k;
        let x = g.node(idx);
        let len = if g.n() == 2 {
            let lo = (x[0] - 0.5 * h).max(c[0] - r);
            let hi = (x[0] + 0.5 * h).min(c[0] + r);
            (hi - lo).max(0.0)
        } else {
            let (dx, dy) = (x[0] - c[0], x[1] - c[1]);
            disk_rect_moments(r, dx - 0.5 * h, dx + 0.5 * h, dy - 0.5 * h, dy + 0.5 * h).area
        };
        if len > 0.0 {
            acc += len * f.values()[idx];
        }
    }
    if !acc.is_finite() {
        return Err(LabError::Precondition("non-finite values on the thin disk".into()));
    }
    Ok(acc)
}
