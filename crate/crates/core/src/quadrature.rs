//! Exact one-dimensional weight integrals and planar disk/rectangle moments.
//!
//! Every rule in the crate integrates the weight `|x_n|^a` exactly over a
//! cell (or an angular cell) instead of sampling it, so the weight is never
//! evaluated at `x_n = 0` regardless of the sign of `a`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::beta::{beta, beta_reg};

/// `∫_{t0}^{t1} |t|^a dt` for `a > -1`.
pub fn power_weight_integral(a: f64, t0: f64, t1: f64) -> f64 {
    let prim = |t: f64| t.signum() * t.abs().powf(1.0 + a) / (1.0 + a);
    prim(t1) - prim(t0)
}

/// Mean of `|t|^a` over `[t0, t1]`.
pub fn power_weight_mean(a: f64, t0: f64, t1: f64) -> f64 {
    if a == 0.0 {
        return 1.0;
    }
    power_weight_integral(a, t0, t1) / (t1 - t0)
}

/// Primitive of `|sin θ|^a` on the whole real line, anchored at `θ = 0`.
#[derive(Debug, Clone, Copy)]
pub struct SinPowerPrimitive {
    a: f64,
    b: f64,
    /// `∫_0^π sin^a θ dθ`
    half_period: f64,
}

impl SinPowerPrimitive {
    pub fn new(a: f64) -> Self {
        let b = 0.5 * (1.0 + a);
        Self { a, b, half_period: beta(b, 0.5) }
    }

    fn quarter(&self, phi: f64) -> f64 {
        // ∫_0^φ sin^a = ½ B(b, ½) I_{sin²φ}(b, ½) on [0, π/2]
        if self.a == 0.0 {
            return phi;
        }
        let x = phi.sin().powi(2).clamp(0.0, 1.0);
        0.5 * self.half_period * beta_reg(self.b, 0.5, x)
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let k = (theta / PI).floor();
        let phi = theta - k * PI;
        let within = if phi <= 0.5 * PI { self.quarter(phi) } else { self.half_period - self.quarter(PI - phi) };
        k * self.half_period + within
    }

    /// `∫_{θ0}^{θ1} |sin θ|^a dθ`.
    pub fn integral(&self, theta0: f64, theta1: f64) -> f64 {
        self.eval(theta1) - self.eval(theta0)
    }
}

/// Area and first moments of `{x² + y² ≤ r²} ∩ [x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DiskRectMoments {
    pub area: f64,
    pub mx: f64,
    pub my: f64,
}

impl DiskRectMoments {
    pub fn centroid(&self) -> Option<(f64, f64)> {
        (self.area > 0.0).then(|| (self.mx / self.area, self.my / self.area))
    }
}

/// Exact intersection moments of a disk centered at the origin with an
/// axis-aligned rectangle.
pub fn disk_rect_moments(r: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> DiskRectMoments {
    let xa = x0.max(-r);
    let xb = x1.min(r);
    if xa >= xb || y0 >= y1 || y0 >= r || y1 <= -r {
        return DiskRectMoments::default();
    }
    let r2 = r * r;
    let half_chord = |x: f64| (r2 - x * x).max(0.0).sqrt();
    // ∫ √(r²−x²) dx
    let g = |x: f64| 0.5 * (x * half_chord(x) + r2 * (x / r).clamp(-1.0, 1.0).asin());
    // ∫ x √(r²−x²) dx
    let gx = |x: f64| -(r2 - x * x).max(0.0).powf(1.5) / 3.0;
    // ∫ (r² − x²) dx
    let gq = |x: f64| r2 * x - x * x * x / 3.0;

    let mut cuts = vec![xa, xb];
    for y in [y0, y1] {
        if y.abs() < r {
            let c = (r2 - y * y).sqrt();
            for x in [-c, c] {
                if x > xa && x < xb {
                    cuts.push(x);
                }
            }
        }
    }
    cuts.sort_by(|p, q| p.total_cmp(q));

    let mut out = DiskRectMoments::default();
    for w in cuts.windows(2) {
        let (p, q) = (w[0], w[1]);
        if q <= p {
            continue;
        }
        let m = 0.5 * (p + q);
        let s = half_chord(m);
        let top_const = y1 < s;
        let bot_const = y0 > -s;
        let top = if top_const { y1 } else { s };
        let bot = if bot_const { y0 } else { -s };
        if top <= bot {
            continue;
        }
        let (area_top, mx_top, sq_top) = if top_const {
            (y1 * (q - p), 0.5 * y1 * (q * q - p * p), y1 * y1 * (q - p))
        } else {
            (g(q) - g(p), gx(q) - gx(p), gq(q) - gq(p))
        };
        let (area_bot, mx_bot, sq_bot) = if bot_const {
            (y0 * (q - p), 0.5 * y0 * (q * q - p * p), y0 * y0 * (q - p))
        } else {
            (-(g(q) - g(p)), -(gx(q) - gx(p)), gq(q) - gq(p))
        };
        out.area += area_top - area_bot;
        out.mx += mx_top - mx_bot;
        out.my += 0.5 * (sq_top - sq_bot);
    }
    out
}

/// Exact area of a disk/rectangle intersection.
pub fn disk_rect_area(r: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    disk_rect_moments(r, x0, x1, y0, y1).area
}

/// `m`-point Gauss rule for `∫_0^1 f(x) x^b dx`, `b > −1`, exact for
/// polynomials of degree `2m − 1`. Nodes are increasing.
pub fn gauss_jacobi_01(b: f64, m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1 && b > -1.0);
    // monic Jacobi recurrence on [-1, 1] with weight (1 + x)^b
    let diag = |k: usize| {
        let s = 2.0 * k as f64 + b;
        if s == 0.0 {
            b / (b + 2.0)
        } else {
            b * b / (s * (s + 2.0))
        }
    };
    let off2 = |k: usize| {
        let k = k as f64;
        let s = 2.0 * k + b;
        4.0 * k * k * (k + b) * (k + b) / (s * s * (s + 1.0) * (s - 1.0))
    };
    let mut jm = DMatrix::<f64>::zeros(m, m);
    for k in 0..m {
        jm[(k, k)] = diag(k);
        if k + 1 < m {
            let o = off2(k + 1).sqrt();
            jm[(k, k + 1)] = o;
            jm[(k + 1, k)] = o;
        }
    }
    let eig = SymmetricEigen::new(jm);
    let mu0 = 1.0 / (b + 1.0);
    let mut pairs: Vec<(f64, f64)> =
        (0..m).map(|k| (0.5 * (eig.eigenvalues[k] + 1.0), mu0 * eig.eigenvectors[(0, k)].powi(2))).collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    pairs.into_iter().unzip()
}
