//! Rescalings `u_{x0,r}(x) = u(x0 + r x) / r^{1+s}`, the contact set and free
//! boundary on the plane, frequency classification of free-boundary points,
//! cone fits of rescalings and the convergence rate of blow-ups.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;

use crate::diagnostics::{frequency, log_log_fit, DecayFit, FieldProbe, TRUSTED_FRACTION};
use crate::error::{LabError, Result};
use crate::exact::{project_to_cone, sample_cone_element, ConeElement, ProjectionNorm};
use crate::grid::{build_grid, norm, Grid, ScalarField};
use crate::integrals::SphereRule;
use crate::solver::Solution;

/// Frequency margin above `1 + s` still classified as regular.
pub const TOL_CLASS: f64 = 0.05;
/// Smallest radius used for frequency estimates, in units of `h`.
pub const R_MIN_CELLS: f64 = 8.0;

/// Samples of `u(x0 + r x) / r^{1+s}` on the unit-ball grid with the same
/// spacing as the base field.
#[derive(Debug, Clone)]
pub struct RescaledField {
    pub center: Vec<f64>,
    pub r: f64,
    pub field: ScalarField,
}

/// Unit-radius grid with the spacing and exponent of `g`.
pub fn unit_grid(g: &Grid) -> Result<Arc<Grid>> {
    build_grid(g.params().with_domain(1.0)?)
}

fn check_reach(g: &Grid, x0: &[f64], r: f64) -> Result<()> {
    let c = g.check_ball(x0, r)?;
    let reach = norm(&c) + r;
    if reach > TRUSTED_FRACTION * g.params().r_dom * (1.0 + 1e-12) {
        return Err(LabError::OutsideDomain { center: x0.to_vec(), r, reach });
    }
    Ok(())
}

/// Rescales `u` around `x0` onto a fresh unit grid.
pub fn rescale(u: &ScalarField, x0: &[f64], r: f64) -> Result<RescaledField> {
    let target = unit_grid(u.grid())?;
    rescale_onto(u, x0, r, &target)
}

/// Rescales `u` around `x0` onto `target`, which must share `n` and `s`
/// with the base grid. Target nodes that map outside the base lattice take
/// the value at the nearest hull point.
pub fn rescale_onto(u: &ScalarField, x0: &[f64], r: f64, target: &Arc<Grid>) -> Result<RescaledField> {
    let g = u.grid();
    let (p, q) = (g.params(), target.params());
    if p.n != q.n || p.s != q.s {
        return Err(LabError::GridMismatch);
    }
    check_reach(g, x0, r)?;
    let n = g.n();
    let hull = p.r_dom;
    let scale = r.powf(-(1.0 + p.s));
    let field = ScalarField::from_fn(target, |x| {
        let mut y = [0.0; 3];
        for d in 0..n {
            y[d] = (x0[d] + r * x[d]).clamp(-hull, hull);
        }
        u.value_and_gradient(&y[..n]).map_or(f64::NAN, |(v, _)| scale * v)
    });
    if field.values().iter().any(|v| v.is_nan()) {
        return Err(LabError::OutsideHull(x0.to_vec()));
    }
    Ok(RescaledField { center: x0.to_vec(), r, field })
}

/// Contact set `Λ` and free boundary `Γ` on the plane layer.
#[derive(Debug, Clone)]
pub struct FreeBoundary {
    grid: Arc<Grid>,
    threshold: f64,
    contact: Vec<usize>,
    boundary: Vec<usize>,
    values: Vec<f64>,
}

/// Contact set and free boundary of a solved field, with the solver's
/// contact threshold.
pub fn contact_and_boundary(sol: &Solution) -> Result<FreeBoundary> {
    contact_and_boundary_field(&sol.field, sol.contact_threshold())
}

/// `Λ = {plane nodes with u ≤ threshold}`; `Γ` holds the plane nodes whose
/// closed lattice neighbourhood in the plane meets both `Λ` and its
/// complement.
pub fn contact_and_boundary_field(u: &ScalarField, threshold: f64) -> Result<FreeBoundary> {
    let g = u.grid().clone();
    let plane = g.plane_nodes();
    if plane.is_empty() {
        return Err(LabError::Precondition("grid has no plane nodes".into()));
    }
    let n = g.n();
    let vals = u.values();
    let in_contact = |idx: usize| vals[idx] <= threshold;
    let contact: Vec<usize> = plane.iter().copied().filter(|&i| in_contact(i)).collect();
    let mut boundary = Vec::new();
    for &idx in plane {
        let m = g.multi_index(idx);
        let mut seen = [false; 2];
        seen[in_contact(idx) as usize] = true;
        let mut complete = true;
        for d in 0..n - 1 {
            let st = g.stride(d);
            for nb in [m[d].checked_sub(1).map(|_| idx - st), (m[d] + 1 < g.width()).then(|| idx + st)] {
                match nb {
                    Some(j) if g.inside(j) => seen[in_contact(j) as usize] = true,
                    _ => complete = false,
                }
            }
        }
        if complete && seen[0] && seen[1] {
            boundary.push(idx);
        }
    }
    let values = plane.iter().map(|&i| vals[i]).collect();
    Ok(FreeBoundary { grid: g, threshold, contact, boundary, values })
}

impl FreeBoundary {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Node indices of `Λ`.
    pub fn contact(&self) -> &[usize] {
        &self.contact
    }

    /// Node indices of `Γ`.
    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    pub fn boundary_points(&self) -> Vec<Vec<f64>> {
        let n = self.grid.n();
        self.boundary.iter().map(|&i| self.grid.node(i)[..n].to_vec()).collect()
    }

    /// Whether `x0` lies within one cell of a node of `Γ`.
    pub fn near_boundary(&self, x0: &[f64]) -> bool {
        let n = self.grid.n();
        if x0.len() != n {
            return false;
        }
        let h = self.grid.h();
        self.boundary.iter().any(|&i| {
            let p = self.grid.node(i);
            norm(&(0..n).map(|d| p[d] - x0[d]).collect::<Vec<_>>()) <= h * (1.0 + 1e-9)
        })
    }

    fn plane_value(&self, idx: usize) -> Option<f64> {
        self.grid.plane_nodes().binary_search(&idx).ok().map(|k| self.values[k])
    }

    /// Sub-cell free-boundary points. Along each lattice edge from a contact
    /// node to a positive node of `Γ`, `u^{1/(1+s)}` is fitted by a line
    /// through up to six consecutive positive nodes, and its zero is taken,
    /// clamped to the edge.
    pub fn refined_points(&self) -> Vec<Vec<f64>> {
        const FIT_NODES: i64 = 6;
        let g = &self.grid;
        let n = g.n();
        let h = g.h();
        let inv = 1.0 / (1.0 + g.params().s);
        let mut out = Vec::new();
        for &i in &self.boundary {
            let Some(ui) = self.plane_value(i) else { continue };
            if ui <= self.threshold {
                continue;
            }
            let m = g.multi_index(i);
            for d in 0..n - 1 {
                let st = g.stride(d) as i64;
                for dir in [-1i64, 1] {
                    let node = |k: i64| -> Option<usize> {
                        let c = m[d] as i64 + dir * k;
                        (c >= 0 && (c as usize) < g.width()).then(|| (i as i64 + dir * k * st) as usize)
                    };
                    let Some(uj) = node(-1).and_then(|j| self.plane_value(j)) else { continue };
                    if uj > self.threshold {
                        continue;
                    }
                    let mut samples = Vec::new();
                    for k in 0..FIT_NODES {
                        match node(k).and_then(|j| self.plane_value(j)) {
                            Some(v) if v > self.threshold => samples.push((k as f64 * h, v.powf(inv))),
                            _ => break,
                        }
                    }
                    let back = zero_of_line(&samples).map_or(0.0, |z| (-z).clamp(0.0, h));
                    let mut p = g.node(i)[..n].to_vec();
                    p[d] -= dir as f64 * back;
                    out.push(p);
                }
            }
        }
        out
    }
}

/// Zero of the least-squares line through `(x, v)`, if it rises.
fn zero_of_line(samples: &[(f64, f64)]) -> Option<f64> {
    if samples.len() < 2 {
        return None;
    }
    let m = samples.len() as f64;
    let (mx, mv) = samples.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0 / m, b + p.1 / m));
    let sxx: f64 = samples.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxv: f64 = samples.iter().map(|p| (p.0 - mx) * (p.1 - mv)).sum();
    let slope = sxv / sxx;
    (slope > 0.0).then(|| mx - mv / slope)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Regular,
    HigherFrequency,
    NotOnGamma,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Regular => "regular",
            Classification::HigherFrequency => "higher-frequency",
            Classification::NotOnGamma => "not-on-gamma",
        }
    }
}

/// Classification together with the frequency it was based on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointClass {
    pub class: Classification,
    pub r_min: f64,
    pub frequency: Option<f64>,
}

/// Default smallest radius `8h`.
pub fn default_r_min(g: &Grid) -> f64 {
    R_MIN_CELLS * g.h()
}

/// Regular iff `N(r_min) ≤ 1 + s + 0.05`.
pub fn classify_point(probe: &FieldProbe, fb: &FreeBoundary, x0: &[f64], r_min: f64) -> Result<PointClass> {
    if !fb.near_boundary(x0) {
        return Ok(PointClass { class: Classification::NotOnGamma, r_min, frequency: None });
    }
    let s = probe.u.grid().params().s;
    let nf = frequency(probe, x0, r_min)?;
    let class = if nf <= 1.0 + s + TOL_CLASS { Classification::Regular } else { Classification::HigherFrequency };
    Ok(PointClass { class, r_min, frequency: Some(nf) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowupRow {
    pub r: f64,
    pub cone: ConeElement,
    pub dist: f64,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowupFit {
    pub center: Vec<f64>,
    pub class: PointClass,
    pub rows: Vec<BlowupRow>,
}

impl BlowupFit {
    pub fn csv_header(n: usize) -> String {
        let mut cols: Vec<String> = (0..n).map(|d| format!("x0_{d}")).collect();
        cols.push("r".into());
        cols.push("lambda".into());
        cols.extend((0..n - 1).map(|d| format!("e_{d}")));
        cols.push("dist".into());
        cols.push("N".into());
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let n = self.center.len();
        let mut out = Self::csv_header(n);
        out.push('\n');
        for row in &self.rows {
            for c in &self.center {
                let _ = write!(out, "{c:.16e},");
            }
            let _ = write!(out, "{:.16e},{:.16e}", row.r, row.cone.lambda);
            for e in &row.cone.e {
                let _ = write!(out, ",{e:.16e}");
            }
            let _ = writeln!(out, ",{:.16e},{:.16e}", row.dist, row.frequency);
        }
        out
    }

    /// Fit at the smallest radius, taken as the blow-up limit.
    pub fn limit(&self) -> Option<&BlowupRow> {
        self.rows.iter().min_by(|a, b| a.r.total_cmp(&b.r))
    }
}

/// Projects `u_{x0,r}` onto the cone for each radius. The point must be
/// regular.
pub fn blowup_fit(probe: &FieldProbe, fb: &FreeBoundary, x0: &[f64], radii: &[f64]) -> Result<BlowupFit> {
    let g = probe.u.grid();
    let class = classify_point(probe, fb, x0, default_r_min(g))?;
    if class.class != Classification::Regular {
        return Err(LabError::Precondition(format!("{x0:?} is {}, not a regular point", class.class.as_str())));
    }
    let unit = unit_grid(g)?;
    let mut rows = Vec::with_capacity(radii.len());
    for &r in radii {
        let res = rescale_onto(&probe.u, x0, r, &unit)?;
        let (cone, dist) = project_to_cone(&res.field, ProjectionNorm::H1)?;
        let nf = frequency(probe, x0, r)?;
        rows.push(BlowupRow { r, cone, dist, frequency: nf });
    }
    Ok(BlowupFit { center: x0.to_vec(), class, rows })
}

/// `∫_{∂B_1} |f − λ h_e| |x_n|^a` on the unit sphere of `f`'s grid.
pub fn sphere_l1_distance(f: &ScalarField, limit: &ConeElement) -> Result<f64> {
    let g = f.grid();
    let s = g.params().s;
    let origin = vec![0.0; g.n()];
    SphereRule::on_grid(g, &origin, 1.0, true)?
        .try_integrate(|p, _| Ok((f.value_and_gradient(p)?.0 - limit.eval(p, s)?).abs()))
}

pub fn rescaled_sphere_l1(u: &ScalarField, x0: &[f64], r: f64, limit: &ConeElement) -> Result<f64> {
    sphere_l1_distance(&rescale(u, x0, r)?.field, limit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateStatus {
    Passed,
    Failed,
    /// Every distance is below the quadrature noise floor.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub limit: ConeElement,
    pub radii: Vec<f64>,
    pub distances: Vec<f64>,
    pub noise_floor: f64,
    pub fit: Option<DecayFit>,
    /// `γ/2 − 0.1`
    pub required: f64,
    pub status: RateStatus,
}

impl UniquenessReport {
    pub fn exponent(&self) -> Option<f64> {
        self.fit.map(|f| f.gamma)
    }
}

/// Ten times the largest distance that sampling and rescaling alone put
/// between `limit` and itself at the given radii.
pub fn noise_floor(base: &Arc<Grid>, limit: &ConeElement, radii: &[f64]) -> Result<f64> {
    let cone = sample_cone_element(limit, base)?;
    let unit = unit_grid(base)?;
    let origin = vec![0.0; base.n()];
    let mut worst = sphere_l1_distance(&sample_cone_element(limit, &unit)?, limit)?;
    for &r in radii {
        worst = worst.max(sphere_l1_distance(&rescale_onto(&cone, &origin, r, &unit)?.field, limit)?);
    }
    Ok(10.0 * worst)
}

/// Power-law fit of the distances to `limit`; passes when the exponent is
/// at least `γ/2 − 0.1`.
pub fn uniqueness_rate(
    limit: ConeElement,
    radii: &[f64],
    distances: &[f64],
    gamma: f64,
    noise_floor: f64,
) -> Result<UniquenessReport> {
    if radii.len() != distances.len() {
        return Err(LabError::InvalidParams("radii and distances differ in length".into()));
    }
    let required = gamma / 2.0 - 0.1;
    let mut report = UniquenessReport {
        limit,
        radii: radii.to_vec(),
        distances: distances.to_vec(),
        noise_floor,
        fit: None,
        required,
        status: RateStatus::Degenerate,
    };
    if distances.iter().all(|&d| d <= noise_floor) {
        return Ok(report);
    }
    let fit = log_log_fit(radii, distances, 2)?;
    report.status = if fit.gamma >= required { RateStatus::Passed } else { RateStatus::Failed };
    report.fit = Some(fit);
    Ok(report)
}

fn limit_and_distances(fields: &[RescaledField]) -> Result<(ConeElement, Vec<f64>, Vec<f64>)> {
    if fields.len() < 3 {
        return Err(LabError::Precondition(format!("{} radii, need at least 3", fields.len())));
    }
    let k0 = (0..fields.len()).min_by(|&a, &b| fields[a].r.total_cmp(&fields[b].r)).expect("nonempty");
    let (limit, _) = project_to_cone(&fields[k0].field, ProjectionNorm::H1)?;
    let mut pairs = Vec::new();
    for (k, f) in fields.iter().enumerate() {
        if k != k0 {
            pairs.push((f.r, sphere_l1_distance(&f.field, &limit)?));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (radii, dists) = pairs.into_iter().unzip();
    Ok((limit, radii, dists))
}

/// Rate check over given rescalings: the cone fit of the one at the
/// smallest radius is the limit, and the others are measured against it.
/// The noise floor is ten times the sampling error of the limit on the
/// rescalings' grid.
pub fn uniqueness_from_rescalings(fields: &[RescaledField], gamma: f64) -> Result<UniquenessReport> {
    let (limit, radii, dists) = limit_and_distances(fields)?;
    let g = fields[0].field.grid();
    let floor = 10.0 * sphere_l1_distance(&sample_cone_element(&limit, g)?, &limit)?;
    uniqueness_rate(limit, &radii, &dists, gamma, floor)
}

/// Rescales `u` at each radius and measures the distances to the blow-up
/// limit, with the noise floor of [`noise_floor`].
pub fn uniqueness_rate_check(u: &ScalarField, x0: &[f64], radii: &[f64], gamma: f64) -> Result<UniquenessReport> {
    let unit = unit_grid(u.grid())?;
    let fields = radii.iter().map(|&r| rescale_onto(u, x0, r, &unit)).collect::<Result<Vec<_>>>()?;
    let (limit, rs, dists) = limit_and_distances(&fields)?;
    let floor = noise_floor(u.grid(), &limit, radii)?;
    uniqueness_rate(limit, &rs, &dists, gamma, floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::inner_product;
    use crate::grid::ProblemParams;

    fn grid(r_dom: f64, h: f64) -> Arc<Grid> {
        build_grid(ProblemParams::new(2, 0.5, h).unwrap().with_domain(r_dom).unwrap()).unwrap()
    }

    fn he(g: &Arc<Grid>, lambda: f64) -> ScalarField {
        sample_cone_element(&ConeElement::new(lambda, vec![1.0]).unwrap(), g).unwrap()
    }

    #[test]
    fn homogeneous_fields_are_fixed_by_rescaling() {
        let g = grid(2.0, 1.0 / 32.0);
        let u = he(&g, 2.0);
        let res = rescale(&u, &[0.0, 0.0], 0.5).unwrap();
        let exact = he(res.field.grid(), 2.0);
        let err = res.field.max_diff_active(&exact).unwrap();
        assert!(err < 0.02, "{err}");
        assert!(res.field.is_symmetric(1e-12));
        assert!(matches!(rescale(&u, &[0.5, 0.0], 1.2), Err(LabError::OutsideDomain { .. })));
    }

    #[test]
    fn rescalings_compose() {
        let g = grid(1.0, 1.0 / 64.0);
        let u = ScalarField::from_fn(&g, |x| (3.0 * x[0]).sin() + x[1] * x[1] + 0.5);
        let s = 0.5;
        for (r, t) in [(0.5, 0.5), (0.5, 0.25), (0.25, 0.5)] {
            let once = rescale(&u, &[0.0, 0.0], r * t).unwrap().field;
            let outer = rescale(&u, &[0.0, 0.0], r).unwrap().field;
            let g1 = outer.grid().clone();
            let twice = ScalarField::from_fn(&g1, |x| {
                let y: Vec<f64> = x.iter().map(|v| t * v).collect();
                outer.interpolate(&y).unwrap() / t.powf(1.0 + s)
            });
            let scale = once.max_abs_active();
            let err = once.max_diff_active(&twice).unwrap();
            assert!(err < 4.0 / 64.0 * scale, "r={r} t={t}: {err} vs {scale}");
        }
    }

    #[test]
    fn cone_free_boundary_is_at_origin() {
        let g = grid(1.0, 1.0 / 32.0);
        let fb = contact_and_boundary_field(&he(&g, 1.0), 1e-12).unwrap();
        assert!(fb.contact().iter().all(|&i| g.node(i)[0] <= 1e-12));
        let pts = fb.boundary_points();
        assert!(!pts.is_empty());
        assert!(pts.iter().all(|p| p[0].abs() <= g.h() + 1e-12), "{pts:?}");
        assert!(fb.near_boundary(&[0.0, 0.0]));
        assert!(!fb.near_boundary(&[0.3, 0.0]));
        for p in fb.refined_points() {
            assert!(p[0].abs() < 0.1 * g.h(), "{p:?}");
        }
        let ones = contact_and_boundary_field(&ScalarField::constant(&g, 1.0), 1e-12).unwrap();
        assert!(ones.contact().is_empty() && ones.boundary().is_empty());
    }

    #[test]
    fn classification_by_frequency() {
        let g = grid(1.0, 1.0 / 64.0);
        let u = he(&g, 1.0);
        let fb = contact_and_boundary_field(&u, 1e-12).unwrap();
        let probe = FieldProbe::new(u);
        let r_min = default_r_min(&g);
        assert_eq!(classify_point(&probe, &fb, &[0.0, 0.0], r_min).unwrap().class, Classification::Regular);
        assert_eq!(classify_point(&probe, &fb, &[0.4, 0.0], r_min).unwrap().class, Classification::NotOnGamma);

        let q = ScalarField::from_fn(&g, |x| x[0] * x[0] - x[1] * x[1]);
        let fbq = contact_and_boundary_field(&q, 1e-12).unwrap();
        let pq = FieldProbe::new(q);
        let c = classify_point(&pq, &fbq, &[0.0, 0.0], r_min).unwrap();
        assert_eq!(c.class, Classification::HigherFrequency, "{c:?}");
        assert!((c.frequency.unwrap() - 2.0).abs() < 0.05);
    }

    #[test]
    fn fit_of_scaled_cone_is_constant() {
        let g = grid(1.0, 1.0 / 64.0);
        let u = he(&g, 3.0);
        let fb = contact_and_boundary_field(&u, 1e-12).unwrap();
        let fit = blowup_fit(&FieldProbe::new(u), &fb, &[0.0, 0.0], &[0.4, 0.6, 0.8]).unwrap();
        for row in &fit.rows {
            assert!((row.cone.lambda - 3.0).abs() < 5.0 / 64.0, "{row:?}");
            assert_eq!(row.cone.e, vec![1.0]);
            assert!(row.dist < 5.0 / 64.0, "{row:?}");
        }
        assert_eq!(fit.to_csv().lines().next(), Some("x0_0,x0_1,r,lambda,e_0,dist,N"));

        let ones = ScalarField::constant(&g, 1.0);
        let fb1 = contact_and_boundary_field(&ones, 1e-12).unwrap();
        assert!(matches!(
            blowup_fit(&FieldProbe::new(ones), &fb1, &[0.0, 0.0], &[0.2]),
            Err(LabError::Precondition(_))
        ));
    }

    #[test]
    fn constructed_power_law_rate_is_recovered() {
        let g = grid(1.0, 1.0 / 64.0);
        let h1 = he(&g, 1.0);
        let raw = ScalarField::from_fn(&g, |x| 0.3 * (1.0 + x[0] * x[0] + 2.0 * x[1] * x[1]));
        let c = inner_product(&raw, &h1, ProjectionNorm::H1).unwrap()
            / inner_product(&h1, &h1, ProjectionNorm::H1).unwrap();
        let q = raw.axpy(-c, &h1).unwrap();
        let radii = [0.01, 0.02, 0.05, 0.1, 0.2, 0.4];
        let fields: Vec<RescaledField> = radii
            .iter()
            .map(|&r| RescaledField { center: vec![0.0, 0.0], r, field: h1.axpy(r.powf(0.6), &q).unwrap() })
            .collect();
        let rep = uniqueness_from_rescalings(&fields, 1.2).unwrap();
        let e = rep.exponent().unwrap();
        assert!((e - 0.6).abs() < 0.02, "{e}");
        assert_eq!(rep.status, RateStatus::Passed);

        let still: Vec<RescaledField> =
            radii.iter().map(|&r| RescaledField { center: vec![0.0, 0.0], r, field: h1.clone() }).collect();
        assert_eq!(uniqueness_from_rescalings(&still, 1.0).unwrap().status, RateStatus::Degenerate);
    }
}
