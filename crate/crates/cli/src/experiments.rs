//! The five experiments. Each fills a [`Summary`] and writes its files into
//! the output directory.

use std::sync::Arc;

use obstacle_lab::blowup::{
    blowup_fit, classify_point, contact_and_boundary, contact_and_boundary_field, default_r_min, uniqueness_rate_check,
    Classification, FreeBoundary, RateStatus,
};
use obstacle_lab::diagnostics::{
    decay_fit, frequency_floor_check, geometric_radii, monotonicity_scan, nondegeneracy_estimate, series, FieldProbe,
    Quantity, FD_STEP_CELLS, TRUSTED_FRACTION,
};
use obstacle_lab::epi::{default_family, epi_csv, epiperimetric_gap, EpiReport, EpiStatus, HomogeneousDatum};
use obstacle_lab::exact::{h_e_eval, h_e_grad, sample_cone_element, two_mode_eval};
use obstacle_lab::integrals::SphereRule;
use obstacle_lab::snapshot::{load_snapshot, write_snapshot};
use obstacle_lab::solver::{optimal_omega, solve, solve_adapted};
use obstacle_lab::{
    build_grid, BoundaryData, DiscreteProblem, Grid, InitialGuess, LabError, ScalarField, Solution, SolverOptions,
};
use rayon::prelude::*;

use crate::config::{Datum, Experiment, ExperimentConfig, InitialKind};
use crate::output::{fmt_f64, Check, Relation, Summary};

/// Failure that ends an experiment early; its message goes into the summary.
#[derive(Debug)]
pub struct Abort(pub String);

impl From<LabError> for Abort {
    fn from(e: LabError) -> Self {
        Abort(e.to_string())
    }
}

impl From<std::io::Error> for Abort {
    fn from(e: std::io::Error) -> Self {
        Abort(format!("cannot write output: {e}"))
    }
}

type Step<T> = Result<T, Abort>;

pub fn run(cfg: &ExperimentConfig) -> Summary {
    let mut summary = Summary::default();
    let outcome = std::fs::create_dir_all(&cfg.output_dir).map_err(Abort::from).and_then(|_| match cfg.experiment {
        Experiment::Solve => run_solve(cfg, &mut summary),
        Experiment::Diagnostics => run_diagnostics(cfg, &mut summary),
        Experiment::Blowup => run_blowup(cfg, &mut summary),
        Experiment::Epiperimetric => run_epiperimetric(cfg, &mut summary),
        Experiment::VerifyOracle => run_verify_oracle(cfg, &mut summary),
    });
    if let Err(Abort(msg)) = outcome {
        summary.error = Some(msg);
    }
    summary
}

/// Closed-form minimizer, when one is known.
type Exact = Box<dyn Fn(&[f64]) -> f64 + Sync>;

fn boundary_data(cfg: &ExperimentConfig) -> Step<(BoundaryData, Option<Exact>)> {
    let s = cfg.params.s;
    Ok(match &cfg.datum {
        Datum::Cone(c) => {
            let exact = c.clone();
            (BoundaryData::cone(c.clone(), s), Some(Box::new(move |x: &[f64]| exact.eval(x, s).unwrap_or(f64::NAN))))
        }
        Datum::TwoMode { e, eps } => {
            let (e, eps) = (e.clone(), *eps);
            let f = move |x: &[f64]| two_mode_eval(x, &e, eps).unwrap_or(f64::NAN);
            (BoundaryData::new(format!("two-mode eps = {eps}"), f.clone()), Some(Box::new(f)))
        }
        Datum::Perturbed { e, k, eps } => {
            let d = HomogeneousDatum::perturbed_cone(e, s, *k, *eps)?;
            let id = d.id().to_string();
            (BoundaryData::new(id, move |x: &[f64]| d.extension(x)), None)
        }
        Datum::Constant(v) => {
            let v = *v;
            (BoundaryData::constant(v), Some(Box::new(move |_: &[f64]| v)))
        }
        Datum::FieldFile(_) | Datum::DefaultFamily => {
            return Err(Abort(format!("datum kind {} has no boundary data", cfg.datum.kind().as_str())))
        }
    })
}

fn solver_options(cfg: &ExperimentConfig, g: &Grid) -> SolverOptions {
    let sc = &cfg.solver;
    let initial = match sc.initial {
        InitialKind::Zero => InitialGuess::Zero,
        InitialKind::Harmonic => InitialGuess::HarmonicExtension,
    };
    SolverOptions { omega: sc.omega.unwrap_or_else(|| optimal_omega(g)), tol: sc.tol, max_iter: sc.max_iter, initial }
}

/// Assembles and solves; records the solver results and the KKT checks.
fn solve_config(cfg: &ExperimentConfig, g: &Arc<Grid>, summary: &mut Summary) -> Step<Solution> {
    let (datum, exact) = boundary_data(cfg)?;
    let problem = DiscreteProblem::assemble(g, datum)?;
    let opts = solver_options(cfg, g);
    let outcome = if cfg.solver.adapt_weights && cfg.params.a != 0.0 {
        solve_adapted(&problem, &opts)
    } else {
        solve(&problem, &opts).map(|s| (problem, s))
    };
    let (problem, sol) = match outcome {
        Ok(v) => v,
        Err(LabError::NotConverged { iterations, last_update, .. }) => {
            summary.result("iterations", iterations);
            summary.result("final_update", last_update);
            summary.check(Check::flag("solver_converged", false));
            return Err(Abort(format!("solver did not converge after {iterations} sweeps")));
        }
        Err(e) => return Err(e.into()),
    };
    summary.check(Check::flag("solver_converged", true));
    summary.result("iterations", sol.iterations);
    summary.result("final_update", sol.final_update);
    summary.result("energy", sol.energy);
    summary.result("omega", opts.omega);
    summary.result("harmonic_weight_nodes", problem.contact_nodes().len());
    let kkt = problem.kkt_check(&sol, cfg.tolerances.kkt);
    let tol = cfg.tolerances.kkt;
    summary.check(Check::new("kkt_residual_free", kkt.max_residual_free, Relation::AtMost, tol));
    summary.check(Check::new("kkt_min_plane", kkt.min_plane, Relation::AtLeast, -tol));
    summary.check(Check::new("kkt_positive_flux", kkt.max_positive_flux, Relation::AtMost, tol));
    summary.check(Check::new("kkt_complementarity", kkt.max_complementarity, Relation::AtMost, tol));
    summary.check(Check::new("symmetry_defect", sol.field.symmetry_defect(), Relation::AtMost, 0.0));
    summary.result("kkt", kkt);
    if let Some(f) = exact {
        let ex = ScalarField::from_fn(g, |x| f(&x[..g.n()]));
        let err = sol.field.max_diff_active(&ex)?;
        summary.check(Check::new("max_error_vs_exact", err, Relation::AtMost, cfg.tolerances.exact_error));
    }
    if cfg.write_snapshot {
        let mut buf = Vec::new();
        write_snapshot(&sol.field, &cfg.label, &mut buf)?;
        summary.write(&cfg.output_dir, "solution.field", &String::from_utf8_lossy(&buf))?;
    }
    Ok(sol)
}

fn run_solve(cfg: &ExperimentConfig, summary: &mut Summary) -> Step<()> {
    let g = build_grid(cfg.params)?;
    let sol = solve_config(cfg, &g, summary)?;
    summary.result("contact_nodes", contact_and_boundary(&sol)?.contact().len());
    Ok(())
}

/// A field to analyse, with its free boundary.
struct Analysed {
    field: ScalarField,
    fb: FreeBoundary,
}

fn acquire(cfg: &ExperimentConfig, summary: &mut Summary) -> Step<Analysed> {
    if let Datum::FieldFile(path) = &cfg.datum {
        let (header, field) = load_snapshot(path)?;
        if header.params != cfg.params {
            return Err(Abort(format!(
                "datum.path: snapshot parameters {:?} differ from [params] {:?}",
                header.params, cfg.params
            )));
        }
        let threshold = 10.0 * cfg.solver.tol * field.max_abs_active();
        let fb = contact_and_boundary_field(&field, threshold)?;
        summary.result("field_label", header.label);
        return Ok(Analysed { field, fb });
    }
    let g = build_grid(cfg.params)?;
    let sol = solve_config(cfg, &g, summary)?;
    let fb = contact_and_boundary(&sol)?;
    Ok(Analysed { field: sol.field, fb })
}

fn nearest_to_origin(points: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let norm2 = |p: &Vec<f64>| p.iter().map(|x| x * x).sum::<f64>();
    points.into_iter().min_by(|a, b| norm2(a).total_cmp(&norm2(b)))
}

fn window_radii(cfg: &ExperimentConfig, g: &Grid, x0: &[f64]) -> Step<Vec<f64>> {
    let h = g.h();
    let dist: f64 = x0.iter().map(|x| x * x).sum::<f64>().sqrt();
    let reach = TRUSTED_FRACTION * g.params().r_dom - dist - FD_STEP_CELLS * h;
    let r_max = cfg.window.r_max.unwrap_or(reach);
    let r_min = cfg.window.r_min.unwrap_or(8.0 * h);
    if r_max > reach * (1.0 + 1e-12) {
        return Err(Abort(format!("window.r_max = {r_max} exceeds the trusted reach {reach} around {x0:?}")));
    }
    if r_min <= FD_STEP_CELLS * h || r_min >= r_max {
        return Err(Abort(format!("radius window [{r_min}, {r_max}] is empty or below the finite-difference step")));
    }
    let radii = geometric_radii(r_max, r_min, cfg.window.ratio);
    if radii.len() < 3 {
        return Err(Abort(format!("radius window [{r_min}, {r_max}] gives {} radii, need at least 3", radii.len())));
    }
    Ok(radii)
}

fn run_diagnostics(cfg: &ExperimentConfig, summary: &mut Summary) -> Step<()> {
    let a = acquire(cfg, summary)?;
    let g = a.field.grid().clone();
    let x0 = match &cfg.window.center {
        Some(c) => c.clone(),
        None => nearest_to_origin(a.fb.refined_points())
            .ok_or_else(|| Abort("no free-boundary point found; set window.center".into()))?,
    };
    let radii = window_radii(cfg, &g, &x0)?;
    let probe = FieldProbe::new(a.field.clone());
    let ser = series(&probe, &x0, &radii)?;
    summary.write(&cfg.output_dir, "diagnostics.csv", &ser.to_csv())?;
    summary.result("center", &x0);
    let on_gamma = a.fb.near_boundary(&x0);
    summary.result("center_on_free_boundary", on_gamma);
    for q in [Quantity::N, Quantity::W, Quantity::HOverR] {
        let rep = monotonicity_scan(&ser, q)?;
        let name = match q {
            Quantity::N => "monotonicity_violations_N",
            Quantity::W => "monotonicity_violations_W",
            Quantity::HOverR => "monotonicity_violations_H_over_r",
        };
        summary.check(Check::new(name, rep.violations.len() as f64, Relation::AtMost, 0.0));
    }
    if on_gamma {
        let floor = frequency_floor_check(&ser, &a.fb, cfg.tolerances.floor_slack)?;
        summary.check(Check::new("min_frequency", floor.min_frequency, Relation::AtLeast, floor.floor));
    }
    let h = g.h();
    let dr = FD_STEP_CELLS * h;
    let weiss = ser.rows.iter().map(|r| r.residuals.weiss.relative()).fold(0.0, f64::max);
    summary.check(Check::new(
        "weiss_derivative_residual",
        weiss,
        Relation::AtMost,
        cfg.tolerances.identity_factor * (h + dr * dr),
    ));
    summary.result("nondegeneracy", nondegeneracy_estimate(&ser));
    match decay_fit(&ser) {
        Ok(fit) => summary.result("decay_fit", fit),
        Err(e) => summary.result("decay_fit", e.to_string()),
    }
    Ok(())
}

pub const CLASSIFICATION_COLUMNS: &str = "class,r_min,N";

pub fn classification_csv_header(n: usize) -> String {
    let mut cols: Vec<String> = (0..n).map(|d| format!("x0_{d}")).collect();
    cols.push(CLASSIFICATION_COLUMNS.into());
    cols.join(",")
}

fn run_blowup(cfg: &ExperimentConfig, summary: &mut Summary) -> Step<()> {
    let a = acquire(cfg, summary)?;
    let g = a.field.grid().clone();
    let n = g.n();
    let probe = FieldProbe::new(a.field.clone());
    let r_min = default_r_min(&g);
    let reach = TRUSTED_FRACTION * g.params().r_dom - FD_STEP_CELLS * g.h();
    let points: Vec<Vec<f64>> =
        a.fb.refined_points()
            .into_iter()
            .filter(|p| p.iter().map(|x| x * x).sum::<f64>().sqrt() + r_min <= reach)
            .collect();
    let classes = points.par_iter().map(|p| classify_point(&probe, &a.fb, p, r_min)).collect::<Result<Vec<_>, _>>()?;
    let mut csv = classification_csv_header(n);
    csv.push('\n');
    let mut regular = Vec::new();
    for (p, c) in points.iter().zip(&classes) {
        for x in p {
            csv.push_str(&fmt_f64(*x));
            csv.push(',');
        }
        let nf = c.frequency.map(fmt_f64).unwrap_or_default();
        csv.push_str(&format!("{},{},{nf}\n", c.class.as_str(), fmt_f64(c.r_min)));
        if c.class == Classification::Regular {
            regular.push(p.clone());
        }
    }
    summary.write(&cfg.output_dir, "classification.csv", &csv)?;
    let count = |k: Classification| classes.iter().filter(|c| c.class == k).count();
    summary.result("points_classified", classes.len());
    summary.result("points_regular", count(Classification::Regular));
    summary.result("points_higher_frequency", count(Classification::HigherFrequency));

    let x0 = match &cfg.window.center {
        Some(c) => c.clone(),
        None => nearest_to_origin(regular).ok_or_else(|| Abort("no regular free-boundary point found".into()))?,
    };
    summary.result("center", &x0);
    let radii = window_radii(cfg, &g, &x0)?;
    let fit = match blowup_fit(&probe, &a.fb, &x0, &radii) {
        Ok(f) => f,
        Err(LabError::Precondition(msg)) => {
            summary.check(Check::flag("center_is_regular", false));
            return Err(Abort(msg));
        }
        Err(e) => return Err(e.into()),
    };
    summary.check(Check::flag("center_is_regular", true));
    summary.write(&cfg.output_dir, "blowup.csv", &fit.to_csv())?;
    if let Some(lim) = fit.limit() {
        summary.result("limit", lim);
    }
    let ser = series(&probe, &x0, &radii)?;
    let gamma = decay_fit(&ser).map(|f| f.gamma).unwrap_or(0.0);
    summary.result("gamma", gamma);
    let uniq = uniqueness_rate_check(&a.field, &x0, &radii, gamma)?;
    summary.check(Check::flag("uniqueness_rate", uniq.status != RateStatus::Failed));
    summary.result("uniqueness", uniq);
    Ok(())
}

fn epi_family(cfg: &ExperimentConfig) -> Step<Vec<HomogeneousDatum>> {
    let (n, s) = (cfg.params.n, cfg.params.s);
    Ok(match &cfg.datum {
        Datum::DefaultFamily => default_family(n, s)?,
        Datum::Perturbed { e, k, eps } => vec![HomogeneousDatum::perturbed_cone(e, s, *k, *eps)?],
        Datum::Cone(c) => vec![HomogeneousDatum::cone(c, s)?],
        Datum::Constant(v) => vec![HomogeneousDatum::constant(n, s, *v)?],
        other => return Err(Abort(format!("datum kind {} has no homogeneous trace", other.kind().as_str()))),
    })
}

fn epi_reports(family: &[HomogeneousDatum], g: &Arc<Grid>) -> Step<Vec<EpiReport>> {
    Ok(family.par_iter().map(|c| epiperimetric_gap(c, g)).collect::<Result<Vec<_>, _>>()?)
}

fn run_epiperimetric(cfg: &ExperimentConfig, summary: &mut Summary) -> Step<()> {
    if cfg.params.r_dom != 1.0 {
        return Err(Abort("params.r_dom must be 1 for the epiperimetric experiment".into()));
    }
    let g = build_grid(cfg.params)?;
    let family = epi_family(cfg)?;
    let reports = epi_reports(&family, &g)?;
    summary.write(&cfg.output_dir, "epiperimetric.csv", &epi_csv(&reports))?;
    let violated = reports.iter().filter(|r| r.status == EpiStatus::Violated).count();
    let degenerate = reports.iter().filter(|r| r.status == EpiStatus::Degenerate).count();
    summary.result("data", reports.len());
    summary.result("degenerate", degenerate);
    summary.check(Check::new("violations", violated as f64, Relation::AtMost, 0.0));
    let min_kappa = reports.iter().filter_map(|r| r.kappa).fold(f64::INFINITY, f64::min);
    if min_kappa.is_finite() {
        summary.check(Check::new("min_kappa", min_kappa, Relation::Above, 0.0));
        summary.result("min_kappa", min_kappa);
    } else {
        summary.result("min_kappa", "all data degenerate");
    }
    let mut deviation: f64 = 0.0;
    for &gamma in &cfg.scaling_factors {
        let scaled = family.iter().map(|c| c.scaled(gamma)).collect::<Result<Vec<_>, _>>()?;
        for (r0, r1) in reports.iter().zip(epi_reports(&scaled, &g)?) {
            deviation = deviation.max(match (r0.kappa, r1.kappa) {
                (Some(k0), Some(k1)) => (k0 - k1).abs(),
                (None, None) if r0.status == r1.status => 0.0,
                _ => f64::INFINITY,
            });
        }
    }
    if !cfg.scaling_factors.is_empty() {
        summary.check(Check::new("kappa_scaling_deviation", deviation, Relation::AtMost, cfg.tolerances.scaling));
    }
    Ok(())
}

/// Angular resolution of the reference sphere rule.
const ORACLE_RES_2D: [usize; 2] = [1 << 14, 0];
const ORACLE_RES_3D: [usize; 2] = [512, 1024];

fn run_verify_oracle(cfg: &ExperimentConfig, summary: &mut Summary) -> Step<()> {
    let Datum::Cone(cone) = &cfg.datum else {
        return Err(Abort("verify-oracle needs a cone datum".into()));
    };
    let p = cfg.params;
    let (n, s, a) = (p.n, p.s, p.a);
    let g = build_grid(p)?;
    let h = g.h();
    let u = sample_cone_element(cone, &g)?;
    let origin = vec![0.0; n];

    let res = if n == 2 { ORACLE_RES_2D } else { ORACLE_RES_3D };
    let rule = SphereRule::with_resolution(n, a, &origin, 1.0, res);
    let lam2 = cone.lambda * cone.lambda;
    let h1 = lam2 * rule.try_integrate(|x, _| Ok(h_e_eval(&x[..n], &cone.e, s)?.powi(2)))?;
    let g1 = lam2 * rule.try_integrate(|x, _| Ok(h_e_grad(&x[..n], &cone.e, s)?.iter().map(|v| v * v).sum()))?;
    let k = 1.0 + s;
    let kd = n as f64 - 2.0 + a;
    let rellich_rhs1 = kd * k * h1 + 2.0 * k * k * h1;
    summary.result("reference_H1", h1);
    summary.result("reference_D1", k * h1);
    summary.result("reference_grad2_1", g1);
    summary.result("reference_rellich_rhs_1", rellich_rhs1);

    let radii = {
        let reach = TRUSTED_FRACTION * p.r_dom - FD_STEP_CELLS * h;
        let r_max = cfg.window.r_max.unwrap_or_else(|| reach.min(0.8));
        let r_min = cfg.window.r_min.unwrap_or(0.1);
        if r_max > reach * (1.0 + 1e-12) || r_min >= r_max {
            return Err(Abort(format!("radius window [{r_min}, {r_max}] does not fit the trusted reach {reach}")));
        }
        geometric_radii(r_max, r_min, cfg.window.ratio)
    };
    let probe = FieldProbe::new(u);
    let ser = series(&probe, &origin, &radii)?;
    summary.write(&cfg.output_dir, "diagnostics.csv", &ser.to_csv())?;
    let tol = cfg.tolerances.identity_factor * h;
    let rel = |x: f64, want: f64| (x - want).abs() / want.abs();

    let last = ser.rows.last().ok_or_else(|| Abort("empty radius window".into()))?;
    let r = last.r;
    let nn = n as i32;
    let m = last.moments;
    summary.result("r_ref", r);
    summary.check(Check::new("H_rel_error", rel(m.h, h1 * r.powi(nn + 2)), Relation::AtMost, tol));
    summary.check(Check::new("D_rel_error", rel(m.d, k * h1 * r.powi(nn + 1)), Relation::AtMost, tol));
    summary.check(Check::new("rellich_lhs_rel_error", rel(m.grad2, g1 * r.powi(nn)), Relation::AtMost, tol));
    let rhs = (kd / r) * m.d + 2.0 * m.unu2;
    summary.check(Check::new("rellich_rhs_rel_error", rel(rhs, rellich_rhs1 * r.powi(nn)), Relation::AtMost, tol));

    let n_err = ser.rows.iter().map(|row| rel(row.n, k)).fold(0.0, f64::max);
    let w_err = ser.rows.iter().map(|row| row.w.abs() / (row.d / row.r.powi(nn + 1))).fold(0.0, f64::max);
    summary.check(Check::new("frequency_rel_error", n_err, Relation::AtMost, tol));
    summary.check(Check::new("weiss_rel_size", w_err, Relation::AtMost, tol));
    let dr = FD_STEP_CELLS * h;
    let fd_tol = cfg.tolerances.identity_factor * (h + (dr / radii[0]).powi(2));
    let names = [("rellich", tol), ("h_prime", fd_tol), ("d_prime", fd_tol), ("d_boundary", tol), ("weiss", fd_tol)];
    for (i, (name, bound)) in names.into_iter().enumerate() {
        let worst = ser.rows.iter().map(|row| row.residuals.all()[i].relative()).fold(0.0, f64::max);
        summary.check(Check::new(format!("identity_{name}"), worst, Relation::AtMost, bound));
    }
    if n == 2 && s == 0.5 {
        summary.result("closed_form_H1", 2.0 * std::f64::consts::PI * lam2);
        summary.result("closed_form_D1", 3.0 * std::f64::consts::PI * lam2);
        summary.result("closed_form_rellich_1", 9.0 * std::f64::consts::PI * lam2);
    }
    Ok(())
}
