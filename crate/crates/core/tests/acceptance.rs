//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use obstacle_lab::blowup::{
    blowup_fit, contact_and_boundary, contact_and_boundary_field, uniqueness_from_rescalings, uniqueness_rate_check,
    RescaledField,
};
use obstacle_lab::diagnostics::{
    decay_fit, default_radii, frequency, frequency_floor_check, identity_residuals, moments, monotonicity_scan, series,
    weiss_from, FieldProbe, Quantity, FD_STEP_CELLS,
};
use obstacle_lab::epi::{default_family, epiperimetric_gap, kappa_sweep, EpiStatus};
use obstacle_lab::exact::{
    appendix_profile_eval, inner_product, sample_cone_element, two_mode_eval, AppendixProfile, ConeElement,
    ProjectionNorm,
};
use obstacle_lab::solver::{solve, solve_dense, BoundaryData, DiscreteProblem, InitialGuess, Solution, SolverOptions};
use obstacle_lab::{build_grid, Grid, ProblemParams, ScalarField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

fn grid(n: usize, s: f64, h: f64, r_dom: f64) -> Arc<Grid> {
    build_grid(ProblemParams::new(n, s, h).unwrap().with_domain(r_dom).unwrap()).unwrap()
}

fn he_field(g: &Arc<Grid>) -> ScalarField {
    sample_cone_element(&ConeElement::new(1.0, ConeElement::e1(g.n())).unwrap(), g).unwrap()
}

fn rel(x: f64, want: f64) -> f64 {
    (x - want).abs() / want.abs()
}

fn oracle_identities() -> Outcome {
    let h = 1.0 / 64.0;
    let g = grid(2, 0.5, h, 1.25);
    let probe = FieldProbe::new(he_field(&g));
    let tol = 5.0 * h;
    let m = moments(&probe, &[0.0, 0.0], 1.0).map_err(|e| e.to_string())?;
    let e_h = rel(m.h, 2.0 * PI);
    let e_d = rel(m.d, 3.0 * PI);
    // with n = 2 and a = 0 the D term of the Rellich identity drops out
    let e_rl = rel(m.grad2, 9.0 * PI).max(rel(2.0 * m.unu2, 9.0 * PI));
    let mut e_n: f64 = 0.0;
    let mut e_w: f64 = 0.0;
    for k in 0..=14 {
        let r = 0.1 + 0.05 * k as f64;
        let mr = moments(&probe, &[0.0, 0.0], r).map_err(|e| e.to_string())?;
        e_n = e_n.max(rel(frequency(&probe, &[0.0, 0.0], r).map_err(|e| e.to_string())?, 1.5));
        e_w = e_w.max(weiss_from(&mr, 2, 0.5).abs() / (mr.d / r.powi(3)));
    }
    let worst = e_h.max(e_d).max(e_rl).max(e_n).max(e_w);
    Ok((
        worst <= tol,
        format!(
            "rel. errors H(1) {e_h:.2e}, D(1) {e_d:.2e}, N {e_n:.2e}, W {e_w:.2e}, Rellich {e_rl:.2e}; tol {tol:.2e}"
        ),
    ))
}

fn refinement() -> Outcome {
    let x0 = [0.45, 0.0];
    let radii = [0.1, 0.15, 0.2, 0.25, 0.3];
    let worst_at = |h: f64| -> Result<[f64; 5], String> {
        let g = grid(2, 0.5, h, 1.0);
        let probe = FieldProbe::new(he_field(&g));
        let mut worst = [0.0f64; 5];
        for &r in &radii {
            let res = identity_residuals(&probe, &x0, r).map_err(|e| e.to_string())?;
            for (w, q) in worst.iter_mut().zip(res.all()) {
                *w = w.max(q.value);
            }
        }
        Ok(worst)
    };
    let coarse = worst_at(1.0 / 64.0)?;
    let fine = worst_at(1.0 / 128.0)?;
    let ratios: Vec<f64> = coarse.iter().zip(&fine).map(|(c, f)| c / f).collect();
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    Ok((min >= 1.8, format!("reduction factors [Rellich, H', D', D=bdry, W'] = [{}]; need >= 1.8", shown.join(", "))))
}

fn solver_correctness() -> Outcome {
    let datum = BoundaryData::cone(ConeElement::new(1.0, vec![1.0]).unwrap(), 0.5);
    let mut errors = Vec::new();
    for h in [1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0] {
        let g = grid(2, 0.5, h, 1.0);
        let p = DiscreteProblem::assemble(&g, datum.clone()).map_err(|e| e.to_string())?;
        let sol = solve(&p, &SolverOptions::tuned(&g)).map_err(|e| e.to_string())?;
        errors.push(sol.field.max_diff_active(&he_field(&g)).map_err(|e| e.to_string())?);
    }
    let decreasing = errors.windows(2).all(|w| w[1] < w[0]);

    let g = grid(2, 0.5, 1.0 / 64.0, 1.0);
    let p = DiscreteProblem::assemble(&g, datum.clone()).map_err(|e| e.to_string())?;
    let opts = SolverOptions::tuned(&g);
    let a = solve(&p, &opts).map_err(|e| e.to_string())?;
    let b = solve(&p, &opts.clone().with_initial(InitialGuess::HarmonicExtension)).map_err(|e| e.to_string())?;
    let guess_diff = a.field.max_diff_active(&b.field).map_err(|e| e.to_string())?;
    let guess_tol = 10.0 * opts.tol * a.scale;

    let g8 = grid(2, 0.5, 1.0 / 8.0, 1.0);
    let p8 = DiscreteProblem::assemble(&g8, datum).map_err(|e| e.to_string())?;
    let psor = solve(&p8, &SolverOptions::default().with_tol(1e-13)).map_err(|e| e.to_string())?;
    let dense = solve_dense(&p8).map_err(|e| e.to_string())?;
    let qp_diff = psor.field.max_diff_active(&dense).map_err(|e| e.to_string())?;

    let pass = errors[1] <= 0.05 && decreasing && guess_diff <= guess_tol && qp_diff <= 1e-9;
    Ok((
        pass,
        format!(
            "max |u - h_e| at h = 1/32, 1/64, 1/128: {:.2e}, {:.2e}, {:.2e}; initial guesses differ by {guess_diff:.1e} \
             (tol {guess_tol:.1e}); dense QP differs by {qp_diff:.1e}",
            errors[0], errors[1], errors[2]
        ),
    ))
}

struct Minimizer {
    eps: f64,
    sol: Solution,
    centers: Vec<Vec<f64>>,
}

fn two_mode_minimizers() -> Result<Vec<Minimizer>, String> {
    let g = grid(2, 0.5, 1.0 / 64.0, 1.0);
    let mut out = Vec::new();
    for eps in [0.15, 0.25, 0.35, 0.45, 0.55] {
        let datum =
            BoundaryData::new(format!("two-mode {eps}"), move |x: &[f64]| two_mode_eval(x, &[1.0], eps).unwrap());
        let p = DiscreteProblem::assemble(&g, datum).map_err(|e| e.to_string())?;
        let sol = solve(&p, &SolverOptions::tuned(&g)).map_err(|e| e.to_string())?;
        let fb = contact_and_boundary(&sol).map_err(|e| e.to_string())?;
        let centers = fb.refined_points();
        if centers.is_empty() {
            return Err(format!("no free boundary found for eps = {eps}"));
        }
        out.push(Minimizer { eps, sol, centers });
    }
    Ok(out)
}

fn monotonicity(data: &[Minimizer]) -> Outcome {
    let mut violations = 0;
    let mut min_n = f64::INFINITY;
    let mut floor_ok = true;
    for m in data {
        let fb = contact_and_boundary(&m.sol).map_err(|e| e.to_string())?;
        let probe = FieldProbe::new(m.sol.field.clone());
        for x0 in &m.centers {
            let s = series(&probe, x0, &default_radii(&m.sol.field, x0)).map_err(|e| e.to_string())?;
            for q in [Quantity::N, Quantity::W, Quantity::HOverR] {
                violations += monotonicity_scan(&s, q).map_err(|e| e.to_string())?.violations.len();
            }
            let floor = frequency_floor_check(&s, &fb, 1e-4).map_err(|e| e.to_string())?;
            floor_ok &= floor.passes;
            min_n = min_n.min(floor.min_frequency);
        }
    }
    Ok((
        violations == 0 && floor_ok,
        format!(
            "{} data, {violations} violations of N, W, H/r^4 monotonicity; min N at free boundary {min_n:.5}",
            data.len()
        ),
    ))
}

fn weiss_derivative(data: &[Minimizer]) -> Outcome {
    let h = 1.0 / 64.0;
    let dr = FD_STEP_CELLS * h;
    let tol = 5.0 * (h + dr * dr);
    let mut worst: f64 = 0.0;
    for m in data {
        let probe = FieldProbe::new(m.sol.field.clone());
        for x0 in &m.centers {
            for r in [0.15, 0.25, 0.35, 0.45, 0.55] {
                let res = identity_residuals(&probe, x0, r).map_err(|e| e.to_string())?.weiss;
                worst = worst.max(res.relative());
            }
        }
    }
    Ok((
        worst <= tol,
        format!("max |W' - 2/r^3 int (u_nu - 1.5 u/r)^2| / scale = {worst:.2e} at 5 radii; tol {tol:.2e}"),
    ))
}

fn epiperimetric() -> Outcome {
    let h = 1.0 / 64.0;
    let mut notes = Vec::new();
    let mut pass = true;
    for s in [0.25, 0.5, 0.75] {
        let g = grid(2, s, h, 1.0);
        let family = default_family(2, s).map_err(|e| e.to_string())?;
        let sweep = kappa_sweep(&family, &g).map_err(|e| e.to_string())?;
        let mut scale_dev: f64 = 0.0;
        for (c, rep) in family.iter().zip(&sweep.reports) {
            for gamma in [0.5, 2.0] {
                let scaled =
                    epiperimetric_gap(&c.scaled(gamma).map_err(|e| e.to_string())?, &g).map_err(|e| e.to_string())?;
                match (rep.kappa, scaled.kappa) {
                    (Some(k0), Some(k1)) => scale_dev = scale_dev.max((k0 - k1).abs()),
                    (None, None) => {}
                    _ => scale_dev = f64::INFINITY,
                }
            }
        }
        let degenerate = sweep.reports.iter().filter(|r| r.status == EpiStatus::Degenerate).count();
        let ok = sweep.violations() == 0 && sweep.min_kappa > 0.0 && scale_dev <= 1e-10;
        pass &= ok;
        notes.push(format!(
            "s = {s}: {} data, {} violated, {degenerate} degenerate, min kappa {:.4}, scaling deviation {scale_dev:.1e}",
            sweep.reports.len(),
            sweep.violations(),
            sweep.min_kappa
        ));
    }
    Ok((pass, notes.join("; ")))
}

fn decay_and_uniqueness(data: &[Minimizer]) -> Outcome {
    let m = data.iter().find(|m| m.eps == 0.35).ok_or("missing minimizer")?;
    let x0 = &m.centers[0];
    let probe = FieldProbe::new(m.sol.field.clone());
    let radii = default_radii(&m.sol.field, x0);
    let s = series(&probe, x0, &radii).map_err(|e| e.to_string())?;
    let fit = decay_fit(&s).map_err(|e| e.to_string())?;
    let uniq = uniqueness_rate_check(&m.sol.field, x0, &radii, fit.gamma).map_err(|e| e.to_string())?;
    let exponent = uniq.exponent().unwrap_or(f64::NAN);

    let g = grid(2, 0.5, 1.0 / 64.0, 1.0);
    let h1 = he_field(&g);
    let raw = ScalarField::from_fn(&g, |x| 0.3 * (1.0 + x[0] * x[0] + 2.0 * x[1] * x[1]));
    let c = inner_product(&raw, &h1, ProjectionNorm::H1).map_err(|e| e.to_string())?
        / inner_product(&h1, &h1, ProjectionNorm::H1).map_err(|e| e.to_string())?;
    let q = raw.axpy(-c, &h1).map_err(|e| e.to_string())?;
    let fields = [0.01, 0.02, 0.05, 0.1, 0.2, 0.4]
        .iter()
        .map(|&r| Ok(RescaledField { center: vec![0.0, 0.0], r, field: h1.axpy(r.powf(0.6), &q)? }))
        .collect::<obstacle_lab::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let synthetic = uniqueness_from_rescalings(&fields, 1.2).map_err(|e| e.to_string())?.exponent().unwrap_or(f64::NAN);

    let pass = fit.gamma > 0.0 && fit.max_residual <= 0.1 && exponent > 0.0 && (synthetic - 0.6).abs() <= 0.02;
    Ok((
        pass,
        format!(
            "gamma {:.3} (log residual {:.3}), uniqueness exponent {exponent:.3}, synthetic r^0.6 exponent {synthetic:.4}",
            fit.gamma, fit.max_residual
        ),
    ))
}

fn blowup_classification() -> Outcome {
    let h = 1.0 / 64.0;
    let g = grid(2, 0.5, h, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst_dist: f64 = 0.0;
    let mut worst_lambda: f64 = 0.0;
    let mut wrong_e = 0;
    for _ in 0..10 {
        let lambda = rng.random_range(0.5..3.0);
        let e = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let cone = ConeElement::new(lambda, vec![e]).map_err(|e| e.to_string())?;
        let u = sample_cone_element(&cone, &g).map_err(|e| e.to_string())?;
        let fb = contact_and_boundary_field(&u, 1e-12).map_err(|e| e.to_string())?;
        let fit = blowup_fit(&FieldProbe::new(u), &fb, &[0.0, 0.0], &[0.4, 0.6, 0.8]).map_err(|e| e.to_string())?;
        for row in &fit.rows {
            worst_dist = worst_dist.max(row.dist);
            worst_lambda = worst_lambda.max((row.cone.lambda - lambda).abs());
            if row.cone.e != cone.e {
                wrong_e += 1;
            }
        }
    }
    let tol = 5.0 * h;
    Ok((
        worst_dist <= tol && worst_lambda <= tol && wrong_e == 0,
        format!("10 cones: max dist {worst_dist:.2e}, max lambda error {worst_lambda:.2e}, {wrong_e} wrong directions; tol {tol:.2e}"),
    ))
}

/// Largest operator residual of the profile, divided by `h²` times the
/// local mean edge weight, at nodes of `B_0.8` at distance at least `0.2`
/// from `{x_1 ≤ 0, x_2 = 0}`.
fn profile_residual(s: f64, h: f64) -> Result<f64, String> {
    let g = grid(3, s, h, 1.0);
    let prof = AppendixProfile { a0: 0.0, a_coeffs: vec![1.0], s };
    let z = {
        let prof = prof.clone();
        move |x: &[f64]| 2.0 + appendix_profile_eval(&prof, x).unwrap()
    };
    let p =
        DiscreteProblem::assemble(&g, BoundaryData::new("shifted profile", z.clone())).map_err(|e| e.to_string())?;
    let u = ScalarField::from_fn(&g, |x| z(&x[..3]));
    let mut worst: f64 = 0.0;
    for &i in p.interior_nodes() {
        let x = g.node(i);
        let slit = if x[1] <= 0.0 { x[2].abs() } else { x[1].hypot(x[2]) };
        if x[0] * x[0] + x[1] * x[1] + x[2] * x[2] > 0.64 || slit < 0.2 {
            continue;
        }
        let row = p.row(i).ok_or("missing row")?;
        let res = p.apply(u.values(), i).ok_or("missing row")? / (row.diag() / 6.0) / (h * h);
        worst = worst.max(res.abs());
    }
    Ok(worst)
}

fn closed_form_profile() -> Outcome {
    let hs = [1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];
    let mut pass = true;
    let mut notes = Vec::new();
    for s in [0.25, 0.5, 0.75] {
        let res = hs.iter().map(|&h| profile_residual(s, h)).collect::<Result<Vec<_>, _>>()?;
        let order = (res[1] / res[2]).log2();
        pass &= res.windows(2).all(|w| w[1] < w[0]) && order >= 1.8;
        notes.push(format!("s = {s}: {:.2e}, {:.2e}, {:.2e} (order {order:.2})", res[0], res[1], res[2]));
    }
    Ok((pass, format!("scaled residual at h = 1/32, 1/64, 1/128: {}; need order >= 1.8", notes.join("; "))))
}

fn report(id: usize, name: &str, outcome: Outcome, started: Instant) -> bool {
    let secs = started.elapsed().as_secs_f64();
    match outcome {
        Ok((pass, detail)) => {
            println!("{} criterion {id} ({name}): {detail} [{secs:.1} s]", if pass { "PASS" } else { "FAIL" });
            pass
        }
        Err(e) => {
            println!("FAIL criterion {id} ({name}): error: {e} [{secs:.1} s]");
            false
        }
    }
}

fn main() -> ExitCode {
    let mut all = true;
    let t = Instant::now();
    all &= report(1, "oracle identities", oracle_identities(), t);
    let t = Instant::now();
    all &= report(2, "refinement", refinement(), t);
    let t = Instant::now();
    all &= report(3, "solver correctness", solver_correctness(), t);
    let t = Instant::now();
    let data = two_mode_minimizers();
    all &= report(4, "monotonicity", data.as_ref().map_err(Clone::clone).and_then(|d| monotonicity(d)), t);
    let t = Instant::now();
    all &= report(5, "Weiss derivative", data.as_ref().map_err(Clone::clone).and_then(|d| weiss_derivative(d)), t);
    let t = Instant::now();
    all &= report(6, "epiperimetric inequality", epiperimetric(), t);
    let t = Instant::now();
    all &=
        report(7, "decay and uniqueness", data.as_ref().map_err(Clone::clone).and_then(|d| decay_and_uniqueness(d)), t);
    let t = Instant::now();
    all &= report(8, "blow-up classification", blowup_classification(), t);
    let t = Instant::now();
    all &= report(9, "closed-form profile residual", closed_form_profile(), t);
    if all {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: some criteria fail");
        ExitCode::FAILURE
    }
}
