use std::sync::Arc;

use obstacle_lab::diagnostics::{frequency, log_log_fit, moments, weiss_from, weiss_via_frequency, FieldProbe};
use obstacle_lab::epi::{EpiReport, EpiStatus};
use obstacle_lab::exact::{h_e_eval, sample_cone_element};
use obstacle_lab::quadrature::power_weight_mean;
use obstacle_lab::snapshot::{read_snapshot, write_snapshot};
use obstacle_lab::solver::solve;
use obstacle_lab::{
    build_grid, BoundaryData, ConeElement, DiscreteProblem, Grid, ProblemParams, ScalarField, SolverOptions,
};
use proptest::prelude::*;

fn grid(n: usize, s: f64, h: f64) -> Arc<Grid> {
    build_grid(ProblemParams::new(n, s, h).unwrap()).unwrap()
}

fn s_value() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.25), Just(0.5), Just(0.75), 0.05f64..0.95]
}

fn direction3() -> impl Strategy<Value = Vec<f64>> {
    (0.0f64..std::f64::consts::TAU).prop_map(|phi| ConeElement::direction_from_angle(3, phi))
}

/// A smooth field even in the last coordinate.
fn even_field(g: &Arc<Grid>, c: [f64; 4]) -> ScalarField {
    let n = g.n();
    ScalarField::from_fn(g, move |x| {
        let y = x[n - 1];
        1.0 + c[0] * x[0] + c[1] * x[0] * x[0] + c[2] * y * y + c[3] * (x[0] * y * y).sin()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cone_elements_are_homogeneous_even_and_plane_nonnegative(
        s in s_value(),
        e in direction3(),
        x in prop::array::uniform3(-2.0f64..2.0),
        t in 0.1f64..5.0,
    ) {
        let v = h_e_eval(&x, &e, s).unwrap();
        let tx: Vec<f64> = x.iter().map(|c| t * c).collect();
        let vt = h_e_eval(&tx, &e, s).unwrap();
        prop_assert!((vt - t.powf(1.0 + s) * v).abs() <= 1e-10 * (1.0 + vt.abs()));
        let mirrored = [x[0], x[1], -x[2]];
        prop_assert_eq!(h_e_eval(&mirrored, &e, s).unwrap(), v);
        let plane = [x[0], x[1], 0.0];
        let vp = h_e_eval(&plane, &e, s).unwrap();
        prop_assert!(vp >= 0.0);
        if x[0] * e[0] + x[1] * e[1] < 0.0 {
            prop_assert_eq!(vp, 0.0);
        }
    }

    #[test]
    fn power_weight_mean_lies_between_endpoint_weights(
        a in -0.9f64..0.9,
        t0 in 0.01f64..2.0,
        len in 0.01f64..1.0,
    ) {
        let t1 = t0 + len;
        let m = power_weight_mean(a, t0, t1);
        let (lo, hi) = (t0.powf(a).min(t1.powf(a)), t0.powf(a).max(t1.powf(a)));
        prop_assert!(m >= lo * (1.0 - 1e-12) && m <= hi * (1.0 + 1e-12));
    }

    #[test]
    fn log_log_fit_recovers_exact_power_laws(
        c in 0.01f64..100.0,
        gamma in -3.0f64..3.0,
        r0 in 0.01f64..0.1,
    ) {
        let r: Vec<f64> = (0..8).map(|k| r0 * 1.5f64.powi(k)).collect();
        let q: Vec<f64> = r.iter().map(|r| c * r.powf(gamma)).collect();
        let fit = log_log_fit(&r, &q, 5).unwrap();
        prop_assert!((fit.gamma - gamma).abs() < 1e-9);
        prop_assert!((fit.c - c).abs() < 1e-8 * c);
        prop_assert!(fit.max_residual < 1e-9);
    }

    #[test]
    fn epi_reports_are_consistent(w_c in -1.0f64..1.0, w_star in -1.0f64..1.0, thr in 0.0f64..0.1) {
        let rep = EpiReport::from_energies("x", w_c, w_star, thr);
        match rep.status {
            EpiStatus::Violated => prop_assert!(w_star > w_c),
            EpiStatus::Degenerate => prop_assert!(rep.kappa.is_none() && w_c <= thr.max(1e-8)),
            EpiStatus::Ok => {
                let k = rep.kappa.unwrap();
                prop_assert!(k >= -1e-9);
                prop_assert!((w_star - (1.0 - k) * w_c).abs() < 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn mirror_is_an_involution_fixing_the_plane(s in s_value(), k in 0usize..1000) {
        let g = grid(3, s, 1.0 / 8.0);
        let i = k * 7919 % g.len();
        prop_assert_eq!(g.mirror(g.mirror(i)), i);
        prop_assert_eq!(g.mirror(i) == i, g.is_plane(i));
        let (x, y) = (g.node(i), g.node(g.mirror(i)));
        prop_assert_eq!(x[2], -y[2]);
    }

    #[test]
    fn weiss_energy_matches_its_frequency_form(
        s in s_value(),
        c in prop::array::uniform4(-1.0f64..1.0),
        r in 0.2f64..0.7,
    ) {
        let g = grid(2, s, 1.0 / 32.0);
        let probe = FieldProbe::new(even_field(&g, c));
        let m = moments(&probe, &[0.0, 0.0], r).unwrap();
        let direct = weiss_from(&m, 2, s);
        let via = weiss_via_frequency(&m, 2, s).unwrap();
        prop_assert!((direct - via).abs() <= 1e-9 * (m.d / r.powi(3)).abs().max(1.0));
    }

    #[test]
    fn frequency_is_invariant_under_scaling(
        s in s_value(),
        c in prop::array::uniform4(-1.0f64..1.0),
        lambda in prop_oneof![0.01f64..0.5, 2.0f64..100.0],
        r in 0.2f64..0.7,
    ) {
        let g = grid(2, s, 1.0 / 32.0);
        let u = even_field(&g, c);
        let n1 = frequency(&FieldProbe::new(u.clone()), &[0.0, 0.0], r).unwrap();
        let n2 = frequency(&FieldProbe::new(u.scaled(lambda)), &[0.0, 0.0], r).unwrap();
        prop_assert!((n1 - n2).abs() <= 1e-10 * n1.abs().max(1.0));
        let h1 = moments(&FieldProbe::new(u.clone()), &[0.0, 0.0], r).unwrap().h;
        let h2 = moments(&FieldProbe::new(u.scaled(lambda)), &[0.0, 0.0], r).unwrap().h;
        prop_assert!((h2 - lambda * lambda * h1).abs() <= 1e-10 * h2);
    }

    #[test]
    fn snapshots_round_trip(s in s_value(), c in prop::array::uniform4(-10.0f64..10.0)) {
        let g = grid(2, s, 1.0 / 8.0);
        let u = even_field(&g, c);
        let mut buf = Vec::new();
        write_snapshot(&u, "prop", &mut buf).unwrap();
        let (_, back) = read_snapshot(buf.as_slice()).unwrap();
        prop_assert_eq!(back.values(), u.values());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn minimizers_are_admissible_symmetric_and_beat_the_datum_extension(
        s in s_value(),
        lambda in 0.2f64..3.0,
        shift in -0.3f64..0.3,
    ) {
        let g = grid(2, s, 1.0 / 16.0);
        let cone = ConeElement::new(lambda, vec![1.0]).unwrap();
        let datum = {
            let cone = cone.clone();
            BoundaryData::new("shifted cone", move |x: &[f64]| cone.eval(x, s).unwrap() + shift.max(0.0) + shift.min(0.0) * x[1] * x[1])
        };
        let p = DiscreteProblem::assemble(&g, datum).unwrap();
        let sol = solve(&p, &SolverOptions::tuned(&g)).unwrap();
        let tol = sol.contact_threshold();
        prop_assert!(g.plane_nodes().iter().all(|&i| sol.field.values()[i] >= -tol));
        prop_assert_eq!(sol.field.symmetry_defect(), 0.0);
        prop_assert!(p.kkt_check(&sol, 1e-7).passes(1e-7));
        let ext = sample_cone_element(&cone, &g).unwrap().map(|v| v + shift.max(0.0));
        prop_assert!(sol.energy <= p.energy(&ext) + 1e-9);
    }

    #[test]
    fn solutions_scale_with_the_datum_and_respect_order(
        s in s_value(),
        gamma in 0.1f64..10.0,
        bump in 0.0f64..0.5,
    ) {
        let g = grid(2, s, 1.0 / 16.0);
        let cone = ConeElement::new(1.0, vec![-1.0]).unwrap();
        let base = BoundaryData::cone(cone.clone(), s);
        let opts = SolverOptions::tuned(&g).with_tol(1e-12);
        let u = solve(&DiscreteProblem::assemble(&g, base.clone()).unwrap(), &opts).unwrap();
        let v = solve(&DiscreteProblem::assemble(&g, base.scaled(gamma)).unwrap(), &opts).unwrap();
        let diff = v.field.max_diff_active(&u.field.scaled(gamma)).unwrap();
        prop_assert!(diff <= 1e-8 * gamma, "{}", diff);
        let higher = BoundaryData::new("raised", move |x: &[f64]| cone.eval(x, s).unwrap() + bump);
        let w = solve(&DiscreteProblem::assemble(&g, higher).unwrap(), &opts).unwrap();
        let slack = 1e-9;
        let ordered = g
            .inside_mask()
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .all(|(i, _)| w.field.values()[i] >= u.field.values()[i] - slack);
        prop_assert!(ordered);
    }
}
