mod common;

use common::load;
use nalgebra::DVector;
use platoon_game::stability::{build_laplacian, convergence_study, internal_stability, string_stability_pf, DEFAULT_THRESHOLD};
use platoon_game::{solve_general, solve_pf, Scenario, TopologyGraph, Trajectory};

fn fiedler(name: &str) -> (f64, f64) {
    let s = load(name);
    let with = build_laplacian(&s.topology, true).unwrap().sigma2;
    let without = build_laplacian(&s.topology, false).unwrap().sigma2;
    (with, without)
}

#[test]
fn fiedler_values_match_reference() {
    for (name, table) in [("tpf_s3", 0.5762), ("apf", 0.6528)] {
        let (a, b) = fiedler(name);
        assert!((a - table).abs() < 5e-3 || (b - table).abs() < 5e-3, "{name}: {a} {b}");
    }
}

#[test]
fn fiedler_ordering_holds_in_both_variants() {
    let pf = fiedler("pf_s1");
    let tpf = fiedler("tpf_s3");
    let apf = fiedler("apf");
    let lf = fiedler("lf");
    assert!(apf.0 > tpf.0 && tpf.0 > pf.0 && pf.0 > lf.0);
    assert!(apf.1 > tpf.1 && tpf.1 > pf.1 && pf.1 > lf.1);
}

#[test]
fn sos_identity_on_bundled_graphs() {
    for name in common::BUNDLED_SCENARIOS {
        let s = load(name);
        let b = build_laplacian(&s.topology, true).unwrap();
        let x = DVector::from_fn(b.nodes.len(), |k, _| (k as f64 * 1.3).sin() * 4.0);
        let sos = b.sum_of_squares(&x);
        assert!((sos - b.quadratic_form(&x)).abs() < 1e-12 * (1.0 + sos));
    }
}

#[test]
fn mean_weights() {
    assert!((load("pf_s2").topology.mean_weight() - 0.5762).abs() < 5e-5);
    assert!((load("tpf_s3").topology.mean_weight() - 0.7276).abs() < 5e-5);
}

fn mean_time(name: &str) -> (f64, bool) {
    let study = convergence_study(&load(name), DEFAULT_THRESHOLD).unwrap();
    (study.final_report().mean_time, study.extended.is_some())
}

#[test]
fn mean_convergence_times() {
    for (name, table, tol) in [("pf_s1", 6.8, 0.5), ("tpf_s3", 3.9, 0.5), ("apf", 4.1, 0.5), ("tpf_s4", 8.9, 0.7)] {
        let (t, _) = mean_time(name);
        assert!((t - table).abs() <= tol, "{name}: {t}");
    }
}

#[test]
fn leader_following_needs_a_longer_horizon() {
    let study = convergence_study(&load("lf"), DEFAULT_THRESHOLD).unwrap();
    assert!(!study.base.all_converged);
    let ext = study.extended.as_ref().unwrap();
    assert!(ext.all_converged);
    assert!(ext.t_f > 10.0);
    assert!((ext.mean_time - 20.4).abs() <= 1.5, "{}", ext.mean_time);
}

#[test]
fn vehicle_three_beats_vehicle_four() {
    let study = convergence_study(&load("pf_s2"), DEFAULT_THRESHOLD).unwrap();
    let r = study.final_report();
    let t3 = r.convergence_times[2].unwrap();
    let t4 = r.convergence_times[3].unwrap();
    assert!(t3 < t4, "{t3} vs {t4}");
}

#[test]
fn convergence_times_within_horizon() {
    for name in common::BUNDLED_SCENARIOS {
        let s = load(name);
        let r = internal_stability(&solve_general(&s).unwrap().sample(1001), DEFAULT_THRESHOLD);
        for t in r.convergence_times.iter().flatten() {
            assert!((0.0..=s.t_f).contains(t));
        }
    }
}

#[test]
fn scenario_one_first_pair_is_string_unstable() {
    let st = string_stability_pf(&load("pf_s1")).unwrap();
    let first = &st.pairs[0];
    assert_eq!(first.index, 2);
    let r = first.ratio.unwrap();
    assert!((r - 1.770848573518653986832).abs() < 1e-12, "{r}");
    assert_eq!(first.passes(), Some(false));
    assert!(!st.passes());
}

fn with_errors(errors: &[f64], weights: &[f64]) -> Scenario {
    let d = vec![-0.05; errors.len()];
    let mut x0 = vec![0.0];
    for (e, d) in errors.iter().zip(&d) {
        x0.push(x0.last().unwrap() + e - d);
    }
    Scenario::new(10.0, x0, d, TopologyGraph::pf(weights).unwrap()).unwrap()
}

#[test]
fn string_stability_boundary_cases() {
    let equal = string_stability_pf(&with_errors(&[-0.3; 4], &[1.0; 4])).unwrap();
    for p in &equal.pairs {
        assert!((p.ratio.unwrap() - 1.0).abs() < 1e-12);
    }
    assert!(equal.passes());

    let geo: Vec<f64> = (1..=5).map(|i| -0.9f64.powi(i)).collect();
    let decay = string_stability_pf(&with_errors(&geo, &[0.8; 5])).unwrap();
    for p in &decay.pairs {
        assert!((p.ratio.unwrap() - 0.9).abs() < 1e-12);
        assert!(p.homogeneous);
    }
    assert!(decay.passes());

    assert!(string_stability_pf(&load("tpf_s3")).is_err());
}

#[test]
fn homogeneous_ratio_is_constant_in_time() {
    let s = with_errors(&[-0.4, -0.7, -0.2, -0.5], &[0.6; 4]);
    let sol = solve_pf(&s).unwrap();
    let e0 = sol.errors(0.0);
    for k in 0..=50 {
        let t = k as f64 * 0.2;
        let e = sol.errors(t);
        for i in 1..s.n {
            let ratio = e[i].abs() / e[i - 1].abs();
            let start = e0[i].abs() / e0[i - 1].abs();
            assert!((ratio - start).abs() < 1e-10, "t={t} i={i}");
        }
    }
}
