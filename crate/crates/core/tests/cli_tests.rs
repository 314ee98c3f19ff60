mod common;

use std::process::{Command, Output};

use common::{load_file, scenario_path, BUNDLED_SCENARIOS};
use platoon_game::io::{csv_header, parse_scenario_str, to_text, write_csv};
use platoon_game::{solve_game, SolverChoice, Trajectory};

fn platoon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_platoon"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(name: &str) -> String {
    scenario_path(name).to_string_lossy().into_owned()
}

fn rows(csv: &str) -> Vec<Vec<f64>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn simulate_pf_s1_decays() {
    let out = platoon(&["simulate", &path("pf_s1")]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), "t,y1,y2,y3,y4,y5,e1,e2,e3,e4,e5,u1,u2,u3,u4,u5");
    let table = rows(&text);
    assert_eq!(table.len(), 1000);
    let last = table.last().unwrap();
    assert_eq!(last[0], 10.0);
    let file = load_file("pf_s1");
    let e0 = file.scenario.initial_errors();
    let w = file.scenario.topology.predecessor_weights();
    for c in 6..11 {
        let k = c - 6;
        let expect = e0[k] / (w[k].sqrt() * 10.0).cosh();
        assert!((last[c] - expect).abs() < 1e-12, "column {c}: {}", last[c]);
        for w in table.windows(2) {
            assert!(w[1][c].abs() <= w[0][c].abs() + 1e-15);
        }
    }
}

#[test]
fn csv_has_one_plus_three_n_columns() {
    for name in BUNDLED_SCENARIOS {
        let n = load_file(name).scenario.n;
        let out = platoon(&["simulate", &path(name), "--samples", "20"]);
        assert_eq!(out.status.code(), Some(0));
        let text = String::from_utf8(out.stdout).unwrap();
        assert_eq!(text.lines().next().unwrap(), csv_header(n));
        assert_eq!(text.lines().count(), 21);
        for line in text.lines() {
            assert_eq!(line.split(',').count(), 1 + 3 * n);
        }
        assert!(!text.contains('\r'));
    }
}

#[test]
fn reruns_are_bitwise_identical() {
    for name in ["tpf_s4", "apf"] {
        let a = platoon(&["simulate", &path(name)]).stdout;
        let b = platoon(&["simulate", &path(name)]).stdout;
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn every_solver_choice_runs() {
    for solver in ["auto", "pf", "tpf", "general", "shooting"] {
        let out = platoon(&["simulate", &path("pf_s2"), "--solver", solver, "--samples", "5"]);
        assert_eq!(out.status.code(), Some(0), "{solver}");
    }
    let out = platoon(&["simulate", &path("cmp_pf"), "--solver", "mpc"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 152);
    // a PF closed form cannot serve a two-predecessor platoon
    let out = platoon(&["simulate", &path("tpf_s3"), "--solver", "pf"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn out_flag_writes_csv_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("run.csv");
    let out = platoon(&["simulate", &path("tpf_s3"), "--samples", "11", "--out", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 12);
    let dat = std::fs::read_to_string(dir.path().join("run.dat")).unwrap();
    assert_eq!(dat.matches("# vehicle").count(), 5);
    assert_eq!(dat.split("\n\n\n").count(), 5);
}

#[test]
fn validate_tpf_s4_passes() {
    let out = platoon(&["validate", &path("tpf_s4")]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.contains("terminal costate"));
}

#[test]
fn validate_reports_failures_with_code_two() {
    // the single-shot oracle cannot reach the trajectory tolerance here
    let out = platoon(&["validate", &path("cmp_tpf")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stability_lf_reports_extended_horizon() {
    let out = platoon(&["stability", &path("lf")]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("fiedler value (with leader)"));
    assert!(text.contains("> t_f (not converged)"));
    assert!(text.contains("re-solved with t_f = "));
}

#[test]
fn stability_pf_prints_string_ratios() {
    let out = platoon(&["stability", &path("pf_s1")]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("string ratio 2/1: 1.7708 fail"));
}

#[test]
fn compare_prints_both_controllers() {
    let out = platoon(&["compare", &path("cmp_pf")]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("game")));
    assert!(text.lines().any(|l| l.starts_with("mpc")));
    let out = platoon(&["compare", &path("pf_s1")]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(platoon(&[]).status.code(), Some(64));
    assert_eq!(platoon(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(platoon(&["simulate", &path("pf_s1"), "--solver", "magic"]).status.code(), Some(64));
    assert_eq!(platoon(&["--help"]).status.code(), Some(0));
}

#[test]
fn input_errors_exit_66() {
    assert_eq!(platoon(&["simulate", "/nonexistent/x.cfg"]).status.code(), Some(66));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "[platoon]\nn = 1\nt_f = 5\ncolour = red\n").unwrap();
    let out = platoon(&["validate", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(66));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
}

#[test]
fn scenario_files_round_trip() {
    for name in BUNDLED_SCENARIOS.iter().chain(&["cmp_pf", "cmp_tpf"]) {
        let file = load_file(name);
        let again = parse_scenario_str(&to_text(&file)).unwrap();
        assert_eq!(again, file, "{name}");
        let csv = |f: &platoon_game::io::ScenarioFile| {
            let table = solve_game(&f.scenario, SolverChoice::Auto).unwrap().sample(50);
            let mut buf = Vec::new();
            write_csv(&table, &mut buf).unwrap();
            buf
        };
        assert_eq!(csv(&file), csv(&again), "{name}");
    }
}

#[test]
fn csv_values_round_trip_exactly() {
    let file = load_file("tpf_s3");
    let table = solve_game(&file.scenario, SolverChoice::Auto).unwrap().sample(30);
    let mut buf = Vec::new();
    write_csv(&table, &mut buf).unwrap();
    let parsed = rows(&String::from_utf8(buf).unwrap());
    for (r, row) in parsed.iter().enumerate() {
        assert_eq!(row[0], table.t[r]);
        for c in 0..5 {
            assert_eq!(row[1 + c], table.y[(r, c)]);
            assert_eq!(row[6 + c], table.e[(r, c)]);
            assert_eq!(row[11 + c], table.u[(r, c)]);
        }
    }
}

#[test]
fn parser_rejects_malformed_files() {
    let base = "[platoon]\nn = 2\nt_f = 10\n\n[vehicles]\n0 3.0\n1 2.0 -0.2\n2 1.0 -0.3\n\n[topology]\nkind = pf\n1 0.5\n2 0.8\n";
    assert!(parse_scenario_str(base).is_ok());
    for (broken, what) in [
        (base.replace("kind = pf", "kind = ring"), "unknown kind"),
        (base.replace("[mpc]", "").replace("[topology]", "[topo]"), "unknown section"),
        (base.replace("2 1.0 -0.3", "2 1.0 0.3"), "nonnegative spacing"),
        (base.replace("2 1.0 -0.3", "2 3.5 -0.3"), "ordering"),
        (base.replace("2 0.8\n", ""), "missing weight"),
        (base.replace("t_f = 10", "t_f = 10\nt_f = 11"), "duplicate key"),
        (base.replace("1 0.5", "1 0.5 0.2"), "row shape"),
        (base.replace("n = 2", "n = two"), "bad number"),
    ] {
        assert!(parse_scenario_str(&broken).is_err(), "{what}");
    }
}
