use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use crate::general_game::build_info_matrix;
use crate::io::{parse_scenario, write_csv, write_plot_data, IoError, ScenarioFile};
use crate::model::{relative_initial, TopologyKind};
use crate::mpc::mpc_rollout;
use crate::oracle::{aligned_steps, certify_nash, integrate_forward, shoot_lambda0, DEFAULT_STEPS};
use crate::solver::{solve_game, GameSolution, SolverChoice, Trajectory};
use crate::stability::{build_laplacian, convergence_study, string_stability_pf, DEFAULT_THRESHOLD};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_INPUT: i32 = 66;

pub const LAMBDA_TOL: f64 = 1e-8;
pub const TRAJECTORY_TOL: f64 = 1e-7;
pub const NASH_BUMPS: usize = 20;

#[derive(Parser, Debug)]
#[command(name = "platoon", version, about = "Nash-equilibrium platoon formation trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve a scenario and write the sampled trajectories as CSV
    Simulate {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = SolverArg::Auto)]
        solver: SolverArg,
        #[arg(long)]
        samples: Option<usize>,
        /// CSV output file; a `.dat` plot-data file is written next to it
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-check the solver against shooting, integration and deviations
    Validate { scenario: PathBuf },
    /// Fiedler values, convergence times and string-stability ratios
    Stability {
        scenario: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Game solution against the MPC baseline
    Compare { scenario: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SolverArg {
    Auto,
    Pf,
    Tpf,
    General,
    Shooting,
    Mpc,
}

enum Failure {
    Input(IoError),
    Runtime(String),
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result = match cli.command {
        Command::Simulate {
            scenario,
            solver,
            samples,
            out: path,
        } => simulate(&scenario, solver, samples, path.as_deref(), &mut out),
        Command::Validate { scenario } => validate(&scenario, &mut out),
        Command::Stability {
            scenario,
            threshold,
        } => stability(&scenario, threshold, &mut out),
        Command::Compare { scenario } => compare(&scenario, &mut out),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn load(path: &Path) -> Result<ScenarioFile, Failure> {
    parse_scenario(path).map_err(Failure::Input)
}

fn simulate(
    path: &Path,
    solver: SolverArg,
    samples: Option<usize>,
    out_path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let file = load(path)?;
    let m = samples.unwrap_or(file.samples).max(2);
    let table = match solver {
        SolverArg::Mpc => {
            let cfg = file.mpc_config().map_err(runtime)?;
            mpc_rollout(&file.scenario, &cfg).map_err(runtime)?
        }
        other => {
            let choice = match other {
                SolverArg::Pf => SolverChoice::Pf,
                SolverArg::Tpf => SolverChoice::Tpf,
                SolverArg::General => SolverChoice::General,
                SolverArg::Shooting => SolverChoice::Shooting,
                _ => SolverChoice::Auto,
            };
            solve_game(&file.scenario, choice).map_err(runtime)?.sample(m)
        }
    };
    match out_path {
        Some(p) => {
            write_csv(&table, BufWriter::new(File::create(p)?))?;
            let dat = p.with_extension("dat");
            write_plot_data(&table, BufWriter::new(File::create(&dat)?))?;
            writeln!(out, "wrote {} and {}", p.display(), dat.display())?;
        }
        None => write_csv(&table, out)?,
    }
    Ok(EXIT_OK)
}

/// Residuals reported by `validate`.
#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    pub solver: &'static str,
    pub terminal_costate: f64,
    pub shooting_residual: f64,
    pub lambda0_gap: f64,
    pub trajectory_gap: f64,
    /// `(player, baseline cost, min cost change, tolerance)`.
    pub nash: Vec<(usize, f64, f64, f64)>,
}

impl Validation {
    pub fn passes(&self) -> bool {
        self.terminal_costate < LAMBDA_TOL
            && self.trajectory_gap < TRAJECTORY_TOL
            && self.nash.iter().all(|&(_, _, delta, tol)| delta >= -tol)
    }
}

pub fn validation_report(file: &ScenarioFile) -> Result<Validation, String> {
    let s = &file.scenario;
    let sol = solve_game(s, SolverChoice::Auto).map_err(|e| e.to_string())?;
    let terminal_costate = match &sol {
        GameSolution::General(g) => g.state(s.t_f).1.amax(),
        other => other.evaluate(s.t_f).1.amax(),
    };

    let info = build_info_matrix(s);
    let y0 = relative_initial(s).y;
    let m = 1000;
    let steps = aligned_steps(m, DEFAULT_STEPS);
    let shot = shoot_lambda0(&info, &y0, s.t_f, steps).map_err(|e| e.to_string())?;
    let run = integrate_forward(&info, &y0, &shot.lambda0, s.t_f, steps).map_err(|e| e.to_string())?;
    let stride = steps / (m - 1);
    let table = sol.sample(m);
    let mut trajectory_gap: f64 = 0.0;
    for r in 0..m {
        let oracle = &run.y[r * stride];
        let analytic = DVector::from_iterator(s.n, table.y.row(r).iter().copied());
        trajectory_gap = trajectory_gap.max((analytic - oracle).amax());
    }
    let lambda0 = -sol.evaluate(0.0).1;

    let nash = (1..=s.n)
        .map(|p| {
            let r = certify_nash(s, &sol, p, NASH_BUMPS);
            (p, r.baseline, r.min_delta, r.tolerance())
        })
        .collect();
    Ok(Validation {
        solver: sol.label(),
        terminal_costate,
        shooting_residual: shot.residual,
        lambda0_gap: (lambda0 - &shot.lambda0).amax(),
        trajectory_gap,
        nash,
    })
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

fn validate(path: &Path, out: &mut dyn Write) -> Result<i32, Failure> {
    let file = load(path)?;
    let v = validation_report(&file).map_err(Failure::Runtime)?;
    writeln!(out, "solver: {}", v.solver)?;
    writeln!(out, "{:<28} {:>12} {:>10}  status", "check", "value", "tolerance")?;
    writeln!(
        out,
        "{:<28} {:>12.3e} {:>10.0e}  {}",
        "terminal costate |lambda|",
        v.terminal_costate,
        LAMBDA_TOL,
        mark(v.terminal_costate < LAMBDA_TOL)
    )?;
    writeln!(
        out,
        "{:<28} {:>12.3e} {:>10.0e}  {}",
        "trajectory vs oracle",
        v.trajectory_gap,
        TRAJECTORY_TOL,
        mark(v.trajectory_gap < TRAJECTORY_TOL)
    )?;
    writeln!(out, "{:<28} {:>12.3e} {:>10}  info", "oracle shooting residual", v.shooting_residual, "-")?;
    writeln!(out, "{:<28} {:>12.3e} {:>10}  info", "lambda(0) vs oracle", v.lambda0_gap, "-")?;
    for &(p, j, delta, tol) in &v.nash {
        writeln!(
            out,
            "{:<28} {:>12.3e} {:>10.1e}  {}",
            format!("deviation player {p} (J={j:.4})"),
            delta,
            -tol,
            mark(delta >= -tol)
        )?;
    }
    Ok(if v.passes() { EXIT_OK } else { EXIT_VALIDATION })
}

fn stability(path: &Path, threshold: f64, out: &mut dyn Write) -> Result<i32, Failure> {
    let file = load(path)?;
    let s = &file.scenario;
    writeln!(
        out,
        "topology: {} ({} links, mean weight {:.4})",
        s.topology.kind(),
        s.topology.link_count(),
        s.topology.mean_weight()
    )?;
    for (label, include) in [("with leader", true), ("followers only", false)] {
        match build_laplacian(&s.topology, include) {
            Ok(b) => writeln!(out, "fiedler value ({label}): {:.4}", b.sigma2)?,
            Err(e) => writeln!(out, "fiedler value ({label}): unavailable ({e})")?,
        }
    }
    let study = convergence_study(s, threshold).map_err(runtime)?;
    let fmt_times = |times: &[Option<f64>]| {
        times
            .iter()
            .map(|t| t.map_or("-".to_string(), |v| format!("{v:.2}")))
            .collect::<Vec<_>>()
            .join(" ")
    };
    writeln!(out, "threshold: {threshold}")?;
    writeln!(
        out,
        "convergence times at t_f = {}: {}",
        study.base.t_f,
        fmt_times(&study.base.convergence_times)
    )?;
    if study.base.all_converged {
        writeln!(out, "mean convergence time: {:.2}", study.base.mean_time)?;
    } else {
        writeln!(out, "mean convergence time: > t_f (not converged)")?;
    }
    if let Some(ext) = &study.extended {
        writeln!(
            out,
            "re-solved with t_f = {} for timing: {}",
            ext.t_f,
            fmt_times(&ext.convergence_times)
        )?;
        if ext.all_converged {
            writeln!(out, "mean convergence time (re-solve): {:.2}", ext.mean_time)?;
        } else {
            writeln!(out, "mean convergence time (re-solve): > t_f (not converged)")?;
        }
    }
    if s.topology.kind() == TopologyKind::Pf {
        let ss = string_stability_pf(s).map_err(runtime)?;
        for p in &ss.pairs {
            let ratio = p.ratio.map_or("degenerate".to_string(), |r| format!("{r:.4}"));
            let verdict = match p.passes() {
                Some(true) => "pass",
                Some(false) => "fail",
                None => "excluded",
            };
            let homog = if p.homogeneous { "" } else { " (weights differ)" };
            writeln!(out, "string ratio {}/{}: {ratio} {verdict}{homog}", p.index, p.index - 1)?;
        }
    }
    Ok(EXIT_OK)
}

fn compare(path: &Path, out: &mut dyn Write) -> Result<i32, Failure> {
    let file = load(path)?;
    let s = &file.scenario;
    let sol = solve_game(s, SolverChoice::Auto).map_err(runtime)?;
    let m = (s.t_f / 0.01).round() as usize + 1;
    let game = sol.sample(m);
    let cfg = file.mpc_config().map_err(runtime)?;
    let mpc = mpc_rollout(s, &cfg).map_err(runtime)?;
    writeln!(
        out,
        "mpc: N = {}, T_s = {}; game solver: {}",
        cfg.horizon,
        cfg.sample_time,
        sol.label()
    )?;
    writeln!(out, "{:<6} {:>14} {:>10} {:>16}", "", "effort", "max |u|", "max |e(t_f)|")?;
    for (name, t) in [("game", &game), ("mpc", &mpc)] {
        let terminal = t.terminal_errors().into_iter().fold(0.0, f64::max);
        writeln!(
            out,
            "{:<6} {:>14.6} {:>10.4} {:>16.3e}",
            name,
            t.control_effort(),
            t.max_abs_control(),
            terminal
        )?;
    }
    Ok(EXIT_OK)
}
