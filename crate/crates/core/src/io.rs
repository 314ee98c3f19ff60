//! Scenario files, trajectory CSV and plot-data output.
//!
//! Scenario files are line oriented; see `docs/scenario-format.md` for the
//! grammar. Example:
//!
//! ```text
//! [platoon]
//! n = 2
//! t_f = 10
//!
//! [vehicles]
//! 0 3.0
//! 1 2.0 -0.2
//! 2 1.0 -0.3
//!
//! [topology]
//! kind = pf
//! 1 0.5
//! 2 0.8
//! ```

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{build_scenario, Link, ModelError, Scenario, ScenarioParams, TopologyKind, TopologyWeights, TrajectoryTable};
use crate::mpc::{MpcConfig, MpcError};

pub const DEFAULT_SAMPLES: usize = 1000;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Missing(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
}

fn parse_err(line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse {
        line,
        message: message.into(),
    }
}

/// `[mpc]` section contents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcSettings {
    pub horizon: usize,
    pub sample_time: f64,
}

impl Default for MpcSettings {
    fn default() -> Self {
        MpcSettings {
            horizon: 5,
            sample_time: 0.1,
        }
    }
}

/// A parsed scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub scenario: Scenario,
    pub samples: usize,
    pub mpc: Option<MpcSettings>,
}

impl ScenarioFile {
    /// MPC settings from the file (or the defaults) over the scenario horizon.
    pub fn mpc_config(&self) -> Result<MpcConfig, MpcError> {
        let s = self.mpc.unwrap_or_default();
        MpcConfig::new(s.horizon, s.sample_time, self.scenario.t_f)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Section {
    Platoon,
    Vehicles,
    Topology,
    Mpc,
}

pub fn parse_scenario(path: &Path) -> Result<ScenarioFile, IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario_str(&text)
}

fn number<T: std::str::FromStr>(line: usize, what: &str, s: &str) -> Result<T, IoError> {
    s.parse()
        .map_err(|_| parse_err(line, format!("invalid {what} '{s}'")))
}

fn set_once<T>(slot: &mut Option<T>, value: T, line: usize, key: &str) -> Result<(), IoError> {
    if slot.is_some() {
        return Err(parse_err(line, format!("duplicate key '{key}'")));
    }
    *slot = Some(value);
    Ok(())
}

pub fn parse_scenario_str(text: &str) -> Result<ScenarioFile, IoError> {
    let mut section: Option<Section> = None;
    let mut seen = Vec::new();

    let mut n: Option<usize> = None;
    let mut t_f: Option<f64> = None;
    let mut samples: Option<usize> = None;
    let mut reference_speed: Option<f64> = None;
    let mut vehicles: Vec<(usize, usize, f64, Option<f64>)> = Vec::new();
    let mut kind: Option<TopologyKind> = None;
    let mut rows: Vec<(usize, Vec<&str>)> = Vec::new();
    let mut horizon: Option<usize> = None;
    let mut sample_time: Option<f64> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap().trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| parse_err(line, "unterminated section header"))?
                .trim();
            let s = match name {
                "platoon" => Section::Platoon,
                "vehicles" => Section::Vehicles,
                "topology" => Section::Topology,
                "mpc" => Section::Mpc,
                other => return Err(parse_err(line, format!("unknown section '{other}'"))),
            };
            if seen.contains(&s) {
                return Err(parse_err(line, format!("duplicate section '{name}'")));
            }
            seen.push(s);
            section = Some(s);
            continue;
        }
        let sec = section.ok_or_else(|| parse_err(line, "content before the first section"))?;
        let key_value = content
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()));
        match (sec, key_value) {
            (Section::Platoon, Some((k, v))) => match k {
                "n" => set_once(&mut n, number(line, "n", v)?, line, k)?,
                "t_f" => set_once(&mut t_f, number(line, "t_f", v)?, line, k)?,
                "samples" => set_once(&mut samples, number(line, "samples", v)?, line, k)?,
                "reference_speed" => {
                    set_once(&mut reference_speed, number(line, "reference_speed", v)?, line, k)?
                }
                other => return Err(parse_err(line, format!("unknown key '{other}' in [platoon]"))),
            },
            (Section::Mpc, Some((k, v))) => match k {
                "horizon" => set_once(&mut horizon, number(line, "horizon", v)?, line, k)?,
                "t_s" => set_once(&mut sample_time, number(line, "t_s", v)?, line, k)?,
                other => return Err(parse_err(line, format!("unknown key '{other}' in [mpc]"))),
            },
            (Section::Topology, Some((k, v))) => match k {
                "kind" => {
                    let parsed = TopologyKind::parse(v)
                        .ok_or_else(|| parse_err(line, format!("unknown topology kind '{v}'")))?;
                    set_once(&mut kind, parsed, line, k)?
                }
                other => return Err(parse_err(line, format!("unknown key '{other}' in [topology]"))),
            },
            (Section::Topology, None) => {
                rows.push((line, content.split_whitespace().collect()));
            }
            (Section::Vehicles, None) => {
                let f: Vec<&str> = content.split_whitespace().collect();
                let i: usize = number(line, "vehicle index", f[0])?;
                match (i, f.len()) {
                    (0, 2) => vehicles.push((line, 0, number(line, "position", f[1])?, None)),
                    (0, _) => return Err(parse_err(line, "leader row must be '0 x0'")),
                    (_, 3) => vehicles.push((
                        line,
                        i,
                        number(line, "position", f[1])?,
                        Some(number(line, "spacing", f[2])?),
                    )),
                    _ => return Err(parse_err(line, "vehicle row must be 'i x0 d'")),
                }
            }
            (Section::Vehicles, Some(_)) => {
                return Err(parse_err(line, "[vehicles] takes rows, not keys"))
            }
            (Section::Platoon | Section::Mpc, None) => {
                return Err(parse_err(line, "expected 'key = value'"))
            }
        }
    }

    let n = n.ok_or_else(|| IoError::Missing("missing key 'n' in [platoon]".into()))?;
    let t_f = t_f.ok_or_else(|| IoError::Missing("missing key 't_f' in [platoon]".into()))?;
    let kind = kind.ok_or_else(|| IoError::Missing("missing key 'kind' in [topology]".into()))?;
    if n == 0 {
        return Err(ModelError::EmptyPlatoon.into());
    }

    let mut x0 = vec![None; n + 1];
    let mut d = vec![0.0; n];
    for &(line, i, x, di) in &vehicles {
        if i > n {
            return Err(parse_err(line, format!("vehicle {i} exceeds n = {n}")));
        }
        if x0[i].replace(x).is_some() {
            return Err(parse_err(line, format!("duplicate vehicle {i}")));
        }
        if let Some(di) = di {
            d[i - 1] = di;
        }
    }
    let x0: Vec<f64> = x0
        .into_iter()
        .enumerate()
        .map(|(i, x)| x.ok_or_else(|| IoError::Missing(format!("missing row for vehicle {i} in [vehicles]"))))
        .collect::<Result<_, _>>()?;

    let weights = topology_weights(kind, n, &rows)?;
    let mut scenario = build_scenario(kind, ScenarioParams { t_f, x0, d, weights })?;
    scenario.reference_speed = reference_speed.unwrap_or(0.0);

    let mpc = match (horizon, sample_time) {
        (None, None) if !seen.contains(&Section::Mpc) => None,
        (h, ts) => {
            let s = MpcSettings {
                horizon: h.unwrap_or(MpcSettings::default().horizon),
                sample_time: ts.unwrap_or(MpcSettings::default().sample_time),
            };
            MpcConfig::new(s.horizon, s.sample_time, t_f)?;
            Some(s)
        }
    };
    let samples = samples.unwrap_or(DEFAULT_SAMPLES);
    if samples < 2 {
        return Err(IoError::Missing("samples must be at least 2".into()));
    }
    Ok(ScenarioFile {
        scenario,
        samples,
        mpc,
    })
}

fn topology_weights(kind: TopologyKind, n: usize, rows: &[(usize, Vec<&str>)]) -> Result<TopologyWeights, IoError> {
    match kind {
        TopologyKind::Pf | TopologyKind::Tpf => {
            let mut omega = vec![None; n];
            let mut tilde = vec![0.0; n.saturating_sub(2)];
            for (line, f) in rows {
                let line = *line;
                let i: usize = number(line, "vehicle index", f[0])?;
                if i == 0 || i > n {
                    return Err(parse_err(line, format!("vehicle {i} outside 1..={n}")));
                }
                let expected = match kind {
                    TopologyKind::Tpf if i >= 3 => 3,
                    _ => 2,
                };
                if f.len() != expected {
                    let shape = if expected == 3 { "'i omega omega_tilde'" } else { "'i omega'" };
                    return Err(parse_err(line, format!("weight row for vehicle {i} must be {shape}")));
                }
                if omega[i - 1].replace(number::<f64>(line, "weight", f[1])?).is_some() {
                    return Err(parse_err(line, format!("duplicate weights for vehicle {i}")));
                }
                if expected == 3 {
                    tilde[i - 3] = number(line, "weight", f[2])?;
                }
            }
            let omega: Vec<f64> = omega
                .into_iter()
                .enumerate()
                .map(|(k, w)| w.ok_or_else(|| IoError::Missing(format!("missing weight row for vehicle {}", k + 1))))
                .collect::<Result<_, _>>()?;
            Ok(if kind == TopologyKind::Pf {
                TopologyWeights::Pf(omega)
            } else {
                TopologyWeights::Tpf {
                    omega,
                    omega_tilde: tilde,
                }
            })
        }
        _ => {
            let mut links = Vec::with_capacity(rows.len());
            for (line, f) in rows {
                if f.len() != 3 {
                    return Err(parse_err(*line, "link row must be 'i j w'"));
                }
                links.push(Link::new(
                    number(*line, "vehicle index", f[0])?,
                    number(*line, "vehicle index", f[1])?,
                    number(*line, "weight", f[2])?,
                ));
            }
            Ok(TopologyWeights::Links(links))
        }
    }
}

/// Serializes a scenario file; parsing the result gives back an equal value.
pub fn to_text(file: &ScenarioFile) -> String {
    let s = &file.scenario;
    let mut out = String::new();
    let _ = writeln!(out, "[platoon]\nn = {}\nt_f = {}\nsamples = {}", s.n, s.t_f, file.samples);
    if s.reference_speed != 0.0 {
        let _ = writeln!(out, "reference_speed = {}", s.reference_speed);
    }
    let _ = writeln!(out, "\n[vehicles]\n0 {}", s.x0[0]);
    for i in 1..=s.n {
        let _ = writeln!(out, "{} {} {}", i, s.x0[i], s.d[i - 1]);
    }
    let kind = s.topology.kind();
    let _ = writeln!(out, "\n[topology]\nkind = {}", kind.as_str());
    match kind {
        TopologyKind::Pf => {
            for (k, w) in s.topology.predecessor_weights().iter().enumerate() {
                let _ = writeln!(out, "{} {}", k + 1, w);
            }
        }
        TopologyKind::Tpf => {
            for i in 1..=s.n {
                let nb = s.topology.neighbors(i);
                let _ = match nb.get(&(i.wrapping_sub(2))) {
                    Some(t) if i >= 3 => writeln!(out, "{} {} {}", i, nb[&(i - 1)], t),
                    _ => writeln!(out, "{} {}", i, nb[&(i - 1)]),
                };
            }
        }
        _ => {
            for l in s.topology.links() {
                let _ = writeln!(out, "{} {} {}", l.follower, l.informer, l.weight);
            }
        }
    }
    if let Some(m) = file.mpc {
        let _ = writeln!(out, "\n[mpc]\nhorizon = {}\nt_s = {}", m.horizon, m.sample_time);
    }
    out
}

pub fn csv_header(n: usize) -> String {
    let mut cols = vec!["t".to_string()];
    for prefix in ["y", "e", "u"] {
        cols.extend((1..=n).map(|i| format!("{prefix}{i}")));
    }
    cols.join(",")
}

pub fn write_csv<W: Write>(table: &TrajectoryTable, mut w: W) -> io::Result<()> {
    let n = table.vehicles();
    writeln!(w, "{}", csv_header(n))?;
    for r in 0..table.samples() {
        let mut line = table.t[r].to_string();
        for m in [&table.y, &table.e, &table.u] {
            for c in 0..n {
                line.push(',');
                line.push_str(&m[(r, c)].to_string());
            }
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// One whitespace-separated block per vehicle (`t y e u`), blocks separated
/// by two blank lines so they can be addressed by index.
pub fn write_plot_data<W: Write>(table: &TrajectoryTable, mut w: W) -> io::Result<()> {
    for c in 0..table.vehicles() {
        if c > 0 {
            writeln!(w, "\n")?;
        }
        writeln!(w, "# vehicle {}\n# t y e u", c + 1)?;
        for r in 0..table.samples() {
            writeln!(w, "{} {} {} {}", table.t[r], table.y[(r, c)], table.e[(r, c)], table.u[(r, c)])?;
        }
    }
    Ok(())
}
