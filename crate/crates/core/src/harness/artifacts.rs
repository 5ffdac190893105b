//! On-disk documents. JSON is pretty-printed; every CSV starts with a
//! `# config_hash=<hex> seed=<n>` comment line followed by the header row.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::{Graph, GraphDoc};
use crate::integrator::Trajectory;
use crate::problem::{FamilyConfig, LocalProblem, NetworkProblem, SlaterCertificate};
use crate::saddle::SaddlePoint;

pub const INSTANCE_FILE: &str = "instance.json";
pub const SADDLE_FILE: &str = "saddle.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const ERRORS_FILE: &str = "errors.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMING_FILE: &str = "timing.json";

pub const TRAJECTORY_HEADER: &str = "t,agent,block,index,value";
pub const DIAGNOSTICS_HEADER: &str = "t,V1,kkt_residual,ineq_residual,eq_residual,s_norm,gap";
pub const ERRORS_HEADER: &str = "t,x_error";

/// Problem data as written to disk. Kept unvalidated on load so `verify`
/// can report a broken graph instead of failing to parse.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceDoc {
    pub config_hash: String,
    pub seed: u64,
    pub family: FamilyConfig,
    pub graph: GraphDoc,
    pub agents: Vec<LocalProblem>,
    pub slater: SlaterCertificate,
}

impl InstanceDoc {
    pub fn new(config_hash: &str, seed: u64, family: &FamilyConfig, net: &NetworkProblem, slater: SlaterCertificate) -> Self {
        InstanceDoc {
            config_hash: config_hash.to_string(),
            seed,
            family: family.clone(),
            graph: net.graph().to_doc(),
            agents: net.agents().to_vec(),
            slater,
        }
    }

    pub fn problem(&self) -> Result<NetworkProblem> {
        let graph = Graph::from_edges(self.graph.n_agents, &self.graph.edges)?;
        NetworkProblem::new(self.agents.clone(), graph)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SaddleDoc {
    pub config_hash: String,
    pub seed: u64,
    pub saddle: SaddlePoint,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn csv_preamble(config_hash: &str, seed: u64, header: &str) -> String {
    format!("# config_hash={config_hash} seed={seed}\n{header}\n")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

const STATE_BLOCKS: [&str; 5] = ["y", "gamma", "mu", "omega", "nu"];

/// Long format: recorded states `(y, γ, μ, ω, ν)` plus outputs `x` and `λ`.
pub fn trajectory_csv(config_hash: &str, seed: u64, net: &NetworkProblem, traj: &Trajectory) -> String {
    let mut out = csv_preamble(config_hash, seed, TRAJECTORY_HEADER);
    let n_agents = net.n_agents();
    for rec in &traj.records {
        let state = &rec.state;
        let blocks: [(&str, &[f64]); 7] = [
            (STATE_BLOCKS[0], state.y()),
            (STATE_BLOCKS[1], state.gamma()),
            (STATE_BLOCKS[2], state.mu()),
            (STATE_BLOCKS[3], state.omega()),
            (STATE_BLOCKS[4], state.nu()),
            ("x", rec.output.x()),
            ("lambda", rec.output.lambda()),
        ];
        for agent in 0..n_agents {
            for (name, data) in blocks {
                let w = data.len() / n_agents;
                for (k, v) in data[agent * w..(agent + 1) * w].iter().enumerate() {
                    let _ = writeln!(out, "{},{agent},{name},{k},{v}", rec.t);
                }
            }
        }
    }
    out
}

pub fn diagnostics_csv(config_hash: &str, seed: u64, traj: &Trajectory) -> String {
    let mut out = csv_preamble(config_hash, seed, DIAGNOSTICS_HEADER);
    for rec in &traj.records {
        let d = &rec.diagnostics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            d.t,
            opt(d.v1),
            d.kkt_residual,
            d.ineq_residual,
            d.eq_residual,
            d.s_norm,
            opt(d.gap)
        );
    }
    out
}

pub fn errors_csv(config_hash: &str, seed: u64, traj: &Trajectory) -> String {
    let mut out = csv_preamble(config_hash, seed, ERRORS_HEADER);
    for rec in &traj.records {
        let _ = writeln!(out, "{},{}", rec.t, opt(rec.diagnostics.x_error));
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(text.as_bytes())?;
    f.flush()?;
    Ok(())
}

/// Data rows of a CSV written here, without the comment and header lines.
pub fn csv_rows(text: &str) -> impl Iterator<Item = Vec<&str>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').collect())
}
