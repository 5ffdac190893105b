//! Experiment configuration: one JSON document with sections `family`,
//! `graph`, `integrator`, `algorithm`, `oracle` and `output`. Every
//! section and field is optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::Algorithm;
use crate::error::{Error, Result};
use crate::graph::{Edge, Graph};
use crate::integrator::IntegratorConfig;
use crate::oracle::OracleConfig;
use crate::problem::{generate_instance, FamilyConfig, GeneratedInstance, NetworkProblem};

/// Output directory override, between the config file and `--out`.
pub const OUT_DIR_ENV: &str = "MDBD_OUT_DIR";

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    /// Undirected edge list; absent means the cycle over all agents.
    #[serde(default)]
    pub edges: Option<Vec<Edge>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Write `trajectory.csv`; diagnostics are always written.
    #[serde(default = "yes")]
    pub trajectory: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: None,
            trajectory: true,
        }
    }
}

fn default_algorithm() -> Algorithm {
    Algorithm::Mdbd
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub family: FamilyConfig,
    #[serde(default)]
    pub graph: GraphConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    /// Reference solve; `null` or absent disables it.
    #[serde(default)]
    pub oracle: Option<OracleConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            family: FamilyConfig::default(),
            graph: GraphConfig::default(),
            integrator: IntegratorConfig::default(),
            algorithm: default_algorithm(),
            oracle: None,
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a config document; errors name the offending field path and
    /// the line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            Error::config(
                if field == "." { "<root>".to_string() } else { field },
                format!("{inner}"),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.integrator
            .validate()
            .map_err(|e| Error::config("integrator", e.to_string()))?;
        if let Some(o) = &self.oracle {
            if !(o.tol > 0.0) {
                return Err(Error::config("oracle.tol", "must be positive"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of everything except `output`, so
    /// the same experiment written to two directories hashes equally.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn seed(&self) -> u64 {
        self.family.seed
    }

    /// `--out`, then the environment override, then `output.dir`, then `out`.
    pub fn out_dir(&self, cli: Option<&Path>) -> PathBuf {
        if let Some(p) = cli {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(p);
        }
        self.output.dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Generates the instance and swaps in the configured graph.
    pub fn instance(&self) -> Result<GeneratedInstance> {
        let mut inst = generate_instance(&self.family)?;
        if let Some(edges) = &self.graph.edges {
            let n = inst.problem.n_agents();
            let graph = Graph::from_edges(n, edges).map_err(|e| Error::config("graph.edges", e.to_string()))?;
            inst.problem = NetworkProblem::new(inst.problem.agents().to_vec(), graph)
                .map_err(|e| Error::config("graph.edges", e.to_string()))?;
        }
        Ok(inst)
    }

    /// Oracle settings with the instance seed recorded.
    pub fn oracle_config(&self) -> Option<OracleConfig> {
        self.oracle.clone().map(|mut o| {
            o.seed = Some(self.family.seed);
            o
        })
    }
}
