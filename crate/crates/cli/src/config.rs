//! Session configuration: defaults, then a TOML file, then flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use sadic::lattice::DeltaBudget;
use sadic::Prime;

pub const CONFIG_ENV: &str = "SADIC_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Table,
}

/// Global flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML session config (default: $SADIC_CONFIG)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// The prime p
    #[arg(long, global = true)]
    pub p: Option<u32>,
    /// Ambient dimension n for point specs that need one
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// p-adic precision N (digits)
    #[arg(long, global = true)]
    pub precision: Option<u32>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Where to write the JSON report
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// What to print on stdout
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Worker cap (work is deterministic and runs on one writer)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub max_nodes: Option<u64>,
    #[arg(long, global = true)]
    pub max_height: Option<u64>,
}

/// Resolved session, embedded in every report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub p: u32,
    pub n: usize,
    pub precision: u32,
    pub seed: u64,
    pub format: Format,
    pub jobs: usize,
    pub max_nodes: u64,
    pub max_height: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        let b = DeltaBudget::default();
        SessionConfig {
            p: 3,
            n: 1,
            precision: 64,
            seed: 0,
            format: Format::Json,
            jobs: 1,
            max_nodes: b.max_nodes,
            max_height: b.max_height,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    p: Option<u32>,
    n: Option<usize>,
    precision: Option<u32>,
    seed: Option<u64>,
    format: Option<Format>,
    jobs: Option<usize>,
    max_nodes: Option<u64>,
    max_height: Option<u64>,
}

impl SessionConfig {
    pub fn resolve(g: &GlobalArgs) -> Result<Self, String> {
        let path = g
            .config
            .clone()
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        let file = match &path {
            Some(p) => read_file(p)?,
            None => FileConfig::default(),
        };
        let d = SessionConfig::default();
        let cfg = SessionConfig {
            p: g.p.or(file.p).unwrap_or(d.p),
            n: g.n.or(file.n).unwrap_or(d.n),
            precision: g.precision.or(file.precision).unwrap_or(d.precision),
            seed: g.seed.or(file.seed).unwrap_or(d.seed),
            format: g.format.or(file.format).unwrap_or(d.format),
            jobs: g.jobs.or(file.jobs).unwrap_or(d.jobs),
            max_nodes: g.max_nodes.or(file.max_nodes).unwrap_or(d.max_nodes),
            max_height: g.max_height.or(file.max_height).unwrap_or(d.max_height),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        Prime::new(self.p).map_err(|e| e.to_string())?;
        if self.precision < 16 {
            return Err(format!("precision must be >= 16 (got {})", self.precision));
        }
        if self.n == 0 || self.jobs == 0 || self.max_nodes == 0 || self.max_height == 0 {
            return Err("n, jobs and budgets must be positive".into());
        }
        Ok(())
    }

    pub fn prime(&self) -> Prime {
        Prime::new(self.p).expect("validated")
    }

    pub fn budget(&self) -> DeltaBudget {
        DeltaBudget {
            max_height: self.max_height,
            max_nodes: self.max_nodes,
        }
    }
}

fn read_file(p: &Path) -> Result<FileConfig, String> {
    let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
    toml::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))
}
