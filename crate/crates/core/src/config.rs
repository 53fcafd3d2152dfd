//! Experiment configuration: a TOML file describing the workload, the
//! policy × rate × seed sweep and every simulator tunable.
//!
//! See `configs/example.toml` for a commented example.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::InferceptConfig;
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::scheduler::PolicyKind;
use crate::sim::{EngineConfig, MemoryConfig};
use crate::simulation::SimConfig;
use crate::workload::{load_trace, SyntheticParams};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "AGENTSIM_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "agentsim-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSource {
    /// JSONL trace file, resolved against the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Synthetic workload generated once per seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticParams>,
    /// Multiplies every token count.
    #[serde(default = "one")]
    pub token_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub policies: Vec<PolicyKind>,
    /// Policy the comparison table is normalized against; defaults to
    /// `fcfs` when swept, else the first policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<PolicyKind>,
    #[serde(default = "default_rates")]
    pub rate_multipliers: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Values of k for the turn-scaling transform.
    #[serde(default = "default_turn_scales")]
    pub turn_scales: Vec<usize>,
    /// Parallel runs; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub audit_log: bool,
    #[serde(default)]
    pub preemption: bool,
    pub trace: TraceSource,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub memory: MemoryConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub infercept: InferceptConfig,
}

fn default_rates() -> Vec<f64> {
    vec![1.0]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_turn_scales() -> Vec<usize> {
    vec![1]
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config and resolves a relative trace path against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(p) = cfg.trace.path.as_mut() {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn baseline(&self) -> PolicyKind {
        self.baseline.unwrap_or_else(|| {
            if self.policies.contains(&PolicyKind::Fcfs) {
                PolicyKind::Fcfs
            } else {
                self.policies[0]
            }
        })
    }

    pub fn sim_config(&self, policy: PolicyKind) -> SimConfig {
        SimConfig {
            policy,
            engine: self.engine.clone(),
            memory: self.memory.clone(),
            estimator: self.estimator.clone(),
            infercept: self.infercept.clone(),
            preemption: self.preemption,
        }
    }

    /// Output root: explicit override, then the config, then the
    /// environment, then `agentsim-out`.
    pub fn output_root(&self, cli_override: Option<&Path>) -> PathBuf {
        cli_override
            .map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    /// Structural checks that don't touch the filesystem.
    pub fn check(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.policies.is_empty() {
            return fail("policies must list at least one policy");
        }
        if self.rate_multipliers.is_empty() {
            return fail("rate_multipliers must list at least one rate");
        }
        if self.rate_multipliers.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return fail("rate_multipliers must be positive");
        }
        if self.seeds.is_empty() {
            return fail("seeds must list at least one seed");
        }
        if self.turn_scales.is_empty() || self.turn_scales.contains(&0) {
            return fail("turn_scales must be non-empty and >= 1");
        }
        if let Some(b) = self.baseline {
            if !self.policies.contains(&b) {
                return Err(Error::Config(format!("baseline `{b}` is not among policies")));
            }
        }
        match (&self.trace.path, &self.trace.synthetic) {
            (Some(_), Some(_)) => return fail("trace: set either `path` or `synthetic`, not both"),
            (None, None) => return fail("trace: one of `path` or `synthetic` is required"),
            (None, Some(s)) => s.validate()?,
            (Some(_), None) => {}
        }
        if !(self.trace.token_scale > 0.0) || !self.trace.token_scale.is_finite() {
            return fail("trace.token_scale must be positive");
        }
        self.engine.validate()?;
        self.memory.validate()?;
        self.estimator.validate()?;
        self.infercept.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Info,
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn new(severity: Severity, message: impl Into<String>) -> Self {
        Self {
            severity,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Info => "info",
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

/// Checks a config file without running it. Never fails; problems come
/// back as error diagnostics, omitted settings as info diagnostics showing
/// the default in effect.
pub fn validate_file(path: &Path) -> Vec<Diagnostic> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return vec![Diagnostic::new(Severity::Error, format!("{}: {e}", path.display()))],
    };
    let mut out = Vec::new();
    if let Ok(raw) = text.parse::<toml::Table>() {
        report_defaults(&raw, &mut out);
    }
    let cfg = match ExperimentConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            out.push(Diagnostic::new(Severity::Error, e.to_string()));
            return out;
        }
    };
    if let Err(e) = cfg.check() {
        out.push(Diagnostic::new(Severity::Error, e.to_string()));
    }
    if let Some(p) = &cfg.trace.path {
        match load_trace(p) {
            Ok(programs) => {
                if let Some(big) = programs
                    .iter()
                    .find(|p| cfg.memory.blocks_for(p.context_tokens()) > cfg.memory.gpu_capacity_blocks)
                {
                    out.push(Diagnostic::new(
                        Severity::Error,
                        format!("program {} does not fit in GPU memory", big.program_id),
                    ));
                }
            }
            Err(e) => out.push(Diagnostic::new(Severity::Error, e.to_string())),
        }
    }
    if cfg.policies.len() == 1 && cfg.baseline.is_none() {
        out.push(Diagnostic::new(
            Severity::Warning,
            "only one policy; the comparison table will be trivial",
        ));
    }
    out
}

fn report_defaults(raw: &toml::Table, out: &mut Vec<Diagnostic>) {
    let top: [(&str, String); 6] = [
        ("rate_multipliers", "[1.0]".into()),
        ("seeds", "[0]".into()),
        ("turn_scales", "[1]".into()),
        ("workers", "0 (all cores)".into()),
        ("audit_log", "false".into()),
        ("preemption", "false".into()),
    ];
    for (key, default) in top {
        if !raw.contains_key(key) {
            out.push(Diagnostic::new(Severity::Info, format!("{key} not set; using {default}")));
        }
    }
    let sections = [
        ("engine", toml::Table::try_from(EngineConfig::default())),
        ("memory", toml::Table::try_from(MemoryConfig::default())),
        ("estimator", toml::Table::try_from(EstimatorConfig::default())),
        ("infercept", toml::Table::try_from(InferceptConfig::default())),
    ];
    for (name, defaults) in sections {
        let Ok(defaults) = defaults else { continue };
        let given = raw.get(name).and_then(|v| v.as_table());
        for (key, value) in &defaults {
            if given.is_none_or(|t| !t.contains_key(key)) {
                out.push(Diagnostic::new(
                    Severity::Info,
                    format!("{name}.{key} not set; using default {value}"),
                ));
            }
        }
    }
    let est = EstimatorConfig::default();
    let ttl_given = raw
        .get("estimator")
        .and_then(|v| v.as_table())
        .is_some_and(|t| t.contains_key("ttl_max"));
    if !ttl_given {
        out.push(Diagnostic::new(
            Severity::Info,
            format!("estimator.ttl_max not set; using 5 * t_default ({})", est.ttl_max()),
        ));
    }
}
