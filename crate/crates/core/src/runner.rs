//! Runs a policy × rate × turn-scale × seed sweep and writes reports,
//! comparison tables and plot-ready CSVs.
//!
//! Layout under the output root:
//!
//! ```text
//! run-<config hash>/
//!   effective_config.toml
//!   manifest.json
//!   comparison.csv
//!   jct_vs_rate.csv  throughput_vs_rate.csv  bubbles.csv  turn_scaling.csv
//!   reports/report-<policy>-r<rate>-k<scale>-s<seed>-<trace hash>.json
//!   reports/programs-<same>.csv
//!   audit/audit-<same>.jsonl          (when audit_log = true)
//! ```
//!
//! Every file is a pure function of the config, so reruns are byte-identical.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::{compare, RunReport};
use crate::scheduler::PolicyKind;
use crate::simulation::{simulate, SimOutput};
use crate::workload::{
    generate_synthetic, load_trace, scale_arrival_rate, scale_tokens, trace_hash,
    turn_scaling_transform, ProgramSpec,
};

/// One point of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunKey {
    pub policy: PolicyKind,
    pub rate_mult: f64,
    pub turn_scale: usize,
    pub seed: u64,
}

impl RunKey {
    fn stem(&self, trace_hash: &str) -> String {
        format!(
            "{}-r{}-k{}-s{}-{}",
            self.policy,
            self.rate_mult,
            self.turn_scale,
            self.seed,
            &trace_hash[..12]
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub key: RunKey,
    pub trace_hash: String,
    pub offered_jobs_per_s: f64,
    pub report: Option<String>,
    pub complete: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub source_trace_hash: Option<String>,
    pub all_complete: bool,
    pub runs: Vec<ManifestEntry>,
}

pub struct ExperimentResult {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    /// Successful runs in sweep order.
    pub reports: Vec<(RunKey, RunReport)>,
}

impl ExperimentResult {
    pub fn success(&self) -> bool {
        self.manifest.all_complete
    }
}

struct Workload {
    rate_mult: f64,
    turn_scale: usize,
    seed: u64,
    programs: Vec<ProgramSpec>,
    hash: String,
    offered: f64,
}

fn sha12(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))[..12].to_string()
}

/// Arrival rate of a trace: programs over the arrival span.
pub fn offered_rate(programs: &[ProgramSpec]) -> f64 {
    let first = programs.iter().map(|p| p.arrival_time_s).fold(f64::INFINITY, f64::min);
    let last = programs.iter().map(|p| p.arrival_time_s).fold(f64::NEG_INFINITY, f64::max);
    if programs.len() < 2 || last <= first {
        0.0
    } else {
        (programs.len() - 1) as f64 / (last - first)
    }
}

fn build_workloads(cfg: &ExperimentConfig) -> Result<(Vec<Workload>, Option<String>)> {
    let file_trace = match &cfg.trace.path {
        Some(p) => Some(load_trace(p)?),
        None => None,
    };
    let source_hash = file_trace.as_deref().map(trace_hash);
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let base = match (&file_trace, &cfg.trace.synthetic) {
            (Some(t), _) => t.clone(),
            (None, Some(params)) => generate_synthetic(params, seed)?,
            (None, None) => return Err(Error::Config("no trace source".into())),
        };
        let base = if cfg.trace.token_scale == 1.0 {
            base
        } else {
            scale_tokens(&base, cfg.trace.token_scale)
        };
        for &k in &cfg.turn_scales {
            let scaled = turn_scaling_transform(&base, k);
            for &rate in &cfg.rate_multipliers {
                let programs = scale_arrival_rate(&scaled, rate);
                out.push(Workload {
                    rate_mult: rate,
                    turn_scale: k,
                    seed,
                    hash: trace_hash(&programs),
                    offered: offered_rate(&programs),
                    programs,
                });
            }
        }
    }
    Ok((out, source_hash))
}

/// Runs the sweep. Run failures are recorded in the manifest rather than
/// aborting the others; I/O and config errors abort.
pub fn run_experiment(cfg: &ExperimentConfig, out_root: &Path) -> Result<ExperimentResult> {
    cfg.check()?;
    let effective = cfg.to_toml()?;
    let config_hash = sha12(effective.as_bytes());
    let out_dir = out_root.join(format!("run-{config_hash}"));
    let reports_dir = out_dir.join("reports");
    fs::create_dir_all(&reports_dir).map_err(|e| Error::io(&reports_dir, e))?;
    write_file(&out_dir.join("effective_config.toml"), effective.as_bytes())?;

    let (workloads, source_trace_hash) = build_workloads(cfg)?;
    let jobs: Vec<(usize, PolicyKind)> = (0..workloads.len())
        .flat_map(|w| cfg.policies.iter().map(move |&p| (w, p)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let outcomes: Vec<Result<SimOutput>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(w, policy)| {
                let wl = &workloads[w];
                simulate(cfg.sim_config(policy), wl.programs.clone(), wl.seed)
            })
            .collect()
    });

    let audit_dir = out_dir.join("audit");
    if cfg.audit_log {
        fs::create_dir_all(&audit_dir).map_err(|e| Error::io(&audit_dir, e))?;
    }
    let mut entries = Vec::new();
    let mut reports = Vec::new();
    for (&(w, policy), outcome) in jobs.iter().zip(outcomes) {
        let wl = &workloads[w];
        let key = RunKey {
            policy,
            rate_mult: wl.rate_mult,
            turn_scale: wl.turn_scale,
            seed: wl.seed,
        };
        let stem = key.stem(&wl.hash);
        let mut entry = ManifestEntry {
            key,
            trace_hash: wl.hash.clone(),
            offered_jobs_per_s: wl.offered,
            report: None,
            complete: false,
            error: None,
        };
        match outcome {
            Ok(out) => {
                let name = format!("report-{stem}.json");
                write_file(&reports_dir.join(&name), out.report.to_json()?.as_bytes())?;
                let csv_path = reports_dir.join(format!("programs-{stem}.csv"));
                let f = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
                out.report.write_programs_csv(BufWriter::new(f))?;
                if cfg.audit_log {
                    let p = audit_dir.join(format!("audit-{stem}.jsonl"));
                    let f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
                    out.audit.write_jsonl(BufWriter::new(f)).map_err(|e| Error::io(&p, e))?;
                }
                entry.report = Some(format!("reports/{name}"));
                entry.complete = out.report.complete;
                reports.push((key, out.report));
            }
            Err(e) => entry.error = Some(e.to_string()),
        }
        entries.push(entry);
    }

    write_comparison(&out_dir, cfg, &reports)?;
    write_plots(&out_dir, &entries, &reports)?;
    let manifest = Manifest {
        config_hash,
        source_trace_hash,
        all_complete: entries.iter().all(|e| e.complete),
        runs: entries,
    };
    write_file(&out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(ExperimentResult {
        out_dir,
        manifest,
        reports,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(Error::from)
}

fn write_comparison(out_dir: &Path, cfg: &ExperimentConfig, reports: &[(RunKey, RunReport)]) -> Result<()> {
    let baseline = cfg.baseline().label();
    let mut w = csv_writer(&out_dir.join("comparison.csv"))?;
    w.write_record([
        "rate_mult",
        "turn_scale",
        "seed",
        "policy",
        "jct_mean_s",
        "jct_p99_s",
        "throughput_jobs_per_s",
        "bubble_mean_s",
        "jct_speedup",
        "throughput_ratio",
        "bubble_reduction",
    ])?;
    let mut groups: Vec<(f64, usize, u64)> = Vec::new();
    for (k, _) in reports {
        let g = (k.rate_mult, k.turn_scale, k.seed);
        if !groups.contains(&g) {
            groups.push(g);
        }
    }
    for (rate, scale, seed) in groups {
        let group: Vec<RunReport> = reports
            .iter()
            .filter(|(k, _)| (k.rate_mult, k.turn_scale, k.seed) == (rate, scale, seed))
            .map(|(_, r)| r.clone())
            .collect();
        // the baseline run may have failed; skip the group then
        let Ok(rows) = compare(&group, baseline) else { continue };
        for r in rows {
            w.write_record([
                rate.to_string(),
                scale.to_string(),
                seed.to_string(),
                r.policy,
                r.jct_mean_s.to_string(),
                r.jct_p99_s.to_string(),
                r.throughput_jobs_per_s.to_string(),
                r.bubble_mean_s.to_string(),
                r.jct_speedup.to_string(),
                r.throughput_ratio.to_string(),
                r.bubble_reduction.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(out_dir, e))
}

fn write_plots(out_dir: &Path, entries: &[ManifestEntry], reports: &[(RunKey, RunReport)]) -> Result<()> {
    let offered = |k: &RunKey| {
        entries
            .iter()
            .find(|e| e.key == *k)
            .map(|e| e.offered_jobs_per_s)
            .unwrap_or(0.0)
    };
    let mut jct = csv_writer(&out_dir.join("jct_vs_rate.csv"))?;
    let mut thr = csv_writer(&out_dir.join("throughput_vs_rate.csv"))?;
    let mut scaling = csv_writer(&out_dir.join("turn_scaling.csv"))?;
    let mut bubbles = csv_writer(&out_dir.join("bubbles.csv"))?;
    jct.write_record(["policy", "turn_scale", "seed", "rate_mult", "jobs_per_s", "jct_mean_s"])?;
    thr.write_record(["policy", "turn_scale", "seed", "rate_mult", "jobs_per_s", "throughput_jobs_per_s"])?;
    scaling.write_record(["policy", "rate_mult", "seed", "turn_scale", "jct_mean_s"])?;
    bubbles.write_record(["policy", "rate_mult", "turn_scale", "seed", "program_id", "total_bubble_s", "jct_s"])?;
    for (k, r) in reports {
        let x = offered(k).to_string();
        let (p, rate, scale, seed) = (k.policy.to_string(), k.rate_mult.to_string(), k.turn_scale.to_string(), k.seed.to_string());
        jct.write_record([&p, &scale, &seed, &rate, &x, &r.jct_mean_s.to_string()])?;
        thr.write_record([&p, &scale, &seed, &rate, &x, &r.throughput_jobs_per_s.to_string()])?;
        scaling.write_record([&p, &rate, &seed, &scale, &r.jct_mean_s.to_string()])?;
        for o in &r.programs {
            let jct_s = o.jct.map(|v| v.to_string()).unwrap_or_default();
            bubbles.write_record([&p, &rate, &scale, &seed, &o.program_id, &o.total_bubble_s.to_string(), &jct_s])?;
        }
    }
    for w in [&mut jct, &mut thr, &mut scaling, &mut bubbles] {
        w.flush().map_err(|e| Error::io(out_dir, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::TurnSpec;

    #[test]
    fn offered_rate_of_even_arrivals() {
        let p = |t: f64| ProgramSpec {
            program_id: format!("{t}"),
            arrival_time_s: t,
            turns: vec![TurnSpec::final_turn(1, 1)],
        };
        assert_eq!(offered_rate(&[p(0.0), p(1.0), p(2.0)]), 1.0);
        assert_eq!(offered_rate(&[p(0.0)]), 0.0);
    }
}
