//! Replications, load sweeps and result files.
//!
//! Replication `r` of a load point runs with seed `master_seed + r`, so the
//! same seeds (and with them the same traffic) are reused across load
//! points and scheduler variants. Replications are independent engines;
//! with the `parallel` feature they run on a rayon pool and are merged in
//! seed order.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::error::SimError;
use crate::metrics::{aggregate_replications, write_csv, write_summary, RunResult, SummaryRow};
use crate::sched::{PriorityPolicy, SchedulerKind};
use crate::sim::{run_once, RunOptions};
use crate::twdm::WavelengthPolicy;

pub fn replication_seed(master: u64, r: u32) -> u64 {
    master.wrapping_add(r as u64)
}

pub fn seeds(cfg: &ScenarioConfig) -> Vec<u64> {
    (0..cfg.replications).map(|r| replication_seed(cfg.master_seed, r)).collect()
}

/// Trace verbosity, from `PONSIM_LOG`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LogMode {
    #[default]
    Off,
    Gates,
    Frames,
}

impl std::str::FromStr for LogMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "" | "off" => Ok(LogMode::Off),
            "gates" => Ok(LogMode::Gates),
            "frames" => Ok(LogMode::Frames),
            _ => Err(format!("PONSIM_LOG must be off, gates or frames, got {s:?}")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("cannot write output in {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RunnerError {
    /// 1 for a failed run, 2 for an output problem.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Sim(_) => 1,
            RunnerError::Output { .. } => 2,
        }
    }
}

fn out_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Output {
        path: path.to_path_buf(),
        source,
    }
}

/// Trace destination of one replication, if tracing is on.
#[derive(Clone, Debug)]
pub struct TraceTarget {
    pub dir: PathBuf,
    pub mode: LogMode,
    pub stem: String,
}

fn options_for(trace: Option<&TraceTarget>, seed: u64) -> Result<RunOptions, SimError> {
    let mut opts = RunOptions::default();
    if let Some(t) = trace {
        let open = |kind: &str| -> Result<Box<dyn Write + Send>, SimError> {
            let f = File::create(t.dir.join(format!("{kind}_{}_seed{seed}.csv", t.stem)))?;
            Ok(Box::new(BufWriter::new(f)))
        };
        match t.mode {
            LogMode::Off => {}
            LogMode::Gates => opts.gate_writer = Some(open("gates")?),
            LogMode::Frames => {
                opts.gate_writer = Some(open("gates")?);
                opts.frame_writer = Some(open("frames")?);
            }
        }
    }
    Ok(opts)
}

fn run_one(cfg: &ScenarioConfig, load: f64, seed: u64, trace: Option<&TraceTarget>) -> Result<RunResult, SimError> {
    Ok(run_once(cfg, load, seed, options_for(trace, seed)?)?.result)
}

/// Runs the replications one after another.
pub fn run_sequential(
    cfg: &ScenarioConfig,
    load: f64,
    seeds: &[u64],
    trace: Option<&TraceTarget>,
) -> Result<Vec<RunResult>, SimError> {
    seeds.iter().map(|&s| run_one(cfg, load, s, trace)).collect()
}

/// Runs the replications on a rayon pool of `workers` threads (all cores
/// when `None`). Results come back in seed order.
#[cfg(feature = "parallel")]
pub fn run_parallel(
    cfg: &ScenarioConfig,
    load: f64,
    seeds: &[u64],
    workers: Option<usize>,
    trace: Option<&TraceTarget>,
) -> Result<Vec<RunResult>, SimError> {
    use rayon::prelude::*;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder.build().expect("thread pool");
    pool.install(|| seeds.par_iter().map(|&s| run_one(cfg, load, s, trace)).collect())
}

/// Parallel when the `parallel` feature is on, sequential otherwise.
pub fn run_replications(
    cfg: &ScenarioConfig,
    load: f64,
    seeds: &[u64],
    workers: Option<usize>,
    trace: Option<&TraceTarget>,
) -> Result<Vec<RunResult>, SimError> {
    #[cfg(feature = "parallel")]
    {
        if workers != Some(1) {
            return run_parallel(cfg, load, seeds, workers, trace);
        }
    }
    let _ = workers;
    run_sequential(cfg, load, seeds, trace)
}

/// File stem of one scenario point.
pub fn point_stem(cfg: &ScenarioConfig, load: f64) -> String {
    let s = cfg.scheduler_config();
    format!("{}_{}_{}_{}_load{}", cfg.name, s.kind, s.policy_label(), s.wavelength_policy, load)
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub version: String,
    pub parallel: bool,
    pub config_hashes: Vec<String>,
    pub configs: Vec<ScenarioConfig>,
    pub seeds: Vec<u64>,
    pub overrides: BTreeMap<String, String>,
    pub files: Vec<String>,
}

/// Results of every scenario point of a run or sweep.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub results: Vec<RunResult>,
    pub summary: Vec<SummaryRow>,
    pub files: Vec<PathBuf>,
}

/// Runs every load point of every configuration and writes one CSV per
/// point, `summary.csv` (with two or more replications) and
/// `manifest.json` into `out_dir`.
pub fn execute(
    configs: &[ScenarioConfig],
    out_dir: &Path,
    overrides: BTreeMap<String, String>,
    workers: Option<usize>,
    log: LogMode,
) -> Result<Outcome, RunnerError> {
    fs::create_dir_all(out_dir).map_err(out_err(out_dir))?;
    let probe = out_dir.join(".ponsim-write-test");
    File::create(&probe).map_err(out_err(out_dir))?;
    let _ = fs::remove_file(&probe);

    let mut all = Vec::new();
    let mut summary = Vec::new();
    let mut files = Vec::new();
    for cfg in configs {
        let seeds = seeds(cfg);
        for &load in &cfg.load_sweep {
            let stem = point_stem(cfg, load);
            let trace = (log != LogMode::Off).then(|| TraceTarget {
                dir: out_dir.to_path_buf(),
                mode: log,
                stem: stem.clone(),
            });
            let results = run_replications(cfg, load, &seeds, workers, trace.as_ref())?;
            let rows: Vec<_> = results.iter().flat_map(|r| r.rows()).collect();
            let path = out_dir.join(format!("{stem}.csv"));
            let mut w = BufWriter::new(File::create(&path).map_err(out_err(&path))?);
            write_csv(&mut w, &rows).and_then(|_| w.flush()).map_err(out_err(&path))?;
            files.push(path);
            if results.len() >= 2 {
                summary.extend(aggregate_replications(&results).expect("two or more replications"));
            }
            all.extend(results);
        }
    }
    if !summary.is_empty() {
        let path = out_dir.join("summary.csv");
        let mut w = BufWriter::new(File::create(&path).map_err(out_err(&path))?);
        write_summary(&mut w, &summary).and_then(|_| w.flush()).map_err(out_err(&path))?;
        files.push(path);
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        parallel: cfg!(feature = "parallel"),
        config_hashes: configs.iter().map(|c| c.hash()).collect(),
        configs: configs.to_vec(),
        seeds: configs.first().map(seeds).unwrap_or_default(),
        overrides,
        files: files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
    };
    let path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(out_err(&path))?;
    files.push(path);
    Ok(Outcome {
        results: all,
        summary,
        files,
    })
}

/// Scheduler variants of a sweep: every kind, wavelength policy and, for
/// DWBA-FL only, priority policy.
pub fn sweep_variants(
    base: &ScenarioConfig,
    kinds: &[SchedulerKind],
    policies: &[PriorityPolicy],
    wavelengths: &[WavelengthPolicy],
) -> Vec<ScenarioConfig> {
    let mut out = Vec::new();
    for &kind in kinds {
        for &wl in wavelengths {
            let pols: Vec<PriorityPolicy> = if kind == SchedulerKind::DwbaFl {
                policies.to_vec()
            } else {
                vec![base.scheduler.priority_policy]
            };
            for p in pols {
                let mut c = base.clone();
                c.scheduler.kind = kind;
                c.scheduler.wavelength_policy = wl;
                c.scheduler.priority_policy = p;
                out.push(c);
            }
        }
    }
    out
}
