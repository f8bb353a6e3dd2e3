use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ponsim::analytics::waste_table;
use ponsim::config::ScenarioConfig;
use ponsim::runner::{execute, sweep_variants, LogMode};
use ponsim::sched::{PriorityPolicy, SchedulerKind};
use ponsim::selftest::{render, selftest};
use ponsim::time::SimTime;
use ponsim::twdm::WavelengthPolicy;

#[derive(Parser)]
#[command(name = "ponsim", version, about = "Upstream PON scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every load point of one scenario.
    Run(RunArgs),
    /// Run the cartesian product of scheduler variants.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated scheduler kinds.
        #[arg(long, value_delimiter = ',', default_values_t = SchedulerKind::ALL.map(|k| k.to_string()))]
        schedulers: Vec<String>,
        /// Comma-separated priority policies (DWBA_FL only).
        #[arg(long, value_delimiter = ',', default_values_t = PriorityPolicy::ALL.map(|k| k.to_string()))]
        policies: Vec<String>,
        /// Comma-separated wavelength policies.
        #[arg(long, value_delimiter = ',', default_values_t = WavelengthPolicy::ALL.map(|k| k.to_string()))]
        wavelength_policies: Vec<String>,
    },
    /// Print the wasted-bandwidth table as CSV.
    Waste(WasteArgs),
    /// Run the built-in oracle checks.
    Selftest,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario TOML file, or `default` for the built-in scenario.
    #[arg(long, default_value = "default")]
    config: String,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Master seed; replication r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<u32>,
    /// Worker threads for replications (1 runs sequentially).
    #[arg(long)]
    workers: Option<usize>,
    /// Simulated duration, e.g. `20s`.
    #[arg(long)]
    duration: Option<SimTime>,
    /// Warmup excluded from statistics, e.g. `1s`.
    #[arg(long)]
    warmup: Option<SimTime>,
    /// Comma-separated loads replacing the configured sweep.
    #[arg(long, value_delimiter = ',')]
    loads: Option<Vec<f64>>,
}

#[derive(Args)]
struct WasteArgs {
    #[arg(long, default_value = "1ms")]
    cycle: SimTime,
    #[arg(long, default_value_t = 32)]
    n_onus: usize,
    #[arg(long, default_value = "0.624us")]
    guard: SimTime,
    /// Window of each non-group ONU as a percentage of W_max.
    #[arg(long, default_value_t = 100.0)]
    wlength_percent: f64,
    #[arg(long, value_delimiter = ',', default_value = "100us,150us,200us")]
    rtts: Vec<SimTime>,
    #[arg(long, value_delimiter = ',', default_value = "0,16,24,28,30,31")]
    groups: Vec<usize>,
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("ponsim: {msg}");
    ExitCode::from(code)
}

fn load_config(args: &RunArgs) -> Result<(ScenarioConfig, BTreeMap<String, String>), String> {
    let mut cfg = if args.config == "default" {
        ScenarioConfig::default()
    } else {
        ScenarioConfig::load(&PathBuf::from(&args.config)).map_err(|e| format!("{}: {e}", args.config))?
    };
    let mut overrides = BTreeMap::new();
    if let Some(s) = args.seed {
        cfg.master_seed = s;
        overrides.insert("seed".into(), s.to_string());
    }
    if let Some(r) = args.replications {
        cfg.replications = r;
        overrides.insert("replications".into(), r.to_string());
    }
    if let Some(d) = args.duration {
        cfg.duration = d;
        overrides.insert("duration".into(), d.to_string());
    }
    if let Some(w) = args.warmup {
        cfg.warmup = w;
        overrides.insert("warmup".into(), w.to_string());
    }
    if let Some(l) = &args.loads {
        cfg.load_sweep = l.clone();
        overrides.insert("loads".into(), format!("{l:?}"));
    }
    if let Some(w) = args.workers {
        overrides.insert("workers".into(), w.to_string());
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok((cfg, overrides))
}

fn parse_list<T: std::str::FromStr<Err = String>>(items: &[String]) -> Result<Vec<T>, String> {
    items.iter().map(|s| s.parse()).collect()
}

fn run(configs: Vec<ScenarioConfig>, args: &RunArgs, overrides: BTreeMap<String, String>) -> ExitCode {
    let log: LogMode = match std::env::var("PONSIM_LOG").unwrap_or_default().parse() {
        Ok(l) => l,
        Err(e) => return fail(1, e),
    };
    match execute(&configs, &args.out, overrides, args.workers, log) {
        Ok(out) => {
            let points = out.files.iter().filter(|p| p.extension().is_some_and(|e| e == "csv")).count();
            println!(
                "{} replications, {} files written to {}",
                out.results.len(),
                points,
                args.out.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.exit_code() as u8, e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => match load_config(&args) {
            Ok((cfg, overrides)) => run(vec![cfg], &args, overrides),
            Err(e) => fail(1, e),
        },
        Command::Sweep {
            run: args,
            schedulers,
            policies,
            wavelength_policies,
        } => {
            let (cfg, overrides) = match load_config(&args) {
                Ok(x) => x,
                Err(e) => return fail(1, e),
            };
            let lists = (|| {
                Ok::<_, String>((
                    parse_list::<SchedulerKind>(&schedulers)?,
                    parse_list::<PriorityPolicy>(&policies)?,
                    parse_list::<WavelengthPolicy>(&wavelength_policies)?,
                ))
            })();
            match lists {
                Ok((k, p, w)) => run(sweep_variants(&cfg, &k, &p, &w), &args, overrides),
                Err(e) => fail(1, e),
            }
        }
        Command::Waste(w) => match waste_table(w.cycle, w.n_onus, w.guard, w.wlength_percent, &w.rtts, &w.groups) {
            Ok(table) => {
                print!("{table}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(1, e),
        },
        Command::Selftest => {
            let results = selftest();
            print!("{}", render(&results));
            if results.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}
