//! Delay, cycle, utilization and FL statistics; result rows and the
//! replication summary.
//!
//! Frame delay is end to end: arrival at the ONU queue to the last bit at
//! the OLT, so it includes the one-way propagation, queueing and
//! transmission. Samples whose frame arrived during the warmup are ignored.
//! Means use exact sums; percentiles come from a uniform reservoir sample
//! (or every sample in full-trace mode) with the nearest-rank rule.

use std::collections::BTreeMap;
use std::io::{self, Write};

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::StatsError;
use crate::flsync::RoundRecord;
use crate::rng::RngStream;
use crate::sched::SchedulerKind;
use crate::time::SimTime;
use crate::traffic::TrafficClass;
use crate::twdm::WavelengthPolicy;

pub const PERCENTILES: [u8; 5] = [10, 30, 50, 80, 100];
pub const DEFAULT_RESERVOIR: usize = 100_000;

/// Nearest-rank percentiles: the `ceil(p/100 * n)`-th smallest sample.
pub fn percentile_set(samples: &[f64]) -> Result<BTreeMap<u8, f64>, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptySamples);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(PERCENTILES
        .iter()
        .map(|&p| {
            let rank = (p as usize * n).div_ceil(100).max(1);
            (p, sorted[rank - 1])
        })
        .collect())
}

/// Uniform fixed-size sample of a stream (Algorithm R).
#[derive(Clone, Debug)]
pub struct Reservoir {
    capacity: usize,
    seen: u64,
    samples: Vec<f64>,
    rng: RngStream,
}

impl Reservoir {
    pub fn new(capacity: usize, rng: RngStream) -> Self {
        assert!(capacity > 0);
        Reservoir {
            capacity,
            seen: 0,
            samples: Vec::new(),
            rng,
        }
    }

    pub fn push(&mut self, x: f64) {
        self.seen += 1;
        if self.samples.len() < self.capacity {
            self.samples.push(x);
        } else {
            let j = self.rng.range_inclusive(0, self.seen - 1);
            if (j as usize) < self.capacity {
                self.samples[j as usize] = x;
            }
        }
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DelayStats {
    pub class: TrafficClass,
    pub count: u64,
    /// Seconds.
    pub mean: f64,
    pub percentiles: BTreeMap<u8, f64>,
    pub warmup_excluded: SimTime,
}

/// Streaming delay collector for one class.
#[derive(Clone, Debug)]
pub struct DelayCollector {
    class: TrafficClass,
    warmup: SimTime,
    count: u64,
    sum_ns: u128,
    reservoir: Reservoir,
    full: Option<Vec<f64>>,
}

impl DelayCollector {
    pub fn new(class: TrafficClass, warmup: SimTime, reservoir: usize, full_trace: bool, seed: u64) -> Self {
        DelayCollector {
            class,
            warmup,
            count: 0,
            sum_ns: 0,
            reservoir: Reservoir::new(reservoir, RngStream::new(seed, &format!("metrics.reservoir.{class}"))),
            full: full_trace.then(Vec::new),
        }
    }

    /// Records a frame that arrived at `arrival` and left after `delay`.
    pub fn record_frame(&mut self, arrival: SimTime, delay: SimTime) {
        if arrival < self.warmup {
            return;
        }
        self.count += 1;
        self.sum_ns += delay.as_nanos() as u128;
        let s = delay.as_secs_f64();
        match &mut self.full {
            Some(v) => v.push(s),
            None => self.reservoir.push(s),
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Exact mean in seconds.
    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum_ns as f64 / self.count as f64 / 1e9)
    }

    pub fn stats(&self) -> Option<DelayStats> {
        let mean = self.mean()?;
        let samples = self.full.as_deref().unwrap_or(self.reservoir.samples());
        Some(DelayStats {
            class: self.class,
            count: self.count,
            mean,
            percentiles: percentile_set(samples).ok()?,
            warmup_excluded: self.warmup,
        })
    }
}

/// Outcome of one replication at one load point.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub scenario: String,
    pub seed: u64,
    pub load: f64,
    pub scheduler: SchedulerKind,
    pub policy: String,
    pub wavelength_policy: WavelengthPolicy,
    /// Indexed by `TrafficClass::index`.
    pub delays: [Option<DelayStats>; 4],
    pub drops: [u64; 4],
    /// Mean report-to-report spacing over all ONUs, seconds.
    pub mean_cycle_s: Option<f64>,
    /// Busy fraction per wavelength after the warmup.
    pub utilization: Vec<f64>,
    /// Upload completion minus release, seconds, for every client upload
    /// of a round started after the warmup that completed.
    pub fl_round_delays_s: Vec<f64>,
    /// Involved fraction of each round started after the warmup.
    pub involved_fractions: Vec<f64>,
    pub fl_rounds: Vec<RoundRecord>,
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub scenario: String,
    pub seed: u64,
    pub load: f64,
    pub scheduler: String,
    pub policy: String,
    pub wavelength_policy: String,
    pub class: String,
    pub metric: String,
    pub value: f64,
}

pub const CSV_HEADER: &str = "scenario,seed,load,scheduler,policy,wavelength_policy,class,metric,value";

impl RunResult {
    pub fn delay(&self, class: TrafficClass) -> Option<&DelayStats> {
        self.delays[class.index()].as_ref()
    }

    pub fn mean_fl_round_delay_s(&self) -> Option<f64> {
        mean(&self.fl_round_delays_s)
    }

    pub fn mean_involved_fraction(&self) -> Option<f64> {
        mean(&self.involved_fractions)
    }

    pub fn rows(&self) -> Vec<ResultRow> {
        let mut rows = Vec::new();
        let mut push = |class: &str, metric: String, value: f64| {
            rows.push(ResultRow {
                scenario: self.scenario.clone(),
                seed: self.seed,
                load: self.load,
                scheduler: self.scheduler.as_str().to_string(),
                policy: self.policy.clone(),
                wavelength_policy: self.wavelength_policy.as_str().to_string(),
                class: class.to_string(),
                metric,
                value,
            })
        };
        for class in TrafficClass::ALL {
            if let Some(d) = self.delay(class) {
                push(class.as_str(), "mean_delay_s".into(), d.mean);
                for (p, v) in &d.percentiles {
                    push(class.as_str(), format!("p{p}"), *v);
                }
            }
            push(class.as_str(), "drop_count".into(), self.drops[class.index()] as f64);
        }
        for (k, u) in self.utilization.iter().enumerate() {
            push("ALL", format!("util_λ{k}"), *u);
        }
        if let Some(c) = self.mean_cycle_s {
            push("ALL", "mean_cycle_s".into(), c);
        }
        if let Some(m) = self.mean_fl_round_delay_s() {
            push("FL", "fl_round_delay_s".into(), m);
            if let Ok(ps) = percentile_set(&self.fl_round_delays_s) {
                for (p, v) in ps {
                    push("FL", format!("fl_round_p{p}"), v);
                }
            }
        }
        if let Some(m) = self.mean_involved_fraction() {
            push("FL", "involved_fraction".into(), m);
        }
        rows
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn write_csv<W: Write>(out: &mut W, rows: &[ResultRow]) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.scenario, r.seed, r.load, r.scheduler, r.policy, r.wavelength_policy, r.class, r.metric, r.value
        )?;
    }
    Ok(())
}

/// Mean and Student-t 95% half-width.
pub fn mean_ci95(values: &[f64]) -> Result<(f64, f64), StatsError> {
    let n = values.len();
    if n < 2 {
        return Err(StatsError::InsufficientReplications(n));
    }
    let m = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("valid degrees of freedom")
        .inverse_cdf(0.975);
    Ok((m, t * (var / n as f64).sqrt()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    pub load: f64,
    pub scheduler: String,
    pub policy: String,
    pub wavelength_policy: String,
    pub class: String,
    pub metric: String,
    pub mean: f64,
    pub ci95_half_width: f64,
    pub n: usize,
}

pub const SUMMARY_HEADER: &str = "scenario,load,scheduler,policy,wavelength_policy,class,metric,mean,ci95_half_width,n";

/// Per metric, the mean over replications and its 95% half-width. Rows are
/// grouped by scenario point, class and metric in first-seen order; a
/// metric missing from some replications is summarized over those that
/// have it and skipped if fewer than two do.
pub fn aggregate_replications(results: &[RunResult]) -> Result<Vec<SummaryRow>, StatsError> {
    if results.len() < 2 {
        return Err(StatsError::InsufficientReplications(results.len()));
    }
    type Key = (String, String, String, String, String, String, String);
    let mut order: Vec<(Key, f64)> = Vec::new();
    let mut values: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for r in results {
        for row in r.rows() {
            let key = (
                row.scenario,
                row.load.to_string(),
                row.scheduler,
                row.policy,
                row.wavelength_policy,
                row.class,
                row.metric,
            );
            let v = values.entry(key.clone()).or_default();
            if v.is_empty() {
                order.push((key, row.load));
            }
            v.push(row.value);
        }
    }
    let mut out = Vec::new();
    for (key, load) in order {
        let v = &values[&key];
        let Ok((mean, hw)) = mean_ci95(v) else { continue };
        let (scenario, _, scheduler, policy, wavelength_policy, class, metric) = key;
        out.push(SummaryRow {
            scenario,
            load,
            scheduler,
            policy,
            wavelength_policy,
            class,
            metric,
            mean,
            ci95_half_width: hw,
            n: v.len(),
        });
    }
    Ok(out)
}

pub fn write_summary<W: Write>(out: &mut W, rows: &[SummaryRow]) -> io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.load,
            r.scheduler,
            r.policy,
            r.wavelength_policy,
            r.class,
            r.metric,
            r.mean,
            r.ci95_half_width,
            r.n
        )?;
    }
    Ok(())
}

/// Finds a summary value.
pub fn summary_value<'a>(rows: &'a [SummaryRow], class: &str, metric: &str) -> Option<&'a SummaryRow> {
    rows.iter().find(|r| r.class == class && r.metric == metric)
}
