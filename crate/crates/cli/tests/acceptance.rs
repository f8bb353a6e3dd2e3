//! Acceptance criteria A1 to A10. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use ponsim::analytics::{gsipact_waste, ipact_waste_percent, wmax_per_onu, WasteInputs};
use ponsim::config::ScenarioConfig;
use ponsim::dba::{classify, distribute_excess, excess_pool, group_schedule, Demand, DemandSet, ExcessPolicy, GroupState};
use ponsim::flsync::{involved_fraction_curve, simulate_without_network, time_to_fraction, RoundRecord};
use ponsim::metrics::{mean_ci95, RunResult};
use ponsim::rng::RngStream;
use ponsim::runner::{run_replications, seeds};
use ponsim::sched::{GateRecord, GroupSpec, PriorityPolicy, SchedulerKind};
use ponsim::sim::{run_once, RunOptions, RunOutput};
use ponsim::time::SimTime;
use ponsim::traffic::{cbr_arrivals, variance_time_hurst, CbrSpec, ParetoOnOffSource, ParetoOnOffSpec, TrafficClass};
use ponsim::twdm::WavelengthPolicy;

/// A1: relative tolerance on the CBR rate.
const CBR_RATE_TOL: f64 = 1e-4;
/// A3: random demand sets per property.
const DBA_PROPERTY_CASES: usize = 10_000;
/// A3: oracle instances.
const DBA_ORACLE_CASES: usize = 100_000;
/// A6: FL delay ratio DWBA-FL / MW-BS must not exceed this.
const FL_RATIO_MAX: f64 = 0.5;
/// A7: simultaneous confidence level of the CDF band.
const CDF_BAND_ALPHA: f64 = 0.05;
/// A7: rounds of the network-free model.
const IDEAL_ROUNDS: u32 = 200;
/// A8: accepted Hurst range and minimum frame count.
const HURST_RANGE: (f64, f64) = (0.75, 0.85);
const HURST_MIN_FRAMES: u64 = 1_000_000;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn a1_cbr_rate() -> Verdict {
    let horizon = SimTime::from_secs(10);
    let bytes: u64 = cbr_arrivals(CbrSpec::default(), horizon).map(|f| f.payload_bytes as u64).sum();
    let rate = bytes as f64 * 8.0 / horizon.as_secs_f64();
    let err = (rate - 44.8e6).abs() / 44.8e6;
    verdict(err <= CBR_RATE_TOL, format!("{rate:.0} b/s, relative error {err:.2e}"))
}

fn a2_waste() -> Verdict {
    let ms = SimTime::from_millis(1);
    let w100 = ipact_waste_percent(ms, SimTime::from_micros(100));
    let w200 = ipact_waste_percent(ms, SimTime::from_micros(200));
    let wmax = wmax_per_onu(ms, 32, SimTime::from_micros(1)).ok();
    let gs = gsipact_waste(&WasteInputs {
        cycle: ms,
        rtt: SimTime::from_micros(200),
        n_onus: 32,
        n_group: 28,
        guard: SimTime::from_micros(1),
        wlength_percent: 100.0,
        per_onu_windows: None,
    })
    .map(|x| x.1)
    .ok();
    verdict(
        w100 == 10.0 && w200 == 20.0 && wmax == Some(SimTime(30_250)) && gs == Some(7.5),
        format!("ipact {w100}% / {w200}%, W_max {wmax:?}, gs-ipact {gs:?}%"),
    )
}

fn grants(policy: ExcessPolicy, reqs: &[(u64, u64)]) -> Vec<u64> {
    let d: DemandSet = reqs.iter().enumerate().map(|(i, &(r, w))| Demand::new(i, r, w)).collect();
    let (under, over) = classify(&d);
    let g = distribute_excess(policy, &d, &over, &excess_pool(&d, &under));
    (0..reqs.len()).map(|i| g[&i]).collect()
}

/// Independent evaluation: shares by linear search for the largest `s`
/// with `s * denominator <= pool * weight`.
fn oracle(policy: ExcessPolicy, reqs: &[(u64, u64)]) -> Vec<u64> {
    let e: u64 = reqs.iter().filter(|(r, w)| r <= w).map(|(r, w)| w - r).sum();
    let over: Vec<&(u64, u64)> = reqs.iter().filter(|(r, w)| r > w).collect();
    let sum_r: u64 = over.iter().map(|x| x.0).sum();
    let sum_x: u64 = over.iter().map(|x| x.0 - x.1).sum();
    let search = |weight: u64, denom: u64| (0..=e).rev().find(|s| s * denom <= e * weight).unwrap_or(0);
    reqs.iter()
        .map(|&(r, w)| {
            if r <= w {
                return r;
            }
            let s = match policy {
                ExcessPolicy::Dba1 => search(r, sum_r),
                ExcessPolicy::Dba2 | ExcessPolicy::Dba3 => search(1, over.len() as u64),
                ExcessPolicy::Wdba | ExcessPolicy::Wdba1 => search(r - w, sum_x),
            };
            if matches!(policy, ExcessPolicy::Dba3 | ExcessPolicy::Wdba1) {
                (w + s).min(r)
            } else {
                w + s
            }
        })
        .collect()
}

fn a3_dba() -> Verdict {
    use ExcessPolicy::*;
    let mut failures = Vec::new();
    let examples: [(ExcessPolicy, [u64; 2], [u64; 2]); 7] = [
        (Dba1, [12_000, 8_000], [7_400, 6_600]),
        (Dba2, [12_000, 8_000], [7_000, 7_000]),
        (Dba3, [12_000, 6_000], [7_000, 6_000]),
        (Wdba, [12_000, 8_000], [7_800, 6_200]),
        (Wdba1, [12_000, 8_000], [7_800, 6_200]),
        (Wdba1, [12_000, 6_000], [8_500, 5_500]),
        (Dba2, [12_000, 6_000], [7_000, 7_000]),
    ];
    for (p, r, want) in examples {
        // Two overloaded ONUs (W_max 5000) and an underloaded one leaving 4000.
        let g = grants(p, &[(r[0], 5_000), (r[1], 5_000), (1_000, 5_000)]);
        if g[..2] != want {
            failures.push(format!("{p} {r:?} -> {:?}", &g[..2]));
        }
    }
    let mut group = GroupState::new(1, vec![0, 1], Dba2);
    group.buffer(0, 2_000, 5_000);
    group.buffer(1, 9_000, 5_000);
    if group_schedule(&mut group).ok() != Some(vec![(0, 2_000), (1, 8_000)]) {
        failures.push("group DBA2 example".into());
    }

    let mut rng = RngStream::new(2024, "acceptance.dba");
    for case in 0..DBA_PROPERTY_CASES {
        let n = rng.range_inclusive(1, 40) as usize;
        let reqs: Vec<(u64, u64)> = (0..n)
            .map(|_| (rng.range_inclusive(0, 400_000), rng.range_inclusive(1, 200_000)))
            .collect();
        let e: u64 = reqs.iter().filter(|(r, w)| r <= w).map(|(r, w)| w - r).sum();
        let over: Vec<usize> = (0..n).filter(|&i| reqs[i].0 > reqs[i].1).collect();
        for p in ExcessPolicy::ALL {
            let g = grants(p, &reqs);
            for (i, &(r, w)) in reqs.iter().enumerate() {
                if p.is_controlled() && g[i] > r {
                    failures.push(format!("control {p} case {case}"));
                }
                if g[i] < r.min(w) {
                    failures.push(format!("floor {p} case {case}"));
                }
            }
            let handed: u64 = over.iter().map(|&o| g[o] - reqs[o].1).sum();
            let saturated = over.iter().all(|&o| reqs[o].0 - reqs[o].1 >= e);
            if handed > e || (!over.is_empty() && (!p.is_controlled() || saturated) && e - handed > over.len() as u64) {
                failures.push(format!("conservation {p} case {case}: pool {e}, handed {handed}"));
            }
            if p == Wdba {
                let sum_x: u128 = over.iter().map(|&o| (reqs[o].0 - reqs[o].1) as u128).sum();
                for &o in &over {
                    let x = (reqs[o].0 - reqs[o].1) as u128;
                    let share = (g[o] - reqs[o].1) as u128;
                    if share * sum_x > e as u128 * x || (share + 1) * sum_x <= e as u128 * x {
                        failures.push(format!("proportionality case {case}"));
                    }
                }
            }
        }
    }
    for case in 0..DBA_ORACLE_CASES {
        let n = rng.range_inclusive(1, 6) as usize;
        let reqs: Vec<(u64, u64)> = (0..n)
            .map(|_| (rng.range_inclusive(0, 100), rng.range_inclusive(1, 100)))
            .collect();
        for p in ExcessPolicy::ALL {
            if grants(p, &reqs) != oracle(p, &reqs) {
                failures.push(format!("oracle {p} case {case} {reqs:?}"));
            }
        }
    }
    let detail = if failures.is_empty() {
        format!(
            "7 examples + group example, {DBA_PROPERTY_CASES} property sets x 5 policies, {DBA_ORACLE_CASES} oracle instances"
        )
    } else {
        format!("{} failures, first: {}", failures.len(), failures[0])
    };
    verdict(failures.is_empty(), detail)
}

fn a4_invariants() -> Verdict {
    let mut c = ScenarioConfig::default();
    c.duration = SimTime::from_secs(60);
    match run_once(&c, 0.8, c.master_seed, RunOptions::default()) {
        Ok(out) => verdict(
            out.counters.cycle_checks > 0,
            format!(
                "{} events, {} gates, {} frames, {} cycle checks, no violation",
                out.counters.events, out.counters.gates, out.counters.frames_departed, out.counters.cycle_checks
            ),
        ),
        Err(e) => verdict(false, e.to_string()),
    }
}

fn traced(cfg: &ScenarioConfig, seed: u64) -> Result<RunOutput, String> {
    let opts = RunOptions {
        keep_gates: true,
        ..Default::default()
    };
    run_once(cfg, 0.8, seed, opts).map_err(|e| e.to_string())
}

fn lines(gates: impl Iterator<Item = GateRecord>) -> Vec<String> {
    gates.map(|g| g.to_string()).collect()
}

fn a5_equivalences() -> Verdict {
    let run = || -> Result<(bool, bool, bool, String), String> {
        let mut base = ScenarioConfig::desk_scale();
        base.duration = SimTime::from_secs(4);
        base.warmup = SimTime::from_millis(500);

        let mut plain = base.clone();
        plain.traffic.fl_enabled = false;
        plain.traffic.dc_enabled = false;
        plain.scheduler.kind = SchedulerKind::IpactLimited;
        let mut dwba = plain.clone();
        dwba.scheduler.kind = SchedulerKind::DwbaFl;
        let ga = traced(&plain, 3)?.gates;
        let gb = traced(&dwba, 3)?.gates;
        let a = !ga.is_empty() && lines(ga.into_iter()) == lines(gb.into_iter());

        let mut ipact = base.clone();
        ipact.scheduler.kind = SchedulerKind::IpactLimited;
        ipact.scheduler.wavelength_policy = WavelengthPolicy::Msd;
        let mut mos = ipact.clone();
        mos.groups = vec![GroupSpec {
            id: 1,
            members: vec![0, 2, 4, 6],
            policy: ExcessPolicy::Dba2,
        }];
        let odd = |o: RunOutput| lines(o.gates.into_iter().filter(|g| g.onu % 2 == 1));
        let b = odd(traced(&ipact, 11)?) == odd(traced(&mos, 11)?);

        let mut mw = base.clone();
        mw.scheduler.kind = SchedulerKind::MwBs;
        let eps = traced(&mw, 5)?.slice_episodes;
        let exclusive = eps.windows(2).all(|w| w[0].closed.is_some_and(|c| c <= w[1].opened));
        let conserved = eps.iter().all(|e| e.closed.is_none() || e.granted == e.demand);
        let c = !eps.is_empty() && exclusive && conserved;
        Ok((a, b, c, format!("{} slice episodes", eps.len())))
    };
    match run() {
        Ok((a, b, c, n)) => verdict(a && b && c, format!("(a) {a}, (b) {b}, (c) {c}; {n}")),
        Err(e) => verdict(false, e),
    }
}

fn mean_of(results: &[RunResult], f: impl Fn(&RunResult) -> Option<f64>) -> f64 {
    let v: Vec<f64> = results.iter().filter_map(f).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

struct DeskRuns {
    mwbs: Vec<RunResult>,
    fl_first: Vec<RunResult>,
    dc_first: Vec<RunResult>,
    warmup: SimTime,
}

fn desk_runs() -> Result<DeskRuns, String> {
    let base = ScenarioConfig::desk_scale();
    let s = seeds(&base);
    let run = |kind: SchedulerKind, policy: PriorityPolicy| {
        let mut c = base.clone();
        c.scheduler.kind = kind;
        c.scheduler.priority_policy = policy;
        run_replications(&c, 0.8, &s, None, None).map_err(|e| e.to_string())
    };
    Ok(DeskRuns {
        mwbs: run(SchedulerKind::MwBs, PriorityPolicy::DcFirst)?,
        fl_first: run(SchedulerKind::DwbaFl, PriorityPolicy::FlFirst)?,
        dc_first: run(SchedulerKind::DwbaFl, PriorityPolicy::DcFirst)?,
        warmup: base.warmup,
    })
}

fn a6_desk(runs: &DeskRuns) -> Verdict {
    let delay = |rs: &[RunResult], c: TrafficClass| mean_of(rs, |r| r.delay(c).map(|d| d.mean));
    let fl = [&runs.mwbs, &runs.fl_first, &runs.dc_first].map(|r| delay(r, TrafficClass::Fl));
    let dc = [&runs.mwbs, &runs.fl_first, &runs.dc_first].map(|r| delay(r, TrafficClass::Dc));
    let fl_ok = fl[1] <= FL_RATIO_MAX * fl[0] && fl[2] <= FL_RATIO_MAX * fl[0];
    let dc_vs_fl_first = dc[2] < dc[1];
    let dc_vs_mwbs = dc[2] < dc[0];
    verdict(
        fl_ok && dc_vs_fl_first && dc_vs_mwbs,
        format!(
            "FL mean delay MW-BS {:.4} s, FL-first {:.4} s, DC-first {:.4} s ({}); \
             DC mean delay MW-BS {:.1} us, FL-first {:.1} us, DC-first {:.1} us \
             (DC-first < FL-first: {dc_vs_fl_first}, DC-first < MW-BS: {dc_vs_mwbs})",
            fl[0],
            fl[1],
            fl[2],
            if fl_ok { "ratio met" } else { "ratio missed" },
            dc[0] * 1e6,
            dc[1] * 1e6,
            dc[2] * 1e6
        ),
    )
}

fn a7_sync(runs: &DeskRuns) -> Verdict {
    let spec = ScenarioConfig::default().traffic.fl;
    let n_clients = 32;
    let ideal = simulate_without_network(spec, n_clients, IDEAL_ROUNDS, 7);
    let grid: Vec<SimTime> = (0..=3_000).map(SimTime::from_millis).collect();
    let curve = involved_fraction_curve(&ideal, &grid);
    // Dvoretzky-Kiefer-Wolfowitz band over all pooled completion offsets.
    let n = (IDEAL_ROUNDS as usize * n_clients) as f64;
    let eps = ((2.0 / CDF_BAND_ALPHA).ln() / (2.0 * n)).sqrt();
    let worst = curve
        .iter()
        .map(|&(s, f)| (f - spec.compute_time.cdf(s)).abs())
        .fold(0.0, f64::max);
    let shape_ok = worst <= eps;

    let rounds = |rs: &[RunResult]| -> Vec<RoundRecord> {
        rs.iter()
            .flat_map(|r| r.fl_rounds.iter().filter(|x| x.start >= runs.warmup).cloned())
            .collect()
    };
    let dc = time_to_fraction(&involved_fraction_curve(&rounds(&runs.dc_first), &grid), 0.5);
    let mw = time_to_fraction(&involved_fraction_curve(&rounds(&runs.mwbs), &grid), 0.5);
    let order_ok = matches!((dc, mw), (Some(a), Some(b)) if a < b);
    verdict(
        shape_ok && order_ok,
        format!(
            "network-free curve max deviation {worst:.4} (band {eps:.4}); 50% involved at S = {} (DC-first) vs {} (MW-BS)",
            dc.map_or("never".into(), |s| s.to_string()),
            mw.map_or("never".into(), |s| s.to_string())
        ),
    )
}

fn a8_hurst() -> Verdict {
    let cfg = ScenarioConfig::default();
    let rates = match cfg.onu_rates(0.8) {
        Ok(r) => r[0],
        Err(e) => return verdict(false, e.to_string()),
    };
    let horizon = SimTime::from_secs(60);
    let bin = SimTime::from_millis(1);
    let mut series = vec![0f64; (horizon.as_nanos() / bin.as_nanos()) as usize];
    let mut frames = 0u64;
    for (class, rate) in [(TrafficClass::Ds, rates.ds_bps), (TrafficClass::Be, rates.be_bps)] {
        let spec = ParetoOnOffSpec {
            target_rate_bps: rate,
            ..cfg.traffic.pareto
        };
        let name = format!("traffic.{}.0", class.as_str().to_ascii_lowercase());
        let src = match ParetoOnOffSource::new(spec, 0, class, RngStream::new(cfg.master_seed, &name), horizon) {
            Ok(s) => s,
            Err(e) => return verdict(false, e.to_string()),
        };
        for f in src {
            frames += 1;
            if let Some(x) = series.get_mut((f.arrival.as_nanos() / bin.as_nanos()) as usize) {
                *x += f.payload_bytes as f64;
            }
        }
    }
    let levels: Vec<usize> = (0..14).map(|k| 1 << k).collect();
    let h = variance_time_hurst(&series, &levels);
    verdict(
        frames >= HURST_MIN_FRAMES && (HURST_RANGE.0..=HURST_RANGE.1).contains(&h),
        format!("H = {h:.3} over {frames} frames (1 ms bins, levels 1..8192)"),
    )
}

fn a9_determinism() -> Verdict {
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return verdict(false, e.to_string()),
    };
    let run = |out: &Path| {
        Command::new(env!("CARGO_BIN_EXE_ponsim"))
            .args(["run", "--config", "default", "--seed", "7", "--duration", "1s", "--warmup", "200ms"])
            .args(["--loads", "0.8", "--replications", "2", "--out"])
            .arg(out)
            .output()
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for p in [&a, &b] {
        match run(p) {
            Ok(o) if o.status.success() => {}
            Ok(o) => return verdict(false, String::from_utf8_lossy(&o.stderr).into_owned()),
            Err(e) => return verdict(false, e.to_string()),
        }
    }
    let read = |d: &Path| -> BTreeMap<String, Vec<u8>> {
        std::fs::read_dir(d)
            .map(|it| {
                it.flatten()
                    .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap_or_default()))
                    .collect()
            })
            .unwrap_or_default()
    };
    let (fa, fb) = (read(&a), read(&b));
    verdict(
        fa.len() >= 3 && fa == fb,
        format!("{} files compared (seed 7, 1 s runs, 2 replications)", fa.len()),
    )
}

fn a10_first_fit() -> Verdict {
    let mut base = ScenarioConfig::default();
    base.duration = SimTime::from_secs(8);
    base.warmup = SimTime::from_secs(2);
    base.replications = 3;
    let s = seeds(&base);
    let mut stats: BTreeMap<(String, TrafficClass), (f64, f64)> = BTreeMap::new();
    for wl in WavelengthPolicy::ALL {
        let mut c = base.clone();
        c.scheduler.wavelength_policy = wl;
        let rs = match run_replications(&c, 0.8, &s, None, None) {
            Ok(r) => r,
            Err(e) => return verdict(false, e.to_string()),
        };
        for class in [TrafficClass::Fl, TrafficClass::Dc] {
            let means: Vec<f64> = rs.iter().filter_map(|r| r.delay(class).map(|d| d.mean)).collect();
            match mean_ci95(&means) {
                Ok(m) => stats.insert((wl.to_string(), class), m),
                Err(e) => return verdict(false, e.to_string()),
            };
        }
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for class in [TrafficClass::Fl, TrafficClass::Dc] {
        let (ff, ff_hw) = stats[&(WavelengthPolicy::Ff.to_string(), class)];
        for other in [WavelengthPolicy::Ssd, WavelengthPolicy::Msd] {
            let (m, hw) = stats[&(other.to_string(), class)];
            ok &= ff - ff_hw <= m + hw;
        }
        let (ssd, msd) = (stats[&(WavelengthPolicy::Ssd.to_string(), class)].0, stats[&(WavelengthPolicy::Msd.to_string(), class)].0);
        parts.push(format!("{class} FF {:.1} us, SSD {:.1} us, MSD {:.1} us", ff * 1e6, ssd * 1e6, msd * 1e6));
    }
    verdict(ok, format!("{} (3 x 8 s replications)", parts.join("; ")))
}

fn main() -> ExitCode {
    let mut failed = Vec::new();
    let mut report = |id: &str, title: &str, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = f();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("{status} {id} {title}: {} [{:.1} s]", v.detail, t.elapsed().as_secs_f64());
        if !v.pass {
            failed.push(id.to_string());
        }
    };
    report("A1", "CBR rate", &mut a1_cbr_rate);
    report("A2", "analytic waste", &mut a2_waste);
    report("A3", "DBA family", &mut a3_dba);
    report("A4", "protocol invariants, 60 s default run", &mut a4_invariants);
    report("A5", "scheduler equivalences", &mut a5_equivalences);
    let t = Instant::now();
    let desk = desk_runs();
    println!("     desk-scale runs for A6/A7 took {:.1} s", t.elapsed().as_secs_f64());
    match &desk {
        Ok(runs) => {
            report("A6", "desk-scale delay ordering", &mut || a6_desk(runs));
            report("A7", "synchronization curves", &mut || a7_sync(runs));
        }
        Err(e) => {
            report("A6", "desk-scale delay ordering", &mut || verdict(false, e.clone()));
            report("A7", "synchronization curves", &mut || verdict(false, e.clone()));
        }
    }
    report("A8", "self-similarity", &mut a8_hurst);
    report("A9", "determinism", &mut a9_determinism);
    report("A10", "first-fit dominance", &mut a10_first_fit);
    if failed.is_empty() {
        println!("all acceptance criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
