//! One replication: the event loop tying traffic, ONUs, the OLT scheduler,
//! FL rounds and statistics together, with protocol invariants checked as
//! the run progresses.
//!
//! Event flow per ONU:
//!
//! 1. `Report` reaches the OLT, which sizes and places the next burst and
//!    sends the GATE at once.
//! 2. `TxStart` fires at the ONU when a granted window opens (the window's
//!    OLT start minus the one-way delay). Arrivals up to that instant are
//!    queued, the window is filled and every frame's departure is fixed.
//! 3. `TxEnd` fires when the report-carrying window closes at the ONU. The
//!    queue snapshot goes out and reaches the OLT one one-way delay later.
//!
//! At `t = 0` every ONU sends an empty report, in index order.

use std::io::Write;

use crate::config::ScenarioConfig;
use crate::error::{ConfigError, InvariantViolation, SimError};
use crate::flsync::{FlCoordinator, RoundRecord};
use crate::kernel::Kernel;
use crate::metrics::{DelayCollector, RunResult};
use crate::pon::{transmit, Departure, GateMsg, OnuState, ReportMsg, REPORT_BYTES};
use crate::rng::RngStream;
use crate::sched::{GateRecord, OnuInfo, Olt, SchedError, SchedulerConfig, SliceEpisode};
use crate::time::SimTime;
use crate::traffic::{
    fl_round_frames, ArrivalSource, CbrSource, Frame, ParetoOnOffSource, ParetoOnOffSpec, TrafficClass,
};
use crate::twdm::GrantPurpose;

/// What to keep besides the statistics.
#[derive(Default)]
pub struct RunOptions {
    /// Keep every GATE window in memory.
    pub keep_gates: bool,
    /// Keep every departed frame in memory.
    pub keep_frames: bool,
    /// Stream GATE windows as CSV.
    pub gate_writer: Option<Box<dyn Write + Send>>,
    /// Stream departed frames as CSV.
    pub frame_writer: Option<Box<dyn Write + Send>>,
}

/// A frame that left the PON.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameRecord {
    pub onu: usize,
    pub class: TrafficClass,
    pub id: u64,
    pub arrival: SimTime,
    pub departure: SimTime,
    pub wavelength: usize,
}

impl FrameRecord {
    pub const CSV_HEADER: &'static str = "onu,class,id,arrival_ns,departure_ns,wavelength";
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunCounters {
    pub events: u64,
    pub gates: u64,
    pub frames_departed: u64,
    pub cycle_checks: u64,
}

pub struct RunOutput {
    pub result: RunResult,
    pub gates: Vec<GateRecord>,
    pub frames: Vec<FrameRecord>,
    pub slice_episodes: Vec<SliceEpisode>,
    pub counters: RunCounters,
}

#[derive(Clone, Copy, Debug)]
enum Ev {
    Report(ReportMsg),
    TxStart { onu: u16, grant: u8 },
    TxEnd { onu: u16 },
    FlRoundStart,
    FlRelease { onu: u16, round: u32 },
    FlAggregate { round: u32 },
}

struct Onu {
    state: OnuState,
    dc: Option<CbrSource>,
    ds: Option<ParetoOnOffSource>,
    be: Option<ParetoOnOffSource>,
    next_id: [u64; 4],
    generated: [u64; 4],
}

impl Onu {
    fn admit(state: &mut OnuState, next_id: &mut [u64; 4], generated: &mut [u64; 4], mut f: Frame) {
        let c = f.class.index();
        f.id = next_id[c];
        next_id[c] += 1;
        generated[c] += 1;
        // Drops are counted by the ONU.
        let _ = state.enqueue(f);
    }

    /// Queues every arrival up to `t`.
    fn materialize(&mut self, t: SimTime) {
        let Onu {
            state,
            dc,
            ds,
            be,
            next_id,
            generated,
        } = self;
        if let Some(s) = dc {
            s.drain_until(t, |f| Onu::admit(state, next_id, generated, f));
        }
        if let Some(s) = ds {
            s.drain_until(t, |f| Onu::admit(state, next_id, generated, f));
        }
        if let Some(s) = be {
            s.drain_until(t, |f| Onu::admit(state, next_id, generated, f));
        }
    }
}

/// Last burst seen on a channel, for the guard check.
#[derive(Clone, Copy, Debug)]
struct LastBurst {
    end: SimTime,
    gate: u64,
}

pub struct Simulation {
    cfg: ScenarioConfig,
    sched: SchedulerConfig,
    load: f64,
    seed: u64,
    horizon: SimTime,
    warmup: SimTime,
    line_rate: u64,
    olt: Olt,
    onus: Vec<Onu>,
    fl: Option<FlCoordinator>,
    delays: [DelayCollector; 4],
    last_report: Vec<Option<SimTime>>,
    cycle_sum: SimTime,
    cycle_count: u64,
    cycle_bound: SimTime,
    slice_bytes: u64,
    busy: Vec<SimTime>,
    last_burst: Vec<Option<LastBurst>>,
    opts: RunOptions,
    gates: Vec<GateRecord>,
    frames: Vec<FrameRecord>,
    scratch: Vec<Frame>,
    departures: Vec<Departure>,
    counters: RunCounters,
}

fn violation(name: &'static str, at: SimTime, detail: String) -> SimError {
    SimError::Invariant(InvariantViolation { name, at, detail })
}

fn sched_err(e: SchedError, at: SimTime) -> SimError {
    match e {
        SchedError::Twdm(t) => SimError::Twdm(t),
        SchedError::Dba(d) => violation("group_complete", at, d.to_string()),
    }
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig, load: f64, seed: u64, opts: RunOptions) -> Result<Self, SimError> {
        cfg.validate()?;
        if !(load > 0.0 && load.is_finite()) {
            return Err(ConfigError::Validation(format!("load must be positive, got {load}")).into());
        }
        let sched = cfg.scheduler_config();
        let horizon = cfg.duration;
        let rtts = cfg.draw_rtts(seed);
        let profiles = cfg.sla_profiles();
        let rates = cfg.onu_rates(load)?;
        let t = &cfg.traffic;

        let mut onus = Vec::with_capacity(cfg.n_onus);
        for i in 0..cfg.n_onus {
            let mut state = OnuState::new(i, rtts[i], profiles[i]);
            state.buffer_bytes = cfg.buffer_bytes;
            let pareto = |class: TrafficClass, rate: f64| -> Result<Option<ParetoOnOffSource>, ConfigError> {
                if rate <= 0.0 {
                    return Ok(None);
                }
                let spec = ParetoOnOffSpec {
                    target_rate_bps: rate,
                    ..t.pareto
                };
                let rng = RngStream::new(seed, &format!("traffic.{}.{i}", class.as_str().to_ascii_lowercase()));
                ParetoOnOffSource::new(spec, i, class, rng, horizon).map(Some)
            };
            onus.push(Onu {
                state,
                dc: t.dc_enabled.then(|| CbrSource::new(t.cbr, i, horizon)),
                ds: pareto(TrafficClass::Ds, rates[i].ds_bps)?,
                be: pareto(TrafficClass::Be, rates[i].be_bps)?,
                next_id: [0; 4],
                generated: [0; 4],
            });
        }

        let info: Vec<OnuInfo> = (0..cfg.n_onus)
            .map(|i| OnuInfo {
                rtt: rtts[i],
                wmax: profiles[i].wmax_bytes,
                group: profiles[i].group,
            })
            .collect();
        let olt = Olt::new(sched, cfg.n_wavelengths, cfg.line_rate_per_wavelength, info, &cfg.groups);
        let slice_bytes = olt.slice().slice_bytes_per_cycle;

        let clients = cfg.fl_clients();
        let fl = (clients > 0).then(|| {
            FlCoordinator::new(t.fl, (0..clients).collect(), cfg.n_onus, RngStream::new(seed, "fl.compute"))
        });

        let line_rate = cfg.line_rate_per_wavelength;
        let max_wmax = profiles.iter().map(|p| p.wmax_bytes).max().unwrap_or(0);
        let per_onu_overhead = sched.guard + SimTime::airtime(REPORT_BYTES, line_rate) + SimTime(2);
        let cycle_bound = sched.max_cycle
            + SimTime::airtime(max_wmax + slice_bytes + REPORT_BYTES, line_rate)
            + SimTime(per_onu_overhead.as_nanos() * cfg.n_onus as u64)
            + cfg.rtt_range[1]
            + sched.guard;

        let delays = TrafficClass::ALL
            .map(|c| DelayCollector::new(c, cfg.warmup, cfg.reservoir_size, cfg.full_trace, seed));

        Ok(Simulation {
            cfg: cfg.clone(),
            sched,
            load,
            seed,
            horizon,
            warmup: cfg.warmup,
            line_rate,
            olt,
            onus,
            fl,
            delays,
            last_report: vec![None; cfg.n_onus],
            cycle_sum: SimTime::ZERO,
            cycle_count: 0,
            cycle_bound,
            slice_bytes,
            busy: vec![SimTime::ZERO; cfg.n_wavelengths],
            last_burst: vec![None; cfg.n_wavelengths],
            opts,
            gates: Vec::new(),
            frames: Vec::new(),
            scratch: Vec::new(),
            departures: Vec::new(),
            counters: RunCounters::default(),
        })
    }

    pub fn run(mut self) -> Result<RunOutput, SimError> {
        let mut kernel: Kernel<Ev> = Kernel::new(self.seed);
        if let Some(w) = self.opts.gate_writer.as_mut() {
            writeln!(w, "{}", GateRecord::CSV_HEADER)?;
        }
        if let Some(w) = self.opts.frame_writer.as_mut() {
            writeln!(w, "{}", FrameRecord::CSV_HEADER)?;
        }
        for i in 0..self.onus.len() {
            kernel.schedule(SimTime::ZERO, Ev::Report(ReportMsg::zero(i, SimTime::ZERO)))?;
        }
        if self.fl.is_some() {
            kernel.schedule(SimTime::ZERO, Ev::FlRoundStart)?;
        }
        while let Some(ev) = kernel.pop_until(self.horizon) {
            self.counters.events += 1;
            let now = ev.fire_at;
            match ev.kind {
                Ev::Report(r) => self.on_report(&mut kernel, r, now)?,
                Ev::TxStart { onu, grant } => self.on_tx_start(onu as usize, grant as usize, now)?,
                Ev::TxEnd { onu } => self.on_tx_end(&mut kernel, onu as usize, now)?,
                Ev::FlRoundStart => self.on_round_start(&mut kernel, now)?,
                Ev::FlRelease { onu, round } => self.on_release(onu as usize, round, now),
                Ev::FlAggregate { round } => self.on_aggregate(&mut kernel, round, now)?,
            }
        }
        self.finish()
    }

    fn on_report(&mut self, kernel: &mut Kernel<Ev>, report: ReportMsg, now: SimTime) -> Result<(), SimError> {
        let onu = report.onu;
        if let Some(prev) = self.last_report[onu] {
            let spacing = now - prev;
            if prev >= self.warmup {
                self.cycle_sum += spacing;
                self.cycle_count += 1;
            }
            if self.olt.onu(onu).group.is_none() {
                self.counters.cycle_checks += 1;
                if spacing > self.cycle_bound {
                    return Err(violation(
                        "cycle_bound",
                        now,
                        format!("onu {onu}: reports {spacing} apart, bound {}", self.cycle_bound),
                    ));
                }
            }
        }
        self.last_report[onu] = Some(now);
        let gates = self.olt.on_report(&report, now).map_err(|e| sched_err(e, now))?;
        for gate in gates {
            self.issue(kernel, gate, now)?;
        }
        Ok(())
    }

    fn issue(&mut self, kernel: &mut Kernel<Ev>, gate: GateMsg, now: SimTime) -> Result<(), SimError> {
        let onu = gate.onu;
        let gate_id = self.counters.gates;
        self.counters.gates += 1;
        let rtt = self.onus[onu].state.rtt;
        let one_way = self.onus[onu].state.one_way();
        if self.onus[onu].state.pending_gate.is_some() {
            return Err(violation("single_outstanding_gate", now, format!("onu {onu} already holds a gate")));
        }
        let grouped = self.olt.onu(onu).group.is_some();
        let wmax = self.olt.onu(onu).wmax;
        let mut conventional = 0;
        let mut slice = 0;
        for g in &gate.grants {
            if g.start < now + rtt {
                return Err(violation(
                    "gate_causality",
                    now,
                    format!("onu {onu}: window at {} before gate can arrive and return ({})", g.start, now + rtt),
                ));
            }
            if let Some(last) = self.last_burst[g.wavelength] {
                let adjacent = last.gate == gate_id && g.start == last.end;
                if !adjacent && g.start < last.end + self.sched.guard {
                    return Err(violation(
                        "guard_separation",
                        now,
                        format!(
                            "onu {onu} on wavelength {}: start {} within guard of previous end {}",
                            g.wavelength, g.start, last.end
                        ),
                    ));
                }
            }
            self.last_burst[g.wavelength] = Some(LastBurst { end: g.end(), gate: gate_id });
            match g.purpose {
                GrantPurpose::Conventional => conventional += g.data_bytes,
                GrantPurpose::FlSlice => slice += g.data_bytes,
            }
            let lo = g.start.max(self.warmup);
            let hi = g.end().min(self.horizon);
            if hi > lo {
                self.busy[g.wavelength] += hi - lo;
            }
            let rec = GateRecord {
                issued_at: now,
                onu,
                purpose: g.purpose,
                wavelength: g.wavelength,
                start: g.start,
                duration: g.duration,
            };
            if let Some(w) = self.opts.gate_writer.as_mut() {
                writeln!(w, "{rec}")?;
            }
            if self.opts.keep_gates {
                self.gates.push(rec);
            }
        }
        if !grouped && (conventional > wmax || slice > self.slice_bytes) {
            return Err(violation(
                "limited_grant",
                now,
                format!("onu {onu}: granted {conventional} B + slice {slice} B, W_max {wmax} B"),
            ));
        }
        let mut report_end = None;
        for (k, g) in gate.grants.iter().enumerate() {
            if g.data_bytes > 0 {
                kernel.schedule(g.start - one_way, Ev::TxStart { onu: onu as u16, grant: k as u8 })?;
            }
            if g.carries_report {
                report_end = Some(g.end() - one_way);
            }
        }
        let end = report_end.ok_or_else(|| violation("report_window", now, format!("onu {onu}: gate without a report slot")))?;
        kernel.schedule(end, Ev::TxEnd { onu: onu as u16 })?;
        self.onus[onu].state.pending_gate = Some(gate);
        Ok(())
    }

    fn on_tx_start(&mut self, i: usize, k: usize, now: SimTime) -> Result<(), SimError> {
        let onu = &mut self.onus[i];
        let grant = onu.state.pending_gate.as_ref().expect("window of a pending gate").grants[k];
        onu.materialize(now);
        let order = self.sched.service_order(grant.purpose);
        self.scratch.clear();
        onu.state.dequeue_into(grant.data_bytes, order, &mut self.scratch);
        self.departures.clear();
        transmit(i, &grant, &self.scratch, self.line_rate, &mut self.departures)
            .map_err(|e| violation("grant_fits", now, e.to_string()))?;
        let one_way = onu.state.one_way();
        for d in &self.departures {
            let f = d.frame;
            let delay = d.departure - f.arrival;
            let floor = one_way + SimTime::airtime(f.wire_bytes(), self.line_rate);
            if delay < floor {
                return Err(violation(
                    "delay_lower_bound",
                    now,
                    format!("onu {i} {} frame {}: delay {delay} below {floor}", f.class, f.id),
                ));
            }
            self.delays[f.class.index()].record_frame(f.arrival, delay);
            if let (Some(round), Some(fl)) = (f.fl_round, self.fl.as_mut()) {
                fl.on_frame_departed(i, round, d.departure);
            }
            let rec = FrameRecord {
                onu: i,
                class: f.class,
                id: f.id,
                arrival: f.arrival,
                departure: d.departure,
                wavelength: d.wavelength,
            };
            if let Some(w) = self.opts.frame_writer.as_mut() {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    rec.onu,
                    rec.class,
                    rec.id,
                    rec.arrival.as_nanos(),
                    rec.departure.as_nanos(),
                    rec.wavelength
                )?;
            }
            if self.opts.keep_frames {
                self.frames.push(rec);
            }
        }
        self.counters.frames_departed += self.departures.len() as u64;
        Ok(())
    }

    fn on_tx_end(&mut self, kernel: &mut Kernel<Ev>, i: usize, now: SimTime) -> Result<(), SimError> {
        let onu = &mut self.onus[i];
        onu.materialize(now);
        onu.state.pending_gate = None;
        let report = onu.state.build_report(now);
        kernel.schedule(now + onu.state.one_way(), Ev::Report(report))?;
        Ok(())
    }

    fn on_round_start(&mut self, kernel: &mut Kernel<Ev>, now: SimTime) -> Result<(), SimError> {
        let fl = self.fl.as_mut().expect("FL enabled");
        let (round, releases) = fl.start_round(now);
        for (client, release) in releases {
            kernel.schedule(release, Ev::FlRelease { onu: client as u16, round })?;
        }
        kernel.schedule(now + fl.spec().sync_window, Ev::FlAggregate { round })?;
        Ok(())
    }

    fn on_release(&mut self, i: usize, round: u32, now: SimTime) {
        let spec = *self.fl.as_ref().expect("FL enabled").spec();
        let Onu {
            state,
            next_id,
            generated,
            ..
        } = &mut self.onus[i];
        for f in fl_round_frames(&spec, i, round, now) {
            Onu::admit(state, next_id, generated, f);
        }
    }

    fn on_aggregate(&mut self, kernel: &mut Kernel<Ev>, round: u32, now: SimTime) -> Result<(), SimError> {
        let fl = self.fl.as_mut().expect("FL enabled");
        let (_, next) = fl.close_round(round, now);
        if next <= self.horizon {
            kernel.schedule(next, Ev::FlRoundStart)?;
        }
        Ok(())
    }

    fn check_conservation(&self) -> Result<(), SimError> {
        for onu in &self.onus {
            let c = &onu.state.counters;
            for class in TrafficClass::ALL {
                let k = class.index();
                let queued = onu.state.queue_len(class) as u64;
                if onu.generated[k] != c.enqueued[k] || c.enqueued[k] != c.transmitted[k] + c.dropped[k] + queued {
                    return Err(violation(
                        "frame_conservation",
                        self.horizon,
                        format!(
                            "onu {} {class}: generated {} enqueued {} transmitted {} dropped {} queued {queued}",
                            onu.state.index, onu.generated[k], c.enqueued[k], c.transmitted[k], c.dropped[k]
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    fn check_slices(&self) -> Result<(), SimError> {
        let eps = self.olt.slice_episodes();
        for (k, e) in eps.iter().enumerate() {
            match e.closed {
                Some(_) if e.granted != e.demand => {
                    return Err(violation(
                        "slice_conservation",
                        self.horizon,
                        format!("onu {}: granted {} of a {} B reservation", e.onu, e.granted, e.demand),
                    ))
                }
                None if k + 1 != eps.len() || e.granted > e.demand => {
                    return Err(violation("slice_exclusivity", self.horizon, format!("episode {k} of onu {} never closed", e.onu)))
                }
                _ => {}
            }
            if k > 0 && eps[k - 1].closed.is_none_or(|c| c > e.opened) {
                return Err(violation("slice_exclusivity", e.opened, format!("onu {} took a held slice", e.onu)));
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<RunOutput, SimError> {
        self.check_conservation()?;
        self.check_slices()?;
        if let Some(w) = self.opts.gate_writer.as_mut() {
            w.flush()?;
        }
        if let Some(w) = self.opts.frame_writer.as_mut() {
            w.flush()?;
        }
        let window = (self.horizon - self.warmup).as_secs_f64();
        let utilization: Vec<f64> = self.busy.iter().map(|b| b.as_secs_f64() / window).collect();
        if let Some(u) = utilization.iter().find(|&&u| u > 1.0 + 1e-12) {
            return Err(violation("utilization", self.horizon, format!("utilization {u} above 1")));
        }
        let mut drops = [0u64; 4];
        for onu in &self.onus {
            for k in 0..4 {
                drops[k] += onu.state.counters.dropped[k];
            }
        }
        let records: Vec<RoundRecord> = self.fl.as_ref().map(|f| f.records()).unwrap_or_default();
        let counted = |r: &&RoundRecord| r.start >= self.warmup;
        let involved_fractions = records.iter().filter(counted).map(|r| r.involved_fraction()).collect();
        let mut fl_round_delays_s = Vec::new();
        if let Some(fl) = &self.fl {
            for st in fl.client_states() {
                let Some(rec) = records.get(st.round as usize) else { continue };
                if rec.start < self.warmup {
                    continue;
                }
                if let Some(d) = st.network_delay() {
                    fl_round_delays_s.push(d.as_secs_f64());
                }
            }
        }
        let result = RunResult {
            scenario: self.cfg.name.clone(),
            seed: self.seed,
            load: self.load,
            scheduler: self.sched.kind,
            policy: self.sched.policy_label().to_string(),
            wavelength_policy: self.sched.wavelength_policy,
            delays: TrafficClass::ALL.map(|c| self.delays[c.index()].stats()),
            drops,
            mean_cycle_s: (self.cycle_count > 0)
                .then(|| self.cycle_sum.as_secs_f64() / self.cycle_count as f64),
            utilization,
            fl_round_delays_s,
            involved_fractions,
            fl_rounds: records,
        };
        Ok(RunOutput {
            result,
            gates: self.gates,
            frames: self.frames,
            slice_episodes: self.olt.slice_episodes().to_vec(),
            counters: self.counters,
        })
    }
}

/// Runs one replication.
pub fn run_once(cfg: &ScenarioConfig, load: f64, seed: u64, opts: RunOptions) -> Result<RunOutput, SimError> {
    Simulation::new(cfg, load, seed, opts)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sched::SchedulerKind;

    fn small() -> ScenarioConfig {
        let mut c = ScenarioConfig::desk_scale();
        c.duration = SimTime::from_millis(3_500);
        c.warmup = SimTime::from_millis(500);
        c
    }

    #[test]
    fn runs_and_reports_every_class() {
        let out = run_once(&small(), 0.8, 1, RunOptions::default()).unwrap();
        let r = &out.result;
        for c in [TrafficClass::Dc, TrafficClass::Ds, TrafficClass::Be] {
            assert!(r.delay(c).unwrap().count > 1000, "{c}");
        }
        assert!(r.delay(TrafficClass::Fl).is_some());
        assert!(r.mean_cycle_s.unwrap() > 0.0);
        assert_eq!(r.utilization.len(), 2);
        assert!(r.utilization.iter().all(|&u| u > 0.0 && u <= 1.0));
        assert!(out.counters.cycle_checks > 0);
    }

    #[test]
    fn every_scheduler_runs_clean() {
        for kind in SchedulerKind::ALL {
            let mut c = small();
            c.scheduler.kind = kind;
            run_once(&c, 0.8, 2, RunOptions::default()).unwrap_or_else(|e| panic!("{kind}: {e}"));
        }
    }

    #[test]
    fn same_seed_same_result() {
        let a = run_once(&small(), 0.7, 5, RunOptions::default()).unwrap().result;
        let b = run_once(&small(), 0.7, 5, RunOptions::default()).unwrap().result;
        assert_eq!(a, b);
    }

    #[test]
    fn frame_log_matches_delay_bound() {
        let mut c = small();
        c.duration = SimTime::from_millis(800);
        let opts = RunOptions {
            keep_frames: true,
            keep_gates: true,
            ..Default::default()
        };
        let out = run_once(&c, 0.6, 3, opts).unwrap();
        assert_eq!(out.frames.len() as u64, out.counters.frames_departed);
        assert_eq!(out.gates.len() as u64 >= out.counters.gates, true);
        assert!(out.frames.iter().all(|f| f.departure > f.arrival));
    }
}
