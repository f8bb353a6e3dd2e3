//! Synchronous federated-learning rounds.
//!
//! A round starts, every client receives the global model after the
//! downstream delay, trains for its compute time and then releases its
//! upload into the PON. The server aggregates whatever arrived within the
//! synchronization window `S` and starts the next round after the
//! aggregation delay. Clients that miss the window are stragglers; their
//! frames stay queued and still complete later.

use std::path::Path;

use crate::error::{ConfigError, StatsError};
use crate::kernel::Kernel;
use crate::rng::RngStream;
use crate::time::SimTime;
use crate::traffic::FlWorkloadSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlClientState {
    pub client: usize,
    pub round: u32,
    pub compute_time: SimTime,
    pub upload_release: SimTime,
    pub upload_complete: Option<SimTime>,
}

impl FlClientState {
    /// Upload completion minus release.
    pub fn network_delay(&self) -> Option<SimTime> {
        self.upload_complete.map(|c| c - self.upload_release)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundRecord {
    pub round: u32,
    pub start: SimTime,
    pub sync_window: SimTime,
    pub involved: Vec<usize>,
    pub stragglers: Vec<usize>,
    /// Per participating client (same order as the client list): upload
    /// completion minus round start, including completions after the
    /// window closed. `None` if the upload never finished.
    pub completion_offsets: Vec<Option<SimTime>>,
}

impl RoundRecord {
    pub fn participants(&self) -> usize {
        self.involved.len() + self.stragglers.len()
    }

    pub fn involved_fraction(&self) -> f64 {
        match self.participants() {
            0 => 1.0,
            n => self.involved.len() as f64 / n as f64,
        }
    }
}

#[derive(Clone, Debug)]
struct RoundState {
    start: SimTime,
    clients: Vec<FlClientState>,
    frames_left: Vec<u64>,
    record: Option<RoundRecord>,
}

/// Round bookkeeping shared by the full simulation and the zero-network
/// driver.
#[derive(Clone, Debug)]
pub struct FlCoordinator {
    spec: FlWorkloadSpec,
    clients: Vec<usize>,
    slot_of: Vec<Option<usize>>,
    rng: RngStream,
    rounds: Vec<RoundState>,
}

impl FlCoordinator {
    /// `clients` are ONU indices; `n_onus` bounds them.
    pub fn new(spec: FlWorkloadSpec, clients: Vec<usize>, n_onus: usize, rng: RngStream) -> Self {
        let mut slot_of = vec![None; n_onus];
        for (k, &c) in clients.iter().enumerate() {
            slot_of[c] = Some(k);
        }
        FlCoordinator {
            spec,
            clients,
            slot_of,
            rng,
            rounds: Vec::new(),
        }
    }

    pub fn spec(&self) -> &FlWorkloadSpec {
        &self.spec
    }

    pub fn clients(&self) -> &[usize] {
        &self.clients
    }

    pub fn rounds_started(&self) -> u32 {
        self.rounds.len() as u32
    }

    /// Starts the next round at `now` and returns `(client, release)` per
    /// client, in client order. Compute times are drawn in that order.
    pub fn start_round(&mut self, now: SimTime) -> (u32, Vec<(usize, SimTime)>) {
        let round = self.rounds.len() as u32;
        if let Some(prev) = self.rounds.last() {
            assert!(prev.record.is_some(), "round {} started before the previous closed", round);
        }
        let frames = self.spec.frames_per_round();
        let mut clients = Vec::with_capacity(self.clients.len());
        for &c in &self.clients {
            let compute = self.spec.compute_time.sample(&mut self.rng);
            clients.push(FlClientState {
                client: c,
                round,
                compute_time: compute,
                upload_release: now + self.spec.downstream_delay + compute,
                upload_complete: None,
            });
        }
        let releases = clients.iter().map(|s| (s.client, s.upload_release)).collect();
        self.rounds.push(RoundState {
            start: now,
            frames_left: vec![frames; clients.len()],
            clients,
            record: None,
        });
        (round, releases)
    }

    /// Notes that one upload frame of `client` for `round` leaves the PON
    /// at `departure`. The last one completes the upload.
    pub fn on_frame_departed(&mut self, client: usize, round: u32, departure: SimTime) {
        let k = self.slot_of[client].expect("FL frame from a non-client ONU");
        let r = &mut self.rounds[round as usize];
        r.frames_left[k] -= 1;
        if r.frames_left[k] == 0 {
            r.clients[k].upload_complete = Some(departure);
        }
    }

    /// Marks every upload of `round` complete at its release. Used when the
    /// network is ignored.
    pub fn complete_at_release(&mut self, round: u32) {
        let r = &mut self.rounds[round as usize];
        for (k, c) in r.clients.iter_mut().enumerate() {
            r.frames_left[k] = 0;
            c.upload_complete = Some(c.upload_release);
        }
    }

    /// Aggregates `round` at `now` (its start plus `S`). Returns the record
    /// and the start time of the next round.
    pub fn close_round(&mut self, round: u32, now: SimTime) -> (RoundRecord, SimTime) {
        let spec = self.spec;
        let r = &mut self.rounds[round as usize];
        let deadline = r.start + spec.sync_window;
        let mut involved = Vec::new();
        let mut stragglers = Vec::new();
        for c in &r.clients {
            match c.upload_complete {
                Some(t) if t <= deadline => involved.push(c.client),
                _ => stragglers.push(c.client),
            }
        }
        let record = RoundRecord {
            round,
            start: r.start,
            sync_window: spec.sync_window,
            involved,
            stragglers,
            completion_offsets: Vec::new(),
        };
        r.record = Some(record.clone());
        (record, now + spec.aggregation_delay)
    }

    /// Client states of every started round.
    pub fn client_states(&self) -> impl Iterator<Item = &FlClientState> {
        self.rounds.iter().flat_map(|r| r.clients.iter())
    }

    /// Closed rounds with completion offsets filled in as of now.
    pub fn records(&self) -> Vec<RoundRecord> {
        self.rounds
            .iter()
            .filter_map(|r| {
                let mut rec = r.record.clone()?;
                rec.completion_offsets = r.clients.iter().map(|c| c.upload_complete.map(|t| t - r.start)).collect();
                Some(rec)
            })
            .collect()
    }
}

/// Fraction of clients whose completion offset is within `s`, averaged over
/// rounds, for every `s` in `grid`.
pub fn involved_fraction_curve(records: &[RoundRecord], grid: &[SimTime]) -> Vec<(SimTime, f64)> {
    grid.iter()
        .map(|&s| {
            let fractions: Vec<f64> = records
                .iter()
                .filter(|r| !r.completion_offsets.is_empty())
                .map(|r| {
                    let within = r.completion_offsets.iter().filter(|o| o.is_some_and(|o| o <= s)).count();
                    within as f64 / r.completion_offsets.len() as f64
                })
                .collect();
            let mean = if fractions.is_empty() {
                1.0
            } else {
                fractions.iter().sum::<f64>() / fractions.len() as f64
            };
            (s, mean)
        })
        .collect()
}

/// Smallest `s` in `grid` whose involved fraction reaches `target`.
pub fn time_to_fraction(curve: &[(SimTime, f64)], target: f64) -> Option<SimTime> {
    curve.iter().find(|(_, f)| *f >= target).map(|(s, _)| *s)
}

#[derive(Clone, Copy, Debug)]
enum IdleEvent {
    Start,
    Aggregate(u32),
}

/// Runs `rounds` rounds with no network and no downstream delay: every
/// upload completes the moment compute ends, so completion offsets equal
/// the compute times.
pub fn simulate_without_network(spec: FlWorkloadSpec, n_clients: usize, rounds: u32, seed: u64) -> Vec<RoundRecord> {
    let spec = FlWorkloadSpec {
        downstream_delay: SimTime::ZERO,
        ..spec
    };
    let mut kernel: Kernel<IdleEvent> = Kernel::new(seed);
    let rng = kernel.rng("fl.compute").clone();
    let mut fl = FlCoordinator::new(spec, (0..n_clients).collect(), n_clients, rng);
    kernel.schedule(SimTime::ZERO, IdleEvent::Start).expect("t=0");
    while let Some(ev) = kernel.pop_until(SimTime::MAX) {
        match ev.kind {
            IdleEvent::Start => {
                if fl.rounds_started() == rounds {
                    break;
                }
                let (round, _) = fl.start_round(ev.fire_at);
                fl.complete_at_release(round);
                kernel.schedule_in(spec.sync_window, IdleEvent::Aggregate(round));
            }
            IdleEvent::Aggregate(round) => {
                let (_, next) = fl.close_round(round, ev.fire_at);
                kernel.schedule(next, IdleEvent::Start).expect("future");
            }
        }
    }
    fl.records()
}

/// Accuracy as a function of the involved-client fraction. Input data;
/// nothing here is learned.
#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyTable {
    rows: Vec<(f64, f64)>,
}

impl AccuracyTable {
    /// Rows must be sorted by fraction, with non-decreasing accuracy and
    /// both columns in `[0, 1]`.
    pub fn new(rows: Vec<(f64, f64)>) -> Result<Self, ConfigError> {
        for &(f, a) in &rows {
            if !(0.0..=1.0).contains(&f) || !(0.0..=1.0).contains(&a) {
                return Err(ConfigError::Validation(format!("accuracy row ({f}, {a}) outside [0,1]")));
            }
        }
        for w in rows.windows(2) {
            if w[1].0 < w[0].0 || w[1].1 < w[0].1 {
                return Err(ConfigError::Validation("accuracy table must be monotone non-decreasing".into()));
            }
        }
        Ok(AccuracyTable { rows })
    }

    /// Two whitespace- or comma-separated columns per line; `#` starts a
    /// comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut rows = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
            let err = |column: usize, message: String| ConfigError::Parse {
                line: i + 1,
                column,
                message,
            };
            if cols.len() != 2 {
                return Err(err(1, format!("expected two columns, got {}", cols.len())));
            }
            let f: f64 = cols[0].parse().map_err(|e| err(1, format!("{e}")))?;
            let a: f64 = cols[1].parse().map_err(|e| err(2, format!("{e}")))?;
            rows.push((f, a));
        }
        AccuracyTable::new(rows)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Validation(format!("{}: {e}", path.display())))?;
        AccuracyTable::parse(&text)
    }

    pub fn rows(&self) -> &[(f64, f64)] {
        &self.rows
    }
}

/// Linear interpolation in `table`, clamped to the first and last rows.
pub fn accuracy_at(table: &AccuracyTable, fraction: f64) -> Result<f64, StatsError> {
    let rows = &table.rows;
    let (first, last) = match (rows.first(), rows.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(StatsError::EmptyTable),
    };
    if fraction <= first.0 {
        return Ok(first.1);
    }
    if fraction >= last.0 {
        return Ok(last.1);
    }
    let i = rows.partition_point(|r| r.0 <= fraction);
    let (x0, y0) = rows[i - 1];
    let (x1, y1) = rows[i];
    if x1 == x0 {
        return Ok(y1);
    }
    Ok(y0 + (y1 - y0) * (fraction - x0) / (x1 - x0))
}
