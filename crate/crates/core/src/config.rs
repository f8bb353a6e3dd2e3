//! Scenario configuration (TOML).
//!
//! Every key is optional; an empty file is the full-scale default scenario
//! (32 ONUs, two 25 Gb/s wavelengths, 1 ms cycle, loads 0.6 to 1.0).
//! Unknown keys are rejected. Times are integers in nanoseconds or strings
//! with a unit (`"0.624us"`, `"100s"`); rates are bits per second.
//!
//! ```toml
//! name = "desk"
//! n_onus = 8
//! line_rate_per_wavelength = 2_500_000_000
//! duration = "20s"
//! load_sweep = [0.8]
//!
//! [scheduler]
//! kind = "MW_BS"
//! wavelength_policy = "FF"
//!
//! [traffic.fl]
//! payload_bytes_per_round = 2_640_000
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ConfigError;
use crate::pon::SlaProfile;
use crate::rng::RngStream;
use crate::sched::{GroupSpec, PriorityPolicy, SchedulerConfig, SchedulerKind};
use crate::time::SimTime;
use crate::traffic::{CbrSpec, FlWorkloadSpec, ParetoOnOffSpec, DEFAULT_OVERHEAD, MTU};
use crate::twdm::WavelengthPolicy;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerSection {
    pub kind: SchedulerKind,
    pub priority_policy: PriorityPolicy,
    pub theta: f64,
    pub wavelength_policy: WavelengthPolicy,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        let d = SchedulerConfig::default();
        SchedulerSection {
            kind: d.kind,
            priority_policy: d.priority_policy,
            theta: d.theta,
            wavelength_policy: d.wavelength_policy,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficSection {
    pub dc_enabled: bool,
    pub ds_enabled: bool,
    pub be_enabled: bool,
    pub fl_enabled: bool,
    pub cbr: CbrSpec,
    /// Shape of the DS and BE streams; the rate is set from the load.
    pub pareto: ParetoOnOffSpec,
    pub fl: FlWorkloadSpec,
}

impl Default for TrafficSection {
    fn default() -> Self {
        TrafficSection {
            dc_enabled: true,
            ds_enabled: true,
            be_enabled: true,
            fl_enabled: true,
            cbr: CbrSpec::default(),
            pareto: ParetoOnOffSpec::default(),
            fl: FlWorkloadSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: String,
    pub n_onus: usize,
    pub n_wavelengths: usize,
    pub line_rate_per_wavelength: u64,
    pub guard: SimTime,
    pub max_cycle: SimTime,
    pub rtt_range: [SimTime; 2],
    pub duration: SimTime,
    pub warmup: SimTime,
    pub replications: u32,
    pub master_seed: u64,
    /// Offered load per ONU as a fraction of its guaranteed rate.
    pub load_sweep: Vec<f64>,
    /// Guaranteed rate per ONU; empty means an equal share of the aggregate.
    pub sla: Vec<f64>,
    /// Drop-tail ONU buffer in wire bytes; absent means unbounded.
    pub buffer_bytes: Option<u64>,
    pub reservoir_size: usize,
    /// Keep every delay sample instead of a reservoir.
    pub full_trace: bool,
    pub scheduler: SchedulerSection,
    pub traffic: TrafficSection,
    pub groups: Vec<GroupSpec>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "default".into(),
            n_onus: 32,
            n_wavelengths: 2,
            line_rate_per_wavelength: 25_000_000_000,
            guard: SimTime::from_nanos(624),
            max_cycle: SimTime::from_millis(1),
            rtt_range: [SimTime::from_micros(100), SimTime::from_micros(200)],
            duration: SimTime::from_secs(100),
            warmup: SimTime::from_secs(5),
            replications: 10,
            master_seed: 1,
            load_sweep: (0..=8).map(|k| (60 + 5 * k) as f64 / 100.0).collect(),
            sla: Vec::new(),
            buffer_bytes: None,
            reservoir_size: crate::metrics::DEFAULT_RESERVOIR,
            full_trace: false,
            scheduler: SchedulerSection::default(),
            traffic: TrafficSection::default(),
            groups: Vec::new(),
        }
    }
}

/// Rates of the traffic sources of one ONU, payload bits per second.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OnuRates {
    pub dc_bps: f64,
    pub ds_bps: f64,
    pub be_bps: f64,
    pub fl_bps: f64,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

impl ScenarioConfig {
    /// Parses and validates a TOML document.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            ConfigError::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Validation(format!("cannot read {}: {e}", path.display())))?;
        ScenarioConfig::parse(&text)
    }

    pub fn aggregate_rate_bps(&self) -> f64 {
        self.line_rate_per_wavelength as f64 * self.n_wavelengths as f64
    }

    pub fn scheduler_config(&self) -> SchedulerConfig {
        SchedulerConfig {
            kind: self.scheduler.kind,
            priority_policy: self.scheduler.priority_policy,
            theta: self.scheduler.theta,
            wavelength_policy: self.scheduler.wavelength_policy,
            max_cycle: self.max_cycle,
            guard: self.guard,
        }
    }

    pub fn guaranteed_bps(&self) -> Vec<f64> {
        if self.sla.is_empty() {
            vec![self.aggregate_rate_bps() / self.n_onus as f64; self.n_onus]
        } else {
            self.sla.clone()
        }
    }

    pub fn group_of(&self, onu: usize) -> Option<u32> {
        self.groups.iter().find(|g| g.members.contains(&onu)).map(|g| g.id)
    }

    pub fn sla_profiles(&self) -> Vec<SlaProfile> {
        self.guaranteed_bps()
            .into_iter()
            .enumerate()
            .map(|(i, b)| SlaProfile::new(b, self.max_cycle, self.group_of(i)))
            .collect()
    }

    /// Number of FL clients (ONUs `0..n`).
    pub fn fl_clients(&self) -> usize {
        if !self.traffic.fl_enabled {
            return 0;
        }
        self.traffic.fl.clients.map_or(self.n_onus, |c| c as usize)
    }

    /// Round-trip time of each ONU, uniform over `rtt_range` in whole even
    /// nanoseconds so the one-way delay is exact.
    pub fn draw_rtts(&self, seed: u64) -> Vec<SimTime> {
        let mut rng = RngStream::new(seed, "topology.rtt");
        let lo = self.rtt_range[0].as_nanos().div_ceil(2);
        let hi = self.rtt_range[1].as_nanos() / 2;
        (0..self.n_onus)
            .map(|_| SimTime(2 * rng.range_inclusive(lo, hi.max(lo))))
            .collect()
    }

    /// Source rates of every ONU at `load`: DC at its CBR rate, FL at its
    /// long-run mean, and DS and BE sharing what is left of `load * b_i`.
    pub fn onu_rates(&self, load: f64) -> Result<Vec<OnuRates>, ConfigError> {
        let t = &self.traffic;
        let clients = self.fl_clients();
        self.guaranteed_bps()
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let dc = if t.dc_enabled { t.cbr.rate_bps() } else { 0.0 };
                let fl = if i < clients { t.fl.mean_rate_bps() } else { 0.0 };
                let rest = load * b - dc - fl;
                if rest < -1e-6 {
                    return Err(ConfigError::Validation(format!(
                        "load {load} of onu {i} ({:.0} b/s) is below its DC and FL rates ({:.0} b/s)",
                        load * b,
                        dc + fl
                    )));
                }
                let rest = rest.max(0.0);
                let share = match (t.ds_enabled, t.be_enabled) {
                    (true, true) => rest / 2.0,
                    _ => rest,
                };
                Ok(OnuRates {
                    dc_bps: dc,
                    ds_bps: if t.ds_enabled { share } else { 0.0 },
                    be_bps: if t.be_enabled { share } else { 0.0 },
                    fl_bps: fl,
                })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Validation(m));
        if self.n_onus == 0 {
            return bad("n_onus must be > 0".into());
        }
        if self.n_onus > u16::MAX as usize {
            return bad("n_onus too large".into());
        }
        if self.n_wavelengths == 0 {
            return bad("n_wavelengths must be > 0".into());
        }
        if self.line_rate_per_wavelength == 0 {
            return bad("line_rate_per_wavelength must be > 0".into());
        }
        if self.rtt_range[0] < SimTime(2) || self.rtt_range[0] > self.rtt_range[1] {
            return bad("rtt_range must be [min, max] with 2 ns <= min <= max".into());
        }
        if self.duration == SimTime::ZERO || self.warmup >= self.duration {
            return bad("need 0 <= warmup < duration".into());
        }
        if self.replications == 0 {
            return bad("replications must be >= 1".into());
        }
        if self.load_sweep.is_empty() || self.load_sweep.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return bad("load_sweep must be a non-empty list of positive loads".into());
        }
        if self.reservoir_size == 0 {
            return bad("reservoir_size must be > 0".into());
        }
        self.scheduler_config().validate(self.aggregate_rate_bps())?;

        if !self.sla.is_empty() && self.sla.len() != self.n_onus {
            return bad(format!("sla lists {} rates for {} onus", self.sla.len(), self.n_onus));
        }
        let b = self.guaranteed_bps();
        if b.iter().any(|&x| !(x > 0.0)) {
            return bad("guaranteed rates must be > 0".into());
        }
        let total: f64 = b.iter().sum();
        if total > self.aggregate_rate_bps() * (1.0 + 1e-9) {
            return bad(format!(
                "sum of guaranteed rates {total} exceeds aggregate capacity {}",
                self.aggregate_rate_bps()
            ));
        }
        let mtu_wire = (MTU + DEFAULT_OVERHEAD) as u64;
        for (i, p) in self.sla_profiles().iter().enumerate() {
            if p.wmax_bytes < mtu_wire {
                return bad(format!("W_max of onu {i} ({} B) is below one full frame", p.wmax_bytes));
            }
        }

        self.traffic.cbr.validate()?;
        self.traffic.pareto.validate()?;
        self.traffic.fl.validate()?;
        if let Some(c) = self.traffic.fl.clients {
            if c as usize > self.n_onus {
                return bad("fl.clients exceeds n_onus".into());
            }
        }
        for &l in &self.load_sweep {
            self.onu_rates(l)?;
        }

        let mut seen_ids = Vec::new();
        let mut seen_members = vec![false; self.n_onus];
        for g in &self.groups {
            if seen_ids.contains(&g.id) {
                return bad(format!("duplicate group id {}", g.id));
            }
            seen_ids.push(g.id);
            if g.members.is_empty() {
                return bad(format!("group {} has no members", g.id));
            }
            for &m in &g.members {
                if m >= self.n_onus {
                    return bad(format!("group {} member {m} out of range", g.id));
                }
                if std::mem::replace(&mut seen_members[m], true) {
                    return bad(format!("onu {m} belongs to more than one group"));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The reduced scenario used for quick comparisons: 8 ONUs on two
    /// 2.5 Gb/s wavelengths, a 2.64 MB upload per round, 20 s runs.
    pub fn desk_scale() -> Self {
        let mut c = ScenarioConfig {
            name: "desk".into(),
            n_onus: 8,
            line_rate_per_wavelength: 2_500_000_000,
            duration: SimTime::from_secs(20),
            replications: 5,
            load_sweep: vec![0.8],
            ..Default::default()
        };
        c.traffic.fl.payload_bytes_per_round = 2_640_000;
        c
    }
}
