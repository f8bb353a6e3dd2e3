//! OLT-side scheduling: interleaved polling with a limited grant per report,
//! bandwidth slicing for FL uploads (MW-BS), DWBA-FL priority policies,
//! a no-QoS FCFS baseline and SLA-group buffering.
//!
//! Every handler runs on REPORT arrival and sends the GATE immediately. The
//! earliest start of the granted burst at the OLT is one round trip after
//! the report arrived: half of it for the GATE to reach the ONU and half for
//! the first bit to come back.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dba::{group_schedule, limited_grant, ExcessPolicy, GroupState};
use crate::error::{ConfigError, DbaError, TwdmError};
use crate::pon::{
    GateMsg, ReportMsg, ServiceOrder, ORDER_CONVENTIONAL, ORDER_DC_FIRST, ORDER_FL_FIRST, ORDER_FL_ONLY,
    ORDER_IPACT, REPORT_BYTES,
};
use crate::time::SimTime;
use crate::traffic::{TrafficClass, DEFAULT_OVERHEAD, MTU};
use crate::twdm::{assign, ChannelState, GrantPurpose, WavelengthPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SchedulerKind {
    IpactLimited,
    MwBs,
    DwbaFl,
    Fcfs,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 4] = [
        SchedulerKind::IpactLimited,
        SchedulerKind::MwBs,
        SchedulerKind::DwbaFl,
        SchedulerKind::Fcfs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchedulerKind::IpactLimited => "IPACT_LIMITED",
            SchedulerKind::MwBs => "MW_BS",
            SchedulerKind::DwbaFl => "DWBA_FL",
            SchedulerKind::Fcfs => "FCFS",
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SchedulerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        SchedulerKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown scheduler {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PriorityPolicy {
    FlFirst,
    DcFirst,
}

impl PriorityPolicy {
    pub const ALL: [PriorityPolicy; 2] = [PriorityPolicy::FlFirst, PriorityPolicy::DcFirst];

    pub fn as_str(self) -> &'static str {
        match self {
            PriorityPolicy::FlFirst => "FL_FIRST",
            PriorityPolicy::DcFirst => "DC_FIRST",
        }
    }
}

impl fmt::Display for PriorityPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PriorityPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        PriorityPolicy::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown priority policy {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchedulerConfig {
    pub kind: SchedulerKind,
    pub priority_policy: PriorityPolicy,
    pub theta: f64,
    pub wavelength_policy: WavelengthPolicy,
    /// Maximum polling cycle `Z`.
    pub max_cycle: SimTime,
    pub guard: SimTime,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            kind: SchedulerKind::DwbaFl,
            priority_policy: PriorityPolicy::DcFirst,
            theta: 0.015,
            wavelength_policy: WavelengthPolicy::Ff,
            max_cycle: SimTime::from_millis(1),
            guard: SimTime::from_nanos(624),
        }
    }
}

impl SchedulerConfig {
    /// Checks `theta` and that a slice carries at least one full frame at
    /// the aggregate rate.
    pub fn validate(&self, aggregate_rate_bps: f64) -> Result<(), ConfigError> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(ConfigError::Validation(format!("theta must be in (0,1), got {}", self.theta)));
        }
        if self.max_cycle == SimTime::ZERO {
            return Err(ConfigError::Validation("max_cycle must be > 0".into()));
        }
        let mtu_wire = (MTU + DEFAULT_OVERHEAD) as u64;
        if slice_bytes(self.theta, self.max_cycle, aggregate_rate_bps) < mtu_wire {
            return Err(ConfigError::Validation(format!(
                "theta*max_cycle must fit one {mtu_wire} B frame at {aggregate_rate_bps} b/s"
            )));
        }
        Ok(())
    }

    /// Intra-ONU service order for a window of the given purpose.
    pub fn service_order(&self, purpose: GrantPurpose) -> ServiceOrder<'static> {
        match (self.kind, purpose) {
            (SchedulerKind::MwBs, GrantPurpose::FlSlice) => ServiceOrder::Priority(ORDER_FL_ONLY),
            (SchedulerKind::MwBs, GrantPurpose::Conventional) => ServiceOrder::Priority(ORDER_CONVENTIONAL),
            (SchedulerKind::IpactLimited, _) => ServiceOrder::Priority(ORDER_IPACT),
            (SchedulerKind::DwbaFl, _) => match self.priority_policy {
                PriorityPolicy::FlFirst => ServiceOrder::Priority(ORDER_FL_FIRST),
                PriorityPolicy::DcFirst => ServiceOrder::Priority(ORDER_DC_FIRST),
            },
            (SchedulerKind::Fcfs, _) => ServiceOrder::Fcfs,
        }
    }

    /// Policy label used in result rows: the priority policy for DWBA-FL,
    /// `NONE` otherwise.
    pub fn policy_label(&self) -> &'static str {
        match self.kind {
            SchedulerKind::DwbaFl => self.priority_policy.as_str(),
            _ => "NONE",
        }
    }
}

/// Bytes of one bandwidth slice: `floor(theta * Z * rate / 8)`.
pub fn slice_bytes(theta: f64, max_cycle: SimTime, rate_bps: f64) -> u64 {
    (theta * max_cycle.as_secs_f64() * rate_bps / 8.0).floor() as u64
}

/// Exclusive FL slice. While an ONU holds it, no other ONU gets FL bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SliceState {
    pub reserved_for: Option<usize>,
    pub remaining_fl_bytes: u64,
    pub slice_bytes_per_cycle: u64,
}

impl SliceState {
    pub fn new(slice_bytes_per_cycle: u64) -> Self {
        SliceState {
            reserved_for: None,
            remaining_fl_bytes: 0,
            slice_bytes_per_cycle,
        }
    }

    /// FL bytes granted to `onu` for a report of `fl_request` bytes.
    ///
    /// A free slice is reserved for the first reporter with FL backlog and
    /// its reported request; the reservation is drawn down by each grant
    /// and released when it reaches zero.
    pub fn grant(&mut self, onu: usize, fl_request: u64) -> u64 {
        if self.reserved_for.is_none() && fl_request > 0 {
            self.reserved_for = Some(onu);
            self.remaining_fl_bytes = fl_request;
        }
        if self.reserved_for != Some(onu) {
            return 0;
        }
        let g = self.remaining_fl_bytes.min(self.slice_bytes_per_cycle);
        self.remaining_fl_bytes -= g;
        if self.remaining_fl_bytes == 0 {
            self.reserved_for = None;
        }
        g
    }
}

/// One reservation of the slice, from first to last grant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SliceEpisode {
    pub onu: usize,
    pub demand: u64,
    pub granted: u64,
    pub opened: SimTime,
    pub closed: Option<SimTime>,
}

/// What the OLT knows about an ONU.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OnuInfo {
    pub rtt: SimTime,
    pub wmax: u64,
    pub group: Option<u32>,
}

/// One row of the gate log.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GateRecord {
    pub issued_at: SimTime,
    pub onu: usize,
    pub purpose: GrantPurpose,
    pub wavelength: usize,
    pub start: SimTime,
    pub duration: SimTime,
}

impl GateRecord {
    pub const CSV_HEADER: &'static str = "t_issue_ns,onu,purpose,wavelength,start_ns,duration_ns";
}

impl fmt::Display for GateRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{}",
            self.issued_at.as_nanos(),
            self.onu,
            self.purpose.as_str(),
            self.wavelength,
            self.start.as_nanos(),
            self.duration.as_nanos()
        )
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SchedError {
    #[error(transparent)]
    Twdm(#[from] TwdmError),
    #[error(transparent)]
    Dba(#[from] DbaError),
}

/// Group definition: member ONUs sharing their pooled assured bandwidth.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub id: u32,
    pub members: Vec<usize>,
    pub policy: ExcessPolicy,
}

#[derive(Clone, Debug)]
pub struct Olt {
    cfg: SchedulerConfig,
    channels: Vec<ChannelState>,
    onus: Vec<OnuInfo>,
    slice: SliceState,
    episodes: Vec<SliceEpisode>,
    groups: Vec<GroupState>,
}

impl Olt {
    pub fn new(
        cfg: SchedulerConfig,
        n_wavelengths: usize,
        line_rate_bps: u64,
        onus: Vec<OnuInfo>,
        groups: &[GroupSpec],
    ) -> Self {
        let aggregate = line_rate_bps as f64 * n_wavelengths as f64;
        Olt {
            cfg,
            channels: (0..n_wavelengths).map(|w| ChannelState::new(w, line_rate_bps)).collect(),
            onus,
            slice: SliceState::new(slice_bytes(cfg.theta, cfg.max_cycle, aggregate)),
            episodes: Vec::new(),
            groups: groups
                .iter()
                .map(|g| GroupState::new(g.id, g.members.clone(), g.policy))
                .collect(),
        }
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.cfg
    }

    pub fn channels(&self) -> &[ChannelState] {
        &self.channels
    }

    pub fn slice(&self) -> &SliceState {
        &self.slice
    }

    pub fn slice_episodes(&self) -> &[SliceEpisode] {
        &self.episodes
    }

    pub fn onu(&self, onu: usize) -> &OnuInfo {
        &self.onus[onu]
    }

    /// Handles a REPORT arriving at `now`. Returns the GATEs to send now:
    /// usually one, none while a group is still collecting reports, and one
    /// per member when a group completes.
    pub fn on_report(&mut self, report: &ReportMsg, now: SimTime) -> Result<Vec<GateMsg>, SchedError> {
        let onu = report.onu;
        if let Some(gid) = self.onus[onu].group {
            if let Some(gi) = self.groups.iter().position(|g| g.id == gid) {
                return self.on_report_group(gi, report, now);
            }
        }
        let gate = match self.cfg.kind {
            SchedulerKind::IpactLimited => self.on_report_ipact(report, now)?,
            SchedulerKind::MwBs => self.on_report_mwbs(report, now)?,
            SchedulerKind::DwbaFl => self.on_report_dwbafl(report, now)?,
            SchedulerKind::Fcfs => self.on_report_fcfs(report, now)?,
        };
        Ok(vec![gate])
    }

    fn gate(&mut self, onu: usize, segments: &[(GrantPurpose, u64)], now: SimTime) -> Result<GateMsg, SchedError> {
        let earliest = now + self.onus[onu].rtt;
        let grants = assign(
            self.cfg.wavelength_policy,
            onu,
            segments,
            REPORT_BYTES,
            earliest,
            self.cfg.guard,
            &mut self.channels,
        )?;
        Ok(GateMsg {
            onu,
            grants,
            issued_at: now,
        })
    }

    pub fn on_report_ipact(&mut self, report: &ReportMsg, now: SimTime) -> Result<GateMsg, SchedError> {
        let g = limited_grant(report.total(), self.onus[report.onu].wmax);
        self.gate(report.onu, &[(GrantPurpose::Conventional, g)], now)
    }

    /// The slice grant is sized first, then the limited grant over the
    /// conventional classes. Both go out as one burst, slice first.
    pub fn on_report_mwbs(&mut self, report: &ReportMsg, now: SimTime) -> Result<GateMsg, SchedError> {
        let onu = report.onu;
        let holder_before = self.slice.reserved_for;
        let fl = self.slice.grant(onu, report.get(TrafficClass::Fl));
        if fl > 0 {
            if holder_before != Some(onu) {
                self.episodes.push(SliceEpisode {
                    onu,
                    demand: report.get(TrafficClass::Fl),
                    granted: 0,
                    opened: now,
                    closed: None,
                });
            }
            let ep = self.episodes.last_mut().expect("open episode");
            ep.granted += fl;
            if self.slice.reserved_for.is_none() {
                ep.closed = Some(now);
            }
        }
        let conv = limited_grant(report.conventional(), self.onus[onu].wmax);
        let mut segments = Vec::with_capacity(2);
        if fl > 0 {
            segments.push((GrantPurpose::FlSlice, fl));
        }
        segments.push((GrantPurpose::Conventional, conv));
        self.gate(onu, &segments, now)
    }

    /// One limited grant over all classes; the split between classes happens
    /// at the ONU.
    pub fn on_report_dwbafl(&mut self, report: &ReportMsg, now: SimTime) -> Result<GateMsg, SchedError> {
        self.on_report_ipact(report, now)
    }

    pub fn on_report_fcfs(&mut self, report: &ReportMsg, now: SimTime) -> Result<GateMsg, SchedError> {
        self.on_report_ipact(report, now)
    }

    fn on_report_group(&mut self, gi: usize, report: &ReportMsg, now: SimTime) -> Result<Vec<GateMsg>, SchedError> {
        let onu = report.onu;
        let wmax = self.onus[onu].wmax;
        if !self.groups[gi].buffer(onu, report.total(), wmax) {
            return Ok(Vec::new());
        }
        let grants = group_schedule(&mut self.groups[gi])?;
        grants
            .into_iter()
            .map(|(member, bytes)| self.gate(member, &[(GrantPurpose::Conventional, bytes)], now))
            .collect()
    }
}
