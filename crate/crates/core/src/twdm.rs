//! Upstream wavelength assignment.
//!
//! A burst is the ordered list of byte segments an ONU sends in one
//! granted transmission (for example an FL slice followed by the
//! conventional window). SSD splits every segment evenly over all
//! channels, MSD pins the ONU to one channel and FF takes the channel with
//! the earliest feasible start.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::TwdmError;
use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WavelengthPolicy {
    Ssd,
    Msd,
    Ff,
}

impl WavelengthPolicy {
    pub const ALL: [WavelengthPolicy; 3] = [WavelengthPolicy::Ssd, WavelengthPolicy::Msd, WavelengthPolicy::Ff];

    pub fn as_str(self) -> &'static str {
        match self {
            WavelengthPolicy::Ssd => "SSD",
            WavelengthPolicy::Msd => "MSD",
            WavelengthPolicy::Ff => "FF",
        }
    }
}

impl fmt::Display for WavelengthPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for WavelengthPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "SSD" => Ok(WavelengthPolicy::Ssd),
            "MSD" => Ok(WavelengthPolicy::Msd),
            "FF" => Ok(WavelengthPolicy::Ff),
            _ => Err(format!("unknown wavelength policy {s:?} (expected SSD, MSD or FF)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelState {
    pub wavelength: usize,
    pub line_rate_bps: u64,
    /// End of the last burst scheduled on this channel (OLT receive time).
    pub next_free: SimTime,
}

impl ChannelState {
    pub fn new(wavelength: usize, line_rate_bps: u64) -> Self {
        ChannelState {
            wavelength,
            line_rate_bps,
            next_free: SimTime::ZERO,
        }
    }

    /// Earliest start honouring the guard after the previous burst.
    pub fn feasible_start(&self, earliest: SimTime, guard: SimTime) -> SimTime {
        if self.next_free == SimTime::ZERO {
            earliest
        } else {
            earliest.max(self.next_free + guard)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GrantPurpose {
    FlSlice,
    Conventional,
}

impl GrantPurpose {
    pub fn as_str(self) -> &'static str {
        match self {
            GrantPurpose::FlSlice => "FL_SLICE",
            GrantPurpose::Conventional => "CONVENTIONAL",
        }
    }
}

/// One transmission window on one wavelength. `start` is the time the first
/// bit reaches the OLT.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grant {
    pub wavelength: usize,
    pub start: SimTime,
    pub duration: SimTime,
    pub purpose: GrantPurpose,
    /// Frame bytes the window carries, excluding the REPORT.
    pub data_bytes: u64,
    /// Whether the ONU appends its REPORT at the end of this window.
    pub carries_report: bool,
}

impl Grant {
    pub fn end(&self) -> SimTime {
        self.start + self.duration
    }
}

/// Splits `bytes` into `n` shares differing by at most one byte, larger
/// shares first.
pub fn even_split(bytes: u64, n: usize) -> Vec<u64> {
    let n64 = n as u64;
    (0..n64).map(|i| bytes / n64 + u64::from(i < bytes % n64)).collect()
}

/// Places a burst for `onu` on the channels and advances their `next_free`.
///
/// `segments` are `(purpose, data bytes)` in transmission order; segments of
/// one burst on one channel are back to back with no guard between them.
/// `report_bytes` is appended to the channel whose part of the burst ends
/// last (lowest index on ties). Channels receiving neither data nor the
/// report are left untouched.
#[allow(clippy::too_many_arguments)]
pub fn assign(
    policy: WavelengthPolicy,
    onu: usize,
    segments: &[(GrantPurpose, u64)],
    report_bytes: u64,
    earliest_start: SimTime,
    guard: SimTime,
    channels: &mut [ChannelState],
) -> Result<Vec<Grant>, TwdmError> {
    if channels.is_empty() {
        return Err(TwdmError::NoChannel);
    }
    let chosen: Vec<usize> = match policy {
        WavelengthPolicy::Ssd => (0..channels.len()).collect(),
        WavelengthPolicy::Msd => vec![msd_channel(onu, channels.len())],
        WavelengthPolicy::Ff => {
            let best = (0..channels.len())
                .min_by_key(|&c| (channels[c].feasible_start(earliest_start, guard), c))
                .expect("non-empty");
            vec![best]
        }
    };

    // Per chosen channel: its share of every segment.
    let shares: Vec<Vec<(GrantPurpose, u64)>> = {
        let mut per: Vec<Vec<(GrantPurpose, u64)>> = vec![Vec::new(); chosen.len()];
        for &(purpose, bytes) in segments {
            for (k, b) in even_split(bytes, chosen.len()).into_iter().enumerate() {
                if b > 0 {
                    per[k].push((purpose, b));
                }
            }
        }
        per
    };

    let starts: Vec<SimTime> = chosen
        .iter()
        .map(|&c| channels[c].feasible_start(earliest_start, guard))
        .collect();
    let ends: Vec<SimTime> = chosen
        .iter()
        .zip(&shares)
        .zip(&starts)
        .map(|((&c, segs), &s)| {
            let bytes: u64 = segs.iter().map(|x| x.1).sum();
            s + SimTime::airtime(bytes, channels[c].line_rate_bps)
        })
        .collect();
    let report_k = if report_bytes > 0 {
        // Ends last; among equal ends the lowest index. A channel with no
        // share still qualifies, at its feasible start.
        (0..chosen.len()).max_by_key(|&k| (ends[k], std::cmp::Reverse(k)))
    } else {
        None
    };

    let mut grants = Vec::new();
    for (k, &c) in chosen.iter().enumerate() {
        let mut segs = shares[k].clone();
        let carries_report = report_k == Some(k);
        if carries_report && segs.is_empty() {
            segs.push((GrantPurpose::Conventional, 0));
        }
        if segs.is_empty() {
            continue;
        }
        let mut t = starts[k];
        let last = segs.len() - 1;
        for (j, (purpose, bytes)) in segs.into_iter().enumerate() {
            let with_report = carries_report && j == last;
            let wire = bytes + if with_report { report_bytes } else { 0 };
            let duration = SimTime::airtime(wire, channels[c].line_rate_bps);
            grants.push(Grant {
                wavelength: c,
                start: t,
                duration,
                purpose,
                data_bytes: bytes,
                carries_report: with_report,
            });
            t += duration;
        }
        channels[c].next_free = t;
    }
    Ok(grants)
}

/// Fixed channel of `onu` under MSD.
pub fn msd_channel(onu: usize, n_channels: usize) -> usize {
    onu % n_channels
}
