//! Closed-form sizing and wasted-bandwidth calculators for IPACT and
//! group-SLA IPACT (GS-IPACT).
//!
//! The two textual forms of the GS-IPACT waste condition disagree in sign.
//! The no-waste condition is written as `RTT > sum(W_i + GT_i)`, while the
//! waste itself is written as `RTT - sum(W_i + GT_i)`, which is positive
//! exactly when that condition holds. Read physically, the channel idles
//! while the OLT waits one round trip for a report and only the non-group
//! windows can fill that gap, so idle time exists when `RTT` exceeds the
//! sum. The waste form is the one implemented, clamped at zero. The
//! inequality as printed would call that same case waste-free.

use std::fmt::Write as _;

use crate::error::ConfigError;
use crate::time::SimTime;

/// `(cycle - n_onus * guard) / n_onus`, floored to whole nanoseconds.
pub fn wmax_per_onu(cycle: SimTime, n_onus: usize, guard: SimTime) -> Result<SimTime, ConfigError> {
    if n_onus == 0 {
        return Err(ConfigError::Validation("n_onus must be > 0".into()));
    }
    let overhead = guard.as_nanos() * n_onus as u64;
    if cycle.as_nanos() <= overhead {
        return Err(ConfigError::Validation(format!(
            "cycle {cycle} does not exceed {n_onus} guard times of {guard}"
        )));
    }
    Ok(SimTime((cycle.as_nanos() - overhead) / n_onus as u64))
}

/// Share of an IPACT cycle lost waiting one round trip: `100 * rtt / cycle`.
pub fn ipact_waste_percent(cycle: SimTime, rtt: SimTime) -> f64 {
    assert!(cycle > SimTime::ZERO, "cycle must be positive");
    100.0 * rtt.as_nanos() as f64 / cycle.as_nanos() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct WasteInputs {
    pub cycle: SimTime,
    pub rtt: SimTime,
    pub n_onus: usize,
    pub n_group: usize,
    pub guard: SimTime,
    /// Window of each non-group ONU as a percentage of `W_max`.
    pub wlength_percent: f64,
    /// Measured `(window, guard)` of each non-group ONU; overrides the
    /// scalar form when present.
    pub per_onu_windows: Option<Vec<(SimTime, SimTime)>>,
}

impl WasteInputs {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_group > self.n_onus {
            return Err(ConfigError::Validation("n_group exceeds n_onus".into()));
        }
        if !(0.0..=100.0).contains(&self.wlength_percent) {
            return Err(ConfigError::Validation("wlength_percent outside [0,100]".into()));
        }
        Ok(())
    }

    /// Time the non-group ONUs keep the channel busy, in nanoseconds.
    fn filled_ns(&self) -> Result<f64, ConfigError> {
        if let Some(w) = &self.per_onu_windows {
            return Ok(w.iter().map(|(a, g)| (a.as_nanos() + g.as_nanos()) as f64).sum());
        }
        let wmax = wmax_per_onu(self.cycle, self.n_onus, self.guard)?;
        let per = self.wlength_percent / 100.0 * wmax.as_nanos() as f64 + self.guard.as_nanos() as f64;
        Ok((self.n_onus - self.n_group) as f64 * per)
    }
}

/// Idle time per cycle while group reports are outstanding, and the same as
/// a percentage of the cycle. Clamped at zero.
pub fn gsipact_waste(inputs: &WasteInputs) -> Result<(SimTime, f64), ConfigError> {
    inputs.validate()?;
    let idle_ns = (inputs.rtt.as_nanos() as f64 - inputs.filled_ns()?).max(0.0);
    let percent = 100.0 * idle_ns / inputs.cycle.as_nanos() as f64;
    Ok((SimTime(idle_ns.round() as u64), percent))
}

/// CSV table over a sweep of round-trip times and group sizes.
pub fn waste_table(
    cycle: SimTime,
    n_onus: usize,
    guard: SimTime,
    wlength_percent: f64,
    rtts: &[SimTime],
    group_sizes: &[usize],
) -> Result<String, ConfigError> {
    let wmax = wmax_per_onu(cycle, n_onus, guard)?;
    let mut out = String::from(
        "cycle_us,rtt_us,n_onus,n_group,guard_us,wlength_percent,wmax_us,ipact_waste_percent,gsipact_waste_us,gsipact_waste_percent\n",
    );
    for &rtt in rtts {
        for &n_group in group_sizes {
            let inputs = WasteInputs {
                cycle,
                rtt,
                n_onus,
                n_group,
                guard,
                wlength_percent,
                per_onu_windows: None,
            };
            let (idle, pct) = gsipact_waste(&inputs)?;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                cycle.as_micros_f64(),
                rtt.as_micros_f64(),
                n_onus,
                n_group,
                guard.as_micros_f64(),
                wlength_percent,
                wmax.as_micros_f64(),
                ipact_waste_percent(cycle, rtt),
                idle.as_micros_f64(),
                pct
            )
            .expect("write to string");
        }
    }
    Ok(out)
}
