//! Per-ONU arrival processes: CBR delay-critical traffic, self-similar
//! Pareto ON-OFF traffic for the delay-sensitive and best-effort classes,
//! and burst releases of federated-learning model uploads.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::rng::RngStream;
use crate::time::SimTime;

pub const MIN_PAYLOAD: u32 = 64;
pub const MAX_PAYLOAD: u32 = 1518;
pub const MTU: u32 = 1500;
pub const DEFAULT_OVERHEAD: u32 = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TrafficClass {
    #[serde(rename = "FL")]
    Fl,
    #[serde(rename = "DC")]
    Dc,
    #[serde(rename = "DS")]
    Ds,
    #[serde(rename = "BE")]
    Be,
}

impl TrafficClass {
    pub const ALL: [TrafficClass; 4] = [
        TrafficClass::Fl,
        TrafficClass::Dc,
        TrafficClass::Ds,
        TrafficClass::Be,
    ];

    pub const fn index(self) -> usize {
        self as usize
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            TrafficClass::Fl => "FL",
            TrafficClass::Dc => "DC",
            TrafficClass::Ds => "DS",
            TrafficClass::Be => "BE",
        }
    }
}

impl fmt::Display for TrafficClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Frame {
    pub id: u64,
    pub arrival: SimTime,
    pub fl_round: Option<u32>,
    pub onu: u16,
    pub payload_bytes: u16,
    pub overhead_bytes: u8,
    pub class: TrafficClass,
}

impl Frame {
    pub fn new(onu: usize, class: TrafficClass, payload_bytes: u32, arrival: SimTime) -> Self {
        debug_assert!((MIN_PAYLOAD..=MAX_PAYLOAD).contains(&payload_bytes));
        Frame {
            id: 0,
            arrival,
            fl_round: None,
            onu: onu as u16,
            payload_bytes: payload_bytes as u16,
            overhead_bytes: DEFAULT_OVERHEAD as u8,
            class,
        }
    }

    pub fn wire_bytes(&self) -> u64 {
        self.payload_bytes as u64 + self.overhead_bytes as u64
    }

    pub fn is_valid(&self) -> bool {
        (MIN_PAYLOAD..=MAX_PAYLOAD).contains(&(self.payload_bytes as u32))
            && (self.fl_round.is_some() == (self.class == TrafficClass::Fl))
    }
}

/// Writes one line per frame: `time_ns,onu,class,bytes`.
pub fn write_trace<'a, W: Write>(out: &mut W, frames: impl IntoIterator<Item = &'a Frame>) -> io::Result<()> {
    for f in frames {
        writeln!(out, "{},{},{},{}", f.arrival.as_nanos(), f.onu, f.class, f.payload_bytes)?;
    }
    Ok(())
}

/// A time-ordered source of frames that can be drained up to a horizon.
pub trait ArrivalSource {
    /// Arrival time of the next frame, if any.
    fn peek_time(&self) -> Option<SimTime>;
    fn next_frame(&mut self) -> Option<Frame>;

    /// Moves every frame arriving at or before `t` into `sink`.
    fn drain_until(&mut self, t: SimTime, mut sink: impl FnMut(Frame))
    where
        Self: Sized,
    {
        while self.peek_time().is_some_and(|a| a <= t) {
            sink(self.next_frame().expect("peeked frame"));
        }
    }
}

// ---------------------------------------------------------------------------
// CBR

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CbrSpec {
    pub packet_bytes: u32,
    pub interarrival: SimTime,
}

impl Default for CbrSpec {
    fn default() -> Self {
        CbrSpec {
            packet_bytes: 70,
            interarrival: SimTime::from_nanos(12_500),
        }
    }
}

impl CbrSpec {
    pub fn rate_bps(&self) -> f64 {
        8.0 * self.packet_bytes as f64 / self.interarrival.as_secs_f64()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(MIN_PAYLOAD..=MAX_PAYLOAD).contains(&self.packet_bytes) {
            return Err(ConfigError::Validation(format!(
                "cbr.packet_bytes must be in [{MIN_PAYLOAD}, {MAX_PAYLOAD}]"
            )));
        }
        if self.interarrival == SimTime::ZERO {
            return Err(ConfigError::Validation("cbr.interarrival must be > 0".into()));
        }
        Ok(())
    }
}

/// Frames at `k * interarrival` for `k >= 1`.
#[derive(Clone, Debug)]
pub struct CbrSource {
    spec: CbrSpec,
    onu: usize,
    k: u64,
    horizon: SimTime,
}

impl CbrSource {
    pub fn new(spec: CbrSpec, onu: usize, horizon: SimTime) -> Self {
        CbrSource {
            spec,
            onu,
            k: 1,
            horizon,
        }
    }
}

impl ArrivalSource for CbrSource {
    fn peek_time(&self) -> Option<SimTime> {
        let t = SimTime(self.k * self.spec.interarrival.as_nanos());
        (t <= self.horizon).then_some(t)
    }

    fn next_frame(&mut self) -> Option<Frame> {
        let t = self.peek_time()?;
        self.k += 1;
        Some(Frame::new(self.onu, TrafficClass::Dc, self.spec.packet_bytes, t))
    }
}

impl Iterator for CbrSource {
    type Item = Frame;
    fn next(&mut self) -> Option<Frame> {
        self.next_frame()
    }
}

pub fn cbr_arrivals(spec: CbrSpec, horizon: SimTime) -> CbrSource {
    CbrSource::new(spec, 0, horizon)
}

// ---------------------------------------------------------------------------
// Pareto ON-OFF

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParetoOnOffSpec {
    /// Target Hurst parameter; sets the Pareto shape of the periods.
    pub hurst: f64,
    /// Bounded-Pareto shape of the per-burst byte budget. `None` uses the
    /// ON shape derived from `hurst`.
    pub burst_shape: Option<f64>,
    pub burst_min: u64,
    pub burst_max: u64,
    /// Long-run payload rate of the whole stream.
    pub target_rate_bps: f64,
    /// Mean ON period of one sub-source. Fixes the rate at which a
    /// sub-source emits its burst.
    pub mean_on: SimTime,
    /// Independent ON-OFF sub-sources superposed into the stream. `None`
    /// picks the smallest count that keeps every sub-source OFF at least
    /// half of the time.
    pub sources: Option<u32>,
}

impl Default for ParetoOnOffSpec {
    fn default() -> Self {
        ParetoOnOffSpec {
            hurst: 0.8,
            burst_shape: None,
            burst_min: 1_500,
            burst_max: 1_500_000,
            target_rate_bps: 0.0,
            mean_on: SimTime::from_millis(10),
            sources: None,
        }
    }
}

const MEAN_PAYLOAD: f64 = (MIN_PAYLOAD + MAX_PAYLOAD) as f64 / 2.0;

impl ParetoOnOffSpec {
    pub fn with_rate(target_rate_bps: f64) -> Self {
        ParetoOnOffSpec {
            target_rate_bps,
            ..Default::default()
        }
    }

    /// Pareto shape of the ON (and OFF) periods: `3 - 2H`.
    pub fn shape_on(&self) -> f64 {
        3.0 - 2.0 * self.hurst
    }

    pub fn burst_shape(&self) -> f64 {
        self.burst_shape.unwrap_or_else(|| self.shape_on())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Validation(m.to_string()));
        if !(self.hurst > 0.5 && self.hurst < 1.0) {
            return bad("pareto.hurst must be in (0.5, 1)");
        }
        if self.burst_min >= self.burst_max {
            return bad("pareto.burst_min must be < pareto.burst_max");
        }
        if self.burst_min == 0 {
            return bad("pareto.burst_min must be > 0");
        }
        if !(self.burst_shape() > 0.0) {
            return bad("pareto.burst_shape must be > 0");
        }
        if !(self.target_rate_bps >= 0.0 && self.target_rate_bps.is_finite()) {
            return bad("pareto target rate must be a non-negative number");
        }
        if self.mean_on == SimTime::ZERO {
            return bad("pareto.mean_on must be > 0");
        }
        if self.sources == Some(0) {
            return bad("pareto.sources must be >= 1");
        }
        if self.target_rate_bps > 0.0 && self.mean_off_secs() <= 0.0 {
            return bad("pareto target rate exceeds what the sub-sources can emit");
        }
        Ok(())
    }

    /// Survival function of the bounded-Pareto burst budget.
    fn burst_survival(&self, x: f64) -> f64 {
        let (l, h, a) = (self.burst_min as f64, self.burst_max as f64, self.burst_shape());
        if x < l {
            1.0
        } else if x >= h {
            0.0
        } else {
            (l.powf(a) * (x.powf(-a) - h.powf(-a))) / (1.0 - (l / h).powf(a))
        }
    }

    /// Expected frames per burst, `E[ceil(B / mean_payload)]`, summed exactly
    /// from the survival function.
    pub fn mean_frames_per_burst(&self) -> f64 {
        let mut sum = 1.0;
        let mut k = 1.0;
        while k * MEAN_PAYLOAD < self.burst_max as f64 {
            sum += self.burst_survival(k * MEAN_PAYLOAD);
            k += 1.0;
        }
        sum
    }

    pub fn mean_on_secs(&self) -> f64 {
        self.mean_on.as_secs_f64()
    }

    /// Wire rate of a sub-source while ON, chosen so that the mean burst
    /// lasts `mean_on`.
    pub fn peak_rate_bps(&self) -> f64 {
        self.mean_frames_per_burst() * (MEAN_PAYLOAD + DEFAULT_OVERHEAD as f64) * 8.0 / self.mean_on_secs()
    }

    pub fn source_count(&self) -> u32 {
        self.sources.unwrap_or_else(|| {
            let peak_payload = self.peak_rate_bps() * MEAN_PAYLOAD / (MEAN_PAYLOAD + DEFAULT_OVERHEAD as f64);
            ((2.0 * self.target_rate_bps / peak_payload).ceil() as u32).max(1)
        })
    }

    /// Mean OFF duration that makes the long-run payload rate equal the target.
    pub fn mean_off_secs(&self) -> f64 {
        if self.target_rate_bps <= 0.0 {
            return f64::INFINITY;
        }
        let sub_rate = self.target_rate_bps / self.source_count() as f64;
        self.mean_frames_per_burst() * MEAN_PAYLOAD * 8.0 / sub_rate - self.mean_on_secs()
    }
}

fn bounded_pareto(rng: &mut RngStream, shape: f64, lo: f64, hi: f64) -> f64 {
    let u = rng.unit();
    let ratio = (lo / hi).powf(shape);
    lo / (1.0 - u * (1.0 - ratio)).powf(1.0 / shape)
}

fn pareto(rng: &mut RngStream, shape: f64, scale: f64) -> f64 {
    scale / rng.unit_open0().powf(1.0 / shape)
}

#[derive(Clone, Copy, Debug)]
struct SubSource {
    next_at: SimTime,
    frames_left: u64,
    next_payload: u32,
}

/// Superposition of independent Pareto ON-OFF sub-sources.
#[derive(Clone, Debug)]
pub struct ParetoOnOffSource {
    spec: ParetoOnOffSpec,
    onu: usize,
    class: TrafficClass,
    rng: RngStream,
    subs: Vec<SubSource>,
    shape: f64,
    burst_shape: f64,
    off_scale_secs: f64,
    peak_rate_bps: f64,
    horizon: SimTime,
    heap: BinaryHeap<Reverse<(SimTime, usize)>>,
}

impl ParetoOnOffSource {
    pub fn new(
        spec: ParetoOnOffSpec,
        onu: usize,
        class: TrafficClass,
        rng: RngStream,
        horizon: SimTime,
    ) -> Result<Self, ConfigError> {
        spec.validate()?;
        let alpha = spec.shape_on();
        let mut src = ParetoOnOffSource {
            spec,
            onu,
            class,
            rng,
            subs: Vec::new(),
            shape: alpha,
            burst_shape: spec.burst_shape(),
            off_scale_secs: 0.0,
            peak_rate_bps: spec.peak_rate_bps(),
            horizon,
            heap: BinaryHeap::new(),
        };
        if spec.target_rate_bps > 0.0 {
            src.off_scale_secs = spec.mean_off_secs() * (alpha - 1.0) / alpha;
            for i in 0..spec.source_count() as usize {
                // Start each sub-source at a random point of its first OFF
                // period so they do not all switch on at t = 0.
                let first_off = src.draw_off_secs() * src.rng.unit();
                let mut sub = SubSource {
                    next_at: SimTime::from_secs_f64(first_off.min(1e9)),
                    frames_left: 0,
                    next_payload: 0,
                };
                src.start_burst(&mut sub);
                src.subs.push(sub);
                if sub.next_at <= horizon {
                    src.heap.push(Reverse((sub.next_at, i)));
                }
            }
        }
        Ok(src)
    }

    pub fn spec(&self) -> &ParetoOnOffSpec {
        &self.spec
    }

    pub fn source_count(&self) -> usize {
        self.subs.len()
    }

    fn draw_off_secs(&mut self) -> f64 {
        pareto(&mut self.rng, self.shape, self.off_scale_secs)
    }

    fn start_burst(&mut self, sub: &mut SubSource) {
        let b = bounded_pareto(
            &mut self.rng,
            self.burst_shape,
            self.spec.burst_min as f64,
            self.spec.burst_max as f64,
        );
        sub.frames_left = (b / MEAN_PAYLOAD).ceil().max(1.0) as u64;
        sub.next_payload = self.draw_payload();
    }

    fn draw_payload(&mut self) -> u32 {
        self.rng.range_inclusive(MIN_PAYLOAD as u64, MAX_PAYLOAD as u64) as u32
    }
}

impl ArrivalSource for ParetoOnOffSource {
    fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse((t, _))| *t)
    }

    fn next_frame(&mut self) -> Option<Frame> {
        let Reverse((_, i)) = self.heap.pop()?;
        let mut sub = self.subs[i];
        let frame = Frame::new(self.onu, self.class, sub.next_payload, sub.next_at);
        let airtime = SimTime::from_secs_f64(frame.wire_bytes() as f64 * 8.0 / self.peak_rate_bps);
        sub.next_at += airtime.max(SimTime(1));
        sub.frames_left -= 1;
        if sub.frames_left == 0 {
            // Saturate far beyond any run horizon.
            let off = self.draw_off_secs().min(1e9);
            sub.next_at += SimTime::from_secs_f64(off);
            self.start_burst(&mut sub);
        } else {
            sub.next_payload = self.draw_payload();
        }
        self.subs[i] = sub;
        if sub.next_at <= self.horizon {
            self.heap.push(Reverse((sub.next_at, i)));
        }
        Some(frame)
    }
}

impl Iterator for ParetoOnOffSource {
    type Item = Frame;
    fn next(&mut self) -> Option<Frame> {
        self.next_frame()
    }
}

pub fn pareto_onoff_arrivals(
    spec: ParetoOnOffSpec,
    rng: RngStream,
    horizon: SimTime,
) -> Result<ParetoOnOffSource, ConfigError> {
    ParetoOnOffSource::new(spec, 0, TrafficClass::Ds, rng, horizon)
}

// ---------------------------------------------------------------------------
// Federated-learning uploads

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum ComputeTimeDist {
    Uniform { min: SimTime, max: SimTime },
    Constant { value: SimTime },
}

impl ComputeTimeDist {
    pub fn sample(&self, rng: &mut RngStream) -> SimTime {
        match *self {
            ComputeTimeDist::Uniform { min, max } => {
                SimTime(rng.range_inclusive(min.as_nanos(), max.as_nanos()))
            }
            ComputeTimeDist::Constant { value } => value,
        }
    }

    /// `P(compute <= t)`.
    pub fn cdf(&self, t: SimTime) -> f64 {
        match *self {
            ComputeTimeDist::Uniform { min, max } => {
                if t < min {
                    0.0
                } else if t >= max {
                    1.0
                } else {
                    (t.as_nanos() - min.as_nanos() + 1) as f64 / (max.as_nanos() - min.as_nanos() + 1) as f64
                }
            }
            ComputeTimeDist::Constant { value } => {
                if t >= value {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn mean(&self) -> SimTime {
        match *self {
            ComputeTimeDist::Uniform { min, max } => SimTime((min.as_nanos() + max.as_nanos()) / 2),
            ComputeTimeDist::Constant { value } => value,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlWorkloadSpec {
    pub payload_bytes_per_round: u64,
    /// Number of ONUs hosting a client (ONUs `0..clients`). `None` means all.
    pub clients: Option<u32>,
    pub compute_time: ComputeTimeDist,
    pub downstream_delay: SimTime,
    pub aggregation_delay: SimTime,
    /// Synchronization window per round.
    pub sync_window: SimTime,
}

impl Default for FlWorkloadSpec {
    fn default() -> Self {
        FlWorkloadSpec {
            payload_bytes_per_round: 26_400_000,
            clients: None,
            compute_time: ComputeTimeDist::Uniform {
                min: SimTime::from_millis(1_000),
                max: SimTime::from_millis(2_500),
            },
            downstream_delay: SimTime::from_millis(10),
            aggregation_delay: SimTime::from_millis(10),
            sync_window: SimTime::from_secs(3),
        }
    }
}

impl FlWorkloadSpec {
    pub fn frames_per_round(&self) -> u64 {
        self.payload_bytes_per_round.div_ceil(MTU as u64)
    }

    pub fn wire_bytes_per_round(&self) -> u64 {
        let full = self.payload_bytes_per_round / MTU as u64;
        let rem = self.payload_bytes_per_round % MTU as u64;
        let mut bytes = full * (MTU + DEFAULT_OVERHEAD) as u64;
        if rem > 0 {
            bytes += rem.max(MIN_PAYLOAD as u64) + DEFAULT_OVERHEAD as u64;
        }
        bytes
    }

    /// Round period: synchronization window plus aggregation.
    pub fn round_period(&self) -> SimTime {
        self.sync_window + self.aggregation_delay
    }

    /// Long-run payload rate of one client.
    pub fn mean_rate_bps(&self) -> f64 {
        self.payload_bytes_per_round as f64 * 8.0 / self.round_period().as_secs_f64()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.sync_window == SimTime::ZERO {
            return Err(ConfigError::Validation("fl.sync_window must be > 0".into()));
        }
        if let ComputeTimeDist::Uniform { min, max } = self.compute_time {
            if min > max {
                return Err(ConfigError::Validation("fl.compute_time min > max".into()));
            }
        }
        Ok(())
    }
}

/// Frames of one client's upload for one round, all released at `release`.
/// Full 1500 B frames; the remainder is padded to the 64 B minimum.
pub fn fl_round_frames(spec: &FlWorkloadSpec, client: usize, round: u32, release: SimTime) -> Vec<Frame> {
    let total = spec.payload_bytes_per_round;
    let n = spec.frames_per_round();
    (0..n)
        .map(|k| {
            let payload = if k + 1 == n && total % MTU as u64 != 0 {
                (total % MTU as u64).max(MIN_PAYLOAD as u64) as u32
            } else {
                MTU
            };
            let mut f = Frame::new(client, TrafficClass::Fl, payload, release);
            f.fl_round = Some(round);
            f
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Self-similarity

/// Sample variances of the block means of `series` at each aggregation
/// level, as `(m, blocks, variance)`. Levels with fewer than two blocks or a
/// zero variance are skipped.
fn aggregated_variances(series: &[f64], levels: &[usize]) -> Vec<(f64, f64, f64)> {
    let mut points = Vec::new();
    for &m in levels {
        let blocks = series.len() / m;
        if m == 0 || blocks < 2 {
            continue;
        }
        let means: Vec<f64> = series
            .chunks_exact(m)
            .map(|c| c.iter().sum::<f64>() / m as f64)
            .collect();
        let mu = means.iter().sum::<f64>() / means.len() as f64;
        let var = means.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
        if var > 0.0 {
            points.push((m as f64, blocks as f64, var));
        }
    }
    assert!(points.len() >= 2, "not enough aggregation levels");
    points
}

/// Hurst estimate from the variance-time plot of `series` at the given
/// aggregation levels: least-squares slope `b` of `log var(X^(m))` against
/// `log m`, and `H = 1 + b / 2`.
pub fn variance_time_hurst(series: &[f64], levels: &[usize]) -> f64 {
    let points = aggregated_variances(series, levels);
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.2.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    1.0 + (sxy / sxx) / 2.0
}
