//! ONU-side state: per-class queues, REPORT snapshots, the intra-ONU
//! dequeuer and back-to-back transmission inside a granted window.

use std::collections::VecDeque;

use crate::error::PonError;
use crate::time::SimTime;
use crate::traffic::{Frame, TrafficClass};
use crate::twdm::Grant;

/// Size of an MPCP REPORT on the wire.
pub const REPORT_BYTES: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlaProfile {
    pub guaranteed_bps: f64,
    pub wmax_bytes: u64,
    pub group: Option<u32>,
}

impl SlaProfile {
    /// `W_max` is the guaranteed rate's worth of bytes per maximum cycle.
    pub fn new(guaranteed_bps: f64, max_cycle: SimTime, group: Option<u32>) -> Self {
        SlaProfile {
            guaranteed_bps,
            wmax_bytes: (guaranteed_bps * max_cycle.as_secs_f64() / 8.0).floor() as u64,
            group,
        }
    }
}

/// Queue occupancy snapshot sent to the OLT, in wire bytes per class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReportMsg {
    pub onu: usize,
    pub sent_at: SimTime,
    pub queue_bytes: [u64; 4],
}

impl ReportMsg {
    pub fn zero(onu: usize, at: SimTime) -> Self {
        ReportMsg {
            onu,
            sent_at: at,
            queue_bytes: [0; 4],
        }
    }

    pub fn get(&self, class: TrafficClass) -> u64 {
        self.queue_bytes[class.index()]
    }

    pub fn total(&self) -> u64 {
        self.queue_bytes.iter().sum()
    }

    pub fn conventional(&self) -> u64 {
        self.total() - self.get(TrafficClass::Fl)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GateMsg {
    pub onu: usize,
    pub grants: Vec<Grant>,
    pub issued_at: SimTime,
}

/// Which frames a window may carry, in service order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ServiceOrder<'a> {
    /// Strict priority over the listed classes.
    Priority(&'a [TrafficClass]),
    /// Single FIFO across all classes, by arrival time.
    Fcfs,
}

pub const ORDER_IPACT: &[TrafficClass] = &[TrafficClass::Dc, TrafficClass::Ds, TrafficClass::Be, TrafficClass::Fl];
pub const ORDER_FL_FIRST: &[TrafficClass] = &[TrafficClass::Fl, TrafficClass::Dc, TrafficClass::Ds, TrafficClass::Be];
pub const ORDER_DC_FIRST: &[TrafficClass] = &[TrafficClass::Dc, TrafficClass::Fl, TrafficClass::Ds, TrafficClass::Be];
pub const ORDER_FL_ONLY: &[TrafficClass] = &[TrafficClass::Fl];
pub const ORDER_CONVENTIONAL: &[TrafficClass] = &[TrafficClass::Dc, TrafficClass::Ds, TrafficClass::Be];

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassCounters {
    pub enqueued: [u64; 4],
    pub transmitted: [u64; 4],
    pub dropped: [u64; 4],
}

#[derive(Clone, Debug)]
pub struct OnuState {
    pub index: usize,
    queues: [VecDeque<Frame>; 4],
    queue_bytes: [u64; 4],
    pub rtt: SimTime,
    pub sla: SlaProfile,
    pub pending_gate: Option<GateMsg>,
    /// Drop-tail limit on the total queued wire bytes; `None` is unbounded.
    pub buffer_bytes: Option<u64>,
    pub counters: ClassCounters,
}

impl OnuState {
    pub fn new(index: usize, rtt: SimTime, sla: SlaProfile) -> Self {
        assert!(rtt > SimTime::ZERO, "rtt must be positive");
        OnuState {
            index,
            queues: Default::default(),
            queue_bytes: [0; 4],
            rtt,
            sla,
            pending_gate: None,
            buffer_bytes: None,
            counters: ClassCounters::default(),
        }
    }

    pub fn one_way(&self) -> SimTime {
        SimTime(self.rtt.as_nanos() / 2)
    }

    pub fn queue_bytes(&self, class: TrafficClass) -> u64 {
        self.queue_bytes[class.index()]
    }

    pub fn queue_len(&self, class: TrafficClass) -> usize {
        self.queues[class.index()].len()
    }

    pub fn total_queued_bytes(&self) -> u64 {
        self.queue_bytes.iter().sum()
    }

    pub fn enqueue(&mut self, frame: Frame) -> Result<(), PonError> {
        let c = frame.class.index();
        let wire = frame.wire_bytes();
        self.counters.enqueued[c] += 1;
        if let Some(limit) = self.buffer_bytes {
            if self.total_queued_bytes() + wire > limit {
                self.counters.dropped[c] += 1;
                return Err(PonError::BufferOverflow {
                    onu: self.index,
                    wire_bytes: wire,
                });
            }
        }
        self.queue_bytes[c] += wire;
        self.queues[c].push_back(frame);
        Ok(())
    }

    pub fn build_report(&self, at: SimTime) -> ReportMsg {
        ReportMsg {
            onu: self.index,
            sent_at: at,
            queue_bytes: self.queue_bytes,
        }
    }

    fn pop(&mut self, class: TrafficClass) -> Frame {
        let c = class.index();
        let f = self.queues[c].pop_front().expect("non-empty queue");
        self.queue_bytes[c] -= f.wire_bytes();
        self.counters.transmitted[c] += 1;
        f
    }

    /// Removes the frames a window of `budget_bytes` carries.
    ///
    /// Classes are served strictly in `order`, FIFO within a class. A class
    /// stops at the first head frame that no longer fits and service moves
    /// on to the next class; frames are never split.
    pub fn dequeue_for_window(&mut self, budget_bytes: u64, order: &[TrafficClass]) -> Vec<Frame> {
        let mut out = Vec::new();
        self.dequeue_into(budget_bytes, ServiceOrder::Priority(order), &mut out);
        out
    }

    /// Arrival-ordered service across all classes (ties by class index);
    /// stops at the first frame that does not fit.
    pub fn dequeue_fcfs(&mut self, budget_bytes: u64) -> Vec<Frame> {
        let mut out = Vec::new();
        self.dequeue_into(budget_bytes, ServiceOrder::Fcfs, &mut out);
        out
    }

    pub fn dequeue_into(&mut self, budget_bytes: u64, order: ServiceOrder<'_>, out: &mut Vec<Frame>) {
        let mut left = budget_bytes;
        match order {
            ServiceOrder::Priority(classes) => {
                for &class in classes {
                    while let Some(head) = self.queues[class.index()].front() {
                        let w = head.wire_bytes();
                        if w > left {
                            break;
                        }
                        left -= w;
                        out.push(self.pop(class));
                    }
                }
            }
            ServiceOrder::Fcfs => loop {
                let next = TrafficClass::ALL
                    .iter()
                    .filter_map(|&c| self.queues[c.index()].front().map(|f| (f.arrival, c)))
                    .min();
                let Some((_, class)) = next else { break };
                let w = self.queues[class.index()].front().expect("head").wire_bytes();
                if w > left {
                    break;
                }
                left -= w;
                out.push(self.pop(class));
            },
        }
    }
}

/// A frame leaving the PON: `departure` is when its last bit reaches the OLT.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Departure {
    pub frame: Frame,
    pub departure: SimTime,
    pub wavelength: usize,
}

/// Sends `frames` back to back from `grant.start` at `line_rate_bps`.
pub fn transmit(
    onu: usize,
    grant: &Grant,
    frames: &[Frame],
    line_rate_bps: u64,
    out: &mut Vec<Departure>,
) -> Result<SimTime, PonError> {
    let report = if grant.carries_report { REPORT_BYTES } else { 0 };
    let mut cumulative = 0u64;
    for f in frames {
        cumulative += f.wire_bytes();
        out.push(Departure {
            frame: *f,
            departure: grant.start + SimTime::airtime(cumulative, line_rate_bps),
            wavelength: grant.wavelength,
        });
    }
    let needed = SimTime::airtime(cumulative + report, line_rate_bps);
    if needed > grant.duration {
        return Err(PonError::GrantOverflow {
            onu,
            needed,
            granted: grant.duration,
        });
    }
    Ok(grant.end())
}
