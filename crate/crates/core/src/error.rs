use thiserror::Error;

use crate::time::SimTime;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TimeParseError {
    #[error("unknown time unit {0:?} (expected ns, us, ms or s)")]
    Unit(String),
    #[error("invalid or sub-nanosecond time value {0:?}")]
    Value(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("event scheduled at {at} but the clock is already at {now}")]
    PastEvent { at: SimTime, now: SimTime },
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Validation(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PonError {
    #[error("buffer overflow at onu {onu}: frame of {wire_bytes} B dropped")]
    BufferOverflow { onu: usize, wire_bytes: u64 },
    #[error("grant overflow on onu {onu}: {needed} exceeds granted {granted}")]
    GrantOverflow {
        onu: usize,
        needed: SimTime,
        granted: SimTime,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DbaError {
    #[error("group {group} scheduled before all member reports arrived")]
    IncompleteGroup { group: u32 },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TwdmError {
    #[error("no upstream channels available")]
    NoChannel,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("no samples")]
    EmptySamples,
    #[error("need at least two replications, got {0}")]
    InsufficientReplications(usize),
    #[error("accuracy table is empty")]
    EmptyTable,
}

/// A protocol invariant tripped during a run.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invariant `{name}` violated at t={at}: {detail}")]
pub struct InvariantViolation {
    pub name: &'static str,
    pub at: SimTime,
    pub detail: String,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Invariant(#[from] InvariantViolation),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Twdm(#[from] TwdmError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
