//! Discrete-event simulator of the upstream channel of a multi-wavelength
//! Ethernet PON.
//!
//! The crate models ONU queues fed by CBR, self-similar and federated
//! learning traffic, an OLT running IPACT-style interleaved polling with a
//! choice of grant sizing (limited, bandwidth slicing, DWBA-FL, FCFS,
//! SLA groups with excess distribution) and wavelength assignment (SSD,
//! MSD, FF), and synchronous FL rounds with a synchronization window.
//!
//! [`sim::run_once`] runs one replication; [`runner::execute`] runs load
//! sweeps with replications and writes the result files.

pub mod analytics;
pub mod config;
pub mod dba;
pub mod error;
pub mod flsync;
pub mod kernel;
pub mod metrics;
pub mod pon;
pub mod rng;
pub mod runner;
pub mod sched;
pub mod selftest;
pub mod sim;
pub mod time;
pub mod traffic;
pub mod twdm;
