//! Deterministic discrete-event engine.
//!
//! Events are ordered by `(fire_at, sequence)`; `sequence` is the insertion
//! counter, so simultaneous events fire in the order they were scheduled.
//! One engine is single-threaded. Independent replications each own an
//! engine and share nothing.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use crate::error::KernelError;
use crate::rng::RngStream;
use crate::time::SimTime;

#[derive(Debug, Clone)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub sequence: u64,
    pub kind: P,
}

impl<P> PartialEq for Event<P> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.sequence == other.sequence
    }
}

impl<P> Eq for Event<P> {}

impl<P> PartialOrd for Event<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Event<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.fire_at
            .cmp(&other.fire_at)
            .then_with(|| self.sequence.cmp(&other.sequence))
    }
}

pub struct Kernel<P> {
    now: SimTime,
    next_sequence: u64,
    queue: BinaryHeap<Reverse<Event<P>>>,
    processed: u64,
    master_seed: u64,
    streams: BTreeMap<String, RngStream>,
}

impl<P> Kernel<P> {
    pub fn new(master_seed: u64) -> Self {
        Kernel {
            now: SimTime::ZERO,
            next_sequence: 0,
            queue: BinaryHeap::new(),
            processed: 0,
            master_seed,
            streams: BTreeMap::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn scheduled_count(&self) -> u64 {
        self.next_sequence
    }

    pub fn processed_count(&self) -> u64 {
        self.processed
    }

    pub fn pending_count(&self) -> u64 {
        self.queue.len() as u64
    }

    pub fn schedule(&mut self, fire_at: SimTime, kind: P) -> Result<u64, KernelError> {
        if fire_at < self.now {
            return Err(KernelError::PastEvent {
                at: fire_at,
                now: self.now,
            });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.queue.push(Reverse(Event {
            fire_at,
            sequence,
            kind,
        }));
        Ok(sequence)
    }

    /// Schedules `delay` after the current time.
    pub fn schedule_in(&mut self, delay: SimTime, kind: P) -> u64 {
        let at = self.now + delay;
        self.schedule(at, kind).expect("relative schedule is never in the past")
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|Reverse(e)| e.fire_at)
    }

    /// Pops the next event if it fires at or before `t_end`, advancing the clock.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<Event<P>> {
        match self.queue.peek() {
            Some(Reverse(e)) if e.fire_at <= t_end => {}
            _ => return None,
        }
        let Reverse(event) = self.queue.pop()?;
        self.now = event.fire_at;
        self.processed += 1;
        Some(event)
    }

    /// Processes every event with `fire_at <= t_end`, then sets the clock to
    /// `t_end`. Returns the number of events processed by this call.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> u64
    where
        F: FnMut(&mut Self, Event<P>),
    {
        let start = self.processed;
        while let Some(event) = self.pop_until(t_end) {
            handler(self, event);
        }
        self.now = self.now.max(t_end);
        self.processed - start
    }

    /// Like [`Kernel::run_until`] but stops at the first handler error.
    pub fn try_run_until<F, E>(&mut self, t_end: SimTime, mut handler: F) -> Result<u64, E>
    where
        F: FnMut(&mut Self, Event<P>) -> Result<(), E>,
    {
        let start = self.processed;
        while let Some(event) = self.pop_until(t_end) {
            handler(self, event)?;
        }
        self.now = self.now.max(t_end);
        Ok(self.processed - start)
    }

    /// The stream named `name`; repeated calls continue the same stream.
    pub fn rng(&mut self, name: &str) -> &mut RngStream {
        let master = self.master_seed;
        self.streams
            .entry(name.to_string())
            .or_insert_with(|| RngStream::new(master, name))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn single_event_fires_at_its_time() {
        let mut k = Kernel::new(0);
        k.schedule(SimTime(10), "a").unwrap();
        let mut fired = Vec::new();
        k.run_until(SimTime(100), |k, e| fired.push((k.now(), e.kind)));
        assert_eq!(fired, vec![(SimTime(10), "a")]);
        assert_eq!(k.now(), SimTime(100));
    }

    #[test]
    fn ties_fire_in_insertion_order() {
        let mut k = Kernel::new(0);
        k.schedule(SimTime(10), "A").unwrap();
        k.schedule(SimTime(10), "B").unwrap();
        let mut fired = Vec::new();
        k.run_until(SimTime(10), |_, e| fired.push(e.kind));
        assert_eq!(fired, vec!["A", "B"]);
    }

    #[test]
    fn past_event_is_rejected() {
        let mut k: Kernel<()> = Kernel::new(0);
        k.run_until(SimTime(10), |_, _| {});
        assert_eq!(
            k.schedule(SimTime(5), ()),
            Err(KernelError::PastEvent {
                at: SimTime(5),
                now: SimTime(10)
            })
        );
    }

    #[test]
    fn empty_queue_advances_clock() {
        let mut k: Kernel<()> = Kernel::new(0);
        assert_eq!(k.run_until(SimTime(100), |_, _| {}), 0);
        assert_eq!(k.now(), SimTime(100));
    }

    #[test]
    fn run_until_is_inclusive_and_stops() {
        let mut k = Kernel::new(0);
        for t in [1, 2, 3] {
            k.schedule(SimTime(t), t).unwrap();
        }
        assert_eq!(k.run_until(SimTime(2), |_, _| {}), 2);
        assert_eq!(k.pending_count(), 1);
        assert_eq!(k.scheduled_count(), k.processed_count() + k.pending_count());
    }

    #[test]
    fn handlers_can_schedule_follow_ups() {
        let mut k = Kernel::new(0);
        k.schedule(SimTime(0), 0u32).unwrap();
        let n = k.run_until(SimTime(1_000), |k, e| {
            if e.kind < 9 {
                k.schedule_in(SimTime(100), e.kind + 1);
            }
        });
        assert_eq!(n, 10);
        assert_eq!(k.pending_count(), 0);
    }

    #[test]
    fn shuffled_insertion_processes_in_sorted_order() {
        let mut k = Kernel::new(0);
        let mut r = RngStream::new(99, "shuffle");
        let mut expected = Vec::new();
        for i in 0..10_000u64 {
            let t = SimTime(r.next_u64() % 500);
            let seq = k.schedule(t, i).unwrap();
            expected.push((t, seq, i));
        }
        expected.sort();
        let mut got = Vec::new();
        k.run_until(SimTime(1_000), |_, e| got.push((e.fire_at, e.sequence, e.kind)));
        assert_eq!(got, expected);
        assert_eq!(k.scheduled_count(), k.processed_count() + k.pending_count());
    }

    #[test]
    fn named_streams_continue() {
        let mut k: Kernel<()> = Kernel::new(5);
        let a = k.rng("cbr").next_u64();
        let b = k.rng("cbr").next_u64();
        let mut fresh = RngStream::new(5, "cbr");
        assert_eq!(a, fresh.next_u64());
        assert_eq!(b, fresh.next_u64());
    }
}
