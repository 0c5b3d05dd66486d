//! Deterministic discrete-event engine.
//!
//! Events are ordered by `(fire_at, seq)` where `seq` is the global issue
//! order, so two events scheduled for the same instant fire in the order
//! they were scheduled. Handlers see the clock at exactly the event's
//! `fire_at`.

mod rng;
mod time;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;

use thiserror::Error;

pub use self::rng::{sample_exponential, RngStream};
pub use self::time::{SimTime, NANOS_PER_MILLI, NANOS_PER_SEC};

/// Identifies the module instance an event is addressed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModuleId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle {
    seq: u64,
}

#[derive(Debug)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: ModuleId,
    pub payload: P,
}

impl<P> PartialEq for Event<P> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<P> Eq for Event<P> {}

impl<P> Ord for Event<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

impl<P> PartialOrd for Event<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("engine stopped; cannot schedule new events")]
    EngineStopped,
    #[error("handler fault at {time} on event #{seq} ({event}): {message}")]
    HandlerFault {
        time: SimTime,
        seq: u64,
        event: String,
        message: String,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunReport {
    pub processed: u64,
    pub cancelled: u64,
    pub final_clock: SimTime,
}

/// One processed event as recorded by the optional trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: ModuleId,
    pub payload: String,
}

pub struct Kernel<P> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Event<P>>,
    cancelled: HashSet<u64>,
    stopped: bool,
    halt: bool,
    trace: Option<Vec<TraceEntry>>,
}

impl<P> Default for Kernel<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Kernel<P> {
    pub fn new() -> Self {
        Kernel {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            cancelled: HashSet::new(),
            stopped: false,
            halt: false,
            trace: None,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn take_trace(&mut self) -> Option<Vec<TraceEntry>> {
        self.trace.take()
    }

    pub fn schedule(&mut self, delay: SimTime, target: ModuleId, payload: P) -> Result<EventHandle, KernelError> {
        self.schedule_at(self.now.saturating_add(delay), target, payload)
    }

    /// Schedules at an absolute instant. Instants in the past are clamped to now.
    pub fn schedule_at(&mut self, at: SimTime, target: ModuleId, payload: P) -> Result<EventHandle, KernelError> {
        if self.stopped {
            return Err(KernelError::EngineStopped);
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Event {
            fire_at: at.max(self.now),
            seq,
            target,
            payload,
        });
        Ok(EventHandle { seq })
    }

    /// Cancels a pending event. Returns false if it was already cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.cancelled.insert(handle.seq)
    }

    pub fn shutdown(&mut self) {
        self.stopped = true;
    }

    /// Ends `run` after the event currently being handled.
    pub fn halt(&mut self) {
        self.halt = true;
    }

    /// Processes events in `(fire_at, seq)` order until the queue drains or
    /// the next event lies beyond `until`. The engine is shut down afterwards.
    pub fn run<F>(&mut self, until: SimTime, mut handler: F) -> Result<RunReport, KernelError>
    where
        F: FnMut(&mut Kernel<P>, Event<P>) -> Result<(), String>,
        P: fmt::Debug,
    {
        let mut report = RunReport::default();
        while let Some(top) = self.queue.peek() {
            if top.fire_at > until {
                break;
            }
            let event = self.queue.pop().expect("peeked");
            if self.cancelled.remove(&event.seq) {
                report.cancelled += 1;
                continue;
            }
            debug_assert!(event.fire_at >= self.now);
            self.now = event.fire_at;
            if let Some(trace) = self.trace.as_mut() {
                trace.push(TraceEntry {
                    fire_at: event.fire_at,
                    seq: event.seq,
                    target: event.target,
                    payload: format!("{:?}", event.payload),
                });
            }
            let (time, seq, target) = (event.fire_at, event.seq, event.target);
            if let Err(message) = handler(self, event) {
                self.stopped = true;
                return Err(KernelError::HandlerFault {
                    time,
                    seq,
                    event: format!("{target:?}"),
                    message,
                });
            }
            report.processed += 1;
            if self.halt {
                break;
            }
        }
        self.stopped = true;
        report.final_clock = self.now;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const M: ModuleId = ModuleId(0);

    #[test]
    fn zero_delay_fires_after_earlier_seq_at_same_instant() {
        let mut k: Kernel<&'static str> = Kernel::new();
        k.schedule(SimTime::from_millis(1), M, "a").unwrap();
        k.schedule(SimTime::from_millis(1), M, "b").unwrap();
        let mut seen = Vec::new();
        k.run(SimTime::from_secs(1), |k, ev| {
            seen.push(ev.payload);
            if ev.payload == "a" {
                k.schedule(SimTime::ZERO, M, "c").unwrap();
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec!["a", "b", "c"]);
    }

    #[test]
    fn halt_stops_after_current_event() {
        let mut k: Kernel<u8> = Kernel::new();
        for i in 0..5 {
            k.schedule(SimTime::from_secs(i), M, i as u8).unwrap();
        }
        let mut seen = Vec::new();
        let r = k
            .run(SimTime::MAX, |k, ev| {
                seen.push(ev.payload);
                if ev.payload == 2 {
                    k.halt();
                }
                Ok(())
            })
            .unwrap();
        assert_eq!(seen, vec![0, 1, 2]);
        assert_eq!(r.final_clock, SimTime::from_secs(2));
    }

    #[test]
    fn delay_in_ticks() {
        let mut k: Kernel<u8> = Kernel::new();
        k.schedule(SimTime::from_millis_f64(2.0), M, 1).unwrap();
        let mut at = SimTime::ZERO;
        k.run(SimTime::from_secs(1), |k, _| {
            at = k.now();
            Ok(())
        })
        .unwrap();
        assert_eq!(at.as_nanos(), 2_000_000);
    }

    #[test]
    fn empty_queue_returns_at_zero() {
        let mut k: Kernel<u8> = Kernel::new();
        let r = k.run(SimTime::from_secs(400), |_, _| Ok(())).unwrap();
        assert_eq!(r, RunReport::default());
    }

    #[test]
    fn stops_at_horizon_and_rejects_after_shutdown() {
        let mut k: Kernel<u8> = Kernel::new();
        k.schedule(SimTime::from_secs(1), M, 1).unwrap();
        k.schedule(SimTime::from_secs(5), M, 2).unwrap();
        let r = k.run(SimTime::from_secs(3), |_, _| Ok(())).unwrap();
        assert_eq!(r.processed, 1);
        assert!(r.final_clock <= SimTime::from_secs(3));
        assert_eq!(k.schedule(SimTime::ZERO, M, 3), Err(KernelError::EngineStopped));
    }

    #[test]
    fn cancellation_is_counted() {
        let mut k: Kernel<u8> = Kernel::new();
        let h = k.schedule(SimTime::from_secs(1), M, 1).unwrap();
        k.schedule(SimTime::from_secs(2), M, 2).unwrap();
        assert!(k.cancel(h));
        let r = k.run(SimTime::from_secs(3), |_, _| Ok(())).unwrap();
        assert_eq!((r.processed, r.cancelled), (1, 1));
    }

    #[test]
    fn handler_fault_names_event() {
        let mut k: Kernel<u8> = Kernel::new();
        k.schedule(SimTime::from_secs(1), ModuleId(7), 1).unwrap();
        let err = k.run(SimTime::from_secs(3), |_, _| Err("boom".into())).unwrap_err();
        match err {
            KernelError::HandlerFault { seq, event, message, .. } => {
                assert_eq!(seq, 0);
                assert!(event.contains('7'));
                assert_eq!(message, "boom");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn clock_equals_fire_at_and_order_is_strict() {
        use rand::Rng;
        let mut stream = RngStream::new(9, "kernel-test");
        let mut k: Kernel<u64> = Kernel::new();
        for _ in 0..500 {
            let d = stream.rng().gen_range(0..50u64);
            k.schedule(SimTime::from_nanos(d), M, d).unwrap();
        }
        let mut last: Option<(SimTime, u64)> = None;
        k.run(SimTime::MAX, |k, ev| {
            assert_eq!(k.now(), ev.fire_at);
            if let Some(prev) = last {
                assert!(prev < (ev.fire_at, ev.seq));
            }
            last = Some((ev.fire_at, ev.seq));
            if ev.payload % 7 == 0 && ev.fire_at < SimTime::from_nanos(200) {
                k.schedule(SimTime::from_nanos(ev.payload), M, ev.payload + 1).unwrap();
            }
            Ok(())
        })
        .unwrap();
    }
}
