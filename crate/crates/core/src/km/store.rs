use std::collections::VecDeque;

use crate::kernel::SimTime;
use crate::quantum::{Key, KeyBatch, Parity};
use crate::topology::LinkId;

/// Ids `first, first + 2, ..` (`count` of them), all of one parity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct IdRun {
    first: u64,
    count: u64,
    created_at: SimTime,
}

impl IdRun {
    fn contains(&self, id: u64) -> bool {
        id >= self.first && (id - self.first).is_multiple_of(2) && (id - self.first) / 2 < self.count
    }
}

#[derive(Clone, Debug, Default)]
struct ParityQueue {
    runs: VecDeque<IdRun>,
    len: u64,
}

impl ParityQueue {
    fn push(&mut self, run: IdRun) {
        if run.count == 0 {
            return;
        }
        self.len += run.count;
        self.runs.push_back(run);
    }

    fn pop(&mut self) -> Option<(u64, SimTime)> {
        let front = self.runs.front_mut()?;
        let id = front.first;
        let at = front.created_at;
        front.first += 2;
        front.count -= 1;
        if front.count == 0 {
            self.runs.pop_front();
        }
        self.len -= 1;
        Some((id, at))
    }

    fn remove(&mut self, id: u64) -> Option<SimTime> {
        let idx = self.runs.iter().position(|r| r.contains(id))?;
        let run = self.runs[idx];
        let k = (id - run.first) / 2;
        let head = IdRun { count: k, ..run };
        let tail = IdRun {
            first: id + 2,
            count: run.count - k - 1,
            ..run
        };
        self.runs.remove(idx);
        if tail.count > 0 {
            self.runs.insert(idx, tail);
        }
        if head.count > 0 {
            self.runs.insert(idx, head);
        }
        self.len -= 1;
        Some(run.created_at)
    }

    fn peek(&self) -> Option<u64> {
        self.runs.front().map(|r| r.first)
    }
}

/// One endpoint's key storage for one QKD link.
///
/// Holds both parity queues (one used for encryption, the other for
/// decryption). Keys leave each queue lowest id first; arrivals beyond
/// `capacity` are dropped and counted.
#[derive(Clone, Debug)]
pub struct KeyStore {
    pub link: LinkId,
    pub capacity: u64,
    key_size_bits: u32,
    even: ParityQueue,
    odd: ParityQueue,
    received: u64,
    consumed: u64,
    discarded: u64,
    last_consumed: [Option<u64>; 2],
}

impl KeyStore {
    pub fn new(link: LinkId, capacity: u64, key_size_bits: u32) -> Self {
        KeyStore {
            link,
            capacity,
            key_size_bits,
            even: ParityQueue::default(),
            odd: ParityQueue::default(),
            received: 0,
            consumed: 0,
            discarded: 0,
            last_consumed: [None, None],
        }
    }

    fn queue(&mut self, p: Parity) -> &mut ParityQueue {
        match p {
            Parity::Even => &mut self.even,
            Parity::Odd => &mut self.odd,
        }
    }

    pub fn len(&self) -> u64 {
        self.even.len + self.odd.len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn available(&self, p: Parity) -> u64 {
        match p {
            Parity::Even => self.even.len,
            Parity::Odd => self.odd.len,
        }
    }

    pub fn room(&self) -> u64 {
        self.capacity.saturating_sub(self.len())
    }

    /// Accepts the first `accept` keys of the batch; the rest are discarded.
    pub fn push_batch(&mut self, batch: &KeyBatch, accept: u64) {
        let accept = accept.min(batch.count);
        self.received += batch.count;
        self.discarded += batch.count - accept;
        if accept == 0 {
            return;
        }
        let first = batch.first_id;
        let last = first + accept - 1;
        for parity in [Parity::Even, Parity::Odd] {
            let start = if Parity::of(first) == parity { first } else { first + 1 };
            if start > last {
                continue;
            }
            let count = (last - start) / 2 + 1;
            self.queue(parity).push(IdRun {
                first: start,
                count,
                created_at: batch.created_at,
            });
        }
    }

    /// Takes the lowest-id key of the given parity.
    pub fn take(&mut self, p: Parity) -> Option<Key> {
        let (id, created_at) = self.queue(p).pop()?;
        self.note_consumed(p, id);
        Some(Key {
            id,
            link: self.link,
            size_bits: self.key_size_bits,
            created_at,
        })
    }

    /// Removes a specific key (the receiving side of an encrypted hop).
    pub fn take_id(&mut self, id: u64) -> Option<Key> {
        let p = Parity::of(id);
        let created_at = self.queue(p).remove(id)?;
        self.note_consumed(p, id);
        Some(Key {
            id,
            link: self.link,
            size_bits: self.key_size_bits,
            created_at,
        })
    }

    fn note_consumed(&mut self, p: Parity, id: u64) {
        self.consumed += 1;
        let slot = &mut self.last_consumed[p as usize];
        *slot = Some(slot.map_or(id, |prev| prev.max(id)));
    }

    pub fn peek(&self, p: Parity) -> Option<u64> {
        match p {
            Parity::Even => self.even.peek(),
            Parity::Odd => self.odd.peek(),
        }
    }

    pub fn received(&self) -> u64 {
        self.received
    }

    pub fn consumed(&self) -> u64 {
        self.consumed
    }

    pub fn discarded(&self) -> u64 {
        self.discarded
    }

    /// received == consumed + stored + discarded
    pub fn is_conserved(&self) -> bool {
        self.received == self.consumed + self.len() + self.discarded
    }
}
