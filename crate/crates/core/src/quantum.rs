//! Quantum layer: each QKD link is abstracted to a key stream.
//!
//! Every generation tick a jittered amount of raw secure bits accumulates.
//! Whole keys are cut from the accumulated bits, leave post-processing one
//! fixed delay later, and are pushed to both endpoint KMSs. Keys are split
//! by id parity so the two endpoints never encrypt with the same key.

use serde::{Deserialize, Serialize};

use crate::kernel::{RngStream, SimTime};
use crate::topology::{LinkId, NodeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn of(id: u64) -> Parity {
        if id.is_multiple_of(2) {
            Parity::Even
        } else {
            Parity::Odd
        }
    }

    pub fn flip(self) -> Parity {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Key {
    pub id: u64,
    pub link: LinkId,
    pub size_bits: u32,
    pub created_at: SimTime,
}

impl Key {
    pub fn parity(&self) -> Parity {
        Parity::of(self.id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QkdParams {
    /// Relative half-width of the uniform jitter on the per-tick bit amount.
    pub jitter: f64,
    pub post_processing_s: f64,
    pub key_size_bits: u32,
    pub tick_s: f64,
}

impl Default for QkdParams {
    fn default() -> Self {
        QkdParams {
            jitter: 0.05,
            post_processing_s: 1.0,
            key_size_bits: 256,
            tick_s: 1.0,
        }
    }
}

impl QkdParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(format!("qkd.jitter must lie in [0, 1), got {}", self.jitter));
        }
        if self.key_size_bits == 0 {
            return Err("qkd.key_size_bits must be positive".into());
        }
        if !(self.tick_s > 0.0) || !self.tick_s.is_finite() {
            return Err("qkd.tick_s must be positive".into());
        }
        if !(self.post_processing_s >= 0.0) || !self.post_processing_s.is_finite() {
            return Err("qkd.post_processing_s must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QkdModuleConfig {
    pub link: LinkId,
    pub endpoints: (NodeId, NodeId),
    pub key_rate: f64,
    pub params: QkdParams,
}

/// Which parity each endpoint encrypts with: the lower node id encrypts with
/// even keys and decrypts with odd ones, the higher id the mirror image.
pub fn assign_parity_roles(a: NodeId, b: NodeId) -> [(NodeId, Parity); 2] {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    [(lo, Parity::Even), (hi, Parity::Odd)]
}

pub fn encrypt_parity(a: NodeId, b: NodeId, node: NodeId) -> Parity {
    if node == a.min(b) {
        Parity::Even
    } else {
        Parity::Odd
    }
}

/// A run of freshly generated keys with consecutive ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KeyBatch {
    pub link: LinkId,
    pub first_id: u64,
    pub count: u64,
    pub created_at: SimTime,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenerationSample {
    pub at: SimTime,
    pub bits: f64,
    pub keys: u64,
}

#[derive(Debug)]
pub struct QkdModule {
    pub cfg: QkdModuleConfig,
    carry_bits: f64,
    next_id: u64,
    generated: u64,
    jitter: RngStream,
    trace: Option<Vec<GenerationSample>>,
}

impl QkdModule {
    pub fn new(cfg: QkdModuleConfig, seed: u64) -> Self {
        let jitter = RngStream::new(seed, format!("qkd-jitter/{}", cfg.link.0));
        QkdModule {
            cfg,
            carry_bits: 0.0,
            next_id: 0,
            generated: 0,
            jitter,
            trace: None,
        }
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> Option<&[GenerationSample]> {
        self.trace.as_deref()
    }

    pub fn tick_interval(&self) -> SimTime {
        SimTime::from_secs_f64(self.cfg.params.tick_s)
    }

    pub fn post_processing(&self) -> SimTime {
        SimTime::from_secs_f64(self.cfg.params.post_processing_s)
    }

    /// Keys emitted so far (sum of all batches).
    pub fn generated(&self) -> u64 {
        self.generated
    }

    /// One generation tick. Returns the number of whole keys that enter
    /// post-processing; the fractional remainder carries over.
    pub fn tick(&mut self, now: SimTime) -> u64 {
        let p = &self.cfg.params;
        let j = if p.jitter > 0.0 {
            p.jitter * (2.0 * self.jitter.unit() - 1.0)
        } else {
            0.0
        };
        let bits = self.cfg.key_rate * p.tick_s * f64::from(p.key_size_bits) * (1.0 + j);
        self.carry_bits += bits;
        let size = f64::from(p.key_size_bits);
        let keys = (self.carry_bits / size).floor();
        self.carry_bits -= keys * size;
        // guard against accumulated rounding
        if self.carry_bits < 0.0 {
            self.carry_bits = 0.0;
        }
        let keys = keys as u64;
        if let Some(t) = self.trace.as_mut() {
            t.push(GenerationSample { at: now, bits, keys });
        }
        keys
    }

    /// Assigns ids to keys leaving post-processing.
    pub fn emit(&mut self, count: u64, now: SimTime) -> KeyBatch {
        let batch = KeyBatch {
            link: self.cfg.link,
            first_id: self.next_id,
            count,
            created_at: now,
        };
        self.next_id += count;
        self.generated += count;
        batch
    }
}
