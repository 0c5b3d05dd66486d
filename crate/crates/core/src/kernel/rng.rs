use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SimTime;

/// A named, independently seeded random stream.
///
/// The ChaCha seed is derived from `(seed, stream_id)` with FNV-1a and a
/// splitmix64 finalizer, so the sequence is the same on every platform and
/// adding a new stream never shifts the samples of an existing one.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: String,
    rng: ChaCha8Rng,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: impl Into<String>) -> Self {
        let stream_id = stream_id.into();
        let mut key = [0u8; 32];
        let mut state = seed ^ fnv1a(stream_id.as_bytes());
        for chunk in key.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        RngStream {
            seed,
            stream_id,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> &str {
        &self.stream_id
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }
}

/// Draws an exponentially distributed duration with the given mean by
/// inverse-transform sampling. `mean` must be positive.
pub fn sample_exponential(stream: &mut RngStream, mean: SimTime) -> Result<SimTime, String> {
    if mean == SimTime::ZERO {
        return Err("exponential mean must be positive".into());
    }
    let u = stream.unit();
    let x = -(1.0 - u).ln() * mean.as_nanos() as f64;
    Ok(SimTime::from_nanos(x.round() as u64))
}
