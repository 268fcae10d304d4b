//! Per-agent random streams.
//!
//! Every `(master_seed, agent, purpose)` triple owns its own ChaCha stream:
//! the key is derived from `(master_seed, agent)` and the purpose selects the
//! ChaCha stream id, so two streams never share keystream. Each agent consumes
//! its streams strictly in round order, which makes the draws independent of
//! how agents are scheduled onto workers.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    /// Anchor refresh coin `l_i^k`.
    Bernoulli = 1,
    /// Component index `s_i^k`.
    Index = 2,
}

/// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn agent_key(master_seed: u64, agent: usize) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut state = mix64(master_seed) ^ mix64(agent as u64 ^ 0xa5a5_a5a5_0000_0000);
    for chunk in key.chunks_mut(8) {
        state = mix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    key
}

/// One independent uniform stream.
#[derive(Debug, Clone)]
pub struct Stream {
    rng: ChaCha20Rng,
}

impl Stream {
    pub fn new(master_seed: u64, agent: usize, purpose: Purpose) -> Self {
        let mut rng = ChaCha20Rng::from_seed(agent_key(master_seed, agent));
        rng.set_stream(purpose as u64);
        Stream { rng }
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

/// The two streams an agent draws from each round.
#[derive(Debug, Clone)]
pub struct AgentStreams {
    pub agent: usize,
    pub bernoulli: Stream,
    pub index: Stream,
}

impl AgentStreams {
    pub fn new(master_seed: u64, agent: usize) -> Self {
        AgentStreams {
            agent,
            bernoulli: Stream::new(master_seed, agent, Purpose::Bernoulli),
            index: Stream::new(master_seed, agent, Purpose::Index),
        }
    }
}

pub(crate) fn check_probability(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("probability must lie in (0, 1), got {p}")))
    }
}

/// Threshold rule behind [`draw_bernoulli`]: 1 iff `u < p`.
pub fn bernoulli_from_uniform(u: f64, p: f64) -> bool {
    u < p
}

pub fn draw_bernoulli(stream: &mut Stream, p: f64) -> Result<bool> {
    check_probability(p)?;
    Ok(bernoulli_from_uniform(stream.uniform(), p))
}

/// Uniform index in `0..m` by rejection sampling (no modulo bias).
pub fn draw_index(stream: &mut Stream, m: usize) -> Result<usize> {
    if m == 0 {
        return Err(Error::InvalidArgument("cannot draw an index from an empty range".into()));
    }
    let m64 = m as u64;
    // Largest multiple of m that fits; draws at or above it are rejected.
    let zone = u64::MAX - (u64::MAX % m64 + 1) % m64;
    loop {
        let x = stream.next_u64();
        if x <= zone {
            return Ok((x % m64) as usize);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_rule() {
        assert!(!bernoulli_from_uniform(0.999, 1e-9));
        assert!(bernoulli_from_uniform(0.0, 1e-9));
    }

    #[test]
    fn bernoulli_rejects_bad_probability() {
        let mut s = Stream::new(1, 0, Purpose::Bernoulli);
        assert!(draw_bernoulli(&mut s, 0.0).is_err());
        assert!(draw_bernoulli(&mut s, 1.0).is_err());
        assert!(draw_bernoulli(&mut s, f64::NAN).is_err());
    }

    #[test]
    fn index_of_single_element() {
        let mut s = Stream::new(9, 3, Purpose::Index);
        for _ in 0..100 {
            assert_eq!(draw_index(&mut s, 1).unwrap(), 0);
        }
        assert!(draw_index(&mut s, 0).is_err());
    }

    #[test]
    fn replay_is_identical() {
        let mut a = Stream::new(77, 4, Purpose::Bernoulli);
        let mut b = Stream::new(77, 4, Purpose::Bernoulli);
        for _ in 0..10_000 {
            assert_eq!(
                draw_bernoulli(&mut a, 0.3).unwrap(),
                draw_bernoulli(&mut b, 0.3).unwrap()
            );
        }
        let mut a = Stream::new(77, 4, Purpose::Index);
        let mut b = Stream::new(77, 4, Purpose::Index);
        for _ in 0..10_000 {
            assert_eq!(draw_index(&mut a, 13).unwrap(), draw_index(&mut b, 13).unwrap());
        }
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = Stream::new(5, 0, Purpose::Bernoulli);
        let mut b = Stream::new(5, 0, Purpose::Index);
        let mut c = Stream::new(5, 1, Purpose::Bernoulli);
        let (xa, xb, xc) = (a.next_u64(), b.next_u64(), c.next_u64());
        assert_ne!(xa, xb);
        assert_ne!(xa, xc);
    }
}
