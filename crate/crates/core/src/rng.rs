//! Counter-based stream derivation for reproducible parallel Monte Carlo.
//!
//! Every random stream is a ChaCha8 keystream. The 256-bit key is derived
//! from the master seed and a purpose label; the 64-bit ChaCha stream id is
//! the path index. Streams for distinct `(seed, label, index)` triples are
//! therefore disjoint keystreams, and the same triple always yields the same
//! sequence regardless of which worker runs the path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// What a stream is used for. Labels keep the Brownian draws independent of
/// the integrator choice so scheme comparisons can share seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamLabel {
    Modes,
    OuInit,
    OuNoise,
    Kick,
    /// Free-form label for diagnostics that need their own streams.
    Aux(u32),
}

impl StreamLabel {
    fn tag(self) -> u64 {
        match self {
            StreamLabel::Modes => 0x6d6f_6465_7300_0001,
            StreamLabel::OuInit => 0x6f75_696e_6974_0002,
            StreamLabel::OuNoise => 0x6f75_6e6f_6973_0003,
            StreamLabel::Kick => 0x6b69_636b_0000_0004,
            StreamLabel::Aux(n) => 0x6175_7800_0000_0000 ^ ((n as u64) << 8) ^ 5,
        }
    }
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPolicy {
    pub master: u64,
}

impl SeedPolicy {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn key(&self, label: StreamLabel) -> [u8; 32] {
        let mut state = self.master ^ label.tag().rotate_left(17);
        // Discard one output so nearby masters do not share a first word.
        splitmix64(&mut state);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        key
    }

    /// Stream for `label` of path `index`.
    pub fn stream(&self, label: StreamLabel, index: u64) -> Stream {
        let mut rng = ChaCha8Rng::from_seed(self.key(label));
        rng.set_stream(index);
        rng
    }

    /// The four per-path streams used by the tracer simulation.
    pub fn path_streams(&self, path: u64) -> PathStreams {
        PathStreams {
            modes: self.stream(StreamLabel::Modes, path),
            ou_init: self.stream(StreamLabel::OuInit, path),
            ou_noise: self.stream(StreamLabel::OuNoise, path),
            kick: self.stream(StreamLabel::Kick, path),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PathStreams {
    pub modes: Stream,
    pub ou_init: Stream,
    pub ou_noise: Stream,
    pub kick: Stream,
}
