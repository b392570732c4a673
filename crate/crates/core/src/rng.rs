//! Keyed random substreams.
//!
//! Every random draw in a run comes from a stream derived from the root seed
//! and a key naming what the draw is for. Results therefore do not depend on
//! evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Sequence = 1,
    Noise = 2,
    Readout = 3,
    Bootstrap = 4,
    Synthetic = 5,
}

/// Identifies one substream: (purpose, length index, circuit index,
/// noise-realization index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub purpose: Purpose,
    pub length_index: u64,
    pub circuit: u64,
    pub realization: u64,
}

impl StreamKey {
    pub fn new(purpose: Purpose, length_index: usize, circuit: usize, realization: usize) -> Self {
        Self {
            purpose,
            length_index: length_index as u64,
            circuit: circuit as u64,
            realization: realization as u64,
        }
    }

    pub fn sequence(length_index: usize, circuit: usize) -> Self {
        Self::new(Purpose::Sequence, length_index, circuit, 0)
    }

    pub fn noise(length_index: usize, circuit: usize, realization: usize) -> Self {
        Self::new(Purpose::Noise, length_index, circuit, realization)
    }

    pub fn readout(length_index: usize, circuit: usize, realization: usize) -> Self {
        Self::new(Purpose::Readout, length_index, circuit, realization)
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the substream for `key` under the root `seed`.
pub fn substream(seed: u64, key: StreamKey) -> Stream {
    let mut state = seed;
    for word in [
        key.purpose as u64,
        key.length_index,
        key.circuit,
        key.realization,
    ] {
        state = splitmix64(&mut state) ^ word;
    }
    let mut bytes = [0u8; 32];
    for chunk in bytes.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
