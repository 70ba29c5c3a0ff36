//! Reproducible random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream addressed by a root
//! seed and a path such as `[replicate, bootstrap_draw]`. All but the last
//! path element are mixed into the key; the last selects the stream, so any
//! replicate can be regenerated in isolation and results do not depend on the
//! order in which parallel workers happen to run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Well-known labels for the first path element, keeping unrelated uses apart.
pub mod domain {
    pub const DATA: u64 = 0x01;
    pub const BOOTSTRAP: u64 = 0x02;
    pub const PARAMETRIC: u64 = 0x03;
    pub const GOODNESS_OF_FIT: u64 = 0x04;
    pub const EXPERIMENT: u64 = 0x05;
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for `(root, path)`.
pub fn stream(root: u64, path: &[u64]) -> StreamRng {
    let (prefix, last) = match path.split_last() {
        Some((last, prefix)) => (prefix, *last),
        None => (&[][..], 0),
    };
    let mut state = root;
    let mut mixed = splitmix64(&mut state);
    for &p in prefix {
        state ^= p.wrapping_mul(0xD1B5_4A32_D192_ED03).wrapping_add(mixed);
        mixed = splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(last);
    rng
}

/// Child seed for handing a sub-task its own root.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    use rand::RngCore;
    stream(root, path).next_u64()
}
