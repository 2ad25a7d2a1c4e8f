//! Named, reproducible rng streams split from one root seed.
//!
//! Every consumer of randomness (data order, augmentation, target sampling,
//! masking, gating, parameter init) gets its own stream per epoch, so a run
//! can be resumed at any epoch boundary and parallel loaders never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DATA: &str = "data";
pub const AUGMENT: &str = "augment";
pub const TARGET: &str = "target";
pub const MASKING: &str = "masking";
pub const GATE: &str = "gate";
pub const MODEL_INIT: &str = "model-init";

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// 32-byte seed for stream `name` at position `index` under `root`.
pub fn stream_seed(root: u64, name: &str, index: u64) -> [u8; 32] {
    let mut state = root ^ fnv1a(name).rotate_left(17);
    let mut mix = splitmix64(&mut state) ^ index;
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut mix).to_le_bytes());
    }
    seed
}

pub fn stream(root: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(stream_seed(root, name, index))
}
