//! Seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` whose 256-bit key is
//! derived from a master seed and a path of `u64` labels (stream tag, sample
//! id, epoch, ...). Derivation is SplitMix64 chaining, so streams for
//! different labels are independent and any stream can be recreated without
//! touching the others. This is what makes parallel data generation and the
//! E-step deterministic regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Kept stable: changing them changes every generated dataset.
pub mod tag {
    pub const MICROSTRUCTURE: u64 = 0x6d69_6372;
    pub const CUT_THRESHOLD: u64 = 0x6375_7420;
    pub const BOUNDARY: u64 = 0x6263_6263;
    pub const SVI: u64 = 0x7376_6920;
    pub const MOMENTS: u64 = 0x6d6f_6d65;
    pub const ELBO: u64 = 0x656c_626f;
    pub const PREDICT: u64 = 0x7072_6564;
    pub const SPECTRAL: u64 = 0x7370_6563;
    pub const VAR_UF: u64 = 0x7661_7266;
    pub const PCA: u64 = 0x7063_6120;
    pub const DATASET: u64 = 0x6461_7461;
    pub const TRAIN: u64 = 0x7472_6169;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a label path into a single 64-bit seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut state = master;
    let mut acc = splitmix64(&mut state);
    for &label in path {
        state ^= label.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        acc ^= splitmix64(&mut state);
    }
    acc
}

/// Independent generator for `(master, path)`.
pub fn stream(master: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = derive_seed(master, path);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
