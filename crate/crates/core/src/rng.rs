//! Seeded random substreams.
//!
//! Every random draw in the crate comes from a [`ChaCha12Rng`] whose key is
//! derived from `(master_seed, domain, coordinates)` and whose stream id is an
//! iteration index. Iteration `k` of a Monte Carlo loop therefore reads the
//! same numbers no matter which worker runs it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Purpose tag mixed into the key so that unrelated draws never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Dataset = 1,
    NewUser = 2,
    ConeDirections = 3,
    Instance = 4,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derive_key(master_seed: u64, domain: Domain, coords: &[u64]) -> [u8; 32] {
    let mut state = master_seed;
    let mut acc = splitmix64(&mut state) ^ (domain as u64);
    for &c in coords {
        state ^= splitmix64(&mut acc) ^ c;
        acc = splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).wrapping_add(acc).to_le_bytes());
    }
    key
}

/// Independent generator for `(master_seed, domain, coords)` at stream `index`.
pub fn substream(master_seed: u64, domain: Domain, coords: &[u64], index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::from_seed(derive_key(master_seed, domain, coords));
    rng.set_stream(index);
    rng
}
