//! Counter-based random streams for reproducible parallel Monte Carlo.
//!
//! Each replicate draws from its own ChaCha8 stream: the key is derived from the
//! master seed, the 64-bit stream id is the replicate index, and the block
//! counter advances with every draw. A replicate's numbers therefore depend only
//! on `(master_seed, replicate)`, never on which worker ran it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream for one replicate, positioned at draw counter zero.
pub fn replicate_stream(master_seed: u64, replicate: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replicate);
    rng
}
