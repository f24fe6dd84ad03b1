use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent sampling stream for one worker in one epoch.
///
/// Every solver (sequential, live, simulated) draws its instance indices from
/// this stream, which is what makes the single-worker paths bitwise comparable.
pub fn worker_stream(seed: u64, worker: usize, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 24) ^ worker as u64);
    rng
}

/// A stream for anything other than instance sampling (schedule generation,
/// test inputs). The high bit keeps it apart from every worker stream.
pub fn aux_stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1 << 63) | tag);
    rng
}
