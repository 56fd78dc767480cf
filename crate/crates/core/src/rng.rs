use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream for one replication: the seed picks the key, the
/// replication index picks the stream.
pub fn stream(seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}
