use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random stream `index` derived from `seed`.
///
/// Work item `i` of a parallel loop draws from `stream(seed, i)`, which makes
/// the outcome independent of how items are scheduled across threads.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Log-uniform draw in `[lo, hi]`.
pub fn log_uniform<R: rand::Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..=hi.ln())).exp()
}
