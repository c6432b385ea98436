//! Reproducible random number substreams.
//!
//! Every stochastic routine in this crate draws from a ChaCha substream
//! keyed on `(master_seed, stream_index)`. Substreams are statistically
//! independent and can be handed to worker threads in any order without
//! affecting the numbers produced, which is what makes Monte Carlo output
//! invariant to the thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent substream `index` of the generator keyed by `master_seed`.
pub fn substream(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Pairwise (cascade) summation over a fixed-order slice.
///
/// Used for deterministic reductions: the result depends only on the order
/// of `xs`, never on how work was split across threads.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}
