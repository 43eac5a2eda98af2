//! Execution strategy for the Monte Carlo loops.
//!
//! Every walk draws from its own ChaCha stream keyed by `(seed, walk index)`
//! and results are merged with integer histogram addition, so the output is
//! identical for any worker count and for either strategy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Execution::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Histogram of `bin(i)` over `i in 0..count`. `bin` must return values below `bins`.
    pub fn histogram<F>(self, count: u64, bins: usize, bin: F) -> Vec<u64>
    where
        F: Fn(u64) -> usize + Sync + Send,
    {
        match self {
            Execution::Sequential => {
                let mut hist = vec![0u64; bins];
                for i in 0..count {
                    hist[bin(i)] += 1;
                }
                hist
            }
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                (0..count)
                    .into_par_iter()
                    .fold(
                        || vec![0u64; bins],
                        |mut hist, i| {
                            hist[bin(i)] += 1;
                            hist
                        },
                    )
                    .reduce(
                        || vec![0u64; bins],
                        |mut a, b| {
                            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                            a
                        },
                    )
            }
        }
    }

    /// Ordered `(0..count).map(f)`.
    pub fn map<T, F>(self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Execution::Sequential => (0..count).map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                (0..count).into_par_iter().map(f).collect()
            }
        }
    }
}

/// Deterministic RNG for walk `index` under master `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Sizes the global worker pool. A no-op without the `parallel` feature.
pub fn configure_threads(threads: usize) -> Result<(), String> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| e.to_string())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        Ok(())
    }
}
