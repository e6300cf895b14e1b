//! Reproducible parallel reduction over sample indices.
//!
//! Sample indices are cut into fixed chunks of [`CHUNK`] consecutive
//! indices. Each chunk is accumulated sequentially, chunks run in parallel,
//! and chunk results are merged strictly in chunk order. The floating-point
//! result therefore depends on the sample count only, never on the number
//! of worker threads.

use rayon::prelude::*;

use crate::error::Result;

/// Samples per chunk.
pub const CHUNK: u64 = 16;
/// Chunks evaluated concurrently before merging; bounds peak memory.
const WAVE: u64 = 8;

pub fn chunked_sum<A: Send>(
    count: u64,
    new: impl Fn() -> A + Sync,
    add_sample: impl Fn(&mut A, u64) -> Result<()> + Sync,
    mut merge: impl FnMut(&mut A, A),
) -> Result<A> {
    let chunks = count.div_ceil(CHUNK);
    let mut total = new();
    let mut first = 0;
    while first < chunks {
        let last = (first + WAVE).min(chunks);
        let partials: Vec<A> = (first..last)
            .into_par_iter()
            .map(|c| {
                let mut acc = new();
                for k in c * CHUNK..((c + 1) * CHUNK).min(count) {
                    add_sample(&mut acc, k)?;
                }
                Ok(acc)
            })
            .collect::<Result<Vec<A>>>()?;
        for p in partials {
            merge(&mut total, p);
        }
        first = last;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn result_is_independent_of_pool_size() {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                chunked_sum(
                    1000,
                    || 0.0f64,
                    |acc, k| {
                        *acc += 1.0 / (1.0 + k as f64).sqrt();
                        Ok(())
                    },
                    |t, p| *t += p,
                )
                .unwrap()
            })
        };
        assert_eq!(run(1).to_bits(), run(4).to_bits());
    }
}
