//! Epoch batching: seeded shuffle, fixed-size chunks.
//!
//! Interventions pair samples *within* a batch, so a batch of one is
//! meaningless — batch size is at least two, and a trailing chunk smaller
//! than two is dropped rather than emitted.

use crate::error::{Error, Result};
use crate::numkit::RngStream;

/// Index batches for one epoch: a seeded permutation of `0..len` cut into
/// `batch_size` chunks in order. The final chunk keeps its remainder if at
/// least two samples remain, otherwise it is dropped.
pub fn batch_iter(len: usize, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::invalid(
            "batch_iter",
            format!("batch_size must be at least 2, got {batch_size}"),
        ));
    }
    let mut order: Vec<usize> = (0..len).collect();
    RngStream::new(epoch_seed, "batch-shuffle").shuffle(&mut order);
    Ok(order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect())
}
