use rand::Rng;

use crate::error::{LatticeError, Result};

/// Draws an item uniformly from `0..num_items` minus `positives` (sorted) by
/// rejection sampling.
pub fn sample_negative<R: Rng + ?Sized>(
    user: usize,
    positives: &[usize],
    num_items: usize,
    rng: &mut R,
) -> Result<usize> {
    if positives.len() >= num_items {
        return Err(LatticeError::NoNegative { user, num_items });
    }
    loop {
        let j = rng.random_range(0..num_items);
        if positives.binary_search(&j).is_err() {
            return Ok(j);
        }
    }
}
