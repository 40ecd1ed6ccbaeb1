use rand::Rng;

use crate::error::{Error, Result};
use crate::seeded_rng;
use crate::tensor::{DenseTensor, SparseTensor};

/// Fills every unobserved entry with a uniformly drawn observed value (with
/// replacement); observed entries are kept as they are.
pub fn naive_baseline(observed: &SparseTensor, seed: u64) -> Result<DenseTensor> {
    if observed.is_empty() {
        return Err(Error::Empty("observed entries"));
    }
    let shape = observed.shape().clone();
    let pool = observed.values();
    let mut rng = seeded_rng(seed);
    let mut values = Vec::with_capacity(shape.numel());
    let mut next = observed.flat_indices().iter().zip(pool).peekable();
    for flat in 0..shape.numel() {
        match next.peek() {
            Some(&(&f, &v)) if f == flat => {
                values.push(v);
                next.next();
            }
            _ => values.push(pool[rng.random_range(0..pool.len())]),
        }
    }
    DenseTensor::new(shape, values)
}
