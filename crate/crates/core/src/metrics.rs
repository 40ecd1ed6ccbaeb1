//! Error metrics restricted to a set of flat indices.

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

fn check(predicted: &DenseTensor, truth: &DenseTensor, over: &[usize]) -> Result<()> {
    if predicted.shape() != truth.shape() {
        return Err(Error::ShapeMismatch {
            expected: truth.shape().dims().to_vec(),
            found: predicted.shape().dims().to_vec(),
        });
    }
    if over.is_empty() {
        return Err(Error::Empty("evaluation index set"));
    }
    if let Some(&f) = over.iter().find(|&&f| f >= truth.shape().numel()) {
        return Err(Error::IndexOutOfBounds {
            index: vec![f],
            dims: vec![truth.shape().numel()],
        });
    }
    Ok(())
}

/// Mean absolute error over the flat indices in `over`.
pub fn mae(predicted: &DenseTensor, truth: &DenseTensor, over: &[usize]) -> Result<f64> {
    check(predicted, truth, over)?;
    let sum: f64 = over
        .iter()
        .map(|&f| (predicted.get_flat(f) - truth.get_flat(f)).abs())
        .sum();
    Ok(sum / over.len() as f64)
}

pub fn rmse(predicted: &DenseTensor, truth: &DenseTensor, over: &[usize]) -> Result<f64> {
    check(predicted, truth, over)?;
    let sum: f64 = over
        .iter()
        .map(|&f| (predicted.get_flat(f) - truth.get_flat(f)).powi(2))
        .sum();
    Ok((sum / over.len() as f64).sqrt())
}

/// `‖pred − truth‖ / ‖truth‖` restricted to `over`.
///
/// When the truth is zero on the whole set the ratio is undefined; 0 is
/// returned for an exact match and infinity otherwise.
pub fn normalized_error(predicted: &DenseTensor, truth: &DenseTensor, over: &[usize]) -> Result<f64> {
    check(predicted, truth, over)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for &f in over {
        let t = truth.get_flat(f);
        num += (predicted.get_flat(f) - t).powi(2);
        den += t * t;
    }
    Ok(if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    })
}

/// All flat indices of a tensor with `numel` elements.
pub fn all_indices(numel: usize) -> Vec<usize> {
    (0..numel).collect()
}
