use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Train / validation / test proportions.
pub const SPLIT_RATIOS: [f64; 3] = [0.9, 0.02, 0.08];

/// Shuffles `items` with `seed` and cuts them into three disjoint parts of
/// sizes `round(n * r0)`, `round(n * r1)` and the remainder.
pub fn split_dataset<T: Clone>(items: &[T], ratios: [f64; 3], seed: u64) -> Result<[Vec<T>; 3]> {
    if items.is_empty() {
        return Err(Error::invalid("cannot split an empty set"));
    }
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split ratios must be non-negative and sum to 1, got {ratios:?}")));
    }
    let n = items.len();
    let n0 = ((n as f64 * ratios[0]).round() as usize).min(n);
    let n1 = ((n as f64 * ratios[1]).round() as usize).min(n - n0);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    Ok([pick(&order[..n0]), pick(&order[n0..n0 + n1]), pick(&order[n0 + n1..])])
}
