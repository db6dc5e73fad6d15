use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

fn fans(shape: &[usize]) -> Result<(usize, usize)> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidArgument(format!("cannot initialize shape {shape:?}")));
    }
    Ok(match shape {
        [n] => (*n, *n),
        [rows, cols] => (*rows, *cols),
        _ => {
            let receptive: usize = shape[2..].iter().product();
            (shape[0] * receptive, shape[1] * receptive)
        }
    })
}

/// Bound of the Xavier uniform distribution for `shape`.
pub fn xavier_bound(shape: &[usize]) -> Result<f64> {
    let (fan_in, fan_out) = fans(shape)?;
    Ok((6.0 / (fan_in + fan_out) as f64).sqrt())
}

/// Uniform samples in `±√(6/(fan_in+fan_out))`, seeded.
pub fn xavier_init(shape: &[usize], seed: u64) -> Result<Tensor> {
    xavier_init_with(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn xavier_init_with(shape: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let bound = xavier_bound(shape)?;
    let dist = Uniform::new_inclusive(-bound, bound);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_by_three_bound_is_one() {
        assert_eq!(xavier_bound(&[3, 3]).unwrap(), 1.0);
        let t = xavier_init(&[3, 3], 5).unwrap();
        assert!(t.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn seeded_init_repeats() {
        assert_eq!(xavier_init(&[4, 7], 11).unwrap(), xavier_init(&[4, 7], 11).unwrap());
        assert_ne!(xavier_init(&[4, 7], 11).unwrap(), xavier_init(&[4, 7], 12).unwrap());
    }

    #[test]
    fn vectors_use_their_length_for_both_fans() {
        assert_eq!(xavier_bound(&[6]).unwrap(), (6.0f64 / 12.0).sqrt());
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(xavier_init(&[0, 3], 1).is_err());
        assert!(xavier_init(&[], 1).is_err());
    }

    #[test]
    fn empirical_variance_matches_uniform_formula() {
        let (fan_in, fan_out) = (200, 500);
        let t = xavier_init(&[fan_in, fan_out], 3).unwrap();
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let expected = 2.0 / (fan_in + fan_out) as f64;
        assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
    }
}
