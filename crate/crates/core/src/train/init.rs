use ndarray::Array2;
use rand::Rng;
use rand_distr::Uniform;

use crate::error::{LatticeError, Result};

/// `sqrt(6 / (fan_in + fan_out))`
pub fn xavier_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

/// Xavier/Glorot uniform matrix, filled in row-major order from `rng`.
pub fn xavier_init<R: Rng + ?Sized>(shape: (usize, usize), rng: &mut R) -> Result<Array2<f64>> {
    let (rows, cols) = shape;
    if rows == 0 || cols == 0 {
        return Err(LatticeError::InvalidArgument(format!(
            "xavier_init needs positive dimensions, got {}x{}",
            rows, cols
        )));
    }
    let a = xavier_bound(rows, cols);
    let dist = Uniform::new(-a, a).map_err(|e| LatticeError::InvalidArgument(e.to_string()))?;
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(dist)).collect();
    Ok(Array2::from_shape_vec(shape, data).expect("length matches shape"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bound_for_square_64() {
        assert!((xavier_bound(64, 64) - 0.21651).abs() < 1e-5);
    }

    #[test]
    fn entries_within_bound_and_mean_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = xavier_init((1000, 1000), &mut rng).unwrap();
        let a = xavier_bound(1000, 1000);
        assert!(m.iter().all(|v| v.abs() < a));
        let n = m.len() as f64;
        let mean = m.sum() / n;
        assert!(mean.abs() < 3.0 * a / (3.0 * n).sqrt(), "mean {}", mean);
    }

    #[test]
    fn seeded_and_validated() {
        let draw = || xavier_init((4, 5), &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(draw(), draw());
        assert!(xavier_init((0, 5), &mut ChaCha8Rng::seed_from_u64(8)).is_err());
    }
}
