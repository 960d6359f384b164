use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::DenseMatrix;

/// He-style weight initialization: Normal(0, sqrt(2 / fan_in)).
pub fn he_normal<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> DenseMatrix {
    assert!(fan_in > 0, "fan_in must be positive");
    let std = (2.0 / fan_in as f64).sqrt();
    sample_normal(rng, rows, cols, std)
}

/// Small-Gaussian initialization, the convention for embedding tables.
pub fn small_normal<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> DenseMatrix {
    sample_normal(rng, rows, cols, std)
}

fn sample_normal<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> DenseMatrix {
    let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    DenseMatrix::from_vec(rows, cols, data).expect("shape matches generated data")
}
