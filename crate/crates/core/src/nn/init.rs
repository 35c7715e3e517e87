use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InitError {
    #[error("cannot initialize a tensor with a zero dimension ({rows}x{cols})")]
    ZeroDimension { rows: usize, cols: usize },
}

/// Xavier/Glorot normal: each entry ~ N(0, 2 / (fan_in + fan_out)).
pub fn xavier_normal<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> Result<Array2<f64>, InitError> {
    if rows == 0 || cols == 0 {
        return Err(InitError::ZeroDimension { rows, cols });
    }
    let std = (2.0 / (rows + cols) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("std is positive and finite");
    Ok(Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng)))
}

/// Xavier draw for a single vector treated as a `1 x n` matrix.
pub fn xavier_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Array1<f64>, InitError> {
    let m = xavier_normal(1, n, rng)?;
    Ok(m.into_shape_with_order(n).expect("1 x n reshapes to n"))
}
