use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// `count` directions drawn uniformly on the unit sphere in `dim` dimensions.
pub fn random_directions<R: Rng + ?Sized>(dim: usize, count: usize, rng: &mut R) -> Matrix {
    let mut dirs = Matrix::zeros(count, dim);
    for row in 0..count {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for (d, x) in dirs.row_mut(row).iter_mut().zip(&v) {
                    *d = x / norm;
                }
                break;
            }
        }
    }
    dirs
}

/// 2-Wasserstein distance between two equal-size empirical laws on the line.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    Error::check_dim(a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::invalid("empty sample sets"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let ss: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// Mean over the rows of `directions` of the 1-D W2 distance between the
/// projected sample sets.
pub fn sliced_wasserstein_with(a: &Matrix, b: &Matrix, directions: &Matrix) -> Result<f64> {
    Error::check_dim(a.rows(), b.rows())?;
    Error::check_dim(a.cols(), b.cols())?;
    Error::check_dim(a.cols(), directions.cols())?;
    if directions.rows() == 0 {
        return Err(Error::invalid("need at least one projection"));
    }
    let pa = a.matmul_t(directions);
    let pb = b.matmul_t(directions);
    let mut total = 0.0;
    for l in 0..directions.rows() {
        let col_a: Vec<f64> = (0..pa.rows()).map(|i| pa.row(i)[l]).collect();
        let col_b: Vec<f64> = (0..pb.rows()).map(|i| pb.row(i)[l]).collect();
        total += wasserstein_1d(&col_a, &col_b)?;
    }
    Ok(total / directions.rows() as f64)
}

/// Sliced Wasserstein distance over `projections` random directions.
pub fn sliced_wasserstein<R: Rng + ?Sized>(
    a: &Matrix,
    b: &Matrix,
    projections: usize,
    rng: &mut R,
) -> Result<f64> {
    let dirs = random_directions(a.cols(), projections, rng);
    sliced_wasserstein_with(a, b, &dirs)
}
