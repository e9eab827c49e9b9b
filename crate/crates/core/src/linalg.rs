//! Small fixed-size linear algebra used throughout: 2-vectors, symmetric 2×2
//! matrices and the log-density of a bivariate normal.

use nalgebra::{Matrix2, SymmetricEigen, Vector2};

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn is_symmetric(m: &Mat2, tol: f64) -> bool {
    (m[(0, 1)] - m[(1, 0)]).abs() <= tol * (1.0 + m[(0, 1)].abs().max(m[(1, 0)].abs()))
}

/// Smallest eigenvalue of a symmetric 2×2 matrix (closed form).
pub fn min_eigenvalue(m: &Mat2) -> f64 {
    let half_trace = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let half_diff = 0.5 * (m[(0, 0)] - m[(1, 1)]);
    let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    half_trace - half_diff.hypot(off)
}

pub fn symmetrize(m: &Mat2) -> Mat2 {
    (m + m.transpose()) * 0.5
}

/// Raises every eigenvalue of a symmetric matrix below `floor` to `floor`.
///
/// This is the nearest feasible covariance under an eigenvalue lower bound, and
/// also the constrained maximiser of a Gaussian likelihood given its scatter.
pub fn clamp_eigenvalues(m: &Mat2, floor: f64) -> Mat2 {
    let eig = SymmetricEigen::new(symmetrize(m));
    let clamped = eig.eigenvalues.map(|v| v.max(floor));
    symmetrize(&(eig.eigenvectors * Mat2::from_diagonal(&clamped) * eig.eigenvectors.transpose()))
}

/// Outer product `a bᵀ`.
pub fn outer(a: &Vec2, b: &Vec2) -> Mat2 {
    a * b.transpose()
}

/// Inverse of a symmetric positive-definite matrix, re-symmetrized.
pub fn spd_inverse(m: &Mat2) -> Option<Mat2> {
    if min_eigenvalue(m) <= 0.0 {
        return None;
    }
    m.try_inverse().map(|inv| symmetrize(&inv))
}

/// Precomputed pieces of `log N(x; mean, cov)`.
#[derive(Debug, Clone, Copy)]
pub struct Gaussian2 {
    mean: Vec2,
    precision: Mat2,
    log_norm: f64,
}

impl Gaussian2 {
    pub fn new(mean: Vec2, cov: &Mat2) -> Option<Self> {
        let precision = spd_inverse(cov)?;
        let det = cov.determinant();
        if det <= 0.0 || !det.is_finite() {
            return None;
        }
        Some(Gaussian2 {
            mean,
            precision,
            log_norm: -LN_2PI - 0.5 * det.ln(),
        })
    }

    pub fn ln_pdf(&self, x: &Vec2) -> f64 {
        let d = x - self.mean;
        self.log_norm - 0.5 * (d.transpose() * self.precision * d)[(0, 0)]
    }
}

pub fn ln_normal_1d(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + variance.ln() + d * d / variance)
}

/// `ln Σ exp(v)` in a numerically stable way; `-inf` for an empty or all `-inf` slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_eigenvalue_matches_nalgebra() {
        let m = Mat2::new(4.0, 1.5, 1.5, 2.0);
        let eig = SymmetricEigen::new(m);
        let expect = eig.eigenvalues.min();
        assert!((min_eigenvalue(&m) - expect).abs() < 1e-12);
    }

    #[test]
    fn clamp_leaves_well_conditioned_matrix_alone() {
        let m = Mat2::new(2.0, 0.3, 0.3, 1.0);
        let c = clamp_eigenvalues(&m, 1e-6);
        assert!((c - m).abs().max() < 1e-12);
    }

    #[test]
    fn clamp_lifts_singular_direction() {
        let m = Mat2::new(1.0, 1.0, 1.0, 1.0);
        let c = clamp_eigenvalues(&m, 0.5);
        assert!((min_eigenvalue(&c) - 0.5).abs() < 1e-12);
        assert!((c.trace() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn standard_normal_mode() {
        let g = Gaussian2::new(Vec2::zeros(), &Mat2::identity()).unwrap();
        let p = g.ln_pdf(&Vec2::zeros()).exp();
        assert!((p - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[-1000.0, -1000.0]);
        assert!((v - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
