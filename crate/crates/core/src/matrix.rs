//! Shared numeric types: dense matrices, factor points, ground truths, and
//! basic spectral utilities.
//!
//! All matrices are dense `f64` (`nalgebra::DMatrix`). Problems in this crate
//! are desk-scale (dimensions up to a few thousand), so every decomposition is
//! a standard dense one.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// The universal numeric carrier for X, Z, U, V, and sensing operators.
pub type Mat = DMatrix<f64>;

/// Which factorization model a matrix or problem lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// X = Z Z^T with Z in R^{n x r}.
    Symmetric,
    /// X = U V^T with U in R^{n x r}, V in R^{q x r}.
    Asymmetric,
}

/// Frobenius norm.
pub fn fro_norm(m: &Mat) -> f64 {
    m.norm()
}

/// Operator (spectral) norm via singular values.
pub fn op_norm(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values()[0]
}

/// Two-to-infinity norm: the largest row l2 norm.
pub fn two_to_inf(m: &Mat) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).norm())
        .fold(0.0, f64::max)
}

/// Maximum l1 row-sum (the infinity-to-one norm used by the worst-direction
/// noise functional).
pub fn inf_to_one(m: &Mat) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum())
        .fold(0.0, f64::max)
}

/// Checks that every entry is finite, reporting the first offender.
pub fn ensure_finite(m: &Mat) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFiniteEntry { row: i, col: j });
            }
        }
    }
    Ok(())
}

/// Builds a matrix from row-major entries, validating shape and finiteness.
pub fn mat_from_row_major(rows: usize, cols: usize, entries: &[f64]) -> Result<Mat> {
    if entries.len() != rows * cols {
        return Err(Error::ShapeMismatch(format!(
            "expected {} entries for a {rows}x{cols} matrix, got {}",
            rows * cols,
            entries.len()
        )));
    }
    let m = Mat::from_row_slice(rows, cols, entries);
    ensure_finite(&m)?;
    Ok(m)
}

/// Flattens row-by-row (index k = i*cols + j), matching the vectorization
/// convention used by the Hessian assembly.
pub fn vec_row_major(m: &Mat) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// The optimization variable: either a symmetric factor Z or an asymmetric
/// pair (U, V).
#[derive(Debug, Clone)]
pub enum FactorPoint {
    Symmetric { z: Mat },
    Asymmetric { u: Mat, v: Mat },
}

impl FactorPoint {
    pub fn symmetric(z: Mat) -> Result<Self> {
        if z.ncols() > z.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "symmetric factor must have r <= n, got {}x{}",
                z.nrows(),
                z.ncols()
            )));
        }
        ensure_finite(&z)?;
        Ok(FactorPoint::Symmetric { z })
    }

    pub fn asymmetric(u: Mat, v: Mat) -> Result<Self> {
        if u.ncols() != v.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "factor ranks differ: U is {}x{}, V is {}x{}",
                u.nrows(),
                u.ncols(),
                v.nrows(),
                v.ncols()
            )));
        }
        if u.ncols() > u.nrows().min(v.nrows()) {
            return Err(Error::ShapeMismatch(format!(
                "rank {} exceeds min(n, q) = {}",
                u.ncols(),
                u.nrows().min(v.nrows())
            )));
        }
        ensure_finite(&u)?;
        ensure_finite(&v)?;
        Ok(FactorPoint::Asymmetric { u, v })
    }

    pub fn mode(&self) -> Mode {
        match self {
            FactorPoint::Symmetric { .. } => Mode::Symmetric,
            FactorPoint::Asymmetric { .. } => Mode::Asymmetric,
        }
    }

    pub fn rank(&self) -> usize {
        match self {
            FactorPoint::Symmetric { z } => z.ncols(),
            FactorPoint::Asymmetric { u, .. } => u.ncols(),
        }
    }

    /// The represented matrix: Z Z^T or U V^T.
    pub fn product(&self) -> Mat {
        match self {
            FactorPoint::Symmetric { z } => z * z.transpose(),
            FactorPoint::Asymmetric { u, v } => u * v.transpose(),
        }
    }

    /// Shape of the represented matrix.
    pub fn product_shape(&self) -> (usize, usize) {
        match self {
            FactorPoint::Symmetric { z } => (z.nrows(), z.nrows()),
            FactorPoint::Asymmetric { u, v } => (u.nrows(), v.nrows()),
        }
    }

    pub fn as_symmetric(&self) -> Option<&Mat> {
        match self {
            FactorPoint::Symmetric { z } => Some(z),
            _ => None,
        }
    }

    pub fn as_asymmetric(&self) -> Option<(&Mat, &Mat)> {
        match self {
            FactorPoint::Asymmetric { u, v } => Some((u, v)),
            _ => None,
        }
    }
}

/// Balance residual n^-1 U^T U - q^-1 V^T V in operator norm; zero for
/// balanced pairs.
pub fn balance_residual(u: &Mat, v: &Mat) -> f64 {
    let n = u.nrows() as f64;
    let q = v.nrows() as f64;
    let gram = u.transpose() * u / n - v.transpose() * v / q;
    op_norm(&gram)
}

/// Singular values of an input matrix together with the scaled sigma_min and
/// condition number used throughout the step-size and rate formulas.
#[derive(Debug, Clone)]
pub struct SpectralStats {
    /// All min(rows, cols) singular values, descending.
    pub singular_values: Vec<f64>,
    /// sigma_r / n (symmetric) or sigma_r / sqrt(n q) (asymmetric).
    pub sigma_min_scaled: f64,
    /// sigma_1 / sigma_r at the requested rank.
    pub kappa: f64,
}

/// Relative threshold below which the rank-r singular value is treated as
/// zero; ratios of singular values below this are not resolvable in f64.
pub const RANK_TOL: f64 = 1e-12;

/// Computes singular values and the scaled constants (sigma_min, kappa) for a
/// given target rank.
pub fn spectral_stats(x: &Mat, r: usize, mode: Mode) -> Result<SpectralStats> {
    let (n, q) = (x.nrows(), x.ncols());
    if r == 0 || r > n.min(q) {
        return Err(Error::InvalidArgument(format!(
            "rank {r} out of range for a {n}x{q} matrix"
        )));
    }
    let sv = x.singular_values();
    let mut singular_values: Vec<f64> = sv.iter().copied().collect();
    singular_values.sort_by(|a, b| b.partial_cmp(a).expect("singular values are finite"));

    let sigma_1 = singular_values[0];
    let sigma_r = singular_values[r - 1];
    let threshold = RANK_TOL * sigma_1;
    if sigma_r < threshold || sigma_r == 0.0 {
        return Err(Error::DegenerateRank {
            rank: r,
            sigma_r,
            threshold,
        });
    }
    let scale = match mode {
        Mode::Symmetric => n as f64,
        Mode::Asymmetric => ((n as f64) * (q as f64)).sqrt(),
    };
    Ok(SpectralStats {
        sigma_min_scaled: sigma_r / scale,
        kappa: sigma_1 / sigma_r,
        singular_values,
    })
}

/// The true factor point plus the derived scale constants referenced by the
/// step-size, radius, and floor formulas.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    point: FactorPoint,
    sigma_min: f64,
    kappa: f64,
    tau_star: Option<f64>,
    omega_star: f64,
}

/// Balanced-truth tolerance, relative to sigma_min.
const BALANCE_TOL: f64 = 1e-10;

impl GroundTruth {
    /// Wraps a factor point as the ground truth, computing sigma_min, kappa,
    /// tau_star, and omega_star from it. Asymmetric truths must be balanced:
    /// n^-1 U^T U = q^-1 V^T V up to 1e-10 * sigma_min.
    pub fn new(point: FactorPoint) -> Result<Self> {
        let r = point.rank();
        let x = point.product();
        let stats = spectral_stats(&x, r, point.mode())?;
        let (tau_star, omega_star) = match &point {
            FactorPoint::Symmetric { z } => (None, two_to_inf(z)),
            FactorPoint::Asymmetric { u, v } => {
                let n = u.nrows() as f64;
                let q = v.nrows() as f64;
                let tau2 =
                    (fro_norm(u).powi(2) / n + fro_norm(v).powi(2) / q) / 2.0;
                let residual = balance_residual(u, v);
                if residual > BALANCE_TOL * stats.sigma_min_scaled {
                    return Err(Error::InvalidArgument(format!(
                        "asymmetric truth is not balanced: residual {residual:.3e} > {:.3e}",
                        BALANCE_TOL * stats.sigma_min_scaled
                    )));
                }
                (Some(tau2.sqrt()), two_to_inf(u).max(two_to_inf(v)))
            }
        };
        Ok(GroundTruth {
            point,
            sigma_min: stats.sigma_min_scaled,
            kappa: stats.kappa,
            tau_star,
            omega_star,
        })
    }

    pub fn point(&self) -> &FactorPoint {
        &self.point
    }

    /// The true matrix X* = Z* Z*^T or U* V*^T.
    pub fn x_star(&self) -> Mat {
        self.point.product()
    }

    /// sigma_r(X*) / n (symmetric) or sigma_r(X*) / sqrt(n q) (asymmetric).
    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    /// Condition number sigma_1(X*) / sigma_r(X*).
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Weighted Frobenius scale of the asymmetric truth; None for symmetric.
    pub fn tau_star(&self) -> Option<f64> {
        self.tau_star
    }

    /// Row-wise scale: the largest row norm across the true factors.
    pub fn omega_star(&self) -> f64 {
        self.omega_star
    }

    /// The natural l2 error scale: ||Z*||_F for symmetric, tau_star for
    /// asymmetric.
    pub fn dist2_scale(&self) -> f64 {
        match &self.point {
            FactorPoint::Symmetric { z } => fro_norm(z),
            FactorPoint::Asymmetric { .. } => self.tau_star.expect("asymmetric has tau_star"),
        }
    }
}
