//! Partial distance correlation built on U-centered matrices.
//!
//! The U-centering differs from double centering in its `n-2` scaled
//! corrections and zeroed diagonal; the associated inner product
//! `(A~ . B~) = 1/(n(n-3)) sum_{k != l} A~_kl B~_kl` is an unbiased
//! estimator of squared population distance covariance. Projecting one
//! U-centered matrix onto the orthogonal complement of another realizes
//! the "conditioning" operation.

use ndarray::Array2;

use crate::batch::SampleBatch;
use crate::dcor::{pairwise_distances, DistanceMatrix, DEGENERACY_THRESHOLD};
use crate::error::{Error, Result};

/// U-centered matrix: symmetric, zero diagonal, off-diagonal row sums zero.
#[derive(Debug, Clone, PartialEq)]
pub struct UCenteredMatrix {
    at: Array2<f64>,
}

impl UCenteredMatrix {
    pub fn n(&self) -> usize {
        self.at.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.at
    }

    /// All-zero matrix of the given size (the degenerate U-centered matrix).
    pub fn zeros(n: usize) -> Self {
        Self {
            at: Array2::zeros((n, n)),
        }
    }

    fn axpy(&self, beta: f64, other: &UCenteredMatrix) -> UCenteredMatrix {
        UCenteredMatrix {
            at: &self.at - &(beta * &other.at),
        }
    }
}

/// Result of projecting one U-centered matrix onto another's orthogonal
/// complement.
#[derive(Debug, Clone)]
pub struct Projection {
    /// The residual `A~ - beta * C~`.
    pub residual: UCenteredMatrix,
    /// Projection coefficient `(A~ . C~) / (C~ . C~)`; zero when degenerate.
    pub beta: f64,
    /// Set when `(C~ . C~)` vanished and the input was returned unchanged.
    pub degenerate: bool,
}

/// Partial distance correlation with its intermediates.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PDCorReport {
    /// The signed squared quantity `R*^2`; zero when `degenerate`.
    pub pdcor2: f64,
    /// Inner product of the two projected matrices.
    pub pdcov: f64,
    /// Norm of the projection of x's matrix.
    pub proj_x_norm: f64,
    /// Norm of the projection of y's matrix.
    pub proj_y_norm: f64,
    /// Coefficient of x's matrix on z's.
    pub beta_xz: f64,
    /// Coefficient of y's matrix on z's.
    pub beta_yz: f64,
    /// True when either projection norm vanished.
    pub degenerate: bool,
}

/// U-center a distance matrix. Requires `n > 2`.
pub fn u_center(dist: &DistanceMatrix) -> Result<UCenteredMatrix> {
    let n = dist.n();
    if n <= 2 {
        return Err(Error::SizeTooSmall {
            what: "u_center",
            required: 3,
            actual: n,
        });
    }
    let d = dist.as_array();
    let nf = n as f64;
    let col_sums: Vec<f64> = (0..n).map(|l| d.column(l).sum()).collect();
    let total: f64 = col_sums.iter().sum();
    let c1 = 1.0 / (nf - 2.0);
    let c2 = 1.0 / ((nf - 1.0) * (nf - 2.0));

    let mut at = Array2::zeros((n, n));
    for k in 0..n {
        for l in 0..n {
            if k == l {
                continue;
            }
            at[[k, l]] = d[[k, l]] - c1 * col_sums[l] - c1 * col_sums[k] + c2 * total;
        }
    }
    Ok(UCenteredMatrix { at })
}

/// Shortcut: U-centered matrix of a batch's pairwise distances.
pub fn u_centered_of(batch: &SampleBatch) -> Result<UCenteredMatrix> {
    u_center(&pairwise_distances(batch))
}

/// Unbiased inner product `1/(n(n-3)) sum_{k != l} A~_kl B~_kl`.
/// Requires `n >= 4` (the factor vanishes at `n = 3`).
pub fn u_inner(a: &UCenteredMatrix, b: &UCenteredMatrix) -> Result<f64> {
    if a.n() != b.n() {
        return Err(Error::DimensionMismatch(format!(
            "u-centered matrices sized {} and {}",
            a.n(),
            b.n()
        )));
    }
    let n = a.n();
    if n < 4 {
        return Err(Error::SizeTooSmall {
            what: "u_inner",
            required: 4,
            actual: n,
        });
    }
    let mut s = 0.0;
    for k in 0..n {
        for l in 0..n {
            if k != l {
                s += a.at[[k, l]] * b.at[[k, l]];
            }
        }
    }
    Ok(s / (n as f64 * (n as f64 - 3.0)))
}

/// Norm induced by the inner product. The self inner product is a sum of
/// squares, hence nonnegative up to rounding.
pub fn u_norm(a: &UCenteredMatrix) -> Result<f64> {
    Ok(u_inner(a, a)?.max(0.0).sqrt())
}

/// Project `a` onto the orthogonal complement of `c`.
///
/// When `(C~ . C~)` is at or below the degeneracy threshold the input is
/// returned unchanged with the flag set: conditioning on a constant
/// removes nothing.
pub fn project_orthogonal(a: &UCenteredMatrix, c: &UCenteredMatrix) -> Result<Projection> {
    let cc = u_inner(c, c)?;
    if cc <= DEGENERACY_THRESHOLD {
        return Ok(Projection {
            residual: a.clone(),
            beta: 0.0,
            degenerate: true,
        });
    }
    let beta = u_inner(a, c)? / cc;
    Ok(Projection {
        residual: a.axpy(beta, c),
        beta,
        degenerate: false,
    })
}

/// Sample partial distance covariance `pdCov(x, y; z)`.
pub fn pdcov(x: &SampleBatch, y: &SampleBatch, z: &SampleBatch) -> Result<f64> {
    let (px, py, _, _) = project_pair(x, y, z)?;
    u_inner(&px.residual, &py.residual)
}

/// Sample partial distance correlation `R*^2(x, y; z)` with intermediates.
pub fn pdcor(x: &SampleBatch, y: &SampleBatch, z: &SampleBatch) -> Result<PDCorReport> {
    let (px, py, _, _) = project_pair(x, y, z)?;
    let pdcov = u_inner(&px.residual, &py.residual)?;
    let proj_x_norm = u_norm(&px.residual)?;
    let proj_y_norm = u_norm(&py.residual)?;

    // Degeneracy threshold applies to the squared norms.
    let degenerate =
        proj_x_norm * proj_x_norm <= DEGENERACY_THRESHOLD || proj_y_norm * proj_y_norm <= DEGENERACY_THRESHOLD;
    let pdcor2 = if degenerate {
        0.0
    } else {
        pdcov / (proj_x_norm * proj_y_norm)
    };
    Ok(PDCorReport {
        pdcor2,
        pdcov,
        proj_x_norm,
        proj_y_norm,
        beta_xz: px.beta,
        beta_yz: py.beta,
        degenerate,
    })
}

/// Bias-corrected squared distance correlation `(A~ . B~)/(|A~||B~|)`,
/// the unconditioned specialization of `R*^2`. May be slightly negative
/// in finite samples.
pub fn bias_corrected_dcor2(x: &SampleBatch, y: &SampleBatch) -> Result<f64> {
    check_counts(&[x, y])?;
    let at = u_centered_of(x)?;
    let bt = u_centered_of(y)?;
    let na = u_norm(&at)?;
    let nb = u_norm(&bt)?;
    if na * na <= DEGENERACY_THRESHOLD || nb * nb <= DEGENERACY_THRESHOLD {
        return Ok(0.0);
    }
    Ok(u_inner(&at, &bt)? / (na * nb))
}

fn check_counts(batches: &[&SampleBatch]) -> Result<()> {
    let n = batches[0].n();
    if batches.iter().any(|b| b.n() != n) {
        return Err(Error::DimensionMismatch(
            "batches must share a sample count".into(),
        ));
    }
    if n < 4 {
        return Err(Error::SizeTooSmall {
            what: "partial distance statistics",
            required: 4,
            actual: n,
        });
    }
    Ok(())
}

fn project_pair(
    x: &SampleBatch,
    y: &SampleBatch,
    z: &SampleBatch,
) -> Result<(Projection, Projection, UCenteredMatrix, UCenteredMatrix)> {
    check_counts(&[x, y, z])?;
    let at = u_centered_of(x)?;
    let bt = u_centered_of(y)?;
    let ct = u_centered_of(z)?;
    let px = project_orthogonal(&at, &ct)?;
    let py = project_orthogonal(&bt, &ct)?;
    Ok((px, py, at, bt))
}
