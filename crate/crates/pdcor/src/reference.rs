//! Naive direct-formula reference implementations.
//!
//! These evaluate the definitions literally, entry by entry, with fresh
//! per-entry summation loops and no shared intermediate matrices. They are
//! deliberately slow and kept independent of the optimized paths in
//! [`crate::dcor`] and [`crate::pdc`]; the `selftest` command and the
//! oracle-equivalence tests compare the two sides.

use crate::batch::SampleBatch;
use crate::error::{Error, Result};

fn dist(x: &SampleBatch, k: usize, l: usize) -> f64 {
    let v = x.view();
    let mut s = 0.0;
    for j in 0..x.p() {
        let d = v[[k, j]] - v[[l, j]];
        s += d * d;
    }
    s.sqrt()
}

/// Double-centered entry `A_kl` computed from scratch: row mean, column
/// mean, and grand mean each summed on the spot.
fn centered_entry(x: &SampleBatch, k: usize, l: usize, grand: f64) -> f64 {
    let n = x.n();
    let nf = n as f64;
    let mut row = 0.0;
    let mut col = 0.0;
    for j in 0..n {
        row += dist(x, k, j);
        col += dist(x, j, l);
    }
    dist(x, k, l) - row / nf - col / nf + grand
}

fn grand_mean(x: &SampleBatch) -> f64 {
    let n = x.n();
    let mut total = 0.0;
    for k in 0..n {
        for l in 0..n {
            total += dist(x, k, l);
        }
    }
    total / (n * n) as f64
}

/// `V2(x, y)` by direct evaluation of the definition.
pub fn naive_dcov2(x: &SampleBatch, y: &SampleBatch) -> Result<f64> {
    if x.n() != y.n() {
        return Err(Error::DimensionMismatch("sample counts differ".into()));
    }
    let n = x.n();
    let gx = grand_mean(x);
    let gy = grand_mean(y);
    let mut s = 0.0;
    for k in 0..n {
        for l in 0..n {
            s += centered_entry(x, k, l, gx) * centered_entry(y, k, l, gy);
        }
    }
    Ok(s / (n * n) as f64)
}

/// Distance correlation by direct evaluation, including the zero branch.
pub fn naive_dcor(x: &SampleBatch, y: &SampleBatch) -> Result<f64> {
    let vxy = naive_dcov2(x, y)?;
    let vxx = naive_dcov2(x, x)?;
    let vyy = naive_dcov2(y, y)?;
    let product = vxx * vyy;
    if product <= crate::dcor::DEGENERACY_THRESHOLD {
        return Ok(0.0);
    }
    Ok((vxy / product.sqrt()).max(0.0).sqrt())
}

/// Total of all pairwise distances, summed by a plain double loop.
fn grand_total(x: &SampleBatch) -> f64 {
    let n = x.n();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            total += dist(x, i, j);
        }
    }
    total
}

/// U-centered entry per definition; the row and column sums are evaluated
/// on the spot, the grand total (a single number in the formula) is passed in.
fn u_entry(x: &SampleBatch, k: usize, l: usize, total: f64) -> f64 {
    if k == l {
        return 0.0;
    }
    let n = x.n();
    let nf = n as f64;
    let mut col = 0.0;
    let mut row = 0.0;
    for i in 0..n {
        col += dist(x, i, l);
        row += dist(x, k, i);
    }
    dist(x, k, l) - col / (nf - 2.0) - row / (nf - 2.0) + total / ((nf - 1.0) * (nf - 2.0))
}

/// `(A~(x) . B~(y))` by direct evaluation.
pub fn naive_u_inner(x: &SampleBatch, y: &SampleBatch) -> Result<f64> {
    if x.n() != y.n() {
        return Err(Error::DimensionMismatch("sample counts differ".into()));
    }
    let n = x.n();
    if n < 4 {
        return Err(Error::SizeTooSmall {
            what: "naive_u_inner",
            required: 4,
            actual: n,
        });
    }
    let tx = grand_total(x);
    let ty = grand_total(y);
    let mut s = 0.0;
    for k in 0..n {
        for l in 0..n {
            if k != l {
                s += u_entry(x, k, l, tx) * u_entry(y, k, l, ty);
            }
        }
    }
    Ok(s / (n as f64 * (n as f64 - 3.0)))
}

/// Inner product of two explicit matrices under the U-statistic weighting.
fn mat_inner(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut s = 0.0;
    for k in 0..n {
        for l in 0..n {
            if k != l {
                s += a[k][l] * b[k][l];
            }
        }
    }
    s / (n as f64 * (n as f64 - 3.0))
}

fn u_matrix(x: &SampleBatch) -> Vec<Vec<f64>> {
    let n = x.n();
    let total = grand_total(x);
    (0..n)
        .map(|k| (0..n).map(|l| u_entry(x, k, l, total)).collect())
        .collect()
}

fn project(a: &[Vec<f64>], c: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cc = mat_inner(c, c);
    if cc <= crate::dcor::DEGENERACY_THRESHOLD {
        return a.to_vec();
    }
    let beta = mat_inner(a, c) / cc;
    a.iter()
        .enumerate()
        .map(|(k, row)| row.iter().enumerate().map(|(l, v)| v - beta * c[k][l]).collect())
        .collect()
}

/// Partial distance covariance by direct evaluation.
pub fn naive_pdcov(x: &SampleBatch, y: &SampleBatch, z: &SampleBatch) -> Result<f64> {
    if x.n() != y.n() || x.n() != z.n() {
        return Err(Error::DimensionMismatch("sample counts differ".into()));
    }
    if x.n() < 4 {
        return Err(Error::SizeTooSmall {
            what: "naive_pdcov",
            required: 4,
            actual: x.n(),
        });
    }
    let ct = u_matrix(z);
    let px = project(&u_matrix(x), &ct);
    let py = project(&u_matrix(y), &ct);
    Ok(mat_inner(&px, &py))
}

/// Partial distance correlation `R*^2` by direct evaluation.
pub fn naive_pdcor2(x: &SampleBatch, y: &SampleBatch, z: &SampleBatch) -> Result<f64> {
    if x.n() != y.n() || x.n() != z.n() {
        return Err(Error::DimensionMismatch("sample counts differ".into()));
    }
    if x.n() < 4 {
        return Err(Error::SizeTooSmall {
            what: "naive_pdcor2",
            required: 4,
            actual: x.n(),
        });
    }
    let ct = u_matrix(z);
    let px = project(&u_matrix(x), &ct);
    let py = project(&u_matrix(y), &ct);
    let nx = mat_inner(&px, &px).max(0.0).sqrt();
    let ny = mat_inner(&py, &py).max(0.0).sqrt();
    if nx * nx <= crate::dcor::DEGENERACY_THRESHOLD || ny * ny <= crate::dcor::DEGENERACY_THRESHOLD {
        return Ok(0.0);
    }
    Ok(mat_inner(&px, &py) / (nx * ny))
}
