//! Exact gradients of the distance-correlation and partial-distance-
//! correlation losses with respect to an input feature batch, plus a
//! central-difference checker.
//!
//! The machinery is a fixed composition of hand-derived adjoints for the
//! pipeline distance -> centering -> inner products -> ratio. Euclidean
//! distance is not differentiable at coincident sample pairs; the
//! subgradient there is taken as zero, so batches with duplicate rows are
//! legal inputs.

use ndarray::Array2;

use crate::batch::SampleBatch;
use crate::dcor::{double_center, pairwise_distances, DistanceMatrix, DEGENERACY_THRESHOLD};
use crate::error::{Error, Result};
use crate::pdc::{project_orthogonal, u_centered_of, u_inner};

/// Which argument the gradient is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wrt {
    X,
    Y,
}

/// A loss value together with its gradient matrix (same shape as the input).
#[derive(Debug, Clone)]
pub struct GradResult {
    pub value: f64,
    pub grad: Array2<f64>,
}

/// Adjoint of the pairwise-distance map: pull a gradient on the distance
/// matrix back to the sample rows. Entries with zero distance contribute
/// nothing (subgradient choice at coincident points).
pub(crate) fn distance_adjoint(
    x: &SampleBatch,
    dist: &DistanceMatrix,
    g: &Array2<f64>,
) -> Array2<f64> {
    let n = x.n();
    let p = x.p();
    let xv = x.view();
    let d = dist.as_array();
    let mut out = Array2::zeros((n, p));
    for k in 0..n {
        for l in 0..n {
            if l == k {
                continue;
            }
            let dkl = d[[k, l]];
            if dkl <= 0.0 {
                continue;
            }
            let w = (g[[k, l]] + g[[l, k]]) / dkl;
            for j in 0..p {
                out[[k, j]] += w * (xv[[k, j]] - xv[[l, j]]);
            }
        }
    }
    out
}

/// Adjoint of double centering; the centering projection is self-adjoint,
/// so this is the same row/column/grand mean correction applied to `g`.
pub(crate) fn center_adjoint(g: &Array2<f64>) -> Array2<f64> {
    let n = g.nrows();
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|k| g.row(k).sum() / nf).collect();
    let col_means: Vec<f64> = (0..n).map(|l| g.column(l).sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    let mut out = g.clone();
    for k in 0..n {
        for l in 0..n {
            out[[k, l]] = g[[k, l]] - row_means[k] - col_means[l] + grand;
        }
    }
    out
}

/// Adjoint of the U-centering map for a zero-diagonal gradient matrix.
/// The returned diagonal is meaningless and is zeroed; the distance
/// diagonal has zero derivative anyway.
pub(crate) fn u_center_adjoint(g: &Array2<f64>) -> Array2<f64> {
    let n = g.nrows();
    let nf = n as f64;
    let row_sums: Vec<f64> = (0..n).map(|k| g.row(k).sum()).collect();
    let col_sums: Vec<f64> = (0..n).map(|l| g.column(l).sum()).collect();
    let total: f64 = row_sums.iter().sum();
    let c1 = 1.0 / (nf - 2.0);
    let c2 = 1.0 / ((nf - 1.0) * (nf - 2.0));
    let mut out = Array2::zeros((n, n));
    for k in 0..n {
        for l in 0..n {
            if k == l {
                continue;
            }
            out[[k, l]] = g[[k, l]] - c1 * col_sums[l] - c1 * row_sums[k] + c2 * total;
        }
    }
    out
}

/// Distance correlation of `(x, y)` and its exact gradient with respect to
/// the chosen side. Errors when a variance degenerates (the ratio has no
/// defined derivative there).
pub fn dcor_value_grad(x: &SampleBatch, y: &SampleBatch, wrt: Wrt) -> Result<GradResult> {
    if x.n() != y.n() {
        return Err(Error::DimensionMismatch(format!(
            "sample counts {} and {}",
            x.n(),
            y.n()
        )));
    }
    if x.n() < 2 {
        return Err(Error::SizeTooSmall {
            what: "dcor gradient",
            required: 2,
            actual: x.n(),
        });
    }
    let dx = pairwise_distances(x);
    let dy = pairwise_distances(y);
    let a = double_center(&dx);
    let b = double_center(&dy);
    let n2 = (x.n() * x.n()) as f64;

    let vxy = frob(a.as_array(), b.as_array()) / n2;
    let vxx = frob(a.as_array(), a.as_array()) / n2;
    let vyy = frob(b.as_array(), b.as_array()) / n2;
    if vxx * vyy <= DEGENERACY_THRESHOLD {
        return Err(Error::Degenerate(
            "distance variance vanished; dcor gradient undefined".into(),
        ));
    }
    let denom = (vxx * vyy).sqrt();
    let r2 = (vxy / denom).max(0.0);
    let r = r2.sqrt();
    if r <= 1e-12 {
        return Err(Error::Degenerate(
            "dcor is zero; square root not differentiable".into(),
        ));
    }

    // dR/da = (1/(2R n^2 sqrt(Vxx Vyy))) (B - (Vxy/Vxx) A), then pull back
    // through centering (self-adjoint) and the distance map.
    let (own, other, own_var, batch, dist) = match wrt {
        Wrt::X => (a.as_array(), b.as_array(), vxx, x, &dx),
        Wrt::Y => (b.as_array(), a.as_array(), vyy, y, &dy),
    };
    let scale = 1.0 / (2.0 * r * n2 * denom);
    let ratio = vxy / own_var;
    let mut g = Array2::zeros(own.raw_dim());
    for (dst, (o, s)) in g.iter_mut().zip(other.iter().zip(own.iter())) {
        *dst = scale * (o - ratio * s);
    }
    let g = center_adjoint(&g);
    let grad = distance_adjoint(batch, dist, &g);
    Ok(GradResult { value: r, grad })
}

/// Partial distance correlation `R*^2(x, y; z)` treating `y` and `z` as
/// constants, with its exact gradient with respect to `x`.
pub fn pdcor_value_grad(x: &SampleBatch, y: &SampleBatch, z: &SampleBatch) -> Result<GradResult> {
    if x.n() != y.n() || x.n() != z.n() {
        return Err(Error::DimensionMismatch(
            "batches must share a sample count".into(),
        ));
    }
    let n = x.n();
    if n < 4 {
        return Err(Error::SizeTooSmall {
            what: "pdcor gradient",
            required: 4,
            actual: n,
        });
    }
    let at = u_centered_of(x)?;
    let bt = u_centered_of(y)?;
    let ct = u_centered_of(z)?;
    let px = project_orthogonal(&at, &ct)?;
    let py = project_orthogonal(&bt, &ct)?;

    let sxy = u_inner(&px.residual, &py.residual)?;
    let sxx = u_inner(&px.residual, &px.residual)?;
    let syy = u_inner(&py.residual, &py.residual)?;
    if sxx <= DEGENERACY_THRESHOLD || syy <= DEGENERACY_THRESHOLD {
        return Err(Error::Degenerate(
            "projection norm vanished; pdcor gradient undefined".into(),
        ));
    }
    let denom = (sxx * syy).sqrt();
    let value = sxy / denom;

    // d value / d A~_kl = c [ (P_y)_kl / denom - (value / Sxx) (P_x)_kl ],
    // using that the projection is a fixed self-adjoint idempotent linear map.
    let c = 1.0 / (n as f64 * (n as f64 - 3.0));
    let pxm = px.residual.as_array();
    let pym = py.residual.as_array();
    let mut g = Array2::zeros((n, n));
    for k in 0..n {
        for l in 0..n {
            if k != l {
                g[[k, l]] = c * (pym[[k, l]] / denom - (value / sxx) * pxm[[k, l]]);
            }
        }
    }
    let g = u_center_adjoint(&g);
    let dist = pairwise_distances(x);
    let grad = distance_adjoint(x, &dist, &g);
    Ok(GradResult { value, grad })
}

/// Maximum relative discrepancy between the analytic gradient of `loss`
/// at `x` and central finite differences with step `h`, normalized by the
/// gradient's max magnitude.
pub fn finite_diff_check<F>(loss: F, x: &SampleBatch, h: f64) -> Result<f64>
where
    F: Fn(&SampleBatch) -> Result<GradResult>,
{
    if h <= 0.0 {
        return Err(Error::InvalidInput("finite-difference step must be > 0".into()));
    }
    let analytic = loss(x)?;
    let mut worst = 0.0f64;
    let scale = analytic
        .grad
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    let mut probe = x.as_array().clone();
    for k in 0..x.n() {
        for j in 0..x.p() {
            let orig = probe[[k, j]];
            probe[[k, j]] = orig + h;
            let plus = loss(&SampleBatch::new(probe.clone())?)?.value;
            probe[[k, j]] = orig - h;
            let minus = loss(&SampleBatch::new(probe.clone())?)?.value;
            probe[[k, j]] = orig;
            let fd = (plus - minus) / (2.0 * h);
            worst = worst.max((analytic.grad[[k, j]] - fd).abs() / scale);
        }
    }
    Ok(worst)
}

fn frob(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Gradient matrix entries summed over samples; near zero for
/// translation-invariant losses.
pub fn aggregate_gradient(grad: &Array2<f64>) -> Vec<f64> {
    (0..grad.ncols()).map(|j| grad.column(j).sum()).collect()
}
