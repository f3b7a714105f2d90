//! Empirical distance correlation: pairwise distance matrices, double
//! centering, and the distance covariance / variance / correlation
//! statistics, plus sample Pearson correlation for comparison.

use ndarray::Array2;

use crate::batch::SampleBatch;
use crate::error::{Error, Result};

/// Product `V2(x,x) * V2(y,y)` at or below this is treated as the zero
/// branch of the correlation definition. Absolute, to absorb underflow.
pub const DEGENERACY_THRESHOLD: f64 = 1e-14;

/// Symmetric pairwise Euclidean distance matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    d: Array2<f64>,
}

impl DistanceMatrix {
    /// Wrap a precomputed matrix, checking symmetry, zero diagonal,
    /// non-negativity and finiteness.
    pub fn new(d: Array2<f64>) -> Result<Self> {
        let (r, c) = d.dim();
        if r != c || r == 0 {
            return Err(Error::DimensionMismatch(format!(
                "distance matrix must be square and non-empty, got {r}x{c}"
            )));
        }
        for i in 0..r {
            if d[[i, i]] != 0.0 {
                return Err(Error::InvalidInput("nonzero diagonal".into()));
            }
            for j in 0..i {
                let v = d[[i, j]];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "entry ({i},{j}) = {v} is not a distance"
                    )));
                }
                if v != d[[j, i]] {
                    return Err(Error::InvalidInput("matrix not symmetric".into()));
                }
            }
        }
        Ok(Self { d })
    }

    pub fn n(&self) -> usize {
        self.d.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.d
    }

    /// Grand mean of all entries.
    pub fn grand_mean(&self) -> f64 {
        self.d.mean().unwrap_or(0.0)
    }
}

/// Double-centered distance matrix: rows and columns each sum to zero.
/// The diagonal is generally nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredDistanceMatrix {
    a: Array2<f64>,
}

impl CenteredDistanceMatrix {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.a
    }
}

/// Distance correlation together with the intermediates that produced it.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DCorReport {
    /// The correlation in `[0, 1]`; zero when `degenerate`.
    pub dcor: f64,
    /// Distance covariance `V2(x, y)`.
    pub dcov2: f64,
    /// Distance variance `V2(x, x)`.
    pub dvar2_x: f64,
    /// Distance variance `V2(y, y)`.
    pub dvar2_y: f64,
    /// True when the variance product fell at or below the zero-branch threshold.
    pub degenerate: bool,
}

/// Pairwise Euclidean distances between the rows of `batch`.
pub fn pairwise_distances(batch: &SampleBatch) -> DistanceMatrix {
    let x = batch.view();
    let n = batch.n();
    let mut d = Array2::zeros((n, n));
    for k in 0..n {
        let xk = x.row(k);
        for l in 0..k {
            let xl = x.row(l);
            let mut s = 0.0;
            for (a, b) in xk.iter().zip(xl.iter()) {
                let diff = a - b;
                s += diff * diff;
            }
            let dist = s.sqrt();
            d[[k, l]] = dist;
            d[[l, k]] = dist;
        }
    }
    DistanceMatrix { d }
}

/// Double centering: subtract row means and column means, add the grand mean.
pub fn double_center(dist: &DistanceMatrix) -> CenteredDistanceMatrix {
    let d = &dist.d;
    let n = dist.n();
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|k| d.row(k).sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;

    let mut a = d.clone();
    for k in 0..n {
        for l in 0..n {
            // column mean equals row mean of the transposed index (d symmetric)
            a[[k, l]] = d[[k, l]] - row_means[k] - row_means[l] + grand;
        }
    }
    CenteredDistanceMatrix { a }
}

/// `(1/n^2) * sum_{k,l} A_kl * B_kl` over two equally sized centered matrices.
pub fn dcov2(a: &CenteredDistanceMatrix, b: &CenteredDistanceMatrix) -> Result<f64> {
    if a.n() != b.n() {
        return Err(Error::DimensionMismatch(format!(
            "centered matrices sized {} and {}",
            a.n(),
            b.n()
        )));
    }
    let n2 = (a.n() * a.n()) as f64;
    let mut s = 0.0;
    for (x, y) in a.a.iter().zip(b.a.iter()) {
        s += x * y;
    }
    Ok(s / n2)
}

/// Empirical distance correlation between two batches with a shared sample
/// count (feature dimensions may differ).
///
/// Returns the zero branch with `degenerate = true` when the variance
/// product vanishes (constant batches, or `n = 1`).
pub fn dcor(x: &SampleBatch, y: &SampleBatch) -> Result<DCorReport> {
    if x.n() != y.n() {
        return Err(Error::DimensionMismatch(format!(
            "sample counts {} and {}",
            x.n(),
            y.n()
        )));
    }
    let a = double_center(&pairwise_distances(x));
    let b = double_center(&pairwise_distances(y));
    dcor_from_centered(&a, &b)
}

/// The correlation statistic computed from already-centered matrices.
pub fn dcor_from_centered(
    a: &CenteredDistanceMatrix,
    b: &CenteredDistanceMatrix,
) -> Result<DCorReport> {
    let dcov2_xy = dcov2(a, b)?;
    let dvar2_x = dcov2(a, a)?;
    let dvar2_y = dcov2(b, b)?;

    let product = dvar2_x * dvar2_y;
    if product <= DEGENERACY_THRESHOLD {
        return Ok(DCorReport {
            dcor: 0.0,
            dcov2: dcov2_xy,
            dvar2_x,
            dvar2_y,
            degenerate: true,
        });
    }
    // The biased V2 statistic is nonnegative in exact arithmetic; clamp
    // only shields the sqrt from rounding at the scale of 1e-17.
    let r2 = (dcov2_xy / product.sqrt()).max(0.0);
    Ok(DCorReport {
        dcor: r2.sqrt(),
        dcov2: dcov2_xy,
        dvar2_x,
        dvar2_y,
        degenerate: false,
    })
}

/// Sample Pearson correlation coefficient of two scalar sequences.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::SizeTooSmall {
            what: "pearson",
            required: 2,
            actual: x.len(),
        });
    }
    if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite entries".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::Degenerate("constant input to pearson".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn batch(rows: &[&[f64]]) -> SampleBatch {
        let p = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        SampleBatch::from_rows(rows.len(), p, flat).unwrap()
    }

    #[test]
    fn distances_two_scalar_points() {
        let d = pairwise_distances(&batch(&[&[0.0], &[1.0]]));
        assert_eq!(d.as_array(), &array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn distances_constant_batch_is_zero() {
        let d = pairwise_distances(&batch(&[&[2.0, 2.0], &[2.0, 2.0], &[2.0, 2.0]]));
        assert!(d.as_array().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn distances_345_triangle() {
        let d = pairwise_distances(&batch(&[&[0.0, 0.0], &[3.0, 4.0]]));
        assert_eq!(d.as_array()[[0, 1]], 5.0);
        assert_eq!(d.as_array()[[1, 0]], 5.0);
    }

    #[test]
    fn double_center_two_points() {
        let d = pairwise_distances(&batch(&[&[0.0], &[1.0]]));
        let a = double_center(&d);
        let expect = array![[-0.5, 0.5], [0.5, -0.5]];
        for (got, want) in a.as_array().iter().zip(expect.iter()) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn double_center_zero_matrix() {
        let d = DistanceMatrix::new(Array2::zeros((4, 4))).unwrap();
        let a = double_center(&d);
        assert!(a.as_array().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn double_center_row_col_sums_vanish() {
        let mut rng = crate::rng::seeded(11);
        let x = SampleBatch::new(crate::rng::standard_normal_matrix(&mut rng, 5, 3)).unwrap();
        let d = pairwise_distances(&x);
        let a = double_center(&d);
        let max_a = d.as_array().iter().cloned().fold(0.0, f64::max);
        let tol = 1e-9 * 5.0 * max_a;
        for k in 0..5 {
            assert!(a.as_array().row(k).sum().abs() <= tol);
            assert!(a.as_array().column(k).sum().abs() <= tol);
        }
    }

    #[test]
    fn dcov2_hand_case() {
        let d = pairwise_distances(&batch(&[&[0.0], &[1.0]]));
        let a = double_center(&d);
        assert!((dcov2(&a, &a).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn dcov2_against_zero_matrix() {
        let d = pairwise_distances(&batch(&[&[0.0], &[1.0], &[3.0]]));
        let a = double_center(&d);
        let z = double_center(&DistanceMatrix::new(Array2::zeros((3, 3))).unwrap());
        assert_eq!(dcov2(&a, &z).unwrap(), 0.0);
    }

    #[test]
    fn dcov2_size_mismatch() {
        let a = double_center(&pairwise_distances(&batch(&[&[0.0], &[1.0]])));
        let b = double_center(&pairwise_distances(&batch(&[&[0.0], &[1.0], &[2.0]])));
        assert!(matches!(dcov2(&a, &b), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn self_correlation_is_one() {
        let mut rng = crate::rng::seeded(5);
        let x = SampleBatch::new(crate::rng::standard_normal_matrix(&mut rng, 12, 4)).unwrap();
        let rep = dcor(&x, &x).unwrap();
        assert!(!rep.degenerate);
        assert!((rep.dcor - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_side_is_degenerate_zero() {
        let mut rng = crate::rng::seeded(6);
        let x = SampleBatch::new(crate::rng::standard_normal_matrix(&mut rng, 8, 2)).unwrap();
        let y = SampleBatch::from_rows(8, 1, vec![3.0; 8]).unwrap();
        let rep = dcor(&x, &y).unwrap();
        assert!(rep.degenerate);
        assert_eq!(rep.dcor, 0.0);
    }

    #[test]
    fn single_sample_degenerates_instead_of_erroring() {
        let x = batch(&[&[1.0, 2.0]]);
        let rep = dcor(&x, &x).unwrap();
        assert!(rep.degenerate);
        assert_eq!(rep.dcor, 0.0);
    }

    #[test]
    fn pearson_identity_and_negation() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &y).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn pearson_rejects_constant() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::Degenerate(_))
        ));
    }
}
