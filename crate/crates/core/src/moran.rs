//! Local Moran's I over tokens.
//!
//! Each token is reduced to a scalar attribute (its feature mean), the
//! attributes are z-normalized, and the local statistic is the diagonal of
//! `z z^T W` for a token-to-token weight matrix `W`. The per-token values are
//! then z-normalized once more to give the spatial scores `s`.
//!
//! A zero standard deviation at either normalization stage yields an all-zero
//! vector, so constant inputs produce neutral scores instead of an error.

use crate::error::{Error, Result};
use crate::tensor::{mean_std, mean_std_median, Matrix};

/// How the weight matrix is contracted against `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MoranConvention {
    /// `diag(z z^T W)`: `I[i] = z_i * sum_j z_j * W[j][i]`.
    #[default]
    Diagonal,
    /// Textbook row form `I[i] = z_i * sum_j W[i][j] * z_j`.
    Row,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialScores {
    /// Normalized local Moran's I, one per token.
    pub s: Vec<f64>,
    pub mean_s: f64,
    pub abs_median_s: f64,
    /// Local Moran's I before the second normalization.
    pub raw_i: Vec<f64>,
}

/// Per-token mean over the feature axis.
pub fn global_attribute(x: &Matrix) -> Result<Vec<f64>> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::Empty("global_attribute"));
    }
    let d = x.cols() as f64;
    Ok(x.iter_rows().map(|r| r.iter().sum::<f64>() / d).collect())
}

/// `(a - mean) / std` with population std; all zeros when std is zero.
pub fn z_normalize(a: &[f64]) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let (mean, std) = mean_std(a);
    if std == 0.0 || !std.is_finite() {
        return vec![0.0; a.len()];
    }
    a.iter().map(|v| (v - mean) / std).collect()
}

/// Diagonal of `z z^T W` without forming the outer product.
pub fn local_moran(z: &[f64], w: &Matrix) -> Result<Vec<f64>> {
    local_moran_with(z, w, MoranConvention::Diagonal)
}

pub fn local_moran_with(z: &[f64], w: &Matrix, convention: MoranConvention) -> Result<Vec<f64>> {
    let n = z.len();
    if w.shape() != (n, n) {
        return Err(Error::Shape {
            op: "local_moran",
            left: (n, 1),
            right: w.shape(),
        });
    }
    let lag = match convention {
        // (z^T W)_i: weighted column sums.
        MoranConvention::Diagonal => {
            let mut lag = vec![0.0; n];
            for (j, &zj) in z.iter().enumerate() {
                for (l, wji) in lag.iter_mut().zip(w.row(j)) {
                    *l += zj * wji;
                }
            }
            lag
        }
        MoranConvention::Row => w
            .iter_rows()
            .map(|row| row.iter().zip(z).map(|(wij, zj)| wij * zj).sum())
            .collect(),
    };
    Ok(z.iter().zip(lag).map(|(zi, l)| zi * l).collect())
}

/// Scores for token tensor `x` under weights `w`.
pub fn spatial_scores(x: &Matrix, w: &Matrix) -> Result<SpatialScores> {
    spatial_scores_with(x, w, MoranConvention::Diagonal)
}

pub fn spatial_scores_with(
    x: &Matrix,
    w: &Matrix,
    convention: MoranConvention,
) -> Result<SpatialScores> {
    if w.shape() != (x.rows(), x.rows()) {
        return Err(Error::Shape {
            op: "spatial_scores",
            left: x.shape(),
            right: w.shape(),
        });
    }
    let a = global_attribute(x)?;
    scores_from_attribute(&a, w, convention)
}

/// Scores from a precomputed attribute vector.
pub fn scores_from_attribute(
    a: &[f64],
    w: &Matrix,
    convention: MoranConvention,
) -> Result<SpatialScores> {
    let z = z_normalize(a);
    let raw_i = local_moran_with(&z, w, convention)?;
    let s = z_normalize(&raw_i);
    let summary = mean_std_median(&s)?;
    Ok(SpatialScores {
        mean_s: summary.mean,
        abs_median_s: summary.median.abs(),
        s,
        raw_i,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn attribute_is_row_mean() {
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0]]);
        assert_eq!(global_attribute(&x).unwrap(), vec![2.0]);
        let x = Matrix::from_rows(&[[0.0; 4]]);
        assert_eq!(global_attribute(&x).unwrap(), vec![0.0]);
        let x = Matrix::from_rows(&[[1.0, 3.0], [-2.0, 2.0]]);
        assert_eq!(global_attribute(&x).unwrap(), vec![2.0, 0.0]);
        assert!(global_attribute(&Matrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn z_normalize_examples() {
        let z = z_normalize(&[2.0, 4.0, 6.0]);
        let k = 1.224744871391589;
        assert_close(&z, &[-k, 0.0, k], 1e-6);
        assert_eq!(z_normalize(&[7.0, 7.0, 7.0]), vec![0.0; 3]);
        assert_close(&z_normalize(&[0.0, 1.0]), &[-1.0, 1.0], 1e-15);
    }

    #[test]
    fn local_moran_examples() {
        let i = local_moran(&[1.0, -1.0, 0.0], &Matrix::identity(3)).unwrap();
        assert_eq!(i, vec![1.0, 1.0, 0.0]);

        let swap = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(local_moran(&[1.0, -1.0], &swap).unwrap(), vec![-1.0, -1.0]);

        let w = Matrix::from_rows(&[[0.3, 2.0, -1.0], [4.0, 0.5, 1.0], [0.0, 7.0, 1.0]]);
        assert_eq!(local_moran(&[0.0; 3], &w).unwrap(), vec![0.0; 3]);

        assert!(local_moran(&[1.0, 2.0], &Matrix::identity(3)).is_err());
    }

    #[test]
    fn conventions_differ_only_for_asymmetric_weights() {
        let z = [1.0, -0.5, 2.0];
        let w = Matrix::from_rows(&[[0.2, 0.5, 0.3], [0.1, 0.1, 0.8], [0.6, 0.2, 0.2]]);
        let diag = local_moran_with(&z, &w, MoranConvention::Diagonal).unwrap();
        let row = local_moran_with(&z, &w, MoranConvention::Row).unwrap();
        let via_transpose = local_moran_with(&z, &w.transpose(), MoranConvention::Row).unwrap();
        assert_close(&diag, &via_transpose, 1e-15);
        assert!(diag.iter().zip(&row).any(|(a, b)| (a - b).abs() > 1e-6));

        let sym = Matrix::from_rows(&[[1.0, 0.5, 0.0], [0.5, 1.0, 2.0], [0.0, 2.0, 1.0]]);
        let a = local_moran_with(&z, &sym, MoranConvention::Diagonal).unwrap();
        let b = local_moran_with(&z, &sym, MoranConvention::Row).unwrap();
        assert_close(&a, &b, 1e-15);
    }

    #[test]
    fn degenerate_inputs_give_zero_scores() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]);
        let sc = spatial_scores(&x, &Matrix::identity(3)).unwrap();
        assert_eq!(sc.s, vec![0.0; 3]);
        assert_eq!(sc.abs_median_s, 0.0);

        let x = Matrix::from_rows(&[[3.0, -1.0]]);
        let sc = spatial_scores(&x, &Matrix::identity(1)).unwrap();
        assert_eq!(sc.s, vec![0.0]);
    }

    #[test]
    fn three_token_hand_oracle() {
        // Attribute means 1, 2, 6 -> mu 3, sigma sqrt(14/3).
        let x = Matrix::from_rows(&[[1.0, 1.0], [1.0, 3.0], [6.0, 6.0]]);
        let w = Matrix::from_rows(&[[0.5, 0.25, 0.25], [0.1, 0.8, 0.1], [0.3, 0.3, 0.4]]);
        let sigma = (14.0f64 / 3.0).sqrt();
        let z = [-2.0 / sigma, -1.0 / sigma, 3.0 / sigma];
        let mut raw = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                raw[i] += z[i] * z[j] * w.get(j, i);
            }
        }
        let m = raw.iter().sum::<f64>() / 3.0;
        let sd = (raw.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / 3.0).sqrt();
        let s: Vec<f64> = raw.iter().map(|r| (r - m) / sd).collect();

        let sc = spatial_scores(&x, &w).unwrap();
        assert_close(&sc.raw_i, &raw, 1e-12);
        assert_close(&sc.s, &s, 1e-12);
    }

    fn random_case(rng: &mut SplitMix64, n: usize, d: usize) -> (Matrix, Matrix) {
        let x = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap();
        let w = Matrix::from_vec(n, n, (0..n * n).map(|_| rng.uniform()).collect()).unwrap();
        (x, w)
    }

    proptest! {
        #[test]
        fn scores_are_standardized(seed in any::<u64>(), n in 2usize..16, d in 1usize..8) {
            let mut rng = SplitMix64::new(seed);
            let (x, w) = random_case(&mut rng, n, d);
            let sc = spatial_scores(&x, &w).unwrap();
            let (mean, std) = mean_std(&sc.raw_i);
            if std > 1e-9 {
                let (m, sd) = mean_std(&sc.s);
                prop_assert!(m.abs() < 1e-9);
                prop_assert!((sd - 1.0).abs() < 1e-9);
            }
            prop_assert!(mean.is_finite());
            let med = mean_std_median(&sc.s).unwrap().median;
            prop_assert_eq!(sc.abs_median_s, med.abs());
        }

        #[test]
        fn attribute_scale_invariance(seed in any::<u64>(), n in 2usize..16, c in 0.01f64..100.0) {
            let mut rng = SplitMix64::new(seed);
            let (x, w) = random_case(&mut rng, n, 4);
            let a = global_attribute(&x).unwrap();
            let scaled: Vec<f64> = a.iter().map(|v| v * c).collect();
            let s1 = scores_from_attribute(&a, &w, MoranConvention::Diagonal).unwrap();
            let s2 = scores_from_attribute(&scaled, &w, MoranConvention::Diagonal).unwrap();
            for (p, q) in s1.s.iter().zip(&s2.s) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }
    }
}
