use nalgebra::{DMatrix, DVector};

use super::RegressionError;

/// Relative size of a QR diagonal entry below which a column counts as collinear.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    /// `(XᵀX)⁻¹`, the bread of the sandwich.
    pub xtx_inv: DMatrix<f64>,
}

/// Least squares through a Householder QR of `x`.
///
/// A column whose component orthogonal to the preceding columns is
/// negligible relative to its own norm is reported by name as collinear.
pub fn ols(y: &DVector<f64>, x: &DMatrix<f64>, names: &[String]) -> Result<OlsFit, RegressionError> {
    let (n, k) = x.shape();
    if k == 0 {
        return Err(RegressionError::EmptyDesign);
    }
    if n < k {
        return Err(RegressionError::TooFewObservations { n, k });
    }
    let qr = x.clone().qr();
    let r = qr.r();
    for j in 0..k {
        let norm = x.column(j).norm();
        if norm == 0.0 || r[(j, j)].abs() <= RANK_TOLERANCE * norm {
            return Err(RegressionError::Collinear {
                column: names.get(j).cloned().unwrap_or_else(|| format!("#{j}")),
            });
        }
    }
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let qty = qty.rows(0, k).into_owned();
    let coefficients = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| RegressionError::Collinear { column: "design".into() })?;
    let residuals = y - x * &coefficients;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| RegressionError::Collinear { column: "design".into() })?;
    let xtx_inv = &r_inv * r_inv.transpose();
    Ok(OlsFit {
        coefficients,
        residuals,
        xtx_inv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|j| format!("x{j}")).collect()
    }

    #[test]
    fn exact_single_regressor() {
        let x = DMatrix::from_column_slice(4, 1, &[1.0, -2.0, 0.5, 3.0]);
        let y = DVector::from_column_slice(&[1.0, -2.0, 0.5, 3.0]);
        let fit = ols(&y, &x, &names(1)).unwrap();
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-15);
        assert!(fit.residuals.amax() < 1e-15);
    }

    #[test]
    fn exact_two_regressor_dgp() {
        let x1 = [0.3, -1.2, 2.0, 0.7, -0.4, 1.1];
        let x2 = [1.0, 0.5, -0.3, 2.2, -1.7, 0.0];
        let mut data = x1.to_vec();
        data.extend_from_slice(&x2);
        let x = DMatrix::from_column_slice(6, 2, &data);
        let y = DVector::from_iterator(6, x1.iter().zip(&x2).map(|(a, b)| 0.5 * a - 0.2 * b));
        let fit = ols(&y, &x, &names(2)).unwrap();
        assert!((fit.coefficients[0] - 0.5).abs() < 1e-10);
        assert!((fit.coefficients[1] + 0.2).abs() < 1e-10);
        // residuals orthogonal to the columns
        assert!((x.transpose() * &fit.residuals).amax() < 1e-12);
        // bread is the inverse of XᵀX
        let check = &fit.xtx_inv * (x.transpose() * &x);
        assert!((check - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn collinear_column_named() {
        let x = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        let y = DVector::from_column_slice(&[1.0, 0.0, 1.0]);
        let names = vec!["chatgpt_score".to_string(), "vendor_score".to_string()];
        let err = ols(&y, &x, &names).unwrap_err();
        assert!(matches!(err, RegressionError::Collinear { ref column } if column == "vendor_score"), "{err}");

        let zero = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 0.0]);
        assert!(ols(&y, &zero, &names).is_err());
    }
}
