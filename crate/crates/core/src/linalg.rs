//! Small dense least-squares helpers over `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Condition numbers above this are treated as singular geometry.
pub const MAX_CONDITION: f64 = 1e12;

/// Singular values of `a`, descending.
pub fn singular_values(a: &DMatrix<f64>) -> DVector<f64> {
    let mut sv = a.clone().svd(false, false).singular_values;
    sv.as_mut_slice().sort_by(|x, y| y.total_cmp(x));
    sv
}

pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = singular_values(a);
    let k = a.nrows().min(a.ncols());
    if k < a.ncols() || sv[k - 1] == 0.0 {
        return f64::INFINITY;
    }
    sv[0] / sv[k - 1]
}

/// Full-column-rank least squares `argmin ‖a x - b‖`, rejecting condition numbers
/// above [`MAX_CONDITION`].
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    lstsq_owned(a.clone(), b.clone())
}

/// [`lstsq`] consuming its inputs.
pub fn lstsq_owned(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::LengthMismatch {
            what: "matrix rows vs rhs",
            left: a.nrows(),
            right: b.len(),
        });
    }
    if a.nrows() < a.ncols() {
        return Err(Error::SingularGeometry(format!(
            "{} equations for {} unknowns",
            a.nrows(),
            a.ncols()
        )));
    }
    // Householder QR; the conditioning of `a` is that of the square factor `r`.
    let d = a.ncols();
    let qr = a.qr();
    let r = qr.r();
    let sv = r.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if !(min > 0.0) || max / min > MAX_CONDITION {
        return Err(Error::SingularGeometry(format!(
            "condition number {:e}",
            if min > 0.0 { max / min } else { f64::INFINITY }
        )));
    }
    let mut qtb = b;
    qr.q_tr_mul(&mut qtb);
    r.solve_upper_triangular(&qtb.rows(0, d).into_owned())
        .ok_or_else(|| Error::SingularGeometry("zero pivot".into()))
}

/// Minimum-norm least squares; singular values below `MAX_CONDITION⁻¹·σ_max` are dropped.
pub fn min_norm_lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::LengthMismatch {
            what: "matrix rows vs rhs",
            left: a.nrows(),
            right: b.len(),
        });
    }
    // nalgebra's thin SVD needs rows >= cols on some paths; pad with zero rows.
    let (rows, cols) = a.shape();
    let (a, b) = if rows < cols {
        let mut pa = DMatrix::zeros(cols, cols);
        pa.view_mut((0, 0), (rows, cols)).copy_from(a);
        let mut pb = DVector::zeros(cols);
        pb.rows_mut(0, rows).copy_from(b);
        (pa, pb)
    } else {
        (a.clone(), b.clone())
    };
    let svd = a.svd(true, true);
    let max = svd.singular_values.max();
    if !(max > 0.0) {
        return Err(Error::SingularGeometry("zero matrix".into()));
    }
    svd.solve(&b, max / MAX_CONDITION)
        .map_err(|e| Error::SingularGeometry(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_solve() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![3.0, 5.0]);
        let x = lstsq(&a, &b).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14);
    }

    #[test]
    fn rank_deficient_rejected() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(lstsq(&a, &b), Err(Error::SingularGeometry(_))));
        let wide = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!(lstsq(&wide, &DVector::from_vec(vec![1.0])).is_err());
    }

    #[test]
    fn min_norm_underdetermined() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let x = min_norm_lstsq(&a, &DVector::from_vec(vec![2.0])).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
        assert!(condition_number(&a).is_infinite());
    }
}
