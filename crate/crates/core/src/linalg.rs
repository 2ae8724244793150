//! Small dense-matrix helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Smallest singular value relative to `scale`; below `rel_tol` the matrix is
/// treated as singular.
pub(crate) fn check_nonsingular(m: &DMatrix<f64>, scale: f64, rel_tol: f64, what: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(format!("{what} has non-finite entries")));
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let reference = scale.max(sv.max()).max(f64::MIN_POSITIVE);
    if !(smallest > rel_tol * reference) {
        return Err(Error::Singular(format!(
            "{what} is numerically singular (smallest singular value {smallest:e}, scale {reference:e})"
        )));
    }
    Ok(())
}

pub(crate) fn solve(m: &DMatrix<f64>, rhs: &[f64], what: &str) -> Result<Vec<f64>> {
    m.clone()
        .lu()
        .solve(&DVector::from_column_slice(rhs))
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .map(|x| x.as_slice().to_vec())
        .ok_or_else(|| Error::Singular(format!("{what} cannot be inverted")))
}

/// `A⁻¹ B (A⁻¹)' / n`, symmetrized.
pub(crate) fn sandwich(a: &DMatrix<f64>, b: &DMatrix<f64>, n: f64) -> Result<DMatrix<f64>> {
    let inv = a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("slope matrix cannot be inverted".into()))?;
    let cov = &inv * b * inv.transpose() / n;
    Ok((&cov + cov.transpose()) * 0.5)
}

pub(crate) fn outer_sum(acc: &mut DMatrix<f64>, v: &[f64]) {
    let d = v.len();
    for r in 0..d {
        for c in 0..d {
            acc[(r, c)] += v[r] * v[c];
        }
    }
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn two_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Serde adapter writing a matrix as a list of rows.
pub mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let ncols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
    }
}
