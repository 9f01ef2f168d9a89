//! Dense symmetric-definite generalized eigensolver.

use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Mat, Par, Side};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GeneralizedEigen {
    /// All eigenvalues, ascending.
    pub values: Vec<f64>,
    /// The first `keep` eigenvectors, normalized so that `vᵀ S v = 1`.
    pub vectors: Vec<Vec<f64>>,
}

/// Solves `A v = λ S v` for symmetric positive definite `A` and `S`.
///
/// The reciprocal pencil `S v = μ A v` is reduced with the Cholesky factor
/// of `A`, so the smallest `λ = 1/μ` are the dominant eigenvalues of the
/// reduced matrix and come out with small relative residuals.
pub fn generalized_symmetric_eigen(a: &Mat<f64>, s: &Mat<f64>, keep: usize) -> Result<GeneralizedEigen> {
    generalized_symmetric_eigen_with(a, s, |_| keep)
}

/// Like [`generalized_symmetric_eigen`], with the number of eigenvectors
/// chosen from the (ascending) eigenvalues.
pub fn generalized_symmetric_eigen_with(
    a: &Mat<f64>,
    s: &Mat<f64>,
    keep: impl FnOnce(&[f64]) -> usize,
) -> Result<GeneralizedEigen> {
    let n = a.nrows();
    assert!(a.ncols() == n && s.nrows() == n && s.ncols() == n);
    if n == 0 {
        return Ok(GeneralizedEigen {
            values: Vec::new(),
            vectors: Vec::new(),
        });
    }
    s.llt(Side::Lower)
        .map_err(|e| Error::NotPositiveDefinite(format!("mass matrix: {e:?}")))?;
    let llt = a
        .llt(Side::Lower)
        .map_err(|e| Error::NotPositiveDefinite(format!("stiffness matrix: {e:?}")))?;
    let l = llt.L();

    // C = L⁻¹ S L⁻ᵀ, formed as L⁻¹ (L⁻¹ S)ᵀ using the symmetry of S
    let mut x = s.clone();
    solve_lower_triangular_in_place(l, x.as_mut(), Par::Seq);
    let mut c = x.transpose().to_owned();
    solve_lower_triangular_in_place(l, c.as_mut(), Par::Seq);
    let c = Mat::from_fn(n, n, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));

    let evd = c
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let mu = evd.S().column_vector();
    // μ ascending, so λ ascending runs over μ from the top
    let order: Vec<usize> = (0..n).rev().collect();
    if mu[order[n - 1]] <= 0.0 {
        return Err(Error::Eigen("reduced mass matrix is not positive definite".into()));
    }
    let values: Vec<f64> = order.iter().map(|&k| 1.0 / mu[k]).collect();
    let keep = keep(&values).min(n);

    let mut y = Mat::from_fn(n, keep, |i, j| evd.U()[(i, order[j])]);
    solve_upper_triangular_in_place(l.transpose(), y.as_mut(), Par::Seq);
    let vectors = (0..keep)
        .map(|j| {
            let v: Vec<f64> = (0..n).map(|i| y[(i, j)]).collect();
            let sv = s * Mat::from_fn(n, 1, |i, _| v[i]);
            let norm = (0..n).map(|i| v[i] * sv[(i, 0)]).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();

    Ok(GeneralizedEigen { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_pencil() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { [6.0, 2.0, 9.0][i] } else { 0.0 });
        let s = Mat::from_fn(3, 3, |i, j| if i == j { [2.0, 1.0, 3.0][i] } else { 0.0 });
        let e = generalized_symmetric_eigen(&a, &s, 3).unwrap();
        assert_eq!(e.values.len(), 3);
        for (got, want) in e.values.iter().zip([2.0, 3.0, 3.0]) {
            assert!((got - want).abs() < 1e-14);
        }
        // lowest mode is the second coordinate with unit S-norm
        assert!((e.vectors[0][1].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_singular_stiffness() {
        let a = Mat::from_fn(2, 2, |_, _| 1.0);
        let s = Mat::<f64>::identity(2, 2);
        assert!(matches!(
            generalized_symmetric_eigen(&a, &s, 1),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn rejects_indefinite_mass() {
        let a = Mat::<f64>::identity(2, 2);
        let s = Mat::from_fn(2, 2, |i, j| if i == j { 1.0 } else { 2.0 });
        assert!(matches!(
            generalized_symmetric_eigen(&a, &s, 1),
            Err(Error::NotPositiveDefinite(_))
        ));
    }
}
