//! Evading projection-based fine-tune auditing.
//!
//! An auditor that projects weight residuals onto a fixed "safe" subspace
//! `S` can be defeated by an attacker who controls the shipped weights:
//! pick `s` in `S` with `W + s` invertible and replace the tuned weights
//! `W~` with `G W~` where `G = (W + s) W~^-1`. The residual the auditor
//! sees becomes `G W~ - W = s`, which lies entirely inside `S`.
//!
//! This module verifies the residual algebra on a single square protected
//! matrix. It does not build the compensating output-side update; the
//! behavioral side of gauging is exercised by the transform module, and
//! the gauge here is general invertible rather than orthogonal.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{invert, matmul, Matrix};

/// How many fresh draws of `s` to try before giving up on finding an
/// invertible `W + s`.
pub const MAX_SAFE_POINT_ATTEMPTS: usize = 16;

/// Basis of the auditor's "safe" residual space, orthonormalized under the
/// Frobenius inner product.
#[derive(Debug, Clone)]
pub struct SafeSubspace {
    basis: Vec<Matrix>,
    orthonormalized: bool,
}

impl SafeSubspace {
    /// Orthonormalize `basis` by Gram-Schmidt under the Frobenius inner
    /// product. A dependent element raises [`Error::RankDeficientBasis`].
    pub fn new(basis: Vec<Matrix>) -> Result<Self> {
        if basis.is_empty() {
            return Err(Error::RankDeficientBasis(0));
        }
        let (rows, cols) = (basis[0].rows(), basis[0].cols());
        let mut ortho: Vec<Matrix> = Vec::with_capacity(basis.len());
        for (idx, raw) in basis.into_iter().enumerate() {
            if raw.rows() != rows || raw.cols() != cols {
                return Err(Error::DimensionMismatch {
                    context: "safe subspace basis shapes",
                    left_rows: rows,
                    left_cols: cols,
                    right_rows: raw.rows(),
                    right_cols: raw.cols(),
                });
            }
            let scale = raw.max_abs().max(1.0);
            let mut v = raw;
            for q in &ortho {
                let coeff = q.frobenius_dot(&v);
                v = v.sub(&q.scale(coeff))?;
            }
            let norm = v.frobenius_dot(&v).sqrt();
            if norm <= 1e-12 * scale {
                return Err(Error::RankDeficientBasis(idx));
            }
            ortho.push(v.scale(1.0 / norm));
        }
        Ok(SafeSubspace {
            basis: ortho,
            orthonormalized: true,
        })
    }

    /// Number of basis elements.
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// The orthonormalized basis.
    pub fn basis(&self) -> &[Matrix] {
        &self.basis
    }

    pub fn is_orthonormalized(&self) -> bool {
        self.orthonormalized
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.basis[0].rows(), self.basis[0].cols())
    }
}

/// Orthogonal projection of `delta` onto the span of the basis: the sum of
/// Frobenius inner-product coefficients times basis elements.
pub fn project_residual(delta: &Matrix, subspace: &SafeSubspace) -> Result<Matrix> {
    let (rows, cols) = subspace.shape();
    if delta.rows() != rows || delta.cols() != cols {
        return Err(Error::DimensionMismatch {
            context: "project_residual shapes",
            left_rows: delta.rows(),
            left_cols: delta.cols(),
            right_rows: rows,
            right_cols: cols,
        });
    }
    let mut out = Matrix::zeros(rows, cols);
    for q in subspace.basis() {
        let coeff = q.frobenius_dot(delta);
        out = out.add(&q.scale(coeff))?;
    }
    Ok(out)
}

/// Outcome of the evasion construction.
#[derive(Debug, Clone)]
pub struct EvasionResult {
    /// The invertible gauge `G = (W + s) W~^-1`.
    pub gauge: Matrix,
    /// The safe component `s` the residual collapses to.
    pub safe_component: Matrix,
    /// `max |(G W~ - W) - s|`.
    pub residual_check: f64,
}

/// Construct the evasion gauge for a protected square weight: sample `s`
/// as a random combination of the basis (scaled so `max|s|` is at most a
/// tenth of `max|w_base|`), retry until `w_base + s` is invertible, and
/// return `G = (w_base + s) * w_tuned^-1`. The residual the auditor sees,
/// `G w_tuned - w_base`, then equals `s` up to roundoff.
pub fn construct_evasion_gauge(
    w_base: &Matrix,
    w_tuned: &Matrix,
    subspace: &SafeSubspace,
    rng: &mut impl Rng,
) -> Result<EvasionResult> {
    if w_base.rows() != w_base.cols()
        || w_tuned.rows() != w_tuned.cols()
        || w_base.rows() != w_tuned.rows()
    {
        return Err(Error::DimensionMismatch {
            context: "evasion gauge requires square, same-shape weights",
            left_rows: w_base.rows(),
            left_cols: w_base.cols(),
            right_rows: w_tuned.rows(),
            right_cols: w_tuned.cols(),
        });
    }
    let (rows, cols) = subspace.shape();
    if rows != w_base.rows() || cols != w_base.cols() {
        return Err(Error::DimensionMismatch {
            context: "safe subspace shape vs protected weight",
            left_rows: rows,
            left_cols: cols,
            right_rows: w_base.rows(),
            right_cols: w_base.cols(),
        });
    }

    let tuned_inv = invert(w_tuned).map_err(|e| match e {
        Error::SingularMatrix { .. } => Error::SingularTunedWeights,
        other => other,
    })?;

    let target_max = 0.1 * w_base.max_abs();
    for _ in 0..MAX_SAFE_POINT_ATTEMPTS {
        let mut s = Matrix::zeros(rows, cols);
        for q in subspace.basis() {
            let coeff: f64 = rng.sample(rand_distr::StandardNormal);
            s = s.add(&q.scale(coeff))?;
        }
        let peak = s.max_abs();
        if peak > 0.0 {
            s = s.scale(target_max / peak);
        }
        let shifted = w_base.add(&s)?;
        if invert(&shifted).is_err() {
            continue;
        }
        let gauge = matmul(&shifted, &tuned_inv)?;
        let residual = matmul(&gauge, w_tuned)?.sub(w_base)?;
        let residual_check = residual.max_abs_diff(&s);
        return Ok(EvasionResult {
            gauge,
            safe_component: s,
            residual_check,
        });
    }
    Err(Error::NoInvertibleSafePoint(MAX_SAFE_POINT_ATTEMPTS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::stream_rng;

    fn unit(rows: usize, cols: usize, i: usize, j: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |r, c| if (r, c) == (i, j) { 1.0 } else { 0.0 })
    }

    fn well_conditioned(dim: usize, seed: u64) -> Matrix {
        let mut rng = stream_rng(seed, 0, "safelora-w");
        Matrix::gaussian(dim, dim, 1.0 / (dim as f64).sqrt(), &mut rng)
            .add(&Matrix::identity(dim).scale(2.0))
            .unwrap()
    }

    fn random_subspace(dim: usize, k: usize, seed: u64) -> SafeSubspace {
        let mut rng = stream_rng(seed, 0, "safelora-basis");
        let basis = (0..k)
            .map(|_| Matrix::gaussian(dim, dim, 1.0, &mut rng))
            .collect();
        SafeSubspace::new(basis).unwrap()
    }

    #[test]
    fn projection_fixes_members() {
        let sub = random_subspace(6, 3, 1);
        let mut rng = stream_rng(2, 0, "member");
        let mut member = Matrix::zeros(6, 6);
        for q in sub.basis() {
            let c: f64 = rng.sample(rand_distr::StandardNormal);
            member = member.add(&q.scale(c)).unwrap();
        }
        let projected = project_residual(&member, &sub).unwrap();
        assert!(projected.max_abs_diff(&member) <= 1e-10);
    }

    #[test]
    fn projection_kills_orthogonal_directions() {
        // basis of E00, E01: anything supported off those entries projects to 0
        let sub = SafeSubspace::new(vec![unit(4, 4, 0, 0), unit(4, 4, 0, 1)]).unwrap();
        let delta = unit(4, 4, 2, 3).scale(7.5);
        let projected = project_residual(&delta, &sub).unwrap();
        assert!(projected.max_abs() <= 1e-10);
    }

    #[test]
    fn projection_matches_least_squares_oracle() {
        // least-squares on the flattened (non-orthonormalized) basis:
        // solve (B^T B) c = B^T d and compare reconstructions
        let dim = 5;
        let k = 3;
        let mut rng = stream_rng(3, 0, "ls-oracle");
        let raw: Vec<Matrix> = (0..k)
            .map(|_| Matrix::gaussian(dim, dim, 1.0, &mut rng))
            .collect();
        let delta = Matrix::gaussian(dim, dim, 1.0, &mut rng);

        let sub = SafeSubspace::new(raw.clone()).unwrap();
        let projected = project_residual(&delta, &sub).unwrap();

        let mut gram = Matrix::zeros(k, k);
        let mut rhs = Matrix::zeros(k, 1);
        for i in 0..k {
            for j in 0..k {
                gram.set(i, j, raw[i].frobenius_dot(&raw[j]));
            }
            rhs.set(i, 0, raw[i].frobenius_dot(&delta));
        }
        let coeffs = matmul(&invert(&gram).unwrap(), &rhs).unwrap();
        let mut oracle = Matrix::zeros(dim, dim);
        for (i, b) in raw.iter().enumerate() {
            oracle = oracle.add(&b.scale(coeffs.get(i, 0))).unwrap();
        }
        assert!(projected.max_abs_diff(&oracle) <= 1e-9);
    }

    #[test]
    fn projection_is_idempotent_and_linear() {
        let sub = random_subspace(6, 4, 5);
        let mut rng = stream_rng(6, 0, "idem");
        let x = Matrix::gaussian(6, 6, 1.0, &mut rng);
        let y = Matrix::gaussian(6, 6, 1.0, &mut rng);

        let px = project_residual(&x, &sub).unwrap();
        let ppx = project_residual(&px, &sub).unwrap();
        assert!(ppx.max_abs_diff(&px) <= 1e-9);

        let sum = project_residual(&x.add(&y.scale(2.5)).unwrap(), &sub).unwrap();
        let parts = px
            .add(&project_residual(&y, &sub).unwrap().scale(2.5))
            .unwrap();
        assert!(sum.max_abs_diff(&parts) <= 1e-9);
    }

    #[test]
    fn rank_deficient_basis_is_error() {
        let a = unit(3, 3, 0, 0);
        let b = unit(3, 3, 1, 1);
        let dependent = a.add(&b).unwrap();
        match SafeSubspace::new(vec![a, b, dependent]) {
            Err(Error::RankDeficientBasis(idx)) => assert_eq!(idx, 2),
            other => panic!("expected rank-deficient error, got {other:?}"),
        }
    }

    #[test]
    fn identical_weights_with_unit_basis_give_pure_safe_residual() {
        // w_tuned = w_base, basis {E11}: residual = s = c * E11
        let w = well_conditioned(6, 7);
        let sub = SafeSubspace::new(vec![unit(6, 6, 1, 1)]).unwrap();
        let mut rng = stream_rng(8, 0, "evade");
        let result = construct_evasion_gauge(&w, &w, &sub, &mut rng).unwrap();
        assert!(result.residual_check <= 1e-9);

        let residual = matmul(&result.gauge, &w).unwrap().sub(&w).unwrap();
        let projected = project_residual(&residual, &sub).unwrap();
        assert!(residual.max_abs_diff(&projected) <= 1e-9);
        // the safe component is supported on entry (1,1) only
        for i in 0..6 {
            for j in 0..6 {
                if (i, j) != (1, 1) {
                    assert_eq!(result.safe_component.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn random_pair_residual_is_safe() {
        let w_base = well_conditioned(8, 11);
        let drift = {
            let mut rng = stream_rng(12, 0, "drift");
            Matrix::gaussian(8, 8, 0.05, &mut rng)
        };
        let w_tuned = w_base.add(&drift).unwrap();
        let sub = random_subspace(8, 3, 13);
        let mut rng = stream_rng(14, 0, "evade");
        let result = construct_evasion_gauge(&w_base, &w_tuned, &sub, &mut rng).unwrap();
        assert!(result.residual_check <= 1e-8, "{:.3e}", result.residual_check);

        let residual = matmul(&result.gauge, &w_tuned).unwrap().sub(&w_base).unwrap();
        let off_subspace = residual
            .sub(&project_residual(&residual, &sub).unwrap())
            .unwrap()
            .max_abs();
        assert!(off_subspace <= 1e-8, "{off_subspace:.3e}");
    }

    #[test]
    fn singular_tuned_weights_is_error() {
        let w_base = well_conditioned(4, 15);
        let singular = Matrix::from_fn(4, 4, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let sub = SafeSubspace::new(vec![unit(4, 4, 0, 0)]).unwrap();
        let mut rng = stream_rng(16, 0, "evade");
        assert!(matches!(
            construct_evasion_gauge(&w_base, &singular, &sub, &mut rng),
            Err(Error::SingularTunedWeights)
        ));
    }

    #[test]
    fn construction_is_deterministic_given_seed() {
        let w_base = well_conditioned(6, 17);
        let w_tuned = well_conditioned(6, 18);
        let sub = random_subspace(6, 2, 19);
        let a = construct_evasion_gauge(&w_base, &w_tuned, &sub, &mut stream_rng(20, 0, "e"))
            .unwrap();
        let b = construct_evasion_gauge(&w_base, &w_tuned, &sub, &mut stream_rng(20, 0, "e"))
            .unwrap();
        assert_eq!(a.gauge, b.gauge);
        assert_eq!(a.safe_component, b.safe_component);
    }
}
