use serde::{Deserialize, Serialize};

use crate::lie::{GroupKind, Mat, C64};
use crate::{Error, Result};

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Tolerance on the projection residual accepted by [`matrix_to_coeffs`].
pub const ALGEBRA_TOL: f64 = 1e-6;

/// Coordinates of a Lie-algebra element in the canonical orthonormal basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgebraVector {
    kind: GroupKind,
    coeffs: Vec<f64>,
}

impl AlgebraVector {
    pub fn new(kind: GroupKind, coeffs: Vec<f64>) -> Result<Self> {
        let d = kind.algebra_dim();
        if coeffs.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: coeffs.len() });
        }
        Ok(Self { kind, coeffs })
    }

    pub fn zeros(kind: &GroupKind) -> Self {
        Self { kind: kind.clone(), coeffs: vec![0.0; kind.algebra_dim()] }
    }

    pub fn kind(&self) -> &GroupKind {
        &self.kind
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn to_matrix(&self) -> Mat {
        coeffs_to_matrix(self)
    }
}

/// Orthonormal basis of the Lie algebra under `⟨A, B⟩ = Re tr(A†B)`.
#[derive(Clone, Debug)]
pub struct AlgebraBasis {
    pub kind: GroupKind,
    pub mats: Vec<Mat>,
}

impl AlgebraBasis {
    pub fn gram(&self) -> Vec<Vec<f64>> {
        self.mats
            .iter()
            .map(|a| self.mats.iter().map(|b| inner(a, b)).collect())
            .collect()
    }
}

/// `Re tr(A†B)`.
pub fn inner(a: &Mat, b: &Mat) -> f64 {
    let n = a.dim();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += (a.get(i, j).conj() * b.get(i, j)).re;
        }
    }
    acc
}

pub fn algebra_basis(kind: &GroupKind) -> AlgebraBasis {
    let d = kind.algebra_dim();
    let mats = (0..d)
        .map(|i| {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            coeffs_to_matrix(&AlgebraVector { kind: kind.clone(), coeffs: e })
        })
        .collect();
    AlgebraBasis { kind: kind.clone(), mats }
}

/// `Σ_i v_i e_i` written directly into the block-diagonal matrix.
pub fn coeffs_to_matrix(v: &AlgebraVector) -> Mat {
    let kind = v.kind();
    let n = kind.matrix_dim();
    let mut m = Mat::zeros(n, kind.is_complex());
    for leaf in kind.leaves() {
        let c = &v.coeffs()[leaf.alg_offset..leaf.alg_offset + leaf.alg_dim];
        let o = leaf.mat_offset;
        match (&leaf.kind, &mut m) {
            (GroupKind::TorusPower(k), m) => {
                for (j, &x) in c.iter().enumerate().take(*k) {
                    let b = o + 2 * j;
                    set_real(m, b, b + 1, x * INV_SQRT2);
                    set_real(m, b + 1, b, -x * INV_SQRT2);
                }
            }
            (GroupKind::SpecialOrthogonal(n), m) => {
                let mut idx = 0;
                for i in 0..*n {
                    for j in i + 1..*n {
                        set_real(m, o + i, o + j, c[idx] * INV_SQRT2);
                        set_real(m, o + j, o + i, -c[idx] * INV_SQRT2);
                        idx += 1;
                    }
                }
            }
            (GroupKind::Unitary(n), Mat::Complex(mm)) => {
                let n = *n;
                for k in 0..n {
                    mm[(o + k, o + k)] = C64::new(0.0, c[k]);
                }
                let pairs = n * (n - 1) / 2;
                let mut idx = 0;
                for i in 0..n {
                    for j in i + 1..n {
                        let re = c[n + idx] * INV_SQRT2;
                        let im = c[n + pairs + idx] * INV_SQRT2;
                        mm[(o + i, o + j)] = C64::new(re, im);
                        mm[(o + j, o + i)] = C64::new(-re, im);
                        idx += 1;
                    }
                }
            }
            _ => unreachable!("unitary factor forces complex storage"),
        }
    }
    m
}

fn set_real(m: &mut Mat, i: usize, j: usize, x: f64) {
    match m {
        Mat::Real(a) => a[(i, j)] = x,
        Mat::Complex(a) => a[(i, j)] = C64::new(x, 0.0),
    }
}

/// Inverse of [`coeffs_to_matrix`]: `v_i = Re tr(e_i† m)`.
///
/// Fails with [`Error::NotInAlgebra`] when `m` is farther than
/// [`ALGEBRA_TOL`] (Frobenius) from its projection onto the algebra, which
/// catches symmetric parts, off-block entries and imaginary parts on real
/// factors alike.
pub fn matrix_to_coeffs(m: &Mat, kind: &GroupKind) -> Result<AlgebraVector> {
    let n = kind.matrix_dim();
    if m.dim() != n || !m.is_square() {
        return Err(Error::DimensionMismatch { expected: n, got: m.dim() });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("algebra matrix".into()));
    }
    let mut coeffs = vec![0.0; kind.algebra_dim()];
    for leaf in kind.leaves() {
        let c = &mut coeffs[leaf.alg_offset..leaf.alg_offset + leaf.alg_dim];
        let o = leaf.mat_offset;
        match &leaf.kind {
            GroupKind::TorusPower(k) => {
                for (j, cj) in c.iter_mut().enumerate().take(*k) {
                    let b = o + 2 * j;
                    *cj = (m.get(b, b + 1).re - m.get(b + 1, b).re) * INV_SQRT2;
                }
            }
            GroupKind::SpecialOrthogonal(n) => {
                let mut idx = 0;
                for i in 0..*n {
                    for j in i + 1..*n {
                        c[idx] = (m.get(o + i, o + j).re - m.get(o + j, o + i).re) * INV_SQRT2;
                        idx += 1;
                    }
                }
            }
            GroupKind::Unitary(n) => {
                let n = *n;
                for k in 0..n {
                    c[k] = m.get(o + k, o + k).im;
                }
                let pairs = n * (n - 1) / 2;
                let mut idx = 0;
                for i in 0..n {
                    for j in i + 1..n {
                        let (a, b) = (m.get(o + i, o + j), m.get(o + j, o + i));
                        c[n + idx] = (a.re - b.re) * INV_SQRT2;
                        c[n + pairs + idx] = (a.im + b.im) * INV_SQRT2;
                        idx += 1;
                    }
                }
            }
            GroupKind::Product(_) => unreachable!("leaves are never products"),
        }
    }
    let v = AlgebraVector { kind: kind.clone(), coeffs };
    let defect = m.sub(&coeffs_to_matrix(&v)).frobenius_norm();
    if defect > ALGEBRA_TOL {
        return Err(Error::NotInAlgebra { defect });
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn kinds() -> Vec<GroupKind> {
        vec![
            GroupKind::TorusPower(1),
            GroupKind::TorusPower(3),
            GroupKind::SpecialOrthogonal(3),
            GroupKind::SpecialOrthogonal(5),
            GroupKind::Unitary(2),
            GroupKind::Unitary(3),
            "prod(torus:1,so:3,u:2)".parse().unwrap(),
        ]
    }

    #[test]
    fn torus_basis_is_normalized_generator() {
        let b = algebra_basis(&GroupKind::TorusPower(1));
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(b.mats[0], Mat::Real(DMatrix::from_row_slice(2, 2, &[0.0, s, -s, 0.0])));
    }

    #[test]
    fn gram_is_identity() {
        for kind in kinds() {
            let g = algebra_basis(&kind).gram();
            for (i, row) in g.iter().enumerate() {
                for (j, x) in row.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((x - want).abs() < 1e-12, "{kind} gram[{i}][{j}] = {x}");
                }
            }
        }
    }

    #[test]
    fn basis_matrices_are_exactly_skew() {
        for kind in kinds() {
            for m in algebra_basis(&kind).mats {
                assert_eq!(m.skew_defect(), 0.0);
            }
        }
    }

    #[test]
    fn unitary2_basis_has_full_rank() {
        // Gaussian elimination on the 4 flattened basis matrices (8 real entries each).
        let b = algebra_basis(&GroupKind::Unitary(2));
        let mut rows: Vec<Vec<f64>> = b.mats.iter().map(|m| m.entries_row_major()).collect();
        let mut rank = 0;
        let cols = rows[0].len();
        for c in 0..cols {
            let Some(p) = (rank..rows.len()).find(|&r| rows[r][c].abs() > 1e-12) else {
                continue;
            };
            rows.swap(rank, p);
            for r in 0..rows.len() {
                if r != rank {
                    let f = rows[r][c] / rows[rank][c];
                    let pivot = rows[rank].clone();
                    rows[r].iter_mut().zip(&pivot).for_each(|(x, y)| *x -= f * y);
                }
            }
            rank += 1;
        }
        assert_eq!(rank, 4);
    }

    #[test]
    fn torus_coefficient_scaling() {
        let th = 0.7;
        let v = AlgebraVector::new(GroupKind::TorusPower(1), vec![2f64.sqrt() * th]).unwrap();
        let m = coeffs_to_matrix(&v);
        assert!((m.get(0, 1).re - th).abs() < 1e-15);
        assert!((m.get(1, 0).re + th).abs() < 1e-15);
    }

    #[test]
    fn zero_and_unit_vectors() {
        for kind in kinds() {
            let z = coeffs_to_matrix(&AlgebraVector::zeros(&kind));
            assert_eq!(z.frobenius_norm(), 0.0);
            assert!(matrix_to_coeffs(&z, &kind).unwrap().coeffs().iter().all(|&x| x == 0.0));
            for (j, e) in algebra_basis(&kind).mats.iter().enumerate() {
                let v = matrix_to_coeffs(e, &kind).unwrap();
                for (i, x) in v.coeffs().iter().enumerate() {
                    assert!((x - if i == j { 1.0 } else { 0.0 }).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn symmetric_matrix_is_rejected() {
        let m = Mat::Real(DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 3.0]));
        assert!(matches!(
            matrix_to_coeffs(&m, &GroupKind::SpecialOrthogonal(3)),
            Err(Error::NotInAlgebra { .. })
        ));
    }

    #[test]
    fn wrong_length_is_rejected() {
        assert!(AlgebraVector::new(GroupKind::SpecialOrthogonal(3), vec![0.0; 2]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn coeff_round_trip(kind_ix in 0usize..7, seed in proptest::collection::vec(-5.0f64..5.0, 64)) {
                let kind = kinds()[kind_ix].clone();
                let d = kind.algebra_dim();
                let v = AlgebraVector::new(kind.clone(), seed[..d].to_vec()).unwrap();
                let m = coeffs_to_matrix(&v);
                prop_assert!(m.skew_defect() < 1e-15);
                let back = matrix_to_coeffs(&m, &kind).unwrap();
                for (a, b) in back.coeffs().iter().zip(v.coeffs()) {
                    prop_assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }
}
