use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::lie::matrix::{expm, expm_taylor};
use crate::lie::{coeffs_to_matrix, AlgebraVector, GroupKind, Leaf, Mat, C64};
use crate::{Error, Result};

const TAU: f64 = std::f64::consts::TAU;
const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Determinant tolerance for real factors, independent of the orthogonality tolerance.
pub const DET_TOL: f64 = 1e-6;

/// A point on a compact matrix group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupElement {
    kind: GroupKind,
    mat: Mat,
}

impl GroupElement {
    pub fn identity(kind: &GroupKind) -> Self {
        Self { kind: kind.clone(), mat: Mat::identity(kind.matrix_dim(), kind.is_complex()) }
    }

    /// Wraps a matrix after checking membership at `tol`.
    pub fn from_matrix(kind: GroupKind, mat: Mat, tol: f64) -> Result<Self> {
        kind.validate()?;
        if mat.dim() != kind.matrix_dim() || !mat.is_square() {
            return Err(Error::DimensionMismatch { expected: kind.matrix_dim(), got: mat.dim() });
        }
        let g = Self::from_matrix_unchecked(kind, mat);
        if !g.mat.is_finite() {
            return Err(Error::NonFinite("group matrix".into()));
        }
        if !g.is_on_group(tol) {
            return Err(Error::NotOnGroup { defect: g.manifold_error() });
        }
        Ok(g)
    }

    pub fn from_matrix_unchecked(kind: GroupKind, mat: Mat) -> Self {
        let complex = kind.is_complex();
        Self { kind, mat: mat.promoted(complex) }
    }

    /// Torus element with the given angle per coordinate.
    pub fn from_torus_angles(kind: &GroupKind, angles: &[f64]) -> Result<Self> {
        if !kind.is_abelian() {
            return Err(Error::NotAbelian(kind.to_string()));
        }
        if angles.len() != kind.torus_coordinates() {
            return Err(Error::DimensionMismatch { expected: kind.torus_coordinates(), got: angles.len() });
        }
        let mut m = DMatrix::zeros(2 * angles.len(), 2 * angles.len());
        for (j, &th) in angles.iter().enumerate() {
            write_rotation(&mut m, 2 * j, th);
        }
        Ok(Self { kind: kind.clone(), mat: Mat::Real(m) })
    }

    pub fn kind(&self) -> &GroupKind {
        &self.kind
    }

    pub fn matrix(&self) -> &Mat {
        &self.mat
    }

    pub fn into_matrix(self) -> Mat {
        self.mat
    }

    pub fn is_finite(&self) -> bool {
        self.mat.is_finite()
    }

    /// `‖g†g − I‖_F`.
    pub fn manifold_error(&self) -> f64 {
        self.mat.unitarity_defect()
    }

    pub fn is_on_group(&self, tol: f64) -> bool {
        is_on_group(self, tol)
    }

    pub fn inverse(&self) -> Self {
        group_inv(self)
    }

    /// Principal angles in (−π, π] of each torus coordinate.
    pub fn torus_angles(&self) -> Result<Vec<f64>> {
        if !self.kind.is_abelian() {
            return Err(Error::NotAbelian(self.kind.to_string()));
        }
        Ok((0..self.kind.torus_coordinates())
            .map(|j| {
                let b = 2 * j;
                so2_log_entries(self.mat.get(b, b).re, self.mat.get(b, b + 1).re)
            })
            .collect())
    }

    /// Row-major flattened entries, complex entries as `(re, im)` pairs.
    pub fn features(&self) -> Vec<f64> {
        self.mat.entries_row_major()
    }

    pub fn write_features(&self, out: &mut Vec<f64>) {
        self.mat.write_row_major(out)
    }

    /// Removes accumulated round-off by Newton iteration for the polar factor,
    /// `g ← (g + g^{-†})/2`. A no-op up to round-off for exact group elements.
    pub fn reorthonormalize(&mut self) {
        for _ in 0..8 {
            let next = match &self.mat {
                Mat::Real(m) => match m.clone().try_inverse() {
                    Some(inv) => Mat::Real((m + inv.transpose()) * 0.5),
                    None => return,
                },
                Mat::Complex(m) => match m.clone().try_inverse() {
                    Some(inv) => Mat::Complex((m + inv.adjoint()).map(|z| z * 0.5)),
                    None => return,
                },
            };
            let step = next.sub(&self.mat).frobenius_norm();
            self.mat = next;
            if step < 1e-15 {
                break;
            }
        }
    }
}

fn write_rotation(m: &mut DMatrix<f64>, b: usize, th: f64) {
    let (s, c) = th.sin_cos();
    m[(b, b)] = c;
    m[(b, b + 1)] = s;
    m[(b + 1, b)] = -s;
    m[(b + 1, b + 1)] = c;
}

fn so2_log_entries(c: f64, s: f64) -> f64 {
    let th = s.atan2(c);
    // atan2 returns −π for (−1, −0.0); the principal branch is (−π, π].
    if th == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        th
    }
}

/// Angle of a 2x2 rotation block under `expm([[0,θ],[−θ,0]]) = [[cos θ, sin θ],[−sin θ, cos θ]]`.
pub fn so2_log(block: &Mat) -> Result<f64> {
    if block.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: block.dim() });
    }
    Ok(so2_log_entries(block.get(0, 0).re, block.get(0, 1).re))
}

pub fn group_mul(a: &GroupElement, b: &GroupElement) -> Result<GroupElement> {
    if a.kind != b.kind {
        return Err(Error::KindMismatch { left: a.kind.to_string(), right: b.kind.to_string() });
    }
    Ok(GroupElement { kind: a.kind.clone(), mat: a.mat.matmul(&b.mat) })
}

pub fn group_inv(a: &GroupElement) -> GroupElement {
    GroupElement { kind: a.kind.clone(), mat: a.mat.adjoint() }
}

pub fn is_on_group(a: &GroupElement, tol: f64) -> bool {
    let kind = &a.kind;
    if a.mat.dim() != kind.matrix_dim() || !a.mat.is_finite() {
        return false;
    }
    if a.manifold_error() > tol {
        return false;
    }
    let leaves = kind.leaves();
    if leaves.len() > 1 || matches!(kind, GroupKind::TorusPower(k) if *k > 1) {
        if off_block_norm(&a.mat, &leaves) > tol {
            return false;
        }
    }
    if !kind.is_complex() || leaves.iter().any(|l| !l.kind.is_complex()) {
        for leaf in &leaves {
            if leaf.kind.is_complex() {
                continue;
            }
            if a.mat.is_complex() {
                let blk = a.mat.block(leaf.mat_offset, leaf.mat_dim);
                let imag: f64 = blk.to_complex().iter().map(|z| z.im * z.im).sum::<f64>().sqrt();
                if imag > tol {
                    return false;
                }
            }
            let blocks: Vec<(usize, usize)> = match leaf.kind {
                GroupKind::TorusPower(k) => (0..k).map(|j| (leaf.mat_offset + 2 * j, 2)).collect(),
                _ => vec![(leaf.mat_offset, leaf.mat_dim)],
            };
            for (o, n) in blocks {
                let det = a.mat.block(o, n).determinant();
                if (det.re - 1.0).abs() > DET_TOL || det.im.abs() > DET_TOL {
                    return false;
                }
            }
        }
    }
    true
}

fn off_block_norm(m: &Mat, leaves: &[Leaf]) -> f64 {
    let n = m.dim();
    let mut block_of = vec![0usize; n];
    let mut id = 0;
    for leaf in leaves {
        match leaf.kind {
            GroupKind::TorusPower(k) => {
                for j in 0..k {
                    block_of[leaf.mat_offset + 2 * j] = id;
                    block_of[leaf.mat_offset + 2 * j + 1] = id;
                    id += 1;
                }
            }
            _ => {
                for i in 0..leaf.mat_dim {
                    block_of[leaf.mat_offset + i] = id;
                }
                id += 1;
            }
        }
    }
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if block_of[i] != block_of[j] {
                acc += m.get(i, j).norm_sqr();
            }
        }
    }
    acc.sqrt()
}

/// Matrix exponential of an algebra matrix, block by block.
///
/// Torus blocks use the closed-form rotation; SO(n) and U(n) blocks use
/// scaling and squaring.
pub fn group_exp(kind: &GroupKind, m: &Mat) -> Result<GroupElement> {
    if m.dim() != kind.matrix_dim() {
        return Err(Error::DimensionMismatch { expected: kind.matrix_dim(), got: m.dim() });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("group_exp input".into()));
    }
    let leaves = kind.leaves();
    if leaves.len() == 1 && !matches!(kind, GroupKind::TorusPower(_)) {
        return Ok(GroupElement::from_matrix_unchecked(kind.clone(), expm(m)));
    }
    let complex = kind.is_complex();
    let mut out = Mat::zeros(kind.matrix_dim(), complex);
    for leaf in &leaves {
        match leaf.kind {
            GroupKind::TorusPower(k) => {
                let mut blk = DMatrix::zeros(2 * k, 2 * k);
                for j in 0..k {
                    let b = leaf.mat_offset + 2 * j;
                    let th = 0.5 * (m.get(b, b + 1).re - m.get(b + 1, b).re);
                    write_rotation(&mut blk, 2 * j, th);
                }
                out.set_block(leaf.mat_offset, &Mat::Real(blk));
            }
            _ => {
                let blk = m.block(leaf.mat_offset, leaf.mat_dim);
                out.set_block(leaf.mat_offset, &expm(&blk));
            }
        }
    }
    Ok(GroupElement::from_matrix_unchecked(kind.clone(), out))
}

/// `expm(scale · Σ v_i e_i)` without materializing the torus generator.
pub fn exp_coeffs(kind: &GroupKind, coeffs: &[f64], scale: f64) -> Result<GroupElement> {
    if coeffs.len() != kind.algebra_dim() {
        return Err(Error::DimensionMismatch { expected: kind.algebra_dim(), got: coeffs.len() });
    }
    if !coeffs.iter().all(|x| x.is_finite()) || !scale.is_finite() {
        return Err(Error::NonFinite("exp_coeffs input".into()));
    }
    match kind {
        GroupKind::TorusPower(k) => {
            let mut m = DMatrix::zeros(2 * k, 2 * k);
            for (j, &c) in coeffs.iter().enumerate() {
                write_rotation(&mut m, 2 * j, scale * c * INV_SQRT2);
            }
            Ok(GroupElement { kind: kind.clone(), mat: Mat::Real(m) })
        }
        GroupKind::SpecialOrthogonal(_) | GroupKind::Unitary(_) => {
            let v = AlgebraVector::new(kind.clone(), coeffs.iter().map(|c| c * scale).collect())?;
            let a = coeffs_to_matrix(&v);
            Ok(GroupElement { kind: kind.clone(), mat: expm(&a) })
        }
        GroupKind::Product(_) => {
            let v = AlgebraVector::new(kind.clone(), coeffs.iter().map(|c| c * scale).collect())?;
            group_exp(kind, &coeffs_to_matrix(&v))
        }
    }
}

/// Haar-distributed element: uniform angles on tori, QR of a Ginibre matrix
/// with the phase of diag(R) divided out for SO(n) and U(n).
pub fn haar_sample<R: Rng + ?Sized>(kind: &GroupKind, rng: &mut R) -> GroupElement {
    let complex = kind.is_complex();
    let mut out = Mat::zeros(kind.matrix_dim(), complex);
    for leaf in kind.leaves() {
        let blk = match leaf.kind {
            GroupKind::TorusPower(k) => {
                let mut m = DMatrix::zeros(2 * k, 2 * k);
                for j in 0..k {
                    write_rotation(&mut m, 2 * j, rng.random::<f64>() * TAU);
                }
                Mat::Real(m)
            }
            GroupKind::SpecialOrthogonal(n) => {
                let z = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
                let qr = z.qr();
                let (mut q, r) = (qr.q(), qr.r());
                for j in 0..n {
                    if r[(j, j)] < 0.0 {
                        q.column_mut(j).neg_mut();
                    }
                }
                if q.clone().determinant() < 0.0 {
                    q.column_mut(n - 1).neg_mut();
                }
                Mat::Real(q)
            }
            GroupKind::Unitary(n) => {
                let z = DMatrix::<C64>::from_fn(n, n, |_, _| {
                    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * INV_SQRT2
                });
                let qr = z.qr();
                let (mut q, r) = (qr.q(), qr.r());
                for j in 0..n {
                    let d = r[(j, j)];
                    let ph = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
                    q.column_mut(j).iter_mut().for_each(|z| *z *= ph);
                }
                Mat::Complex(q)
            }
            GroupKind::Product(_) => unreachable!(),
        };
        out.set_block(leaf.mat_offset, &blk);
    }
    GroupElement { kind: kind.clone(), mat: out }
}

/// Serialized form: kind tag plus row-major entries.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ElementRecord {
    pub kind: GroupKind,
    /// Real entries, or `[re, im]` pairs for complex kinds.
    pub entries: serde_json::Value,
}

impl Serialize for GroupElement {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.mat.dim();
        let entries = match &self.mat {
            Mat::Real(m) => serde_json::Value::from(
                (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect::<Vec<_>>(),
            ),
            Mat::Complex(m) => serde_json::Value::from(
                (0..n)
                    .flat_map(|i| (0..n).map(move |j| (i, j)))
                    .map(|(i, j)| vec![m[(i, j)].re, m[(i, j)].im])
                    .collect::<Vec<_>>(),
            ),
        };
        ElementRecord { kind: self.kind.clone(), entries }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for GroupElement {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let rec = ElementRecord::deserialize(d)?;
        let n = rec.kind.matrix_dim();
        let complex = rec.kind.is_complex();
        let flat: Vec<f64> = if complex {
            let pairs: Vec<[f64; 2]> = serde_json::from_value(rec.entries).map_err(D::Error::custom)?;
            pairs.into_iter().flatten().collect()
        } else {
            serde_json::from_value(rec.entries).map_err(D::Error::custom)?
        };
        let mat = Mat::from_row_major(n, complex, &flat)
            .ok_or_else(|| D::Error::custom(format!("expected {n}x{n} entries for {}", rec.kind)))?;
        Ok(GroupElement { kind: rec.kind, mat })
    }
}

/// Scaled Taylor reference with no shortcut for any group, kept for cross-checks.
pub fn expm_generic(m: &Mat) -> Mat {
    match m {
        Mat::Real(a) => Mat::Real(expm_taylor(a)),
        Mat::Complex(a) => Mat::Complex(expm_taylor(a)),
    }
}
