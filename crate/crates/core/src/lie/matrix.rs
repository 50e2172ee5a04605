use nalgebra::{ComplexField, DMatrix};

use crate::lie::C64;

/// Dense square matrix, real for SO(n) and tori, complex when any factor is unitary.
#[derive(Clone, Debug, PartialEq)]
pub enum Mat {
    Real(DMatrix<f64>),
    Complex(DMatrix<C64>),
}

impl Mat {
    pub fn zeros(n: usize, complex: bool) -> Self {
        if complex {
            Mat::Complex(DMatrix::zeros(n, n))
        } else {
            Mat::Real(DMatrix::zeros(n, n))
        }
    }

    pub fn identity(n: usize, complex: bool) -> Self {
        if complex {
            Mat::Complex(DMatrix::identity(n, n))
        } else {
            Mat::Real(DMatrix::identity(n, n))
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Mat::Real(m) => m.nrows(),
            Mat::Complex(m) => m.nrows(),
        }
    }

    pub fn is_square(&self) -> bool {
        match self {
            Mat::Real(m) => m.is_square(),
            Mat::Complex(m) => m.is_square(),
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, Mat::Complex(_))
    }

    pub fn to_complex(&self) -> DMatrix<C64> {
        match self {
            Mat::Real(m) => m.map(|x| C64::new(x, 0.0)),
            Mat::Complex(m) => m.clone(),
        }
    }

    /// Promotes to complex storage when requested.
    pub fn promoted(self, complex: bool) -> Mat {
        match self {
            Mat::Real(m) if complex => Mat::Complex(m.map(|x| C64::new(x, 0.0))),
            other => other,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        match self {
            Mat::Real(m) => C64::new(m[(i, j)], 0.0),
            Mat::Complex(m) => m[(i, j)],
        }
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        match (self, other) {
            (Mat::Real(a), Mat::Real(b)) => Mat::Real(a * b),
            (Mat::Complex(a), Mat::Complex(b)) => Mat::Complex(a * b),
            (a, b) => Mat::Complex(a.to_complex() * b.to_complex()),
        }
    }

    pub fn adjoint(&self) -> Mat {
        match self {
            Mat::Real(m) => Mat::Real(m.transpose()),
            Mat::Complex(m) => Mat::Complex(m.adjoint()),
        }
    }

    pub fn add(&self, other: &Mat) -> Mat {
        match (self, other) {
            (Mat::Real(a), Mat::Real(b)) => Mat::Real(a + b),
            (Mat::Complex(a), Mat::Complex(b)) => Mat::Complex(a + b),
            (a, b) => Mat::Complex(a.to_complex() + b.to_complex()),
        }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        match (self, other) {
            (Mat::Real(a), Mat::Real(b)) => Mat::Real(a - b),
            (Mat::Complex(a), Mat::Complex(b)) => Mat::Complex(a - b),
            (a, b) => Mat::Complex(a.to_complex() - b.to_complex()),
        }
    }

    pub fn scale(&self, s: f64) -> Mat {
        match self {
            Mat::Real(m) => Mat::Real(m * s),
            Mat::Complex(m) => Mat::Complex(m.map(|z| z * s)),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        match self {
            Mat::Real(m) => m.norm(),
            Mat::Complex(m) => m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Mat::Real(m) => m.iter().all(|x| x.is_finite()),
            Mat::Complex(m) => m.iter().all(|z| z.re.is_finite() && z.im.is_finite()),
        }
    }

    /// Row-major entries; complex entries contribute `(re, im)` pairs.
    pub fn entries_row_major(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(if self.is_complex() { 2 * n * n } else { n * n });
        self.write_row_major(&mut out);
        out
    }

    pub fn write_row_major(&self, out: &mut Vec<f64>) {
        let n = self.dim();
        match self {
            Mat::Real(m) => {
                for i in 0..n {
                    for j in 0..n {
                        out.push(m[(i, j)]);
                    }
                }
            }
            Mat::Complex(m) => {
                for i in 0..n {
                    for j in 0..n {
                        out.push(m[(i, j)].re);
                        out.push(m[(i, j)].im);
                    }
                }
            }
        }
    }

    pub fn from_row_major(n: usize, complex: bool, entries: &[f64]) -> Option<Mat> {
        if complex {
            if entries.len() != 2 * n * n {
                return None;
            }
            Some(Mat::Complex(DMatrix::from_fn(n, n, |i, j| {
                let k = 2 * (i * n + j);
                C64::new(entries[k], entries[k + 1])
            })))
        } else {
            if entries.len() != n * n {
                return None;
            }
            Some(Mat::Real(DMatrix::from_fn(n, n, |i, j| entries[i * n + j])))
        }
    }

    pub fn block(&self, offset: usize, n: usize) -> Mat {
        match self {
            Mat::Real(m) => Mat::Real(m.view((offset, offset), (n, n)).into_owned()),
            Mat::Complex(m) => Mat::Complex(m.view((offset, offset), (n, n)).into_owned()),
        }
    }

    pub fn set_block(&mut self, offset: usize, block: &Mat) {
        let n = block.dim();
        match (self, block) {
            (Mat::Real(m), Mat::Real(b)) => m.view_mut((offset, offset), (n, n)).copy_from(b),
            (Mat::Complex(m), b) => m.view_mut((offset, offset), (n, n)).copy_from(&b.to_complex()),
            (Mat::Real(_), Mat::Complex(_)) => panic!("cannot store a complex block in a real matrix"),
        }
    }

    pub fn determinant(&self) -> C64 {
        match self {
            Mat::Real(m) => C64::new(m.clone().determinant(), 0.0),
            Mat::Complex(m) => m.clone().determinant(),
        }
    }

    /// `‖A†A − I‖_F`.
    pub fn unitarity_defect(&self) -> f64 {
        let n = self.dim();
        match self {
            Mat::Real(m) => (m.transpose() * m - DMatrix::<f64>::identity(n, n)).norm(),
            Mat::Complex(m) => {
                let e = m.adjoint() * m - DMatrix::<C64>::identity(n, n);
                e.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
            }
        }
    }

    /// `‖A + A†‖_F`.
    pub fn skew_defect(&self) -> f64 {
        match self {
            Mat::Real(m) => (m + m.transpose()).norm(),
            Mat::Complex(m) => (m + m.adjoint()).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
        }
    }
}

/// Matrix exponential by scaling and squaring with a degree-12 Taylor kernel.
///
/// The matrix is scaled so its 1-norm is at most 1/2, where the truncated
/// series is accurate to well below 1e-13 relative.
pub fn expm_taylor<T>(a: &DMatrix<T>) -> DMatrix<T>
where
    T: ComplexField<RealField = f64> + Copy,
{
    const ORDER: usize = 12;
    let n = a.nrows();
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|z| z.modulus()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0u32;
    if norm1 > 0.5 {
        squarings = (norm1 / 0.5).log2().ceil() as u32;
    }
    let scale = T::from_real(0.5f64.powi(squarings as i32));
    let scaled = a.map(|z| z * scale);
    let id = DMatrix::<T>::identity(n, n);
    let mut acc = id.clone();
    for k in (1..=ORDER).rev() {
        let inv_k = T::from_real(1.0 / k as f64);
        acc = &scaled * &acc;
        acc.iter_mut().for_each(|z| *z *= inv_k);
        acc += &id;
    }
    for _ in 0..squarings {
        acc = &acc * &acc;
    }
    acc
}

pub fn expm(m: &Mat) -> Mat {
    match m {
        Mat::Real(a) => Mat::Real(expm_taylor(a)),
        Mat::Complex(a) => Mat::Complex(expm_taylor(a)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_zero_is_identity() {
        let z = DMatrix::<f64>::zeros(4, 4);
        assert_eq!(expm_taylor(&z), DMatrix::identity(4, 4));
    }

    #[test]
    fn expm_matches_rotation() {
        let th = 2.7;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, th, -th, 0.0]);
        let e = expm_taylor(&a);
        let r = DMatrix::from_row_slice(2, 2, &[th.cos(), th.sin(), -th.sin(), th.cos()]);
        assert!((e - r).norm() < 1e-13);
    }

    #[test]
    fn expm_of_diagonal() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-3.0, 0.5, 7.0]));
        let e = expm_taylor(&a);
        for (i, x) in [-3.0f64, 0.5, 7.0].iter().enumerate() {
            assert!((e[(i, i)] - x.exp()).abs() < 1e-12 * x.exp());
        }
    }

    #[test]
    fn row_major_round_trip() {
        let m = Mat::Complex(DMatrix::from_fn(3, 3, |i, j| C64::new(i as f64, j as f64 - 1.0)));
        let e = m.entries_row_major();
        assert_eq!(Mat::from_row_major(3, true, &e).unwrap(), m);
    }
}
