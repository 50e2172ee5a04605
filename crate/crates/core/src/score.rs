//! The score interface shared by the network and analytic stand-ins.
//!
//! Batches are column-major with one column per sample. Optional tangents for
//! forward-mode derivatives in `ξ` are stored sample-major: column `b·P + p`
//! holds probe `p` of sample `b`.

use nalgebra::DMatrix;

use crate::lie::{AlgebraVector, GroupElement, GroupKind};
use crate::{Error, Result};

/// A batch of network inputs.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    /// Flattened group features, `feature_dim × B`.
    pub g: &'a [f64],
    /// Momentum coefficients, `d × B`.
    pub xi: &'a [f64],
    /// Backward time per sample.
    pub tau: &'a [f64],
    /// `(v, P)`: directions in `ξ`, `d × (B·P)`.
    pub tangents: Option<(&'a [f64], usize)>,
}

impl<'a> Batch<'a> {
    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn probes(&self) -> usize {
        self.tangents.map_or(0, |(_, p)| p)
    }

    pub fn check(&self, kind: &GroupKind) -> Result<()> {
        let b = self.len();
        let (f, d) = (kind.feature_dim(), kind.algebra_dim());
        if self.g.len() != f * b {
            return Err(Error::DimensionMismatch { expected: f * b, got: self.g.len() });
        }
        if self.xi.len() != d * b {
            return Err(Error::DimensionMismatch { expected: d * b, got: self.xi.len() });
        }
        if let Some((v, p)) = self.tangents {
            if v.len() != d * b * p {
                return Err(Error::DimensionMismatch { expected: d * b * p, got: v.len() });
            }
        }
        Ok(())
    }

    /// Samples `lo..hi` of this batch.
    pub fn slice(&self, lo: usize, hi: usize, kind: &GroupKind) -> Batch<'a> {
        let (f, d) = (kind.feature_dim(), kind.algebra_dim());
        Batch {
            g: &self.g[f * lo..f * hi],
            xi: &self.xi[d * lo..d * hi],
            tau: &self.tau[lo..hi],
            tangents: self.tangents.map(|(v, p)| (&v[d * p * lo..d * p * hi], p)),
        }
    }
}

/// Owned storage for building a [`Batch`].
#[derive(Clone, Debug, Default)]
pub struct BatchBuf {
    pub g: Vec<f64>,
    pub xi: Vec<f64>,
    pub tau: Vec<f64>,
    pub tangents: Vec<f64>,
    pub probes: usize,
}

impl BatchBuf {
    pub fn clear(&mut self) {
        self.g.clear();
        self.xi.clear();
        self.tau.clear();
        self.tangents.clear();
    }

    pub fn push(&mut self, g: &GroupElement, xi: &[f64], tau: f64) {
        g.write_features(&mut self.g);
        self.xi.extend_from_slice(xi);
        self.tau.push(tau);
    }

    pub fn view(&self) -> Batch<'_> {
        Batch {
            g: &self.g,
            xi: &self.xi,
            tau: &self.tau,
            tangents: (self.probes > 0).then_some((&self.tangents[..], self.probes)),
        }
    }
}

/// Output of a batched evaluation.
#[derive(Clone, Debug, Default)]
pub struct ScoreOut {
    /// `d × B`.
    pub s: Vec<f64>,
    /// `d × (B·P)`, empty without tangents.
    pub s_dot: Vec<f64>,
}

/// `s(g, ξ, τ)` with values in algebra coefficients, plus `(∂s/∂ξ)·v`.
pub trait Score: Sync {
    fn kind(&self) -> &GroupKind;

    fn eval_batch(&self, batch: &Batch<'_>) -> Result<ScoreOut>;

    fn algebra_dim(&self) -> usize {
        self.kind().algebra_dim()
    }

    fn eval(&self, g: &GroupElement, xi: &AlgebraVector, tau: f64) -> Result<AlgebraVector> {
        let mut buf = BatchBuf::default();
        buf.push(g, xi.coeffs(), tau);
        let out = self.eval_batch(&buf.view())?;
        AlgebraVector::new(self.kind().clone(), out.s)
    }

    /// Directional derivative `(∂s/∂ξ)·v`.
    fn jvp_xi(&self, g: &GroupElement, xi: &AlgebraVector, tau: f64, v: &AlgebraVector) -> Result<AlgebraVector> {
        let mut buf = BatchBuf::default();
        buf.push(g, xi.coeffs(), tau);
        buf.tangents.extend_from_slice(v.coeffs());
        buf.probes = 1;
        let out = self.eval_batch(&buf.view())?;
        AlgebraVector::new(self.kind().clone(), out.s_dot)
    }
}

fn check_out(s: &[f64], what: &str) -> Result<()> {
    if s.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// `s ≡ 0`.
#[derive(Clone, Debug)]
pub struct ZeroScore {
    pub kind: GroupKind,
}

impl Score for ZeroScore {
    fn kind(&self) -> &GroupKind {
        &self.kind
    }

    fn eval_batch(&self, batch: &Batch<'_>) -> Result<ScoreOut> {
        batch.check(&self.kind)?;
        let d = self.kind.algebra_dim();
        Ok(ScoreOut { s: vec![0.0; d * batch.len()], s_dot: vec![0.0; d * batch.len() * batch.probes()] })
    }
}

/// `s(ξ) = Aξ`, independent of `g` and `τ`.
#[derive(Clone, Debug)]
pub struct LinearScore {
    pub kind: GroupKind,
    pub a: DMatrix<f64>,
}

impl LinearScore {
    pub fn new(kind: GroupKind, a: DMatrix<f64>) -> Result<Self> {
        let d = kind.algebra_dim();
        if a.nrows() != d || a.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: a.nrows().max(a.ncols()) });
        }
        Ok(Self { kind, a })
    }

    /// `s(ξ) = −ξ`, the score of the stationary momentum law.
    pub fn stationary(kind: GroupKind) -> Self {
        let d = kind.algebra_dim();
        Self { kind, a: -DMatrix::identity(d, d) }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        let d = self.a.nrows();
        for col in x.chunks_exact(d) {
            for i in 0..d {
                out.push((0..d).map(|j| self.a[(i, j)] * col[j]).sum());
            }
        }
    }
}

impl Score for LinearScore {
    fn kind(&self) -> &GroupKind {
        &self.kind
    }

    fn eval_batch(&self, batch: &Batch<'_>) -> Result<ScoreOut> {
        batch.check(&self.kind)?;
        let mut out = ScoreOut::default();
        self.apply(batch.xi, &mut out.s);
        if let Some((v, _)) = batch.tangents {
            self.apply(v, &mut out.s_dot);
        }
        check_out(&out.s, "linear score")?;
        Ok(out)
    }
}

/// Exact score when `g` is Haar-distributed and `ξ ∼ N(0, σ₀²I)` at forward
/// time zero: `s = −ξ/σ²(T − τ)` with `σ²(t) = σ₀²e^{−2γt} + 1 − e^{−2γt}`.
#[derive(Clone, Debug)]
pub struct GaussianScore {
    pub kind: GroupKind,
    pub gamma: f64,
    pub horizon: f64,
    pub sigma0_sq: f64,
}

impl GaussianScore {
    pub fn variance_at(&self, t: f64) -> f64 {
        let e = (-2.0 * self.gamma * t).exp();
        self.sigma0_sq * e + 1.0 - e
    }
}

impl Score for GaussianScore {
    fn kind(&self) -> &GroupKind {
        &self.kind
    }

    fn eval_batch(&self, batch: &Batch<'_>) -> Result<ScoreOut> {
        batch.check(&self.kind)?;
        let d = self.kind.algebra_dim();
        let p = batch.probes();
        let mut out = ScoreOut { s: Vec::with_capacity(batch.xi.len()), s_dot: Vec::with_capacity(d * p * batch.len()) };
        for (b, &tau) in batch.tau.iter().enumerate() {
            let k = -1.0 / self.variance_at(self.horizon - tau);
            out.s.extend(batch.xi[d * b..d * (b + 1)].iter().map(|x| k * x));
            if let Some((v, _)) = batch.tangents {
                out.s_dot.extend(v[d * p * b..d * p * (b + 1)].iter().map(|x| k * x));
            }
        }
        check_out(&out.s, "gaussian score")?;
        Ok(out)
    }
}
