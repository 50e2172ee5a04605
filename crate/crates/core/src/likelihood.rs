//! Likelihood estimation through the probability-flow ODE.
//!
//! Data are transported to the prior by the exact inverse of the sampling
//! update, accumulating `h·(γd + γ div_ξ s)` per step. The `g`-flow is
//! volume-preserving for Haar measure, so only the momentum contributes.
//! The momentum is integrated out with an importance-weighted bound.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DiffusionConfig, PhaseState};
use crate::lie::{exp_coeffs, group_mul, AlgebraVector, GroupElement, GroupKind};
use crate::losses::{mean_se, Divergence};
use crate::par;
use crate::rng::{stream, tags};
use crate::score::{BatchBuf, Score};
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `γ·d + γ·div_ξ s(g, ξ, τ)`.
pub fn divergence_of_backward_drift<S: Score + ?Sized, R: Rng + ?Sized>(
    score: &S,
    g: &GroupElement,
    xi: &AlgebraVector,
    tau: f64,
    gamma: f64,
    div: Divergence,
    rng: &mut R,
) -> Result<f64> {
    let mut buf = BatchBuf::default();
    buf.push(g, xi.coeffs(), tau);
    let d = score.algebra_dim();
    let v = divergences(score, &buf, div, &mut [rng])?;
    Ok(gamma * d as f64 + gamma * v[0])
}

/// `div_ξ s` per batch column. `rngs[i]` supplies probes for column `i`
/// (only the first is used when all columns share one generator).
fn divergences<S: Score + ?Sized, R: Rng + ?Sized>(score: &S, buf: &BatchBuf, div: Divergence, rngs: &mut [&mut R]) -> Result<Vec<f64>> {
    let d = score.algebra_dim();
    let p = div.probes(d);
    let n = buf.tau.len();
    let mut tangents = Vec::with_capacity(d * p * n);
    for b in 0..n {
        match div {
            Divergence::Exact => {
                for q in 0..d {
                    tangents.extend((0..d).map(|i| if i == q { 1.0 } else { 0.0 }));
                }
            }
            Divergence::Hutchinson(_) => {
                let k = b.min(rngs.len() - 1);
                let r = &mut *rngs[k];
                tangents.extend((0..d * p).map(|_| if r.random::<bool>() { 1.0 } else { -1.0 }));
            }
        }
    }
    let batch = crate::score::Batch { g: &buf.g, xi: &buf.xi, tau: &buf.tau, tangents: Some((&tangents, p)) };
    let out = score.eval_batch(&batch)?;
    let w = div.weight();
    Ok((0..n)
        .map(|b| {
            let r = d * p * b..d * p * (b + 1);
            tangents[r.clone()].iter().zip(&out.s_dot[r]).map(|(a, b)| a * b).sum::<f64>() * w
        })
        .collect())
}

/// `log π*` in angle coordinates for torus factors, relative to Haar otherwise.
pub fn log_prior(state: &PhaseState) -> f64 {
    let k = state.kind().torus_coordinates() as f64;
    let xi = state.xi.coeffs();
    -k * LN_2PI - 0.5 * xi.iter().map(|x| x * x).sum::<f64>() - 0.5 * xi.len() as f64 * LN_2PI
}

/// True when the reported density is relative to Haar measure on a non-torus factor.
pub fn haar_normalized(kind: &GroupKind) -> bool {
    kind.leaves().iter().any(|l| !l.kind.is_abelian())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NllOptions {
    /// Momentum samples per datum.
    pub samples: usize,
    /// Fixed-point sweeps for the implicit momentum update.
    pub fixed_point_iters: usize,
    pub divergence: Divergence,
    /// Chains transported together.
    pub chunk: usize,
    pub seed: u64,
}

impl NllOptions {
    pub fn for_kind(kind: &GroupKind) -> Self {
        Self { samples: 16, fixed_point_iters: 3, divergence: Divergence::auto(kind.algebra_dim(), 4), chunk: 2048, seed: 0 }
    }
}

/// Transports data-time states to the prior; returns `log p(g, ξ)` per chain.
/// Probes for chain `i` come from `stream(seed, NLL, ids[i])` offset past the
/// momentum draws.
fn transport_logp<S: Score + ?Sized>(
    score: &S,
    states: Vec<PhaseState>,
    ids: &[u64],
    cfg: &DiffusionConfig,
    opts: &NllOptions,
) -> Result<Vec<f64>> {
    let h = cfg.h();
    let d = cfg.kind.algebra_dim();
    let decay = (-cfg.gamma * h).exp();
    let em1 = (cfg.gamma * h).exp_m1();
    let mut cur = states;
    let mut acc = vec![0.0; cur.len()];
    let mut rngs: Vec<_> = ids.iter().map(|&i| stream(opts.seed, tags::NLL, i | (1 << 40))).collect();
    let mut buf = BatchBuf::default();
    for n in (0..cfg.steps).rev() {
        let tau = n as f64 * h;
        let step = cfg.steps - n;
        let g_prev: Vec<GroupElement> = par::try_map_slice(&cur, |_, st| {
            let mut g = group_mul(&st.g, &exp_coeffs(&cfg.kind, st.xi.coeffs(), h)?)?;
            if cfg.reorth_every.is_some_and(|k| step % k == 0) {
                g.reorthonormalize();
            }
            Ok(g)
        })?;
        let mut xi: Vec<f64> = cur.iter().flat_map(|st| st.xi.coeffs().iter().map(|x| decay * x)).collect();
        for _ in 0..opts.fixed_point_iters {
            buf.clear();
            for (b, g) in g_prev.iter().enumerate() {
                buf.push(g, &xi[d * b..d * (b + 1)], tau);
            }
            let s = score.eval_batch(&buf.view())?.s;
            if !s.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite(format!("score at t = {tau}")));
            }
            for (b, st) in cur.iter().enumerate() {
                for i in 0..d {
                    xi[d * b + i] = decay * (st.xi.coeffs()[i] - em1 * s[d * b + i]);
                }
            }
        }
        buf.clear();
        for (b, g) in g_prev.iter().enumerate() {
            buf.push(g, &xi[d * b..d * (b + 1)], tau);
        }
        let mut refs: Vec<&mut _> = rngs.iter_mut().collect();
        let div = divergences(score, &buf, opts.divergence, &mut refs)?;
        for (a, dv) in acc.iter_mut().zip(&div) {
            *a += h * cfg.gamma * (d as f64 + dv);
        }
        cur = g_prev
            .into_iter()
            .enumerate()
            .map(|(b, g)| PhaseState { g, xi: AlgebraVector::new(cfg.kind.clone(), xi[d * b..d * (b + 1)].to_vec()).expect("dimension") })
            .collect();
    }
    for st in &cur {
        if !st.is_finite() {
            return Err(Error::NonFinite("transported state".into()));
        }
        let err = st.g.manifold_error();
        if err > 1e-4 {
            return Err(Error::NotOnGroup { defect: err });
        }
    }
    Ok(cur.iter().zip(&acc).map(|(st, a)| log_prior(st) - a).collect())
}

/// `log p(g, ξ)` of the model at data time.
pub fn joint_logp<S: Score + ?Sized>(score: &S, g: &GroupElement, xi: &AlgebraVector, cfg: &DiffusionConfig, opts: &NllOptions) -> Result<f64> {
    cfg.validate()?;
    let st = PhaseState::new(g.clone(), xi.clone())?;
    Ok(transport_logp(score, vec![st], &[0], cfg, opts)?[0])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NllEstimate {
    /// Per-datum lower bounds on `log p(g)`.
    pub log_likelihoods: Vec<f64>,
    pub mean: f64,
    pub se: f64,
    pub num_xi_samples: usize,
    pub ode_steps: usize,
    pub kind: GroupKind,
    pub haar_normalized: bool,
}

impl NllEstimate {
    /// JSON report without the per-datum values.
    pub fn report(&self) -> serde_json::Value {
        serde_json::json!({
            "mean": self.mean,
            "se": self.se,
            "S": self.num_xi_samples,
            "N": self.ode_steps,
            "n_data": self.log_likelihoods.len(),
            "kind": self.kind.to_string(),
            "haar_normalized": self.haar_normalized,
        })
    }
}

fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + (v.iter().map(|x| (x - m).exp()).sum::<f64>() / v.len() as f64).ln()
}

/// Importance-weighted NLL bound over `opts.samples` momentum draws per datum.
pub fn nll<S: Score + ?Sized>(score: &S, data: &[GroupElement], cfg: &DiffusionConfig, opts: &NllOptions) -> Result<NllEstimate> {
    cfg.validate()?;
    if opts.samples == 0 {
        return Err(Error::invalid("at least one momentum sample is required"));
    }
    if data.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    if score.kind() != &cfg.kind {
        return Err(Error::KindMismatch { left: score.kind().to_string(), right: cfg.kind.to_string() });
    }
    let d = cfg.kind.algebra_dim();
    let s = opts.samples;
    let total = data.len() * s;
    let chunk = opts.chunk.max(1);
    let mut weights = Vec::with_capacity(total);
    for lo in (0..total).step_by(chunk) {
        let hi = (lo + chunk).min(total);
        let mut states = Vec::with_capacity(hi - lo);
        let mut log_q = Vec::with_capacity(hi - lo);
        let ids: Vec<u64> = (lo..hi).map(|c| c as u64).collect();
        for c in lo..hi {
            let g = &data[c / s];
            if g.kind() != &cfg.kind {
                return Err(Error::KindMismatch { left: g.kind().to_string(), right: cfg.kind.to_string() });
            }
            let mut rng = stream(opts.seed, tags::NLL, c as u64);
            let xi: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            log_q.push(-0.5 * xi.iter().map(|x| x * x).sum::<f64>() - 0.5 * d as f64 * LN_2PI);
            states.push(PhaseState { g: g.clone(), xi: AlgebraVector::new(cfg.kind.clone(), xi)? });
        }
        let lp = transport_logp(score, states, &ids, cfg, opts)?;
        weights.extend(lp.iter().zip(&log_q).map(|(a, b)| a - b));
    }
    let ll: Vec<f64> = weights.chunks_exact(s).map(log_mean_exp).collect();
    if !ll.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("log-likelihood bound".into()));
    }
    let (m, se) = mean_se(&ll);
    Ok(NllEstimate {
        log_likelihoods: ll,
        mean: -m,
        se,
        num_xi_samples: s,
        ode_steps: cfg.steps,
        kind: cfg.kind.clone(),
        haar_normalized: haar_normalized(&cfg.kind),
    })
}
