//! Operator-splitting integrators for the trivialized kinetic Langevin
//! dynamics `dg = g ξ dt`, `dξ = −γξ dt + √(2γ) dW` and its time reversal.
//!
//! Each step solves the momentum sub-flow in closed form and then moves `g` by
//! an exact exponential, so iterates stay on the group.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::lie::{exp_coeffs, group_mul, haar_sample, AlgebraVector, GroupElement, GroupKind};
use crate::par;
use crate::rng::{stream, tags, StreamRng};
use crate::score::{BatchBuf, Score};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub kind: GroupKind,
    pub gamma: f64,
    pub horizon: f64,
    pub steps: usize,
    /// Early-stopping time `ε`.
    pub eps: f64,
    /// Polar re-orthonormalization period in steps.
    pub reorth_every: Option<usize>,
}

impl DiffusionConfig {
    pub fn new(kind: GroupKind) -> Self {
        Self { kind, gamma: 1.0, horizon: 10.0, steps: 1000, eps: 1e-2, reorth_every: Some(100) }
    }

    pub fn h(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::invalid(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::invalid(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps must be >= 1"));
        }
        if !(self.eps > 0.0 && self.eps < self.horizon) {
            return Err(Error::invalid(format!("eps must lie in (0, horizon), got {}", self.eps)));
        }
        if self.reorth_every == Some(0) {
            return Err(Error::invalid("reorth_every must be >= 1"));
        }
        Ok(())
    }

    /// Backward time at which the network is queried for a state diffused
    /// forward for time `t`.
    pub fn backward_time(&self, t: f64) -> f64 {
        self.horizon - t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub g: GroupElement,
    pub xi: AlgebraVector,
}

impl PhaseState {
    pub fn new(g: GroupElement, xi: AlgebraVector) -> Result<Self> {
        if g.kind() != xi.kind() {
            return Err(Error::KindMismatch { left: g.kind().to_string(), right: xi.kind().to_string() });
        }
        Ok(Self { g, xi })
    }

    pub fn kind(&self) -> &GroupKind {
        self.g.kind()
    }

    pub fn is_finite(&self) -> bool {
        self.g.is_finite() && self.xi.is_finite()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<PhaseState>,
    pub times: Vec<f64>,
}

impl Trajectory {
    /// One JSON object per line: `{"t": …, "g": …, "xi": […]}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for (s, t) in self.states.iter().zip(&self.times) {
            #[derive(Serialize)]
            struct Line<'a> {
                t: f64,
                g: &'a GroupElement,
                xi: &'a [f64],
            }
            serde_json::to_writer(&mut w, &Line { t: *t, g: &s.g, xi: s.xi.coeffs() })?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn standard_normals<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn check_state(state: &PhaseState, cfg: &DiffusionConfig, h: f64) -> Result<()> {
    if state.kind() != &cfg.kind {
        return Err(Error::KindMismatch { left: state.kind().to_string(), right: cfg.kind.to_string() });
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid(format!("step size must be positive, got {h}")));
    }
    if !state.is_finite() {
        return Err(Error::NonFinite("phase state".into()));
    }
    Ok(())
}

/// Forward step driven by given standard-normal draws.
pub fn fosi_step_with_noise(state: &PhaseState, cfg: &DiffusionConfig, h: f64, noise: &[f64]) -> Result<PhaseState> {
    check_state(state, cfg, h)?;
    let decay = (-cfg.gamma * h).exp();
    let std = (-(-2.0 * cfg.gamma * h).exp_m1()).sqrt();
    let xi: Vec<f64> = state.xi.coeffs().iter().zip(noise).map(|(x, z)| decay * x + std * z).collect();
    let g = group_mul(&state.g, &exp_coeffs(&cfg.kind, &xi, h)?)?;
    Ok(PhaseState { g, xi: AlgebraVector::new(cfg.kind.clone(), xi)? })
}

/// `ξ' = e^{−γh}ξ + N(0, 1 − e^{−2γh})`, then `g' = g·exp(hξ')`.
pub fn fosi_step<R: Rng + ?Sized>(state: &PhaseState, cfg: &DiffusionConfig, h: f64, rng: &mut R) -> Result<PhaseState> {
    let z = standard_normals(rng, cfg.kind.algebra_dim());
    fosi_step_with_noise(state, cfg, h, &z)
}

fn maybe_reorth(g: &mut GroupElement, cfg: &DiffusionConfig, step: usize) {
    if let Some(k) = cfg.reorth_every {
        if step % k == 0 {
            g.reorthonormalize();
        }
    }
}

pub fn fosi_trajectory<R: Rng + ?Sized>(init: &PhaseState, cfg: &DiffusionConfig, rng: &mut R) -> Result<Trajectory> {
    cfg.validate()?;
    let h = cfg.h();
    let mut states = Vec::with_capacity(cfg.steps + 1);
    let mut times = Vec::with_capacity(cfg.steps + 1);
    states.push(init.clone());
    times.push(0.0);
    for n in 1..=cfg.steps {
        let mut next = fosi_step(states.last().unwrap(), cfg, h, rng)?;
        maybe_reorth(&mut next.g, cfg, n);
        states.push(next);
        times.push(n as f64 * h);
    }
    Ok(Trajectory { states, times })
}

/// Backward step given the score value `s` at the current state.
pub fn bsoi_update(state: &PhaseState, s: &[f64], cfg: &DiffusionConfig, h: f64, noise: Option<&[f64]>) -> Result<PhaseState> {
    let amp = (cfg.gamma * h).exp();
    let em1 = (cfg.gamma * h).exp_m1();
    let (coef, std) = match noise {
        Some(_) => (2.0 * em1, (2.0 * cfg.gamma * h).exp_m1().sqrt()),
        None => (em1, 0.0),
    };
    let xi: Vec<f64> = state
        .xi
        .coeffs()
        .iter()
        .zip(s)
        .enumerate()
        .map(|(i, (x, si))| amp * x + coef * si + noise.map_or(0.0, |z| std * z[i]))
        .collect();
    let g = group_mul(&state.g, &exp_coeffs(&cfg.kind, &xi, -h)?)?;
    Ok(PhaseState { g, xi: AlgebraVector::new(cfg.kind.clone(), xi)? })
}

fn score_at<S: Score + ?Sized>(score: &S, state: &PhaseState, t: f64) -> Result<Vec<f64>> {
    let s = score.eval(&state.g, &state.xi, t).map_err(|e| match e {
        Error::NonFinite(m) => Error::NonFinite(format!("{m} at t = {t}")),
        e => e,
    })?;
    if !s.is_finite() {
        return Err(Error::NonFinite(format!("score at t = {t}")));
    }
    Ok(s.into_coeffs())
}

/// Backward step driven by given standard-normal draws.
pub fn bsoi_step_with_noise<S: Score + ?Sized>(
    state: &PhaseState,
    score: &S,
    t: f64,
    cfg: &DiffusionConfig,
    h: f64,
    noise: &[f64],
) -> Result<PhaseState> {
    check_state(state, cfg, h)?;
    let s = score_at(score, state, t)?;
    bsoi_update(state, &s, cfg, h, Some(noise))
}

/// `ξ' = e^{γh}ξ + 2(e^{γh} − 1)s + N(0, e^{2γh} − 1)`, then `g' = g·exp(−hξ')`,
/// with `s` evaluated at backward time `t`.
pub fn bsoi_step<S: Score + ?Sized, R: Rng + ?Sized>(
    state: &PhaseState,
    score: &S,
    t: f64,
    cfg: &DiffusionConfig,
    h: f64,
    rng: &mut R,
) -> Result<PhaseState> {
    let z = standard_normals(rng, cfg.kind.algebra_dim());
    bsoi_step_with_noise(state, score, t, cfg, h, &z)
}

/// `ξ' = e^{γh}ξ + (e^{γh} − 1)s`, then `g' = g·exp(−hξ')`.
pub fn pfode_step<S: Score + ?Sized>(state: &PhaseState, score: &S, t: f64, cfg: &DiffusionConfig, h: f64) -> Result<PhaseState> {
    check_state(state, cfg, h)?;
    let s = score_at(score, state, t)?;
    bsoi_update(state, &s, cfg, h, None)
}

/// `g ∼ Haar`, `ξ ∼ N(0, I)`.
pub fn sample_prior<R: Rng + ?Sized>(cfg: &DiffusionConfig, rng: &mut R) -> PhaseState {
    let g = haar_sample(&cfg.kind, rng);
    let xi = standard_normals(rng, cfg.kind.algebra_dim());
    PhaseState { g, xi: AlgebraVector::new(cfg.kind.clone(), xi).expect("dimension from kind") }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Sde,
    Ode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleOptions {
    pub mode: SampleMode,
    /// Stop at backward time `T − ε` instead of `T`.
    pub early_stop: bool,
    /// Chains evaluated per score call.
    pub chunk: usize,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self { mode: SampleMode::Sde, early_stop: false, chunk: 4096 }
    }
}

/// Number of backward steps actually taken.
pub fn sampling_steps(cfg: &DiffusionConfig, early_stop: bool) -> usize {
    if early_stop {
        ((cfg.horizon - cfg.eps) / cfg.h()).round() as usize
    } else {
        cfg.steps
    }
}

/// Runs `n` independent chains of the learned reverse dynamics from the prior.
/// Chain `i` draws from `stream(seed, SAMPLE, i)`, so output is independent of
/// chunking and thread count.
pub fn sample<S: Score + ?Sized>(score: &S, cfg: &DiffusionConfig, n: usize, seed: u64, opts: &SampleOptions) -> Result<Vec<PhaseState>> {
    cfg.validate()?;
    if score.kind() != &cfg.kind {
        return Err(Error::KindMismatch { left: score.kind().to_string(), right: cfg.kind.to_string() });
    }
    let h = cfg.h();
    let steps = sampling_steps(cfg, opts.early_stop);
    let chunk = opts.chunk.max(1);
    let mut out = Vec::with_capacity(n);
    for lo in (0..n).step_by(chunk) {
        let hi = (lo + chunk).min(n);
        let mut chains: Vec<(PhaseState, StreamRng)> = (lo..hi)
            .map(|i| {
                let mut rng = stream(seed, tags::SAMPLE, i as u64);
                (sample_prior(cfg, &mut rng), rng)
            })
            .collect();
        let mut buf = BatchBuf::default();
        let d = cfg.kind.algebra_dim();
        for k in 0..steps {
            let t = k as f64 * h;
            buf.clear();
            for (st, _) in &chains {
                buf.push(&st.g, st.xi.coeffs(), t);
            }
            let s = score.eval_batch(&buf.view())?.s;
            if !s.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite(format!("score at t = {t}")));
            }
            let failed = std::sync::Mutex::new(None);
            par::for_each_mut(&mut chains, |i, (st, rng)| {
                let noise = match opts.mode {
                    SampleMode::Sde => Some(standard_normals(rng, d)),
                    SampleMode::Ode => None,
                };
                match bsoi_update(st, &s[d * i..d * (i + 1)], cfg, h, noise.as_deref()) {
                    Ok(mut next) => {
                        maybe_reorth(&mut next.g, cfg, k + 1);
                        *st = next;
                    }
                    Err(e) => {
                        failed.lock().unwrap().get_or_insert(e);
                    }
                }
            });
            if let Some(e) = failed.into_inner().unwrap() {
                return Err(e);
            }
        }
        out.extend(chains.into_iter().map(|(s, _)| s));
    }
    Ok(out)
}

/// Forward-simulates `n` chains from given initial states to time `t`,
/// each on its own stream.
pub fn forward_chains(inits: &[PhaseState], cfg: &DiffusionConfig, steps: usize, seed: u64, tag: u64) -> Result<Vec<PhaseState>> {
    let h = cfg.h();
    par::try_map_slice(inits, |i, init| {
        let mut rng = stream(seed, tag, i as u64);
        let mut st = init.clone();
        for k in 1..=steps {
            st = fosi_step(&st, cfg, h, &mut rng)?;
            maybe_reorth(&mut st.g, cfg, k);
        }
        Ok(st)
    })
}
