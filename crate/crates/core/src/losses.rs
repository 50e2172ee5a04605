//! Score-matching objectives and the training loop.
//!
//! Denoising score matching uses the closed-form transition law on tori;
//! implicit score matching works on any group from simulated forward paths.
//! The network is always queried at backward time `τ = T − t` for a state
//! diffused forward for time `t` (see [`DiffusionConfig::backward_time`]).

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{fosi_step, DiffusionConfig, PhaseState};
use crate::lie::{exp_coeffs, group_inv, group_mul, AlgebraVector, GroupElement, GroupKind};
use crate::net::{AdamW, ScoreModel};
use crate::par;
use crate::rng::{stream, tags, StreamRng};
use crate::score::{BatchBuf, Score, ScoreOut};
use crate::{Error, Result};

const TAU: f64 = std::f64::consts::TAU;
const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Default wrap count: `max(5, ⌈5√var/2π⌉)`.
pub fn wn_truncation(var: f64) -> usize {
    5usize.max((5.0 * var.sqrt() / TAU).ceil() as usize)
}

/// Log density of the wrapped normal `Σ_k N(x + 2πk; μ, var)`, summing
/// `2K + 1` translates centred on the one nearest `μ`.
pub fn wn_logpdf(x: f64, mu: f64, var: f64, k: Option<usize>) -> Result<f64> {
    if !(var > 0.0 && var.is_finite()) {
        return Err(Error::invalid(format!("wrapped normal variance must be positive, got {var}")));
    }
    let k = k.unwrap_or_else(|| wn_truncation(var)) as i64;
    let c = ((mu - x) / TAU).round() as i64;
    let terms: Vec<f64> = (c - k..=c + k).map(|j| -0.5 * (x + TAU * j as f64 - mu).powi(2) / var).collect();
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = terms.iter().map(|t| (t - m).exp()).sum();
    Ok(m + s.ln() - 0.5 * (TAU * var).ln())
}

/// Posterior-weighted `Σ_k w_k (x + 2πk − μ)/var`, the derivative of
/// [`wn_logpdf`] with respect to `μ`.
pub fn wn_dlogpdf_dmu(x: f64, mu: f64, var: f64) -> f64 {
    let k = wn_truncation(var) as i64;
    let c = ((mu - x) / TAU).round() as i64;
    let r: Vec<f64> = (c - k..=c + k).map(|j| x + TAU * j as f64 - mu).collect();
    let m = r.iter().map(|r| -0.5 * r * r / var).fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for r in r {
        let w = (-0.5 * r * r / var - m).exp();
        num += w * r;
        den += w;
    }
    num / (den * var)
}

/// Per-coordinate conditional law of `(ξ_t, Y_t)` given `ξ_0`, where
/// `Y_t = ∫ξ ds` is the unwrapped displacement in coefficient units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTransition {
    pub t: f64,
    pub gamma: f64,
    /// `μ_ξ = mu_xi_coeff · ξ_0`.
    pub mu_xi_coeff: f64,
    pub var_xi: f64,
    /// `μ_Y = mu_g_coeff · (ξ_t + ξ_0)`.
    pub mu_g_coeff: f64,
    pub var_g: f64,
}

fn var1(t: f64) -> f64 {
    if t < 1e-2 {
        let t3 = t * t * t;
        t3 / 6.0 - t3 * t * t / 60.0 + 17.0 * t3 * t3 * t / 10080.0
    } else {
        2.0 * t - 4.0 * (0.5 * t).tanh()
    }
}

pub fn conditional_params(t: f64, gamma: f64) -> Result<ConditionalTransition> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("transition time must be positive, got {t}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    let s = gamma * t;
    Ok(ConditionalTransition {
        t,
        gamma,
        mu_xi_coeff: (-s).exp(),
        var_xi: -(-2.0 * s).exp_m1(),
        mu_g_coeff: (0.5 * s).tanh() / gamma,
        var_g: var1(s) / (gamma * gamma),
    })
}

fn require_torus(kind: &GroupKind) -> Result<()> {
    if kind.is_abelian() {
        Ok(())
    } else {
        Err(Error::NotAbelian(kind.to_string()))
    }
}

/// Draws `(ξ_t, Y_t)` per coordinate from the exact conditional law.
pub fn dsm_sample_lifted<R: Rng + ?Sized>(xi0: &[f64], tr: &ConditionalTransition, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let sx = tr.var_xi.sqrt();
    let sg = tr.var_g.sqrt();
    let mut xt = Vec::with_capacity(xi0.len());
    let mut y = Vec::with_capacity(xi0.len());
    for &x0 in xi0 {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let x = tr.mu_xi_coeff * x0 + sx * z1;
        xt.push(x);
        y.push(tr.mu_g_coeff * (x + x0) + sg * z2);
    }
    (xt, y)
}

/// Exact sample of `(g_t, ξ_t)` given `(g_0, ξ_0)` on a torus.
pub fn dsm_sample<R: Rng + ?Sized>(
    g0: &GroupElement,
    xi0: &AlgebraVector,
    t: f64,
    gamma: f64,
    rng: &mut R,
) -> Result<(GroupElement, AlgebraVector)> {
    let kind = g0.kind();
    require_torus(kind)?;
    let tr = conditional_params(t, gamma)?;
    let (xt, y) = dsm_sample_lifted(xi0.coeffs(), &tr, rng);
    let gt = group_mul(g0, &exp_coeffs(kind, &y, 1.0)?)?;
    Ok((gt, AlgebraVector::new(kind.clone(), xt)?))
}

fn relative_angles(g_t: &GroupElement, g0: &GroupElement) -> Result<Vec<f64>> {
    group_mul(&group_inv(g0), g_t)?.torus_angles()
}

/// `∇_{ξ_t} log p_{t|0}(g_t, ξ_t | g_0, ξ_0)` in algebra coefficients.
pub fn dsm_target(
    g_t: &GroupElement,
    xi_t: &AlgebraVector,
    g0: &GroupElement,
    xi0: &AlgebraVector,
    t: f64,
    gamma: f64,
) -> Result<AlgebraVector> {
    require_torus(g_t.kind())?;
    let tr = conditional_params(t, gamma)?;
    let x = relative_angles(g_t, g0)?;
    let target = dsm_target_coords(&x, xi_t.coeffs(), xi0.coeffs(), &tr);
    AlgebraVector::new(g_t.kind().clone(), target)
}

fn dsm_target_coords(x: &[f64], xt: &[f64], x0: &[f64], tr: &ConditionalTransition) -> Vec<f64> {
    let a = INV_SQRT2;
    let var_a = a * a * tr.var_g;
    (0..x.len())
        .map(|i| {
            let mu = a * tr.mu_g_coeff * (xt[i] + x0[i]);
            let w = wn_dlogpdf_dmu(x[i], mu, var_a);
            a * tr.mu_g_coeff * w + (tr.mu_xi_coeff * x0[i] - xt[i]) / tr.var_xi
        })
        .collect()
}

/// `log p_{t|0}` up to a constant in `ξ_t`: normal momentum times wrapped
/// normal angles.
pub fn log_transition(
    g_t: &GroupElement,
    xi_t: &AlgebraVector,
    g0: &GroupElement,
    xi0: &AlgebraVector,
    t: f64,
    gamma: f64,
) -> Result<f64> {
    require_torus(g_t.kind())?;
    let tr = conditional_params(t, gamma)?;
    let x = relative_angles(g_t, g0)?;
    let a = INV_SQRT2;
    let mut acc = 0.0;
    for i in 0..x.len() {
        let (xt, x0) = (xi_t.coeffs()[i], xi0.coeffs()[i]);
        acc += -0.5 * (xt - tr.mu_xi_coeff * x0).powi(2) / tr.var_xi - 0.5 * (TAU * tr.var_xi).ln();
        acc += wn_logpdf(x[i], a * tr.mu_g_coeff * (xt + x0), a * a * tr.var_g, None)?;
    }
    Ok(acc)
}

/// Network inputs plus regression targets.
#[derive(Clone, Debug, Default)]
pub struct DsmBatch {
    pub inputs: BatchBuf,
    pub targets: Vec<f64>,
}

/// Draws `n` training pairs: data from the empirical measure, `ξ_0 ∼ N(0, I)`,
/// `t ∼ U[ε, T]`, then an exact forward transition.
pub fn make_dsm_batch<R: Rng + ?Sized>(data: &[GroupElement], cfg: &DiffusionConfig, n: usize, rng: &mut R) -> Result<DsmBatch> {
    require_torus(&cfg.kind)?;
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let d = cfg.kind.algebra_dim();
    let mut out = DsmBatch::default();
    for _ in 0..n {
        let g0 = &data[rng.random_range(0..data.len())];
        let xi0 = AlgebraVector::new(cfg.kind.clone(), (0..d).map(|_| rng.sample(StandardNormal)).collect())?;
        let t = rng.random_range(cfg.eps..=cfg.horizon);
        let (gt, xt) = dsm_sample(g0, &xi0, t, cfg.gamma, rng)?;
        let target = dsm_target(&gt, &xt, g0, &xi0, t, cfg.gamma)?;
        out.inputs.push(&gt, xt.coeffs(), cfg.backward_time(t));
        out.targets.extend_from_slice(target.coeffs());
    }
    Ok(out)
}

/// Mean `‖target − s‖²`.
pub fn dsm_loss<S: Score + ?Sized>(score: &S, batch: &DsmBatch) -> Result<f64> {
    let out = score.eval_batch(&batch.inputs.view())?;
    let n = batch.inputs.tau.len().max(1) as f64;
    Ok(out.s.iter().zip(&batch.targets).map(|(s, y)| (s - y).powi(2)).sum::<f64>() / n)
}

pub fn dsm_loss_and_grad(model: &ScoreModel, batch: &DsmBatch) -> Result<(f64, Vec<f64>)> {
    let n = batch.inputs.tau.len().max(1) as f64;
    let d = model.algebra_dim();
    model.value_and_grad(&batch.inputs.view(), |lo, out: &ScoreOut, sb, _| {
        let y = &batch.targets[d * lo..d * lo + out.s.len()];
        let mut v = 0.0;
        for i in 0..out.s.len() {
            let r = out.s[i] - y[i];
            v += r * r / n;
            sb[i] = 2.0 * r / n;
        }
        v
    })
}

/// How `div_ξ s` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type", content = "probes")]
pub enum Divergence {
    /// One directional derivative per basis vector.
    Exact,
    /// Rademacher probes.
    Hutchinson(usize),
}

impl Divergence {
    /// Exact up to `d = 16`, Hutchinson above.
    pub fn auto(d: usize, probes: usize) -> Self {
        if d <= 16 {
            Divergence::Exact
        } else {
            Divergence::Hutchinson(probes.max(1))
        }
    }

    pub fn probes(&self, d: usize) -> usize {
        match self {
            Divergence::Exact => d,
            Divergence::Hutchinson(p) => *p,
        }
    }

    /// Weight of each probe term in the divergence estimate.
    pub fn weight(&self) -> f64 {
        match self {
            Divergence::Exact => 1.0,
            Divergence::Hutchinson(p) => 1.0 / *p as f64,
        }
    }
}

/// Network inputs with probe directions attached.
#[derive(Clone, Debug)]
pub struct IsmBatch {
    pub inputs: BatchBuf,
    pub div: Divergence,
}

impl IsmBatch {
    pub fn from_states<R: Rng + ?Sized>(states: &[(PhaseState, f64)], div: Divergence, rng: &mut R) -> Result<Self> {
        let mut inputs = BatchBuf::default();
        let kind = match states.first() {
            Some((s, _)) => s.kind().clone(),
            None => return Err(Error::invalid("empty ISM batch")),
        };
        let d = kind.algebra_dim();
        let p = div.probes(d);
        if p == 0 {
            return Err(Error::invalid("at least one probe is required"));
        }
        inputs.probes = p;
        for (s, tau) in states {
            inputs.push(&s.g, s.xi.coeffs(), *tau);
            match div {
                Divergence::Exact => {
                    for q in 0..d {
                        inputs.tangents.extend((0..d).map(|i| if i == q { 1.0 } else { 0.0 }));
                    }
                }
                Divergence::Hutchinson(_) => {
                    inputs.tangents.extend((0..d * p).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }));
                }
            }
        }
        Ok(Self { inputs, div })
    }

    pub fn len(&self) -> usize {
        self.inputs.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.tau.is_empty()
    }
}

/// Per-sample `‖s‖² + 2 div_ξ s`.
pub fn ism_terms<S: Score + ?Sized>(score: &S, batch: &IsmBatch) -> Result<Vec<f64>> {
    let out = score.eval_batch(&batch.inputs.view())?;
    let d = score.algebra_dim();
    let p = batch.inputs.probes;
    let w = batch.div.weight();
    Ok((0..batch.len())
        .map(|b| {
            let s = &out.s[d * b..d * (b + 1)];
            let sd = &out.s_dot[d * p * b..d * p * (b + 1)];
            let v = &batch.inputs.tangents[d * p * b..d * p * (b + 1)];
            let div: f64 = v.iter().zip(sd).map(|(a, b)| a * b).sum::<f64>() * w;
            s.iter().map(|x| x * x).sum::<f64>() + 2.0 * div
        })
        .collect())
}

/// Mean of [`ism_terms`] with its standard error.
pub fn ism_loss<S: Score + ?Sized>(score: &S, batch: &IsmBatch) -> Result<(f64, f64)> {
    let v = ism_terms(score, batch)?;
    Ok(mean_se(&v))
}

pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

pub fn ism_loss_and_grad(model: &ScoreModel, batch: &IsmBatch) -> Result<(f64, Vec<f64>)> {
    let n = batch.len().max(1) as f64;
    let d = model.algebra_dim();
    let p = batch.inputs.probes;
    let w = batch.div.weight();
    let tangents = &batch.inputs.tangents;
    model.value_and_grad(&batch.inputs.view(), |lo, out, sb, sdb| {
        let v = &tangents[d * p * lo..d * p * lo + out.s_dot.len()];
        let mut acc = 0.0;
        for i in 0..out.s.len() {
            acc += out.s[i] * out.s[i] / n;
            sb[i] = 2.0 * out.s[i] / n;
        }
        for i in 0..out.s_dot.len() {
            acc += 2.0 * w * v[i] * out.s_dot[i] / n;
            sdb[i] = 2.0 * w * v[i] / n;
        }
        acc
    })
}

/// Simulates forward paths from data and collects `(state, τ)` pairs at
/// `pairs` uniformly drawn grid times in `[ε, T]` per path.
pub fn simulate_pairs(
    data: &[GroupElement],
    cfg: &DiffusionConfig,
    paths: usize,
    pairs: usize,
    seed: u64,
    iteration: u64,
) -> Result<Vec<(PhaseState, f64)>> {
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let h = cfg.h();
    let first = ((cfg.eps / h).ceil() as usize).clamp(1, cfg.steps);
    let d = cfg.kind.algebra_dim();
    let per_path = par::try_map_indexed(paths, |j| {
        let mut rng = stream(seed, tags::TRAIN, (iteration << 20) | j as u64);
        let g0 = data[rng.random_range(0..data.len())].clone();
        let xi0 = AlgebraVector::new(cfg.kind.clone(), (0..d).map(|_| rng.sample(StandardNormal)).collect())?;
        let mut idx: Vec<usize> = (0..pairs).map(|_| rng.random_range(first..=cfg.steps)).collect();
        idx.sort_unstable();
        let mut st = PhaseState::new(g0, xi0)?;
        let mut out = Vec::with_capacity(pairs);
        let mut n = 0;
        for &target in &idx {
            while n < target {
                st = fosi_step(&st, cfg, h, &mut rng)?;
                n += 1;
                if let Some(k) = cfg.reorth_every {
                    if n % k == 0 {
                        st.g.reorthonormalize();
                    }
                }
            }
            out.push((st.clone(), cfg.backward_time(n as f64 * h)));
        }
        Ok(out)
    })?;
    Ok(per_path.into_iter().flatten().collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Denoising on tori, implicit otherwise.
    Auto,
    Dsm,
    Ism,
}

impl Objective {
    pub fn resolve(self, kind: &GroupKind) -> Result<Objective> {
        match self {
            Objective::Auto if kind.is_abelian() => Ok(Objective::Dsm),
            Objective::Auto => Ok(Objective::Ism),
            Objective::Dsm => require_torus(kind).map(|_| Objective::Dsm),
            Objective::Ism => Ok(Objective::Ism),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iters: u64,
    pub batch: usize,
    pub objective: Objective,
    /// Hutchinson probes when the divergence is not computed exactly.
    pub probes: usize,
    /// Force Hutchinson probes even when `d ≤ 16`.
    pub force_hutchinson: bool,
    /// `(state, t)` pairs drawn from each simulated path.
    pub pairs_per_path: usize,
    /// Grid size of the simulated paths; defaults to the diffusion grid.
    pub sim_steps: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iters: 1000,
            batch: 1024,
            objective: Objective::Auto,
            probes: 4,
            force_hutchinson: false,
            pairs_per_path: 8,
            sim_steps: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: u64,
    pub wall_time_s: f64,
    pub loss: f64,
    pub lr: f64,
}

/// Loss and gradient for iteration `iter`, drawn from `stream(seed, TRAIN, iter)`.
pub fn training_step_grad(
    model: &ScoreModel,
    data: &[GroupElement],
    dcfg: &DiffusionConfig,
    tcfg: &TrainConfig,
    objective: Objective,
    iter: u64,
) -> Result<(f64, Vec<f64>)> {
    let mut rng: StreamRng = stream(tcfg.seed, tags::TRAIN, iter);
    match objective {
        Objective::Dsm => {
            let b = make_dsm_batch(data, dcfg, tcfg.batch, &mut rng)?;
            dsm_loss_and_grad(model, &b)
        }
        _ => {
            let mut sim = dcfg.clone();
            if let Some(n) = tcfg.sim_steps {
                sim.steps = n;
            }
            let per = tcfg.pairs_per_path.max(1);
            let paths = tcfg.batch.div_ceil(per);
            let mut pairs = simulate_pairs(data, &sim, paths, per, tcfg.seed, iter)?;
            pairs.truncate(tcfg.batch);
            let d = dcfg.kind.algebra_dim();
            let div = if tcfg.force_hutchinson {
                Divergence::Hutchinson(tcfg.probes.max(1))
            } else {
                Divergence::auto(d, tcfg.probes)
            };
            let b = IsmBatch::from_states(&pairs, div, &mut rng)?;
            ism_loss_and_grad(model, &b)
        }
    }
}

/// Runs iterations `start..tcfg.iters`. `on_step` sees every record along
/// with the updated model and optimizer.
pub fn train<F>(
    model: &mut ScoreModel,
    opt: &mut AdamW,
    data: &[GroupElement],
    dcfg: &DiffusionConfig,
    tcfg: &TrainConfig,
    start: u64,
    mut on_step: F,
) -> Result<Vec<LossRecord>>
where
    F: FnMut(&LossRecord, &ScoreModel, &AdamW) -> Result<()>,
{
    dcfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    if model.kind() != &dcfg.kind {
        return Err(Error::KindMismatch { left: model.kind().to_string(), right: dcfg.kind.to_string() });
    }
    if tcfg.batch == 0 {
        return Err(Error::invalid("batch must be >= 1"));
    }
    let objective = tcfg.objective.resolve(&dcfg.kind)?;
    let clock = Instant::now();
    let mut log = Vec::new();
    for iter in start..tcfg.iters {
        let (loss, grad) = training_step_grad(model, data, dcfg, tcfg, objective, iter).map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("{m} at iteration {iter}")),
            e => e,
        })?;
        let lr = opt.lr();
        opt.update(model.params_mut(), &grad)?;
        let rec = LossRecord { iteration: iter, wall_time_s: clock.elapsed().as_secs_f64(), loss, lr };
        on_step(&rec, model, opt)?;
        log.push(rec);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::haar_sample;
    use crate::score::LinearScore;

    #[test]
    fn wrapped_normal_limits() {
        let lp = wn_logpdf(0.3, 1.0, 1e4, None).unwrap();
        assert!((lp + TAU.ln()).abs() < 1e-6, "{lp}");
        let lp = wn_logpdf(0.7, 0.7, 0.01, None).unwrap();
        assert!((lp + 0.5 * (TAU * 0.01).ln()).abs() < 1e-10);
        assert!(wn_logpdf(0.0, 0.0, 0.0, None).is_err());
    }

    #[test]
    fn wrapped_normal_integrates_to_one() {
        for var in [0.1, 1.0, 10.0] {
            let m = 10_000;
            let s: f64 = (0..m).map(|i| wn_logpdf((i as f64 + 0.5) * TAU / m as f64, 1.3, var, None).unwrap().exp()).sum();
            assert!((s * TAU / m as f64 - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn conditional_values_at_unit_time() {
        let c = conditional_params(1.0, 1.0).unwrap();
        assert!((c.var_xi - 0.864665).abs() < 1e-6);
        assert!((c.var_g - 0.151531).abs() < 1e-6);
        assert!((c.mu_g_coeff - 0.462117).abs() < 1e-6);
        assert!(conditional_params(0.0, 1.0).is_err());
    }

    #[test]
    fn small_time_variance_is_cubic() {
        for t in [1e-4, 5e-3, 9.9e-3, 1e-2, 2e-2] {
            let v = conditional_params(t, 1.0).unwrap().var_g;
            let want = 2.0 * t - 4.0 * (0.5 * t).tanh();
            assert!((v - t * t * t / 6.0).abs() < 1e-3 * v);
            if t >= 1e-2 {
                assert!((v - want).abs() < 1e-9 * v);
            }
        }
        let a = var1(1e-2 - 1e-15);
        let b = var1(1e-2);
        assert!((a - b).abs() < 1e-10 * b);
    }

    #[test]
    fn gamma_rescaling() {
        let a = conditional_params(0.5, 2.0).unwrap();
        let b = conditional_params(1.0, 1.0).unwrap();
        assert!((a.var_xi - b.var_xi).abs() < 1e-15);
        assert!((a.var_g - b.var_g / 4.0).abs() < 1e-15);
        assert!((a.mu_g_coeff - b.mu_g_coeff / 2.0).abs() < 1e-15);
    }

    #[test]
    fn target_at_stationarity_is_minus_xi() {
        let kind = GroupKind::TorusPower(2);
        let mut rng = stream(0, 0, 0);
        let g0 = haar_sample(&kind, &mut rng);
        let xi0 = AlgebraVector::new(kind.clone(), vec![0.5, -0.2]).unwrap();
        let (gt, xt) = dsm_sample(&g0, &xi0, 200.0, 1.0, &mut rng).unwrap();
        let tg = dsm_target(&gt, &xt, &g0, &xi0, 200.0, 1.0).unwrap();
        for (a, b) in tg.coeffs().iter().zip(xt.coeffs()) {
            assert!((a + b).abs() < 1e-8);
        }
    }

    #[test]
    fn target_matches_finite_difference() {
        let kind = GroupKind::TorusPower(3);
        let mut rng = stream(1, 0, 0);
        for &t in &[0.05, 0.5, 2.0] {
            let g0 = haar_sample(&kind, &mut rng);
            let xi0 = AlgebraVector::new(kind.clone(), vec![0.3, -1.1, 0.8]).unwrap();
            let (gt, xt) = dsm_sample(&g0, &xi0, t, 1.0, &mut rng).unwrap();
            let tg = dsm_target(&gt, &xt, &g0, &xi0, t, 1.0).unwrap();
            for i in 0..3 {
                let e = 1e-5;
                let mut p = xt.clone();
                p.coeffs_mut()[i] += e;
                let mut m = xt.clone();
                m.coeffs_mut()[i] -= e;
                let fd = (log_transition(&gt, &p, &g0, &xi0, t, 1.0).unwrap() - log_transition(&gt, &m, &g0, &xi0, t, 1.0).unwrap()) / (2.0 * e);
                assert!((fd - tg.coeffs()[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{t} {i}: {fd} vs {}", tg.coeffs()[i]);
            }
        }
    }

    #[test]
    fn symmetric_point_has_no_wrap_term() {
        let tr = conditional_params(1.0, 1.0).unwrap();
        let (xt, x0) = (0.4, -0.1);
        let mu = INV_SQRT2 * tr.mu_g_coeff * (xt + x0);
        let t = dsm_target_coords(&[mu], &[xt], &[x0], &tr);
        assert!((t[0] - (tr.mu_xi_coeff * x0 - xt) / tr.var_xi).abs() < 1e-12);
    }

    #[test]
    fn torus_product_factorizes() {
        let k2 = GroupKind::TorusPower(2);
        let k1 = GroupKind::TorusPower(1);
        let mut rng = stream(2, 0, 0);
        let g0 = haar_sample(&k2, &mut rng);
        let xi0 = AlgebraVector::new(k2.clone(), vec![0.2, 0.9]).unwrap();
        let (gt, xt) = dsm_sample(&g0, &xi0, 0.7, 1.0, &mut rng).unwrap();
        let full = dsm_target(&gt, &xt, &g0, &xi0, 0.7, 1.0).unwrap();
        let a0 = g0.torus_angles().unwrap();
        let at = gt.torus_angles().unwrap();
        for i in 0..2 {
            let g0i = GroupElement::from_torus_angles(&k1, &[a0[i]]).unwrap();
            let gti = GroupElement::from_torus_angles(&k1, &[at[i]]).unwrap();
            let x0i = AlgebraVector::new(k1.clone(), vec![xi0.coeffs()[i]]).unwrap();
            let xti = AlgebraVector::new(k1.clone(), vec![xt.coeffs()[i]]).unwrap();
            let one = dsm_target(&gti, &xti, &g0i, &x0i, 0.7, 1.0).unwrap();
            assert!((one.coeffs()[0] - full.coeffs()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn non_torus_is_rejected() {
        let kind = GroupKind::SpecialOrthogonal(3);
        let g = GroupElement::identity(&kind);
        let xi = AlgebraVector::zeros(&kind);
        assert!(matches!(dsm_sample(&g, &xi, 1.0, 1.0, &mut stream(0, 0, 0)), Err(Error::NotAbelian(_))));
    }

    #[test]
    fn zero_score_ism_is_zero() {
        let kind = GroupKind::SpecialOrthogonal(3);
        let cfg = DiffusionConfig::new(kind.clone());
        let states: Vec<_> = (0..10).map(|i| (crate::dynamics::sample_prior(&cfg, &mut stream(i, 0, 0)), 1.0)).collect();
        let b = IsmBatch::from_states(&states, Divergence::Hutchinson(3), &mut stream(0, 1, 0)).unwrap();
        let z = crate::score::ZeroScore { kind };
        assert_eq!(ism_loss(&z, &b).unwrap().0, 0.0);
    }

    #[test]
    fn rademacher_probe_sign_symmetry() {
        let kind = GroupKind::SpecialOrthogonal(3);
        let a = nalgebra::DMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64 - 4.0);
        let s = LinearScore::new(kind.clone(), a.clone()).unwrap();
        let cfg = DiffusionConfig::new(kind);
        let st = crate::dynamics::sample_prior(&cfg, &mut stream(0, 0, 0));
        let mut b = IsmBatch::from_states(&[(st, 1.0)], Divergence::Hutchinson(1), &mut stream(0, 1, 0)).unwrap();
        let v1 = ism_terms(&s, &b).unwrap()[0];
        b.inputs.tangents.iter_mut().for_each(|x| *x = -*x);
        assert_eq!(v1, ism_terms(&s, &b).unwrap()[0]);
    }
}
