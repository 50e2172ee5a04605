//! Score network with hand-written forward and reverse mode.
//!
//! `s(g, ξ, τ) = head(skip_k ∘ … ∘ skip_1(GN(h_g + h_ξ + h_τ)))` where
//! `h_g`, `h_ξ` are two-layer SiLU MLPs on the flattened matrix and the
//! momentum coefficients, `h_τ` is a linear map of a sinusoidal embedding,
//! GN is a single-group norm with affine parameters and
//! `skip_l(y) = y + SiLU(W_l y + b_l)`.
//!
//! Forward-mode tangents in `ξ` are threaded alongside the primal pass, and
//! the backward pass accepts cotangents for both, which gives parameter
//! gradients of any loss built from `s` and `(∂s/∂ξ)·v`.

mod checkpoint;
mod gemm;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use optim::{cosine_lr, AdamW, AdamWConfig};

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::lie::{AlgebraVector, GroupElement, GroupKind};
use crate::par;
use crate::score::{Batch, BatchBuf, Score, ScoreOut};
use crate::{Error, Result};

/// Samples per shard; shards run in parallel and reduce in a fixed order.
pub const SHARD: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub hidden: usize,
    pub depth: usize,
    /// Multiplies `τ` before the sinusoidal embedding.
    pub time_scale: f64,
    pub gn_eps: f64,
}

impl NetConfig {
    pub fn for_kind(kind: &GroupKind) -> Self {
        Self {
            hidden: if kind.algebra_dim() <= 10 { 256 } else { 512 },
            depth: 3,
            time_scale: 10.0,
            gn_eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden < 2 || self.hidden % 2 != 0 {
            return Err(Error::invalid(format!("hidden width must be even and >= 2, got {}", self.hidden)));
        }
        if self.depth == 0 {
            return Err(Error::invalid("depth must be >= 1"));
        }
        if !(self.time_scale.is_finite() && self.time_scale > 0.0) {
            return Err(Error::invalid("time_scale must be positive"));
        }
        if !(self.gn_eps.is_finite() && self.gn_eps > 0.0) {
            return Err(Error::invalid("gn_eps must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

impl Dense {
    fn w<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.w..self.w + self.fan_in * self.fan_out]
    }
    fn b<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.b..self.b + self.fan_out]
    }
    fn parts_mut<'a>(&self, p: &'a mut [f64]) -> (&'a mut [f64], &'a mut [f64]) {
        let (head, tail) = p.split_at_mut(self.b);
        (&mut head[self.w..self.w + self.fan_in * self.fan_out], &mut tail[..self.fan_out])
    }
}

#[derive(Clone, Debug)]
struct Layout {
    g1: Dense,
    g2: Dense,
    x1: Dense,
    x2: Dense,
    t: Dense,
    gn_scale: usize,
    gn_shift: usize,
    skip: Vec<Dense>,
    head: Dense,
    len: usize,
}

impl Layout {
    fn new(f: usize, d: usize, h: usize, k: usize) -> Self {
        let mut at = 0;
        let mut dense = |fan_in: usize, fan_out: usize| {
            let l = Dense { w: at, b: at + fan_in * fan_out, fan_in, fan_out };
            at += fan_in * fan_out + fan_out;
            l
        };
        let g1 = dense(f, h);
        let g2 = dense(h, h);
        let x1 = dense(d, h);
        let x2 = dense(h, h);
        let t = dense(h, h);
        let skip: Vec<Dense> = (0..k).map(|_| dense(h, h)).collect();
        let head = dense(h, d);
        let gn_scale = at;
        let gn_shift = at + h;
        Self { g1, g2, x1, x2, t, gn_scale, gn_shift, skip, head, len: at + 2 * h }
    }

    fn hidden_layers(&self) -> Vec<Dense> {
        let mut v = vec![self.g1, self.g2, self.x1, self.x2, self.t];
        v.extend(self.skip.iter().copied());
        v
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_d1(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

#[inline]
fn silu_d2(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 - s) * (2.0 + z * (1.0 - 2.0 * s))
}

/// Intermediates of one shard's forward pass.
struct Tape {
    n: usize,
    p: usize,
    zg1: Vec<f64>,
    ag1: Vec<f64>,
    zx1: Vec<f64>,
    ax1: Vec<f64>,
    emb: Vec<f64>,
    nrm: Vec<f64>,
    sig: Vec<f64>,
    z: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    zx1_d: Vec<f64>,
    ax1_d: Vec<f64>,
    c_d: Vec<f64>,
    nrm_d: Vec<f64>,
    sig_d: Vec<f64>,
    z_d: Vec<Vec<f64>>,
    y_d: Vec<Vec<f64>>,
    out: ScoreOut,
}

/// The score network `s_θ`.
#[derive(Clone, Debug)]
pub struct ScoreModel {
    kind: GroupKind,
    cfg: NetConfig,
    layout: Layout,
    params: Vec<f64>,
    freqs: Vec<f64>,
    sequential: bool,
}

impl ScoreModel {
    /// Uniform `±√(1/fan_in)` initialization with a zero output head.
    pub fn new<R: Rng + ?Sized>(kind: GroupKind, cfg: NetConfig, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(kind, cfg)?;
        for l in m.layout.hidden_layers() {
            let a = (1.0 / l.fan_in as f64).sqrt();
            let u = Uniform::new_inclusive(-a, a).expect("finite bound");
            let (w, b) = l.parts_mut(&mut m.params);
            w.iter_mut().chain(b.iter_mut()).for_each(|x| *x = u.sample(rng));
        }
        let h = m.cfg.hidden;
        m.params[m.layout.gn_scale..m.layout.gn_scale + h].fill(1.0);
        Ok(m)
    }

    /// All parameters zero.
    pub fn zeros(kind: GroupKind, cfg: NetConfig) -> Result<Self> {
        kind.validate()?;
        cfg.validate()?;
        let h = cfg.hidden;
        let layout = Layout::new(kind.feature_dim(), kind.algebra_dim(), h, cfg.depth);
        let freqs = (0..h / 2).map(|j| 10000f64.powf(-2.0 * j as f64 / h as f64)).collect();
        Ok(Self { params: vec![0.0; layout.len], kind, cfg, layout, freqs, sequential: false })
    }

    pub fn from_params(kind: GroupKind, cfg: NetConfig, params: Vec<f64>) -> Result<Self> {
        let mut m = Self::zeros(kind, cfg)?;
        if params.len() != m.params.len() {
            return Err(Error::DimensionMismatch { expected: m.params.len(), got: params.len() });
        }
        m.params = params;
        Ok(m)
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Forces shard evaluation onto the calling thread.
    pub fn set_sequential(&mut self, sequential: bool) {
        self.sequential = sequential;
    }

    /// Range of the output head weights and bias within [`Self::params`].
    pub fn head_range(&self) -> std::ops::Range<usize> {
        let h = self.layout.head;
        h.w..h.b + h.fan_out
    }

    /// `h_g + h_ξ + h_τ` for one sample.
    pub fn embed(&self, g: &GroupElement, xi: &AlgebraVector, tau: f64) -> Result<Vec<f64>> {
        let mut buf = BatchBuf::default();
        buf.push(g, xi.coeffs(), tau);
        let b = buf.view();
        b.check(&self.kind)?;
        let h = self.cfg.hidden;
        let mut u = vec![0.0; h];
        let (mut zg, mut ag, mut zx, mut ax, mut emb) = (vec![0.0; h], vec![0.0; h], vec![0.0; h], vec![0.0; h], vec![0.0; h]);
        self.embed_into(&b, &mut zg, &mut ag, &mut zx, &mut ax, &mut emb, &mut u);
        Ok(u)
    }

    fn time_embedding(&self, tau: &[f64], emb: &mut [f64]) {
        let h = self.cfg.hidden;
        let half = h / 2;
        for (col, &t) in emb.chunks_exact_mut(h).zip(tau) {
            let x = t * self.cfg.time_scale;
            for (j, w) in self.freqs.iter().enumerate() {
                let (s, c) = (w * x).sin_cos();
                col[j] = s;
                col[half + j] = c;
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn embed_into(
        &self,
        b: &Batch<'_>,
        zg1: &mut [f64],
        ag1: &mut [f64],
        zx1: &mut [f64],
        ax1: &mut [f64],
        emb: &mut [f64],
        u: &mut [f64],
    ) {
        let p = &self.params;
        let l = &self.layout;
        let n = b.len();
        let mlp = |d1: Dense, d2: Dense, x: &[f64], z: &mut [f64], a: &mut [f64], u: &mut [f64], beta: f64| {
            gemm::forward(d1.w(p), d1.fan_in, d1.fan_out, x, n, z);
            gemm::add_bias(z, d1.b(p));
            for (a, z) in a.iter_mut().zip(z.iter()) {
                *a = silu(*z);
            }
            if beta == 0.0 {
                gemm::forward(d2.w(p), d2.fan_in, d2.fan_out, a, n, u);
            } else {
                let mut tmp = vec![0.0; u.len()];
                gemm::forward(d2.w(p), d2.fan_in, d2.fan_out, a, n, &mut tmp);
                u.iter_mut().zip(&tmp).for_each(|(u, t)| *u += t);
            }
            gemm::add_bias(u, d2.b(p));
        };
        mlp(l.g1, l.g2, b.g, zg1, ag1, u, 0.0);
        mlp(l.x1, l.x2, b.xi, zx1, ax1, u, 1.0);
        self.time_embedding(b.tau, emb);
        let mut tmp = vec![0.0; u.len()];
        gemm::forward(l.t.w(p), l.t.fan_in, l.t.fan_out, emb, n, &mut tmp);
        gemm::add_bias(&mut tmp, l.t.b(p));
        u.iter_mut().zip(&tmp).for_each(|(u, t)| *u += t);
    }

    fn forward_shard(&self, b: &Batch<'_>) -> Result<Tape> {
        let h = self.cfg.hidden;
        let d = self.kind.algebra_dim();
        let k = self.cfg.depth;
        let n = b.len();
        let p = b.probes();
        let np = n * p;
        let params = &self.params;
        let l = &self.layout;

        let mut t = Tape {
            n,
            p,
            zg1: vec![0.0; h * n],
            ag1: vec![0.0; h * n],
            zx1: vec![0.0; h * n],
            ax1: vec![0.0; h * n],
            emb: vec![0.0; h * n],
            nrm: vec![0.0; h * n],
            sig: vec![0.0; n],
            z: Vec::with_capacity(k),
            y: Vec::with_capacity(k + 1),
            zx1_d: vec![0.0; h * np],
            ax1_d: vec![0.0; h * np],
            c_d: vec![0.0; h * np],
            nrm_d: vec![0.0; h * np],
            sig_d: vec![0.0; np],
            z_d: Vec::with_capacity(k),
            y_d: Vec::with_capacity(k + 1),
            out: ScoreOut::default(),
        };
        let mut u = vec![0.0; h * n];
        self.embed_into(b, &mut t.zg1, &mut t.ag1, &mut t.zx1, &mut t.ax1, &mut t.emb, &mut u);

        let mut u_d = vec![0.0; h * np];
        if let Some((v, _)) = b.tangents {
            gemm::forward(l.x1.w(params), d, h, v, np, &mut t.zx1_d);
            for j in 0..np {
                let zc = &t.zx1[h * (j / p)..h * (j / p + 1)];
                for i in 0..h {
                    t.ax1_d[h * j + i] = silu_d1(zc[i]) * t.zx1_d[h * j + i];
                }
            }
            gemm::forward(l.x2.w(params), h, h, &t.ax1_d, np, &mut u_d);
        }

        let eps = self.cfg.gn_eps;
        let hf = h as f64;
        for s in 0..n {
            let uc = &u[h * s..h * (s + 1)];
            let mean = uc.iter().sum::<f64>() / hf;
            let var = uc.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / hf;
            let sigma = (var + eps).sqrt();
            t.sig[s] = sigma;
            let nc = &mut t.nrm[h * s..h * (s + 1)];
            for i in 0..h {
                nc[i] = (uc[i] - mean) / sigma;
            }
            for q in 0..p {
                let j = s * p + q;
                let ud = &u_d[h * j..h * (j + 1)];
                let md = ud.iter().sum::<f64>() / hf;
                let cd = &mut t.c_d[h * j..h * (j + 1)];
                for i in 0..h {
                    cd[i] = ud[i] - md;
                }
                let sd = nc.iter().zip(cd.iter()).map(|(a, b)| a * b).sum::<f64>() / hf;
                t.sig_d[j] = sd;
                let nd = &mut t.nrm_d[h * j..h * (j + 1)];
                for i in 0..h {
                    nd[i] = (cd[i] - nc[i] * sd) / sigma;
                }
            }
        }
        let scale = &params[l.gn_scale..l.gn_scale + h];
        let shift = &params[l.gn_shift..l.gn_shift + h];
        let mut y0 = vec![0.0; h * n];
        for (yc, nc) in y0.chunks_exact_mut(h).zip(t.nrm.chunks_exact(h)) {
            for i in 0..h {
                yc[i] = scale[i] * nc[i] + shift[i];
            }
        }
        let mut y0_d = vec![0.0; h * np];
        for (yc, nc) in y0_d.chunks_exact_mut(h).zip(t.nrm_d.chunks_exact(h)) {
            for i in 0..h {
                yc[i] = scale[i] * nc[i];
            }
        }
        t.y.push(y0);
        t.y_d.push(y0_d);

        for layer in &l.skip {
            let prev = t.y.last().unwrap();
            let mut z = vec![0.0; h * n];
            gemm::forward(layer.w(params), h, h, prev, n, &mut z);
            gemm::add_bias(&mut z, layer.b(params));
            let y: Vec<f64> = prev.iter().zip(&z).map(|(y, z)| y + silu(*z)).collect();
            let prev_d = t.y_d.last().unwrap();
            let mut z_d = vec![0.0; h * np];
            gemm::forward(layer.w(params), h, h, prev_d, np, &mut z_d);
            let mut y_d = prev_d.clone();
            for j in 0..np {
                let zc = &z[h * (j / p)..h * (j / p + 1)];
                for i in 0..h {
                    y_d[h * j + i] += silu_d1(zc[i]) * z_d[h * j + i];
                }
            }
            t.z.push(z);
            t.y.push(y);
            t.z_d.push(z_d);
            t.y_d.push(y_d);
        }

        let hd = l.head;
        t.out.s = vec![0.0; d * n];
        gemm::forward(hd.w(params), h, d, t.y.last().unwrap(), n, &mut t.out.s);
        gemm::add_bias(&mut t.out.s, hd.b(params));
        if p > 0 {
            t.out.s_dot = vec![0.0; d * np];
            gemm::forward(hd.w(params), h, d, t.y_d.last().unwrap(), np, &mut t.out.s_dot);
        }
        if !t.out.s.iter().chain(&t.out.s_dot).all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!("score network output, first bad layer: {}", first_bad_layer(&t))));
        }
        Ok(t)
    }

    fn backward_shard(&self, b: &Batch<'_>, t: &Tape, s_bar: &[f64], s_dot_bar: &[f64], grad: &mut [f64]) {
        let h = self.cfg.hidden;
        let d = self.kind.algebra_dim();
        let (n, p) = (t.n, t.p);
        let np = n * p;
        let params = &self.params;
        let l = &self.layout;
        let hf = h as f64;

        let hd = l.head;
        let mut y_bar = vec![0.0; h * n];
        let mut y_d_bar = vec![0.0; h * np];
        {
            let (gw, gb) = hd.parts_mut(grad);
            gemm::grad_weight(gw, h, d, s_bar, t.y.last().unwrap(), n);
            gemm::grad_bias(gb, s_bar);
            gemm::grad_input(hd.w(params), h, d, s_bar, n, 0.0, &mut y_bar);
            if p > 0 {
                gemm::grad_weight(gw, h, d, s_dot_bar, t.y_d.last().unwrap(), np);
                gemm::grad_input(hd.w(params), h, d, s_dot_bar, np, 0.0, &mut y_d_bar);
            }
        }

        let mut z_bar = vec![0.0; h * n];
        let mut z_d_bar = vec![0.0; h * np];
        for (li, layer) in l.skip.iter().enumerate().rev() {
            let z = &t.z[li];
            let z_d = &t.z_d[li];
            for s in 0..n {
                for i in 0..h {
                    let zi = z[h * s + i];
                    let mut acc = y_bar[h * s + i] * silu_d1(zi);
                    if p > 0 {
                        let d2 = silu_d2(zi);
                        for q in 0..p {
                            let j = h * (s * p + q) + i;
                            acc += y_d_bar[j] * d2 * z_d[j];
                        }
                    }
                    z_bar[h * s + i] = acc;
                }
            }
            for j in 0..np {
                let zc = &z[h * (j / p)..h * (j / p + 1)];
                for i in 0..h {
                    z_d_bar[h * j + i] = y_d_bar[h * j + i] * silu_d1(zc[i]);
                }
            }
            let (gw, gb) = layer.parts_mut(grad);
            gemm::grad_weight(gw, h, h, &z_bar, &t.y[li], n);
            gemm::grad_bias(gb, &z_bar);
            gemm::grad_input(layer.w(params), h, h, &z_bar, n, 1.0, &mut y_bar);
            if p > 0 {
                gemm::grad_weight(gw, h, h, &z_d_bar, &t.y_d[li], np);
                gemm::grad_input(layer.w(params), h, h, &z_d_bar, np, 1.0, &mut y_d_bar);
            }
        }

        let scale = &params[l.gn_scale..l.gn_scale + h];
        {
            let gs = &mut grad[l.gn_scale..l.gn_scale + h];
            for (yb, nc) in y_bar.chunks_exact(h).zip(t.nrm.chunks_exact(h)) {
                for i in 0..h {
                    gs[i] += yb[i] * nc[i];
                }
            }
            for (yb, nc) in y_d_bar.chunks_exact(h).zip(t.nrm_d.chunks_exact(h)) {
                for i in 0..h {
                    gs[i] += yb[i] * nc[i];
                }
            }
        }
        gemm::grad_bias(&mut grad[l.gn_shift..l.gn_shift + h], &y_bar);

        let mut u_bar = vec![0.0; h * n];
        let mut u_d_bar = vec![0.0; h * np];
        let mut n_tot = vec![0.0; h];
        let mut cd_bar = vec![0.0; h];
        for s in 0..n {
            let sigma = t.sig[s];
            let nc = &t.nrm[h * s..h * (s + 1)];
            for i in 0..h {
                n_tot[i] = scale[i] * y_bar[h * s + i];
            }
            let mut sig_extra = 0.0;
            for q in 0..p {
                let j = s * p + q;
                let nd_bar: Vec<f64> = (0..h).map(|i| scale[i] * y_d_bar[h * j + i]).collect();
                let nd = &t.nrm_d[h * j..h * (j + 1)];
                let cd = &t.c_d[h * j..h * (j + 1)];
                let sd = t.sig_d[j];
                let sd_bar = -dot(&nd_bar, nc) / sigma;
                sig_extra -= dot(&nd_bar, nd) / sigma;
                for i in 0..h {
                    n_tot[i] += -nd_bar[i] * sd / sigma + sd_bar * cd[i] / hf;
                    cd_bar[i] = nd_bar[i] / sigma + sd_bar * nc[i] / hf;
                }
                let m = cd_bar.iter().sum::<f64>() / hf;
                for i in 0..h {
                    u_d_bar[h * j + i] = cd_bar[i] - m;
                }
            }
            let sig_bar = sig_extra - dot(&n_tot, nc) / sigma;
            let ub = &mut u_bar[h * s..h * (s + 1)];
            for i in 0..h {
                ub[i] = n_tot[i] / sigma + sig_bar * nc[i] / hf;
            }
            let m = ub.iter().sum::<f64>() / hf;
            ub.iter_mut().for_each(|x| *x -= m);
        }

        {
            let (gw, gb) = l.t.parts_mut(grad);
            gemm::grad_weight(gw, h, h, &u_bar, &t.emb, n);
            gemm::grad_bias(gb, &u_bar);
        }

        // momentum path, with tangents
        let mut a_bar = vec![0.0; h * n];
        let mut a_d_bar = vec![0.0; h * np];
        {
            let (gw, gb) = l.x2.parts_mut(grad);
            gemm::grad_weight(gw, h, h, &u_bar, &t.ax1, n);
            gemm::grad_bias(gb, &u_bar);
            gemm::grad_input(l.x2.w(params), h, h, &u_bar, n, 0.0, &mut a_bar);
            if p > 0 {
                gemm::grad_weight(gw, h, h, &u_d_bar, &t.ax1_d, np);
                gemm::grad_input(l.x2.w(params), h, h, &u_d_bar, np, 0.0, &mut a_d_bar);
            }
        }
        for s in 0..n {
            for i in 0..h {
                let zi = t.zx1[h * s + i];
                let mut acc = a_bar[h * s + i] * silu_d1(zi);
                if p > 0 {
                    let d2 = silu_d2(zi);
                    for q in 0..p {
                        let j = h * (s * p + q) + i;
                        acc += a_d_bar[j] * d2 * t.zx1_d[j];
                    }
                }
                z_bar[h * s + i] = acc;
            }
        }
        {
            let (gw, gb) = l.x1.parts_mut(grad);
            gemm::grad_weight(gw, d, h, &z_bar, b.xi, n);
            gemm::grad_bias(gb, &z_bar);
            if let Some((v, _)) = b.tangents {
                for j in 0..np {
                    let zc = &t.zx1[h * (j / p)..h * (j / p + 1)];
                    for i in 0..h {
                        z_d_bar[h * j + i] = a_d_bar[h * j + i] * silu_d1(zc[i]);
                    }
                }
                gemm::grad_weight(gw, d, h, &z_d_bar, v, np);
            }
        }

        // group path
        let f = self.kind.feature_dim();
        {
            let (gw, gb) = l.g2.parts_mut(grad);
            gemm::grad_weight(gw, h, h, &u_bar, &t.ag1, n);
            gemm::grad_bias(gb, &u_bar);
            gemm::grad_input(l.g2.w(params), h, h, &u_bar, n, 0.0, &mut a_bar);
        }
        for (zb, (ab, z)) in z_bar.iter_mut().zip(a_bar.iter().zip(&t.zg1)) {
            *zb = ab * silu_d1(*z);
        }
        let (gw, gb) = l.g1.parts_mut(grad);
        gemm::grad_weight(gw, f, h, &z_bar, b.g, n);
        gemm::grad_bias(gb, &z_bar);
    }

    fn shards(&self, n: usize) -> usize {
        n.div_ceil(SHARD)
    }

    fn map_shards<T: Send>(&self, n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
        if self.sequential {
            par::try_map_indexed_seq(self.shards(n), f)
        } else {
            par::try_map_indexed(self.shards(n), f)
        }
    }

    /// Loss value and parameter gradient.
    ///
    /// `loss(offset, out, s_bar, s_dot_bar)` receives one shard's outputs
    /// (samples `offset..offset + len`) and must return the shard's loss
    /// contribution while writing its cotangents into the zeroed buffers.
    pub fn value_and_grad<L>(&self, batch: &Batch<'_>, loss: L) -> Result<(f64, Vec<f64>)>
    where
        L: Fn(usize, &ScoreOut, &mut [f64], &mut [f64]) -> f64 + Sync,
    {
        batch.check(&self.kind)?;
        let n = batch.len();
        let d = self.kind.algebra_dim();
        let parts = self.map_shards(n, |i| {
            let lo = i * SHARD;
            let hi = (lo + SHARD).min(n);
            let sb = batch.slice(lo, hi, &self.kind);
            let tape = self.forward_shard(&sb)?;
            let mut s_bar = vec![0.0; d * sb.len()];
            let mut s_dot_bar = vec![0.0; d * sb.len() * sb.probes()];
            let v = loss(lo, &tape.out, &mut s_bar, &mut s_dot_bar);
            let mut grad = vec![0.0; self.params.len()];
            self.backward_shard(&sb, &tape, &s_bar, &s_dot_bar, &mut grad);
            Ok((v, grad))
        })?;
        let mut total = 0.0;
        let mut grad = vec![0.0; self.params.len()];
        for (v, g) in parts {
            total += v;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        if !total.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        if !grad.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("parameter gradient".into()));
        }
        Ok((total, grad))
    }

    /// Divergence estimate `Σ_b (1/P) Σ_p v_pᵀ (∂s/∂ξ) v_p` over the batch and
    /// its parameter gradient. Requires tangents.
    pub fn divergence_and_grad(&self, batch: &Batch<'_>) -> Result<(f64, Vec<f64>)> {
        let (v, p) = batch.tangents.ok_or_else(|| Error::invalid("divergence needs probe vectors"))?;
        let d = self.kind.algebra_dim();
        self.value_and_grad(batch, |lo, out, _, sdb| {
            let vs = &v[d * p * lo..d * p * lo + out.s_dot.len()];
            sdb.iter_mut().zip(vs).for_each(|(a, b)| *a = b / p as f64);
            dot(vs, &out.s_dot) / p as f64
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn first_bad_layer(t: &Tape) -> String {
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    if !finite(&t.zg1) || !finite(&t.ag1) {
        return "group embedding".into();
    }
    if !finite(&t.zx1) || !finite(&t.ax1_d) {
        return "momentum embedding".into();
    }
    if !finite(&t.emb) {
        return "time embedding".into();
    }
    if !finite(&t.nrm) || !finite(&t.nrm_d) {
        return "group norm".into();
    }
    for (i, (y, yd)) in t.y.iter().zip(&t.y_d).enumerate().skip(1) {
        if !finite(y) || !finite(yd) {
            return format!("skip layer {i}");
        }
    }
    "output head".into()
}

impl Score for ScoreModel {
    fn kind(&self) -> &GroupKind {
        &self.kind
    }

    fn eval_batch(&self, batch: &Batch<'_>) -> Result<ScoreOut> {
        batch.check(&self.kind)?;
        let n = batch.len();
        let parts = self.map_shards(n, |i| {
            let lo = i * SHARD;
            let hi = (lo + SHARD).min(n);
            Ok(self.forward_shard(&batch.slice(lo, hi, &self.kind))?.out)
        })?;
        let mut out = ScoreOut::default();
        for part in parts {
            out.s.extend_from_slice(&part.s);
            out.s_dot.extend_from_slice(&part.s_dot);
        }
        Ok(out)
    }
}
