//! Sample-quality diagnostics.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::torus_angles_wrapped;
use crate::lie::{GroupElement, GroupKind};
use crate::likelihood::NllEstimate;
use crate::par;
use crate::rng::{stream, tags};
use crate::{Error, Result};

const TAU: f64 = std::f64::consts::TAU;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmdOptions {
    /// Kernel bandwidth; median pairwise distance when unset.
    pub bandwidth: Option<f64>,
    pub permutations: usize,
    /// Each sample is randomly subsampled to at most this many points.
    pub max_points: usize,
    pub seed: u64,
}

impl Default for MmdOptions {
    fn default() -> Self {
        Self { bandwidth: None, permutations: 200, max_points: 2000, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmdResult {
    pub statistic: f64,
    pub p_value: f64,
    pub bandwidth: f64,
    pub n_a: usize,
    pub n_b: usize,
}

fn features(items: &[GroupElement]) -> Vec<Vec<f64>> {
    items.iter().map(|g| g.features()).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn median_distance(x: &[Vec<f64>]) -> f64 {
    let n = x.len();
    let mut d: Vec<f64> = Vec::new();
    let stride = (n * (n - 1) / 2 / 200_000).max(1);
    let mut k = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if k % stride == 0 {
                d.push(sq_dist(&x[i], &x[j]).sqrt());
            }
            k += 1;
        }
    }
    d.sort_by(|a, b| a.total_cmp(b));
    let m = if d.is_empty() { 0.0 } else { d[d.len() / 2] };
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Unbiased MMD² over indices `a` and `b` of the pooled kernel matrix. With
/// equal sizes the cross term also drops matched pairs, so a sample compared
/// with itself gives exactly zero.
fn statistic(k: &[f64], n: usize, a: &[usize], b: &[usize]) -> f64 {
    let within = |s: &[usize]| {
        let mut t = 0.0;
        for (ii, &i) in s.iter().enumerate() {
            for (jj, &j) in s.iter().enumerate() {
                if ii != jj {
                    t += k[i * n + j];
                }
            }
        }
        t / (s.len() * (s.len() - 1)) as f64
    };
    let paired = a.len() == b.len();
    let mut cross = 0.0;
    for (ii, &i) in a.iter().enumerate() {
        for (jj, &j) in b.iter().enumerate() {
            if !(paired && ii == jj) {
                cross += k[i * n + j];
            }
        }
    }
    let pairs = if paired { a.len() * (a.len() - 1) } else { a.len() * b.len() };
    within(a) + within(b) - 2.0 * cross / pairs as f64
}

/// Two-sample test on flattened matrix entries with a Gaussian kernel and a
/// permutation p-value `(1 + #{T_π ≥ T})/(1 + P)`.
pub fn mmd2(a: &[GroupElement], b: &[GroupElement], opts: &MmdOptions) -> Result<MmdResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("each sample needs at least two points"));
    }
    if a[0].kind() != b[0].kind() || a.iter().chain(b).any(|g| g.kind() != a[0].kind()) {
        return Err(Error::KindMismatch { left: a[0].kind().to_string(), right: b[0].kind().to_string() });
    }
    let mut rng = stream(opts.seed, tags::EVAL, 0);
    let cap = opts.max_points.max(2);
    let sub = |items: &[GroupElement], rng: &mut crate::rng::StreamRng| -> Vec<GroupElement> {
        if items.len() <= cap {
            items.to_vec()
        } else {
            items.choose_multiple(rng, cap).cloned().collect()
        }
    };
    let (a, b) = (sub(a, &mut rng), sub(b, &mut rng));
    let mut pooled = features(&a);
    pooled.extend(features(&b));
    let n = pooled.len();
    let bw = match opts.bandwidth {
        Some(w) if w > 0.0 && w.is_finite() => w,
        Some(w) => return Err(Error::invalid(format!("bandwidth must be positive, got {w}"))),
        None => median_distance(&pooled),
    };
    let inv = 1.0 / (2.0 * bw * bw);
    let rows = par::map_indexed(n, |i| (0..n).map(|j| (-sq_dist(&pooled[i], &pooled[j]) * inv).exp()).collect::<Vec<f64>>());
    let k: Vec<f64> = rows.into_iter().flatten().collect();
    let ia: Vec<usize> = (0..a.len()).collect();
    let ib: Vec<usize> = (a.len()..n).collect();
    let t = statistic(&k, n, &ia, &ib);
    let perms: Vec<Vec<usize>> = (0..opts.permutations)
        .map(|p| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut stream(opts.seed, tags::EVAL, 1 + p as u64));
            idx
        })
        .collect();
    let null = par::map_indexed(perms.len(), |p| statistic(&k, n, &perms[p][..a.len()], &perms[p][a.len()..]));
    let ge = null.iter().filter(|&&s| s >= t).count();
    Ok(MmdResult {
        statistic: t,
        p_value: (1 + ge) as f64 / (1 + opts.permutations) as f64,
        bandwidth: bw,
        n_a: a.len(),
        n_b: b.len(),
    })
}

/// Values exported per item: wrapped angles on tori, flattened entries otherwise.
pub fn coordinates(g: &GroupElement) -> Vec<f64> {
    if g.kind().is_abelian() {
        torus_angles_wrapped(g).expect("torus kind")
    } else {
        g.features()
    }
}

pub fn coordinate_count(kind: &GroupKind) -> usize {
    if kind.is_abelian() {
        kind.torus_coordinates()
    } else {
        kind.feature_dim()
    }
}

/// `count` distinct coordinate pairs drawn from the seed.
pub fn random_pairs(kind: &GroupKind, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let c = coordinate_count(kind);
    let mut rng = stream(seed, tags::EVAL, u64::MAX);
    let mut all: Vec<(usize, usize)> = (0..c).flat_map(|i| (i + 1..c).map(move |j| (i, j))).collect();
    all.shuffle(&mut rng);
    all.truncate(count);
    all
}

/// Plot-ready CSV with two columns per requested pair.
pub fn marginals_export(items: &[GroupElement], pairs: &[(usize, usize)], path: &Path) -> Result<()> {
    let kind = items.first().map(|g| g.kind().clone()).ok_or_else(|| Error::invalid("nothing to export"))?;
    let c = coordinate_count(&kind);
    if let Some(&(i, j)) = pairs.iter().find(|(i, j)| *i >= c || *j >= c) {
        return Err(Error::invalid(format!("coordinate pair ({i}, {j}) out of range for {c} coordinates")));
    }
    let prefix = if kind.is_abelian() { "theta" } else { "x" };
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(pairs.iter().flat_map(|(i, j)| [format!("{prefix}{i}"), format!("{prefix}{j}")]))?;
    for g in items {
        let v = coordinates(g);
        w.write_record(pairs.iter().flat_map(|&(i, j)| [v[i].to_string(), v[j].to_string()]))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifoldReport {
    pub max: f64,
    pub mean: f64,
    pub count: usize,
}

/// Max and mean of `‖g†g − I‖_F`.
pub fn manifold_report(items: &[GroupElement]) -> ManifoldReport {
    let errs: Vec<f64> = items.iter().map(|g| g.manifold_error()).collect();
    let n = errs.len();
    let max = errs.iter().cloned().fold(0.0, |a: f64, b| if b.is_nan() || a.is_nan() { f64::NAN } else { a.max(b) });
    ManifoldReport { max, mean: if n == 0 { 0.0 } else { errs.iter().sum::<f64>() / n as f64 }, count: n }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub coordinate: usize,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

pub fn histograms(items: &[GroupElement], coords: &[usize], bins: usize) -> Result<Vec<Histogram>> {
    let kind = match items.first() {
        Some(g) => g.kind().clone(),
        None => return Ok(Vec::new()),
    };
    let c = coordinate_count(&kind);
    let (lo, hi) = if kind.is_abelian() { (0.0, TAU) } else { (-1.0, 1.0) };
    let mut out: Vec<Histogram> = coords
        .iter()
        .map(|&i| {
            if i >= c {
                Err(Error::invalid(format!("coordinate {i} out of range for {c} coordinates")))
            } else {
                Ok(Histogram { coordinate: i, lo, hi, counts: vec![0; bins.max(1)] })
            }
        })
        .collect::<Result<_>>()?;
    for g in items {
        let v = coordinates(g);
        for h in &mut out {
            let b = ((v[h.coordinate] - lo) / (hi - lo) * h.counts.len() as f64).floor();
            let b = (b.max(0.0) as usize).min(h.counts.len() - 1);
            h.counts[b] += 1;
        }
    }
    Ok(out)
}

/// Mean, variance and count of one coordinate.
pub fn coordinate_moments(items: &[GroupElement], coord: usize) -> (f64, f64, usize) {
    let v: Vec<f64> = items.iter().map(|g| coordinates(g)[coord]).collect();
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var, v.len())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub manifold: ManifoldReport,
    pub histograms: Vec<Histogram>,
    pub mmd: Option<MmdResult>,
    pub nll: Option<serde_json::Value>,
}

impl EvalReport {
    pub fn new(samples: &[GroupElement], reference: Option<&[GroupElement]>, coords: &[usize], bins: usize, mmd: &MmdOptions) -> Result<Self> {
        Ok(Self {
            manifold: manifold_report(samples),
            histograms: histograms(samples, coords, bins)?,
            mmd: reference.map(|r| mmd2(samples, r, mmd)).transpose()?,
            nll: None,
        })
    }

    pub fn with_nll(mut self, nll: &NllEstimate) -> Self {
        self.nll = Some(nll.report());
        self
    }
}

/// Uniformly drawn indices `0..n` without replacement.
pub fn sample_indices<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    rand::seq::index::sample(rng, n, k.min(n)).into_vec()
}
