//! Dataset generators, loaders and splitting.
//!
//! Every generator draws sample `i` from `stream(seed, DATA, i)`, so output is
//! reproducible from the recorded seed and independent of thread count.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::lie::{exp_coeffs, group_mul, haar_sample, GroupElement, GroupKind, Mat, C64};
use crate::par;
use crate::rng::{stream, tags, StreamRng};
use crate::{Error, Result};

const TAU: f64 = std::f64::consts::TAU;

/// Tolerance used when accepting generated or loaded elements.
pub const DATA_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub params: serde_json::Value,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: GroupKind,
    pub items: Vec<GroupElement>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Header line with kind and meta, then one element per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        let header = serde_json::json!({ "kind": self.kind, "meta": self.meta, "count": self.items.len() });
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for g in &self.items {
            serde_json::to_writer(&mut w, g)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let r = BufReader::new(std::fs::File::open(path)?);
        let mut lines = r.lines();
        let head = lines.next().ok_or_else(|| Error::Format(format!("{}: empty dataset file", path.display())))??;
        #[derive(Deserialize)]
        struct Header {
            kind: GroupKind,
            meta: DatasetMeta,
        }
        let h: Header = serde_json::from_str(&head)?;
        let mut items = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let g: GroupElement = serde_json::from_str(&line).map_err(|e| Error::Parse { row: i + 1, msg: e.to_string() })?;
            if g.kind() != &h.kind {
                return Err(Error::KindMismatch { left: g.kind().to_string(), right: h.kind.to_string() });
            }
            if !g.is_on_group(1e-6) {
                return Err(Error::Parse { row: i + 1, msg: format!("element off the group (defect {:.3e})", g.manifold_error()) });
            }
            items.push(g);
        }
        Ok(Self { kind: h.kind, items, meta: h.meta })
    }
}

fn per_sample<F>(n: usize, seed: u64, f: F) -> Result<Vec<GroupElement>>
where
    F: Fn(&mut StreamRng) -> Result<GroupElement> + Sync + Send,
{
    par::try_map_indexed(n, |i| f(&mut stream(seed, tags::DATA, i as u64)))
}

fn torus2(theta: [f64; 2]) -> GroupElement {
    GroupElement::from_torus_angles(&GroupKind::TorusPower(2), &theta).expect("two angles")
}

/// Uniform samples on the black cells (`i + j` even) of an `m × m` board over `[0, 2π)²`.
pub fn checkerboard_torus(m: usize, n: usize, seed: u64) -> Result<Vec<GroupElement>> {
    if m < 2 || m % 2 != 0 {
        return Err(Error::invalid(format!("board size must be even and >= 2, got {m}")));
    }
    let w = TAU / m as f64;
    per_sample(n, seed, |rng| {
        let i = rng.random_range(0..m);
        let j = 2 * rng.random_range(0..m / 2) + i % 2;
        Ok(torus2([(i as f64 + rng.random::<f64>()) * w, (j as f64 + rng.random::<f64>()) * w]))
    })
}

/// Cell of a point on a checkerboard, as `(i, j)`.
pub fn checkerboard_cell(theta: [f64; 2], m: usize) -> (usize, usize) {
    let f = |t: f64| ((t.rem_euclid(TAU) / TAU * m as f64).floor() as usize).min(m - 1);
    (f(theta[0]), f(theta[1]))
}

/// A binary image; `pixels[row * width + col]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<bool>,
}

impl Mask {
    pub fn set_pixels(&self) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .filter(|&(r, c)| self.pixels[r * self.width + c])
            .collect()
    }

    /// Plain-text PGM (`P2`); nonzero pixels are set.
    pub fn parse_pgm(text: &str) -> Result<Self> {
        let mut tokens = text.lines().map(|l| l.split('#').next().unwrap_or("")).flat_map(str::split_whitespace);
        if tokens.next() != Some("P2") {
            return Err(Error::Format("expected a P2 (plain PGM) header".into()));
        }
        let mut num = |what: &str| -> Result<usize> {
            tokens
                .next()
                .ok_or_else(|| Error::Format(format!("PGM missing {what}")))?
                .parse()
                .map_err(|_| Error::Format(format!("PGM {what} is not an integer")))
        };
        let width = num("width")?;
        let height = num("height")?;
        let _max = num("maxval")?;
        let mut pixels = Vec::with_capacity(width * height);
        for i in 0..width * height {
            pixels.push(num(&format!("pixel {i}"))? != 0);
        }
        Ok(Self { width, height, pixels })
    }

    /// Integer `col,row` coordinates, one set pixel per line.
    pub fn parse_coords_csv(text: &str) -> Result<Self> {
        let mut pts = Vec::new();
        for (row, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse { row: row + 1, msg: format!("bad coordinate {s:?}") });
            if f.len() != 2 {
                if row == 0 && f.iter().any(|s| s.parse::<f64>().is_err()) {
                    continue;
                }
                return Err(Error::Parse { row: row + 1, msg: format!("expected 2 columns, got {}", f.len()) });
            }
            match (parse(f[0]), parse(f[1])) {
                (Ok(c), Ok(r)) => pts.push((c, r)),
                (Err(e), _) | (_, Err(e)) => {
                    if row == 0 {
                        continue;
                    }
                    return Err(e);
                }
            }
        }
        let width = pts.iter().map(|p| p.0 + 1).max().unwrap_or(0);
        let height = pts.iter().map(|p| p.1 + 1).max().unwrap_or(0);
        let mut pixels = vec![false; width * height];
        for (c, r) in pts {
            pixels[r * width + c] = true;
        }
        Ok(Self { width, height, pixels })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Self::parse_coords_csv(&text),
            _ => Self::parse_pgm(&text),
        }
    }
}

/// Uniform over set pixels, jittered uniformly inside the pixel; column maps
/// to the first angle and row to the second.
pub fn maze_from_mask(mask: &Mask, n: usize, seed: u64) -> Result<Vec<GroupElement>> {
    let set = mask.set_pixels();
    if set.is_empty() {
        return Err(Error::invalid("mask has no set pixels"));
    }
    let (wx, wy) = (TAU / mask.width as f64, TAU / mask.height as f64);
    per_sample(n, seed, |rng| {
        let (r, c) = set[rng.random_range(0..set.len())];
        Ok(torus2([(c as f64 + rng.random::<f64>()) * wx, (r as f64 + rng.random::<f64>()) * wy]))
    })
}

/// Rows of `dims` angles in radians, wrapped to `[0, 2π)`. A non-numeric
/// first row is taken as a header.
pub fn load_angles_csv(path: &Path, dims: usize) -> Result<Vec<GroupElement>> {
    if dims == 0 {
        return Err(Error::invalid("dims must be >= 1"));
    }
    let kind = GroupKind::TorusPower(dims);
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let vals = match vals {
            Ok(v) => v,
            Err(_) if row == 0 => continue,
            Err(e) => return Err(Error::Parse { row: row + 1, msg: e.to_string() }),
        };
        if vals.len() != dims {
            return Err(Error::Parse { row: row + 1, msg: format!("expected {dims} columns, got {}", vals.len()) });
        }
        if !vals.iter().all(|v| v.is_finite()) {
            return Err(Error::Parse { row: row + 1, msg: "non-finite angle".into() });
        }
        let angles: Vec<f64> = vals.iter().map(|a| a.rem_euclid(TAU)).collect();
        out.push(GroupElement::from_torus_angles(&kind, &angles)?);
    }
    Ok(out)
}

/// Angles in `[0, 2π)` of torus elements.
pub fn torus_angles_wrapped(g: &GroupElement) -> Result<Vec<f64>> {
    Ok(g.torus_angles()?.into_iter().map(|a| a.rem_euclid(TAU)).collect())
}

pub fn save_angles_csv(path: &Path, items: &[GroupElement]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for g in items {
        let a = torus_angles_wrapped(g)?;
        w.write_record(a.iter().map(|x| format!("{x:.17e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Mixture of `R_j · exp(σ_j z)` with Haar means `R_j`, `σ_j ∼ U(range)` and
/// standard normal algebra coefficients `z`.
pub fn so_n_mixture(n: usize, components: usize, sigma_range: (f64, f64), samples: usize, seed: u64) -> Result<Vec<GroupElement>> {
    if n < 2 || components == 0 {
        return Err(Error::invalid("so_n_mixture needs n >= 2 and at least one component"));
    }
    let (lo, hi) = sigma_range;
    if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::invalid(format!("bad concentration range ({lo}, {hi})")));
    }
    let kind = GroupKind::SpecialOrthogonal(n);
    let mut rng = stream(seed, tags::DATA, u64::MAX);
    let comps: Vec<(GroupElement, f64)> =
        (0..components).map(|_| (haar_sample(&kind, &mut rng), lo + (hi - lo) * rng.random::<f64>())).collect();
    let d = kind.algebra_dim();
    per_sample(samples, seed, |rng| {
        let (r, s) = &comps[rng.random_range(0..components)];
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        group_mul(r, &exp_coeffs(&kind, &z, *s)?)
    })
}

/// Mixture means used by [`so_n_mixture`] for the given seed.
pub fn so_n_mixture_means(n: usize, components: usize, sigma_range: (f64, f64), seed: u64) -> Vec<(GroupElement, f64)> {
    let kind = GroupKind::SpecialOrthogonal(n);
    let mut rng = stream(seed, tags::DATA, u64::MAX);
    let (lo, hi) = sigma_range;
    (0..components).map(|_| (haar_sample(&kind, &mut rng), lo + (hi - lo) * rng.random::<f64>())).collect()
}

/// Eigen-decomposition of a Hermitian matrix by cyclic complex Jacobi.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns.
    pub vectors: DMatrix<C64>,
}

pub const JACOBI_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;

fn off_norm(a: &DMatrix<C64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)].norm_sqr();
            }
        }
    }
    s.sqrt()
}

pub fn hermitian_eigen(h: &DMatrix<C64>) -> Result<HermitianEigen> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: h.ncols() });
    }
    if !h.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::NonFinite("eigensolver input".into()));
    }
    let herm = (h - h.adjoint()).norm();
    if herm > 1e-12 * h.norm().max(1.0) {
        return Err(Error::invalid(format!("matrix is not Hermitian (defect {herm:.3e})")));
    }
    let mut a = h.clone();
    let mut v = DMatrix::<C64>::identity(n, n);
    let tol = JACOBI_TOL * h.norm().max(1.0);
    let mut sweeps = 0;
    while off_norm(&a) > tol {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps, off: off_norm(&a) });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r < 1e-300 {
                    continue;
                }
                let ph = apq / r;
                let zeta = (a[(q, q)].re - a[(p, p)].re) / (2.0 * r);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let e = ph.conj();
                let (jpp, jpq, jqp, jqq) = (C64::new(c, 0.0), C64::new(s, 0.0), -e * s, e * c);
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = akp * jpp + akq * jqp;
                    a[(k, q)] = akp * jpq + akq * jqq;
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = vkp * jpp + vkq * jqp;
                    v[(k, q)] = vkp * jpq + vkq * jqq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = jpp.conj() * apk + jqp.conj() * aqk;
                    a[(q, k)] = jpq.conj() * apk + jqq.conj() * aqk;
                }
                a[(p, q)] = C64::new(0.0, 0.0);
                a[(q, p)] = C64::new(0.0, 0.0);
                a[(p, p)].im = 0.0;
                a[(q, q)].im = 0.0;
            }
        }
    }
    Ok(HermitianEigen { values: (0..n).map(|i| a[(i, i)].re).collect(), vectors: v })
}

/// `exp(−iH)` for Hermitian `H` via its eigen-decomposition.
pub fn unitary_evolution(h: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let eig = hermitian_eigen(h)?;
    let n = h.nrows();
    let mut vd = eig.vectors.clone();
    for (j, &l) in eig.values.iter().enumerate() {
        let ph = C64::new(0.0, -l).exp();
        for i in 0..n {
            vd[(i, j)] *= ph;
        }
    }
    Ok(vd * eig.vectors.adjoint())
}

/// `Δ_h − V_h` on `n` periodic grid points of `[−1, 1)` with
/// `V = ½ω²(x − x₀)²`.
pub fn oscillator_hamiltonian(n: usize, omega: f64, x0: f64) -> DMatrix<C64> {
    let dx = 2.0 / n as f64;
    let k = 1.0 / (dx * dx);
    let mut h = DMatrix::<C64>::zeros(n, n);
    for i in 0..n {
        let x = -1.0 + i as f64 * dx;
        h[(i, i)] += C64::new(-2.0 * k - 0.5 * omega * omega * (x - x0).powi(2), 0.0);
        h[(i, (i + 1) % n)] += C64::new(k, 0.0);
        h[(i, (i + n - 1) % n)] += C64::new(k, 0.0);
    }
    h
}

fn uniform_in<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if lo.is_finite() && hi.is_finite() && lo <= hi {
        Ok(())
    } else {
        Err(Error::invalid(format!("bad {name} range ({lo}, {hi})")))
    }
}

/// Time-one evolution operators of randomly placed harmonic traps.
pub fn quantum_oscillator_un(n_grid: usize, samples: usize, omega_range: (f64, f64), x0_range: (f64, f64), seed: u64) -> Result<Vec<GroupElement>> {
    if n_grid < 2 {
        return Err(Error::invalid("n_grid must be >= 2"));
    }
    check_range("omega", omega_range)?;
    check_range("x0", x0_range)?;
    let kind = GroupKind::Unitary(n_grid);
    per_sample(samples, seed, |rng| {
        let omega = uniform_in(rng, omega_range);
        let x0 = uniform_in(rng, x0_range);
        let u = unitary_evolution(&oscillator_hamiltonian(n_grid, omega, x0))?;
        GroupElement::from_matrix(kind.clone(), Mat::Complex(u), DATA_TOL)
    })
}

fn pauli(which: char) -> DMatrix<C64> {
    let (o, l) = (C64::new(0.0, 0.0), C64::new(1.0, 0.0));
    match which {
        'x' => DMatrix::from_row_slice(2, 2, &[o, l, l, o]),
        'z' => DMatrix::from_row_slice(2, 2, &[l, o, o, -l]),
        _ => DMatrix::identity(2, 2),
    }
}

fn kron_chain(ops: &[DMatrix<C64>]) -> DMatrix<C64> {
    ops.iter().skip(1).fold(ops[0].clone(), |acc, m| acc.kronecker(m))
}

/// `−Σ J_i σᶻ_i σᶻ_{i+1} − Σ g_i σˣ_i` on an open chain.
pub fn tfim_hamiltonian(j: &[f64], g: &[f64]) -> DMatrix<C64> {
    let q = g.len();
    let n = 1 << q;
    let mut h = DMatrix::<C64>::zeros(n, n);
    let site = |ops: &[(usize, char)]| {
        let v: Vec<DMatrix<C64>> = (0..q).map(|i| pauli(ops.iter().find(|o| o.0 == i).map_or('i', |o| o.1))).collect();
        kron_chain(&v)
    };
    for (i, ji) in j.iter().enumerate() {
        h -= site(&[(i, 'z'), (i + 1, 'z')]) * C64::new(*ji, 0.0);
    }
    for (i, gi) in g.iter().enumerate() {
        h -= site(&[(i, 'x')]) * C64::new(*gi, 0.0);
    }
    h
}

/// Time-one evolution operators of random transverse-field Ising chains.
pub fn tfim_un(qubits: usize, j_range: (f64, f64), g_range: (f64, f64), samples: usize, seed: u64) -> Result<Vec<GroupElement>> {
    if !(1..=4).contains(&qubits) {
        return Err(Error::invalid(format!("qubits must be in 1..=4, got {qubits}")));
    }
    check_range("J", j_range)?;
    check_range("g", g_range)?;
    let kind = GroupKind::Unitary(1 << qubits);
    per_sample(samples, seed, |rng| {
        let j: Vec<f64> = (0..qubits - 1).map(|_| uniform_in(rng, j_range)).collect();
        let g: Vec<f64> = (0..qubits).map(|_| uniform_in(rng, g_range)).collect();
        let u = unitary_evolution(&tfim_hamiltonian(&j, &g))?;
        GroupElement::from_matrix(kind.clone(), Mat::Complex(u), DATA_TOL)
    })
}

/// Seeded shuffle, then the first `⌊ratio·M⌋` items train and the rest test.
pub fn split(items: &[GroupElement], ratio: f64, seed: u64) -> Result<(Vec<GroupElement>, Vec<GroupElement>)> {
    if items.len() < 10 {
        return Err(Error::invalid(format!("need at least 10 items to split, got {}", items.len())));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut stream(seed, tags::SPLIT, 0));
    let n_train = (ratio * items.len() as f64).floor() as usize;
    let pick = |r: &[usize]| r.iter().map(|&i| items[i].clone()).collect();
    Ok((pick(&idx[..n_train]), pick(&idx[n_train..])))
}

fn default_range(r: Option<(f64, f64)>, d: (f64, f64)) -> (f64, f64) {
    r.unwrap_or(d)
}

/// Declarative generator description, as stored in configs and dataset headers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Checkerboard { board: usize, samples: usize },
    Maze { path: PathBuf, samples: usize },
    AnglesCsv { path: PathBuf, dims: usize },
    Haar { kind: GroupKind, samples: usize },
    SoMixture {
        n: usize,
        components: Option<usize>,
        sigma_range: Option<(f64, f64)>,
        samples: usize,
    },
    Oscillator {
        grid: usize,
        samples: usize,
        omega_range: Option<(f64, f64)>,
        x0_range: Option<(f64, f64)>,
    },
    Tfim {
        qubits: usize,
        j_range: Option<(f64, f64)>,
        g_range: Option<(f64, f64)>,
        samples: usize,
    },
}

pub const GENERATORS: &[&str] = &["checkerboard", "maze", "angles_csv", "haar", "so_mixture", "oscillator", "tfim"];

impl GeneratorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            GeneratorSpec::Checkerboard { .. } => "checkerboard",
            GeneratorSpec::Maze { .. } => "maze",
            GeneratorSpec::AnglesCsv { .. } => "angles_csv",
            GeneratorSpec::Haar { .. } => "haar",
            GeneratorSpec::SoMixture { .. } => "so_mixture",
            GeneratorSpec::Oscillator { .. } => "oscillator",
            GeneratorSpec::Tfim { .. } => "tfim",
        }
    }

    pub fn kind(&self) -> GroupKind {
        match self {
            GeneratorSpec::Checkerboard { .. } | GeneratorSpec::Maze { .. } => GroupKind::TorusPower(2),
            GeneratorSpec::AnglesCsv { dims, .. } => GroupKind::TorusPower(*dims),
            GeneratorSpec::Haar { kind, .. } => kind.clone(),
            GeneratorSpec::SoMixture { n, .. } => GroupKind::SpecialOrthogonal(*n),
            GeneratorSpec::Oscillator { grid, .. } => GroupKind::Unitary(*grid),
            GeneratorSpec::Tfim { qubits, .. } => GroupKind::Unitary(1 << qubits),
        }
    }

    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        let items = match self {
            GeneratorSpec::Checkerboard { board, samples } => checkerboard_torus(*board, *samples, seed)?,
            GeneratorSpec::Maze { path, samples } => maze_from_mask(&Mask::load(path)?, *samples, seed)?,
            GeneratorSpec::AnglesCsv { path, dims } => load_angles_csv(path, *dims)?,
            GeneratorSpec::Haar { kind, samples } => {
                kind.validate()?;
                per_sample(*samples, seed, |rng| Ok(haar_sample(kind, rng)))?
            }
            GeneratorSpec::SoMixture { n, components, sigma_range, samples } => {
                let c = components.unwrap_or(if *n == 3 { 32 } else { 8 });
                so_n_mixture(*n, c, default_range(*sigma_range, (0.1, 0.5)), *samples, seed)?
            }
            GeneratorSpec::Oscillator { grid, samples, omega_range, x0_range } => quantum_oscillator_un(
                *grid,
                *samples,
                default_range(*omega_range, (1.0, 4.0)),
                default_range(*x0_range, (-0.5, 0.5)),
                seed,
            )?,
            GeneratorSpec::Tfim { qubits, j_range, g_range, samples } => {
                tfim_un(*qubits, default_range(*j_range, (0.5, 1.5)), default_range(*g_range, (0.5, 1.5)), *samples, seed)?
            }
        };
        Ok(Dataset {
            kind: self.kind(),
            items,
            meta: DatasetMeta { generator: self.name().into(), params: serde_json::to_value(self)?, seed },
        })
    }
}
