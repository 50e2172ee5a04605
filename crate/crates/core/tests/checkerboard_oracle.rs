//! Sampling with the exact score of a diffused checkerboard on T².

use std::f64::consts::{FRAC_1_SQRT_2, TAU};

use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use tdm::datasets::checkerboard_cell;
use tdm::dynamics::{sample, DiffusionConfig, SampleMode, SampleOptions};
use tdm::lie::GroupKind;
use tdm::losses::conditional_params;
use tdm::score::{Batch, Score, ScoreOut};

const BOARD: usize = 4;

/// With `ξ_0 ~ N(0, 1)` integrated out, `Y | ξ_t ~ N(c ξ_t, v)` per
/// coordinate, so `p_t(θ, ξ) = N(ξ) Σ_cells Π_d ∫_cell WN(θ_d − u; a c ξ_d, a² v) du`.
struct ExactBoard {
    kind: GroupKind,
    horizon: f64,
}

impl ExactBoard {
    fn score(&self, theta: [f64; 2], xi: [f64; 2], t: f64) -> [f64; 2] {
        let tr = conditional_params(t, 1.0).unwrap();
        let a = FRAC_1_SQRT_2;
        let c = tr.mu_g_coeff * (1.0 + tr.mu_xi_coeff);
        let v = tr.mu_g_coeff.powi(2) * 2.0 * (1.0 + tr.mu_xi_coeff) + tr.var_g - c * c;
        let sig = a * v.sqrt();
        let std = Normal::new(0.0, 1.0).unwrap();
        let wraps = (3.0 * sig / TAU).ceil() as i64 + 2;
        let w = TAU / BOARD as f64;
        let mut f = [[0.0; BOARD]; 2];
        let mut df = [[0.0; BOARD]; 2];
        for d in 0..2 {
            let x = theta[d] - a * c * xi[d];
            for i in 0..BOARD {
                for k in -wraps..=wraps {
                    let lo = (x - i as f64 * w + TAU * k as f64) / sig;
                    let hi = (x - (i + 1) as f64 * w + TAU * k as f64) / sig;
                    f[d][i] += std.cdf(lo) - std.cdf(hi);
                    df[d][i] -= a * c / sig * (std.pdf(lo) - std.pdf(hi));
                }
            }
        }
        let (mut q, mut q0, mut q1) = (0.0, 0.0, 0.0);
        for i in 0..BOARD {
            for j in (i % 2..BOARD).step_by(2) {
                q += f[0][i] * f[1][j];
                q0 += df[0][i] * f[1][j];
                q1 += f[0][i] * df[1][j];
            }
        }
        [q0 / q - xi[0], q1 / q - xi[1]]
    }
}

impl Score for ExactBoard {
    fn kind(&self) -> &GroupKind {
        &self.kind
    }

    fn eval_batch(&self, batch: &Batch<'_>) -> tdm::Result<ScoreOut> {
        assert!(batch.tangents.is_none());
        let f = self.kind.feature_dim();
        let mut out = ScoreOut { s: Vec::new(), s_dot: Vec::new() };
        for (n, &tau) in batch.tau.iter().enumerate() {
            let g = &batch.g[f * n..f * (n + 1)];
            // Rotation blocks sit on the diagonal of the row-major 4×4 matrix.
            let theta = [g[1].atan2(g[0]), g[11].atan2(g[10])];
            let s = self.score(theta, [batch.xi[2 * n], batch.xi[2 * n + 1]], self.horizon - tau);
            out.s.extend(s);
        }
        Ok(out)
    }
}

#[test]
fn exact_score_samples_stay_on_black_cells() {
    let kind = GroupKind::TorusPower(2);
    let cfg = DiffusionConfig::new(kind.clone());
    let score = ExactBoard { kind, horizon: cfg.horizon };
    for mode in [SampleMode::Sde, SampleMode::Ode] {
        let out = sample(&score, &cfg, 400, 3, &SampleOptions { mode, ..SampleOptions::default() }).unwrap();
        let black = out
            .iter()
            .filter(|s| {
                let a = s.g.torus_angles().unwrap();
                let (i, j) = checkerboard_cell([a[0], a[1]], BOARD);
                (i + j) % 2 == 0
            })
            .count();
        let frac = black as f64 / out.len() as f64;
        assert!(frac > 0.97, "{mode:?}: {frac}");
    }
}
