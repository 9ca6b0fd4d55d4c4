//! Brute-force references: random sampling of the numerical range, determinant
//! checks, and generators of matrices and systems with bounded phase.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PhaseError, Result};
use crate::interval::PhaseInterval;
use crate::linalg::{self, CMat, RMat};
use crate::lti::StateSpaceSystem;
use crate::matrix_phase::{self, random_unit, ComplexSquareMatrix, MatrixPhaseBound};
use crate::stability::UncertainSubsystem;

const CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub sample_count: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            sample_count: 100_000,
            seed: 0,
            tolerance: 1e-4,
        }
    }
}

impl OracleConfig {
    pub fn new(sample_count: usize, seed: u64) -> Result<Self> {
        if sample_count == 0 {
            return Err(PhaseError::InvalidModel("sample_count must be at least 1".into()));
        }
        Ok(Self {
            sample_count,
            seed,
            ..Self::default()
        })
    }
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64 + 1);
    rng
}

fn angle_at(a: &ComplexSquareMatrix, x: &linalg::CVec) -> f64 {
    let ax = a.matrix() * x;
    let nax = ax.norm();
    if nax == 0.0 {
        return 0.0;
    }
    (x.dotc(&ax).re / nax).clamp(-1.0, 1.0).acos()
}

/// Largest `arccos Re(x*Ax / (|x||Ax|))` over random unit `x`; a lower bound on `θ(A)`.
///
/// Each chunk spends half its samples uniformly on the sphere and half on random
/// perturbations of its best sample, with a shrinking step.
pub fn sampled_singular_angle(a: &ComplexSquareMatrix, cfg: &OracleConfig) -> f64 {
    let n = a.n();
    let chunks = cfg.sample_count.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(cfg.seed, c);
            let count = CHUNK.min(cfg.sample_count - c * CHUNK);
            let uniform = count.div_ceil(2);
            let mut best = 0.0_f64;
            let mut best_x = random_unit(&mut rng, n);
            for _ in 0..uniform {
                let x = random_unit(&mut rng, n);
                let t = angle_at(a, &x);
                if t > best {
                    best = t;
                    best_x = x;
                }
            }
            let local = count - uniform;
            for i in 0..local {
                let step = 0.3 * (1e-4f64 / 0.3).powf(i as f64 / local.max(1) as f64);
                let d = random_unit(&mut rng, n);
                let y = &best_x + d * Complex64::new(step, 0.0);
                let x = &y / Complex64::new(y.norm(), 0.0);
                let t = angle_at(a, &x);
                if t > best {
                    best = t;
                    best_x = x;
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

/// `|det(I + A_m···A_1)| > 10⁻¹²·n`.
pub fn det_invertibility(mats: &[ComplexSquareMatrix]) -> bool {
    let Ok(p) = matrix_phase::ordered_product(mats) else {
        return false;
    };
    let n = p.n();
    linalg::determinant(&(CMat::identity(n, n) + p.matrix())).norm() > 1e-12 * n as f64
}

fn random_orthogonal(rng: &mut impl Rng, n: usize) -> RMat {
    let g = RMat::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    g.qr().q()
}

/// Real symmetric positive definite matrix with largest eigenvalue 1 and condition number `kappa`.
fn random_pd(rng: &mut impl Rng, n: usize, kappa: f64) -> RMat {
    let q = random_orthogonal(rng, n);
    let eig: Vec<f64> = (0..n)
        .map(|i| match i {
            0 => 1.0,
            1 => 1.0 / kappa,
            _ => 1.0 / kappa.powf(rng.random::<f64>()),
        })
        .collect();
    let d = RMat::from_diagonal(&nalgebra::DVector::from_vec(eig));
    &q * d * q.transpose()
}

/// Condition number whose PD phase radius is `r`: `cos r = 2√κ/(κ+1)`.
fn kappa_for_radius(r: f64) -> f64 {
    let s = (1.0 + r.sin()) / r.cos();
    s * s
}

/// `n × n` matrices `c·e^{jγ}·M`, `M` positive definite, whose segmental phase lies in the bound.
pub fn sampled_uncertain_matrices(bound: &MatrixPhaseBound, n: usize, cfg: &OracleConfig) -> Result<Vec<ComplexSquareMatrix>> {
    let mut rng = chunk_rng(cfg.seed, 0);
    let width = bound.beta - bound.alpha;
    let limit = cfg.sample_count.saturating_mul(1000).max(1000);
    let mut out = Vec::with_capacity(cfg.sample_count);
    let mut attempts = 0;
    while out.len() < cfg.sample_count {
        attempts += 1;
        if attempts > limit {
            return Err(PhaseError::ExhaustedSampling { attempts });
        }
        let scale = Complex64::new((rng.random::<f64>() * 4.0 - 2.0).exp(), 0.0);
        if width == 0.0 || n == 1 {
            let g = bound.alpha + rng.random::<f64>() * width;
            let m = CMat::identity(n, n) * Complex64::from_polar(scale.re, g);
            out.push(ComplexSquareMatrix::new(m)?);
            continue;
        }
        let r = rng.random::<f64>() * (0.5 * width).min(FRAC_PI_2 - 1e-3);
        let kappa = kappa_for_radius(r);
        let g = if rng.random::<f64>() < 0.25 {
            0.5 * (bound.alpha + bound.beta)
        } else {
            bound.alpha + r + rng.random::<f64>() * (width - 2.0 * r)
        };
        let m = linalg::to_complex(&random_pd(&mut rng, n, kappa)) * Complex64::from_polar(scale.re, g);
        let a = ComplexSquareMatrix::new(m)?;
        let sp = matrix_phase::segmental_phase_seeded(&a, cfg.tolerance, cfg.seed)?;
        let target = PhaseInterval::new(bound.alpha, bound.beta);
        let fits = |iv: &PhaseInterval| (-2..=2).any(|k| iv.shift(k).is_subset_of(&target, cfg.tolerance));
        if !sp.degenerate && sp.intervals().iter().any(fits) {
            out.push(a);
        }
    }
    Ok(out)
}

/// First-order section `(s + a)/(s + b)`.
#[derive(Clone, Copy, Debug)]
struct LeadLag {
    a: f64,
    b: f64,
}

impl LeadLag {
    fn phase(&self, w: f64) -> f64 {
        (w / self.a).atan() - (w / self.b).atan()
    }

    fn gain(&self, w: f64) -> f64 {
        ((w * w + self.a * self.a) / (w * w + self.b * self.b)).sqrt()
    }
}

/// `c·g(s)·M`, `g` a chain of lead-lag sections, realized as `(A_g ⊗ I, B_g ⊗ I, C_g ⊗ M, D_g·M)`.
fn chain_times_matrix(sections: &[LeadLag], c: f64, m: &RMat) -> Result<StateSpaceSystem> {
    let n = m.nrows();
    let mut g = StateSpaceSystem::static_gain(RMat::from_element(1, 1, c))?;
    for s in sections {
        let stage = StateSpaceSystem::siso(&[s.a, 1.0], &[s.b, 1.0])?;
        g = g.then(&stage)?;
    }
    let eye = RMat::identity(n, n);
    let a = g.a.kronecker(&eye);
    let b = g.b.kronecker(&eye);
    let cc = g.c.kronecker(m);
    let d = g.d.kronecker(m);
    StateSpaceSystem::new(a, b, cc, d)
}

/// Stable `n × n` systems `c·Π(s+a_i)/(s+b_i)·M` whose phase response lies in the frequency-wise bound on `grid`.
///
/// With a gain bound the scale `c` is chosen so that `σ̄(P(jω)) ≤ δ(ω)` on the grid.
pub fn sampled_uncertain_systems(bound: &UncertainSubsystem, n: usize, grid: &[f64], cfg: &OracleConfig) -> Result<Vec<StateSpaceSystem>> {
    let mut rng = chunk_rng(cfg.seed, 1);
    let limit = cfg.sample_count.saturating_mul(1000).max(1000);
    let mut out = Vec::with_capacity(cfg.sample_count);
    let mut attempts = 0;
    let mut eval: Vec<f64> = vec![0.0];
    eval.extend_from_slice(grid);
    let min_width = eval
        .iter()
        .map(|&w| bound.beta.eval(w) - bound.alpha.eval(w))
        .fold(f64::INFINITY, f64::min);
    while out.len() < cfg.sample_count {
        attempts += 1;
        if attempts > limit {
            return Err(PhaseError::ExhaustedSampling { attempts });
        }
        let stages = rng.random_range(0..=2usize);
        let sections: Vec<LeadLag> = (0..stages)
            .map(|_| LeadLag {
                a: (rng.random::<f64>() * 6.0 - 3.0).exp(),
                b: (rng.random::<f64>() * 6.0 - 3.0).exp(),
            })
            .collect();
        let r = if n == 1 {
            0.0
        } else {
            rng.random::<f64>() * (0.5 * min_width).clamp(0.0, FRAC_PI_2 - 1e-3)
        };
        let m = if n == 1 {
            RMat::identity(1, 1)
        } else {
            random_pd(&mut rng, n, kappa_for_radius(r))
        };
        let fits = eval.iter().all(|&w| {
            let ph: f64 = sections.iter().map(|s| s.phase(w)).sum();
            ph - r >= bound.alpha.eval(w) - cfg.tolerance && ph + r <= bound.beta.eval(w) + cfg.tolerance
        });
        if !fits {
            continue;
        }
        let mut c = (rng.random::<f64>() * 4.0 - 2.0).exp();
        if let Some(delta) = &bound.delta {
            let worst = eval
                .iter()
                .map(|&w| delta.eval(w) / sections.iter().map(|s| s.gain(w)).product::<f64>())
                .chain([delta.eval(f64::MAX) / sections.iter().map(|s| s.gain(f64::MAX)).product::<f64>()])
                .fold(f64::INFINITY, f64::min);
            c = c.min(worst * (1.0 - 1e-6));
            if c <= 0.0 {
                continue;
            }
        }
        out.push(chain_times_matrix(&sections, c, &m)?);
    }
    Ok(out)
}
