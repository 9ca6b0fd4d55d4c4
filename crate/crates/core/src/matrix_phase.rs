//! Normalized numerical range, singular angle and segmental phase of complex matrices.
//!
//! For a nonzero `A` the normalized numerical range is
//! `N(A) = { x*Ax / (|x||Ax|) : Ax ≠ 0 }`, a subset of the closed unit disk.
//! Its smallest covering circular segment defines the segmental phase
//! `Ψ(A) = [γ* − r*, γ* + r*]`, where `γ*` minimizes the singular angle
//! `θ(e^{-jγ}A) = sup arccos Re z` over `z ∈ N(e^{-jγ}A)`.
//!
//! Writing `m(γ) = inf Re(e^{-jγ} z)` over `z ∈ N(A)` gives `θ(e^{-jγ}A) = arccos m(γ)`.
//! Every quantity here is computed from `m`, which [`NnrSolver`] evaluates by
//! multistart descent on the unit sphere.

use std::f64::consts::{PI, TAU};
use std::ops::Deref;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{PhaseError, Result};
use crate::interval::{unwrap_near, wrap_angle, PhaseInterval};
use crate::linalg::{self, CMat, CVec};

pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_SEED: u64 = 0;
pub const CENTER_GRID: usize = 721;

const HERMITIAN_DIRS: usize = 64;
const RANDOM_PER_DIM: usize = 512;
const COARSE_DIRS: usize = 120;
const SINGULAR_RTOL: f64 = 1e-12;

/// A nonzero-dimensional square complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSquareMatrix(CMat);

impl ComplexSquareMatrix {
    pub fn new(m: CMat) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(PhaseError::Dimension(format!(
                "matrix is {}x{}, expected square",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(PhaseError::Dimension("empty matrix".into()));
        }
        Ok(Self(m))
    }

    /// Builds from row-major real and imaginary parts.
    pub fn from_parts(re: &[Vec<f64>], im: &[Vec<f64>]) -> Result<Self> {
        let n = re.len();
        if im.len() != n || re.iter().chain(im).any(|r| r.len() != n) {
            return Err(PhaseError::Dimension("re/im must both be n×n".into()));
        }
        Self::new(CMat::from_fn(n, n, |i, j| Complex64::new(re[i][j], im[i][j])))
    }

    pub fn from_rows(n: usize, entries: &[Complex64]) -> Result<Self> {
        if entries.len() != n * n {
            return Err(PhaseError::Dimension(format!(
                "{} entries for a {n}x{n} matrix",
                entries.len()
            )));
        }
        Self::new(CMat::from_row_slice(n, n, entries))
    }

    pub fn identity(n: usize) -> Self {
        Self(CMat::identity(n, n))
    }

    pub fn diag(d: &[Complex64]) -> Self {
        Self(CMat::from_diagonal(&CVec::from_column_slice(d)))
    }

    /// `c·I` of size `n`.
    pub fn scalar(n: usize, c: Complex64) -> Self {
        Self(CMat::identity(n, n) * c)
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_inner(self) -> CMat {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|z| *z == Complex64::new(0.0, 0.0))
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self(&self.0 * c)
    }

    /// Matrix product `self · rhs`.
    pub fn mul(&self, rhs: &Self) -> Result<Self> {
        if self.n() != rhs.n() {
            return Err(PhaseError::Dimension("product of different sizes".into()));
        }
        Ok(Self(&self.0 * &rhs.0))
    }

    pub fn to_json(&self) -> MatrixJson {
        let n = self.n();
        MatrixJson {
            n,
            re: (0..n).map(|i| (0..n).map(|j| self.0[(i, j)].re).collect()).collect(),
            im: (0..n).map(|i| (0..n).map(|j| self.0[(i, j)].im).collect()).collect(),
        }
    }

    pub fn from_json(j: &MatrixJson) -> Result<Self> {
        if j.re.len() != j.n {
            return Err(PhaseError::Dimension(format!("n = {} but {} rows", j.n, j.re.len())));
        }
        let im = if j.im.is_empty() {
            vec![vec![0.0; j.n]; j.n]
        } else {
            j.im.clone()
        };
        Self::from_parts(&j.re, &im)
    }
}

impl Deref for ComplexSquareMatrix {
    type Target = CMat;
    fn deref(&self) -> &CMat {
        &self.0
    }
}

/// Matrix file format: row-major real and imaginary parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub n: usize,
    pub re: Vec<Vec<f64>>,
    #[serde(default)]
    pub im: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NnrBoundary {
    pub points: Vec<Complex64>,
    pub directions: Vec<f64>,
}

/// One smallest covering segment: `[center - radius, center + radius]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseBranch {
    pub center: f64,
    pub radius: f64,
}

impl PhaseBranch {
    pub fn interval(&self) -> PhaseInterval {
        PhaseInterval::centered(self.center, self.radius)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentalPhase {
    pub branches: Vec<PhaseBranch>,
    /// Set when `θ(e^{-jγ}A) = π` for every `γ`; the single branch then has an arbitrary center.
    pub degenerate: bool,
}

impl SegmentalPhase {
    pub fn radius(&self) -> f64 {
        self.branches[0].radius
    }

    /// Interval of the first branch.
    pub fn interval(&self) -> PhaseInterval {
        self.branches[0].interval()
    }

    pub fn intervals(&self) -> Vec<PhaseInterval> {
        self.branches.iter().map(PhaseBranch::interval).collect()
    }

    pub fn is_multi(&self) -> bool {
        self.branches.len() > 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseCenters {
    pub centers: Vec<f64>,
    pub degenerate: bool,
}

/// The set of matrices whose segmental phase lies in `[alpha, beta]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixPhaseBound {
    pub alpha: f64,
    pub beta: f64,
}

impl MatrixPhaseBound {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(beta - alpha >= 0.0 && beta - alpha < TAU) {
            return Err(PhaseError::InvalidModel(format!(
                "phase bound [{alpha}, {beta}] must satisfy 0 ≤ β − α < 2π"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn interval(&self) -> PhaseInterval {
        PhaseInterval::new(self.alpha, self.beta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CertificationVerdict {
    Certified,
    NotCertified,
}

impl CertificationVerdict {
    pub fn is_certified(self) -> bool {
        self == CertificationVerdict::Certified
    }
}

/// Outcome of the small phase invertibility test for `I + A_m···A_1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvertibilityCertificate {
    pub verdict: CertificationVerdict,
    /// Branch chosen for each matrix (the one giving the best margin if not certified).
    pub selections: Vec<usize>,
    pub sum: PhaseInterval,
    /// `ℓ` with `sum ⊂ (−π, π) + 2πℓ`, when certified.
    pub branch: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledCertificate {
    pub verdict: CertificationVerdict,
    pub gammas: Vec<f64>,
    pub branch: i64,
    pub sum: PhaseInterval,
    pub margin: f64,
}

/// Multistart evaluator of `m(γ) = inf Re(e^{-jγ} z)` over `z ∈ N(A)`.
///
/// Keeps a pool of probe vectors with their NNR points. Every local optimum
/// found is added back to the pool, so repeated queries on nearby rotations
/// get cheaper and better seeded.
#[derive(Clone, Debug)]
pub struct NnrSolver {
    a: CMat,
    n: usize,
    floor: f64,
    pool_x: Vec<CVec>,
    pool_z: Vec<Complex64>,
}

/// A local minimizer of `Re(e^{-jγ} z(x))`.
#[derive(Clone, Debug)]
pub struct Support {
    pub value: f64,
    pub x: CVec,
    pub z: Complex64,
}

impl NnrSolver {
    pub fn new(a: &ComplexSquareMatrix, seed: u64) -> Result<Self> {
        if a.is_zero() {
            return Err(PhaseError::ZeroMatrix);
        }
        let m = a.matrix().clone();
        let n = m.nrows();
        let floor = SINGULAR_RTOL * linalg::sigma_max(&m);
        let mut s = Self {
            a: m,
            n,
            floor,
            pool_x: Vec::new(),
            pool_z: Vec::new(),
        };
        s.seed_pool(seed, HERMITIAN_DIRS, RANDOM_PER_DIM);
        Ok(s)
    }

    /// A solver with a small pool plus caller-supplied warm vectors, for
    /// tracking the phase of a slowly varying matrix.
    pub fn light(a: &ComplexSquareMatrix, warm: &[CVec], seed: u64) -> Result<Self> {
        if a.is_zero() {
            return Err(PhaseError::ZeroMatrix);
        }
        let m = a.matrix().clone();
        let n = m.nrows();
        let floor = SINGULAR_RTOL * linalg::sigma_max(&m);
        let mut s = Self {
            a: m,
            n,
            floor,
            pool_x: Vec::new(),
            pool_z: Vec::new(),
        };
        for x in warm {
            s.push(x.clone());
        }
        s.seed_pool(seed, 8, 16);
        Ok(s)
    }

    fn seed_pool(&mut self, seed: u64, dirs: usize, per_dim: usize) {
        let n = self.n;
        let a = self.a.clone();
        let scale = linalg::frobenius(&a);
        for lambda in linalg::eigenvalues(&a) {
            if lambda.norm() > 1e-10 * scale {
                self.push(linalg::eigenvector(&a, lambda));
            }
        }
        let svd = a.clone().svd(false, true);
        if let Some(vt) = svd.v_t {
            for i in 0..n {
                self.push(vt.row(i).adjoint());
            }
        }
        for k in 0..dirs {
            let phi = -PI + TAU * k as f64 / dirs as f64;
            let b = &a * Complex64::from_polar(1.0, -phi);
            let h = (&b + b.adjoint()) * Complex64::new(0.5, 0.0);
            let (_, vecs) = linalg::hermitian_eig(&h);
            for v in vecs {
                self.push(v);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..per_dim * n {
            let v = CVec::from_fn(n, |_, _| {
                Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
            });
            self.push(v);
        }
    }

    fn push(&mut self, x: CVec) {
        let nx = x.norm();
        if nx == 0.0 || !nx.is_finite() {
            return;
        }
        let x = x / Complex64::new(nx, 0.0);
        if let Some(z) = self.point(&x) {
            self.pool_x.push(x);
            self.pool_z.push(z);
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `x*Ax / (|x||Ax|)`, or `None` when `Ax` is numerically zero.
    pub fn point(&self, x: &CVec) -> Option<Complex64> {
        let y = &self.a * x;
        let ny = y.norm();
        let nx = x.norm();
        if ny <= self.floor * nx || nx == 0.0 {
            return None;
        }
        Some(x.dotc(&y) / (nx * ny))
    }

    /// Value and Euclidean gradient of `f(x) = Re(w x*Ax)/|Ax|` at a unit vector.
    fn value_grad(&self, x: &CVec, w: Complex64) -> Option<(f64, CVec)> {
        let y = &self.a * x;
        let ny = y.norm();
        if ny <= self.floor {
            return None;
        }
        let u = self.a.ad_mul(x);
        let v = self.a.ad_mul(&y);
        let f = (w * x.dotc(&y)).re / ny;
        let hx = (&y * w + &u * w.conj()) * Complex64::new(0.5, 0.0);
        let g = hx * Complex64::new(2.0 / ny, 0.0) - (x + v / Complex64::new(ny * ny, 0.0)) * Complex64::new(f, 0.0);
        Some((f, g))
    }

    /// Barzilai–Borwein descent with Armijo backtracking, renormalized to the sphere.
    fn descend(&self, x0: &CVec, w: Complex64) -> Option<(f64, CVec)> {
        let mut x = x0 / Complex64::new(x0.norm(), 0.0);
        let (mut f, mut g) = self.value_grad(&x, w)?;
        let mut gn = g.norm();
        let mut step = 0.1 / gn.max(1e-12);
        let mut stall = 0;
        for _ in 0..400 {
            if gn < 1e-11 {
                break;
            }
            let mut t = step;
            let mut accepted = None;
            for _ in 0..40 {
                let trial = &x - &g * Complex64::new(t, 0.0);
                let nt = trial.norm();
                let trial = trial / Complex64::new(nt, 0.0);
                if let Some((ft, gt)) = self.value_grad(&trial, w) {
                    if ft <= f - 1e-4 * t * gn * gn {
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                }
                t *= 0.5;
            }
            let Some((xn, fnew, gnew)) = accepted else { break };
            let s = &xn - &x;
            let yk = &gnew - &g;
            let sy = s.dotc(&yk).re;
            step = if sy > 0.0 {
                (s.norm_squared() / sy).clamp(1e-10, 1e6)
            } else {
                t * 4.0
            };
            stall = if f - fnew < 1e-16 { stall + 1 } else { 0 };
            x = xn;
            f = fnew;
            g = gnew;
            gn = g.norm();
            if stall >= 3 {
                break;
            }
        }
        Some((f, x))
    }

    /// Indices of up to `k` pool points with the smallest projection, spread apart in the plane.
    fn best_seeds(&self, w: Complex64, k: usize) -> Vec<usize> {
        let proj: Vec<f64> = self.pool_z.iter().map(|z| (w * z).re).collect();
        let mut chosen: Vec<usize> = Vec::with_capacity(k);
        while chosen.len() < k {
            let next = (0..proj.len())
                .filter(|&i| chosen.iter().all(|&c| (self.pool_z[c] - self.pool_z[i]).norm() > 0.05))
                .min_by(|&i, &j| proj[i].total_cmp(&proj[j]));
            match next {
                Some(i) => chosen.push(i),
                None => break,
            }
        }
        chosen
    }

    /// Pool-only upper bound on `m(γ)`.
    pub fn pool_projection(&self, gamma: f64) -> f64 {
        let w = Complex64::from_polar(1.0, -gamma);
        self.pool_z
            .iter()
            .map(|z| (w * z).re)
            .fold(f64::INFINITY, f64::min)
    }

    /// `m(γ)` by local descent from the best pool points and any warm starts.
    pub fn min_projection(&mut self, gamma: f64, warm: &[&CVec], seeds: usize) -> Support {
        let w = Complex64::from_polar(1.0, -gamma);
        let mut starts: Vec<CVec> = self
            .best_seeds(w, seeds)
            .into_iter()
            .map(|i| self.pool_x[i].clone())
            .collect();
        starts.extend(warm.iter().map(|x| (*x).clone()));
        let mut best: Option<(f64, CVec)> = None;
        for s in &starts {
            if let Some((f, x)) = self.descend(s, w) {
                if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                    best = Some((f, x));
                }
            }
        }
        let (value, x) = best.expect("pool always holds at least one admissible vector");
        let z = self.point(&x).expect("descent stays admissible");
        self.pool_x.push(x.clone());
        self.pool_z.push(z);
        Support { value, x, z }
    }

    /// `θ(e^{-jγ}A)`.
    pub fn rotated_angle(&mut self, gamma: f64) -> f64 {
        let s = self.min_projection(gamma, &[], 4);
        s.value.clamp(-1.0, 1.0).acos()
    }

    /// Maximizes `m` over `[lo, hi]` by golden-section search, then tries the
    /// exact tangency center suggested by the touching point.
    fn refine(&mut self, lo: f64, hi: f64, warm: CVec) -> (f64, Support) {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (lo, hi);
        let mut x1 = b - g * (b - a);
        let mut x2 = a + g * (b - a);
        let mut s1 = self.min_projection(x1, &[&warm], 1);
        let mut s2 = self.min_projection(x2, &[&s1.x], 1);
        while b - a > 1e-10 {
            if s1.value >= s2.value {
                b = x2;
                x2 = x1;
                s2 = s1;
                x1 = b - g * (b - a);
                s1 = self.min_projection(x1, &[&s2.x], 1);
            } else {
                a = x1;
                x1 = x2;
                s1 = s2;
                x2 = a + g * (b - a);
                s2 = self.min_projection(x2, &[&s1.x], 1);
            }
        }
        let (mut gamma, mut best) = if s1.value >= s2.value { (x1, s1) } else { (x2, s2) };
        if best.value.abs() > 1e-9 {
            let touch = if best.value > 0.0 { best.z } else { -best.z };
            let gc = unwrap_near(touch.arg(), gamma);
            let sc = self.min_projection(gc, &[&best.x], 2);
            if sc.value >= best.value - 1e-13 {
                gamma = gc;
                best = sc;
            }
        }
        (gamma, best)
    }

    /// All global minimizers of `γ ↦ θ(e^{-jγ}A)` with the common minimum.
    pub fn centers(&mut self, tol: f64) -> (Vec<f64>, f64, bool) {
        let coarse: Vec<f64> = (0..COARSE_DIRS)
            .map(|k| -PI + TAU * k as f64 / COARSE_DIRS as f64)
            .collect();
        let mut prev: Option<CVec> = None;
        for &gm in coarse.iter().chain(coarse.iter().rev()) {
            let warm: Vec<&CVec> = prev.iter().collect();
            let s = self.min_projection(gm, &warm, 2);
            prev = Some(s.x);
        }
        let step = TAU / CENTER_GRID as f64;
        let grid: Vec<f64> = (0..CENTER_GRID).map(|k| -PI + step * k as f64).collect();
        let mt: Vec<f64> = grid.iter().map(|&gm| self.pool_projection(gm)).collect();
        let theta_t: Vec<f64> = mt.iter().map(|m| m.clamp(-1.0, 1.0).acos()).collect();
        let tmin = theta_t.iter().copied().fold(f64::INFINITY, f64::min);
        let len = grid.len();
        let mut cands: Vec<usize> = (0..len)
            .filter(|&i| {
                let l = mt[(i + len - 1) % len];
                let r = mt[(i + 1) % len];
                mt[i] >= l && mt[i] >= r && theta_t[i] <= tmin + 0.15
            })
            .collect();
        cands.sort_by(|&i, &j| mt[j].total_cmp(&mt[i]));
        let mut picked: Vec<usize> = Vec::new();
        for i in cands {
            let near = picked.iter().any(|&p| {
                let d = (p as isize - i as isize).unsigned_abs();
                d.min(len - d) <= 3
            });
            if !near {
                picked.push(i);
            }
            if picked.len() >= 12 {
                break;
            }
        }
        let mut found: Vec<(f64, f64)> = Vec::new();
        for i in picked {
            let gm = grid[i];
            let w = Complex64::from_polar(1.0, -gm);
            let seed = self.best_seeds(w, 1)[0];
            let warm = self.pool_x[seed].clone();
            let (gc, s) = self.refine(gm - 3.0 * step, gm + 3.0 * step, warm);
            found.push((wrap_angle(gc), s.value.clamp(-1.0, 1.0).acos()));
        }
        let rstar = found.iter().map(|f| f.1).fold(f64::INFINITY, f64::min);
        if rstar >= PI - tol {
            return (grid, PI, true);
        }
        found.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut centers: Vec<f64> = Vec::new();
        for (gc, th) in found {
            if th > rstar + tol {
                continue;
            }
            let mut dup = false;
            for &c in &centers {
                let d = wrap_angle(gc - c);
                if d.abs() <= 10.0 * tol {
                    dup = true;
                } else {
                    // same basin unless θ rises by more than tol somewhere between them
                    let ridge = (1..4)
                        .map(|k| self.rotated_angle(c + d * k as f64 / 4.0))
                        .fold(f64::NEG_INFINITY, f64::max);
                    dup = ridge <= rstar + tol;
                }
                if dup {
                    break;
                }
            }
            if !dup {
                centers.push(gc);
            }
        }
        (centers, rstar, false)
    }

    /// The center nearest `guess` found by a local search in `guess ± window`.
    ///
    /// Returns `None` if the best point sits on the window edge, which means
    /// the local minimum is not bracketed.
    pub fn local_center(&mut self, guess: f64, window: f64, warm: Option<&CVec>) -> Option<(f64, f64, CVec)> {
        let start = match warm {
            Some(x) => x.clone(),
            None => {
                let w = Complex64::from_polar(1.0, -guess);
                let i = self.best_seeds(w, 1)[0];
                self.pool_x[i].clone()
            }
        };
        let (gc, s) = self.refine(guess - window, guess + window, start);
        if (gc - (guess - window)).abs() < 1e-6 || (gc - (guess + window)).abs() < 1e-6 {
            return None;
        }
        Some((gc, s.value.clamp(-1.0, 1.0).acos(), s.x))
    }
}

fn nonzero(a: &ComplexSquareMatrix) -> Result<()> {
    if a.is_zero() {
        Err(PhaseError::ZeroMatrix)
    } else {
        Ok(())
    }
}

fn scalar_entry(a: &ComplexSquareMatrix) -> Option<Complex64> {
    (a.n() == 1).then(|| a[(0, 0)])
}

pub fn nnr_boundary(a: &ComplexSquareMatrix, n_dirs: usize, _tol: f64) -> Result<NnrBoundary> {
    let mut solver = NnrSolver::new(a, DEFAULT_SEED)?;
    let directions: Vec<f64> = (0..n_dirs)
        .map(|k| -PI + TAU * k as f64 / n_dirs as f64)
        .collect();
    let mut prev: Option<CVec> = None;
    let mut points = Vec::with_capacity(n_dirs);
    for &phi in &directions {
        let warm: Vec<&CVec> = prev.iter().collect();
        let s = solver.min_projection(phi + PI, &warm, 3);
        points.push(s.z);
        prev = Some(s.x);
    }
    Ok(NnrBoundary { points, directions })
}

pub fn singular_angle(a: &ComplexSquareMatrix, tol: f64) -> Result<f64> {
    rotated_singular_angle(a, 0.0, tol)
}

/// `θ(e^{-jγ}A)`.
pub fn rotated_singular_angle(a: &ComplexSquareMatrix, gamma: f64, _tol: f64) -> Result<f64> {
    nonzero(a)?;
    if let Some(p) = scalar_entry(a) {
        return Ok(wrap_angle(p.arg() - gamma).abs());
    }
    let mut solver = NnrSolver::new(a, DEFAULT_SEED)?;
    Ok(solver.rotated_angle(gamma))
}

pub fn phase_center(a: &ComplexSquareMatrix, tol: f64) -> Result<PhaseCenters> {
    nonzero(a)?;
    if let Some(p) = scalar_entry(a) {
        return Ok(PhaseCenters {
            centers: vec![wrap_angle(p.arg())],
            degenerate: false,
        });
    }
    let mut solver = NnrSolver::new(a, DEFAULT_SEED)?;
    let (centers, _, degenerate) = solver.centers(tol);
    Ok(PhaseCenters { centers, degenerate })
}

pub fn segmental_phase(a: &ComplexSquareMatrix, tol: f64) -> Result<SegmentalPhase> {
    segmental_phase_seeded(a, tol, DEFAULT_SEED)
}

pub fn segmental_phase_seeded(a: &ComplexSquareMatrix, tol: f64, seed: u64) -> Result<SegmentalPhase> {
    nonzero(a)?;
    if let Some(p) = scalar_entry(a) {
        return Ok(SegmentalPhase {
            branches: vec![PhaseBranch {
                center: wrap_angle(p.arg()),
                radius: 0.0,
            }],
            degenerate: false,
        });
    }
    let mut solver = NnrSolver::new(a, seed)?;
    let (centers, radius, degenerate) = solver.centers(tol);
    if degenerate {
        return Ok(SegmentalPhase {
            branches: vec![PhaseBranch { center: 0.0, radius: PI }],
            degenerate: true,
        });
    }
    Ok(SegmentalPhase {
        branches: centers
            .into_iter()
            .map(|center| PhaseBranch { center, radius })
            .collect(),
        degenerate: false,
    })
}

/// `[γ − θ(e^{-jγ}A), γ + θ(e^{-jγ}A)]`.
pub fn gamma_segmental_phase(a: &ComplexSquareMatrix, gamma: f64, tol: f64) -> Result<PhaseInterval> {
    let th = rotated_singular_angle(a, gamma, tol)?;
    Ok(PhaseInterval::centered(gamma, th))
}

pub fn is_sectorial(a: &ComplexSquareMatrix, tol: f64) -> bool {
    if a.is_zero() {
        return false;
    }
    match segmental_phase(a, tol) {
        Ok(sp) => !sp.degenerate && sp.radius().cos() > tol,
        Err(_) => false,
    }
}

/// Argument hull of `N(A)` for a sectorial matrix.
///
/// `∠z` over `N(A)` equals `∠(x*Ax)` over the numerical range, so the bounding
/// rays come from sign tests on extreme eigenvalues of Hermitian parts.
pub fn sectorial_phase(a: &ComplexSquareMatrix, tol: f64) -> Result<PhaseInterval> {
    nonzero(a)?;
    let sp = segmental_phase(a, tol)?;
    if sp.degenerate || sp.radius().cos() <= tol {
        return Err(PhaseError::NotSectorial);
    }
    let center = sp.branches[0].center;
    let m = a.matrix();
    let herm = |delta: f64| {
        let b = m * Complex64::from_polar(1.0, -(center + delta + PI / 2.0));
        let h = (&b + b.adjoint()) * Complex64::new(0.5, 0.0);
        linalg::hermitian_eig(&h).0
    };
    let scale = linalg::sigma_max(m);
    let eps = 1e-13 * scale;
    // all of W rotated by -center lies at angle ≤ δ  ⇔  λ_max ≤ 0
    let upper = bisect(|d| *herm(d).last().unwrap() <= eps);
    // all at angle ≥ δ  ⇔  λ_min ≥ 0
    let lower = -bisect(|d| herm(-d)[0] >= -eps);
    Ok(PhaseInterval::new(center + lower, center + upper))
}

/// Smallest `δ ∈ [−π/2, π/2]` with `pred(δ)`, for a predicate monotone in `δ`.
fn bisect(pred: impl Fn(f64) -> bool) -> f64 {
    let (mut lo, mut hi) = (-PI / 2.0, PI / 2.0);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Segmental phase of a unitary matrix from the largest circular gap of its eigen-angles.
pub fn unitary_phase(u: &CMat, tol: f64) -> SegmentalPhase {
    let mut angles: Vec<f64> = linalg::eigenvalues(u).iter().map(|l| l.arg()).collect();
    angles.sort_by(f64::total_cmp);
    let k = angles.len();
    let gaps: Vec<(f64, f64)> = (0..k)
        .map(|i| {
            let start = angles[i];
            let end = if i + 1 < k { angles[i + 1] } else { angles[0] + TAU };
            (start, end - start)
        })
        .collect();
    let widest = gaps.iter().map(|g| g.1).fold(0.0, f64::max);
    let mut branches: Vec<PhaseBranch> = Vec::new();
    for &(start, gap) in &gaps {
        if gap < widest - tol {
            continue;
        }
        // the covering arc runs from the end of the gap round to its start
        let radius = if gap >= TAU - tol { 0.0 } else { (TAU - gap) / 2.0 };
        let center = wrap_angle(start + gap + radius);
        if branches.iter().all(|b| wrap_angle(b.center - center).abs() > 10.0 * tol) {
            branches.push(PhaseBranch { center, radius });
        }
    }
    SegmentalPhase {
        branches,
        degenerate: false,
    }
}

/// Segmental phase of the unitary polar factor.
pub fn principal_phase(a: &ComplexSquareMatrix, tol: f64) -> Result<SegmentalPhase> {
    let s = linalg::singular_values(a.matrix());
    if s.last().copied().unwrap_or(0.0) <= SINGULAR_RTOL * s[0] || s[0] == 0.0 {
        return Err(PhaseError::Singular);
    }
    Ok(unitary_phase(&linalg::polar_unitary(a.matrix()), tol))
}

/// Principal arguments in `(−π, π]` of the nonzero eigenvalues.
pub fn eigen_args(a: &ComplexSquareMatrix) -> Vec<f64> {
    let scale = linalg::frobenius(a.matrix());
    linalg::eigenvalues(a.matrix())
        .into_iter()
        .filter(|l| l.norm() > 1e-10 * scale)
        .map(|l| l.arg())
        .collect()
}

/// Product `A_m···A_1` of a list given in order `A_1, …, A_m`.
pub fn ordered_product(mats: &[ComplexSquareMatrix]) -> Result<ComplexSquareMatrix> {
    let mut it = mats.iter();
    let first = it
        .next()
        .ok_or_else(|| PhaseError::Dimension("empty matrix list".into()))?
        .clone();
    it.try_fold(first, |acc, m| m.mul(&acc))
}

/// Checks that every nonzero eigenvalue argument of `A_m···A_1` fits the summed phases.
///
/// `selections[k]` picks the branch of `Ψ(A_k)`. Returns the offending eigenvalues.
pub fn check_product_eigen_phase_bound(
    mats: &[ComplexSquareMatrix],
    phases: &[SegmentalPhase],
    selections: &[usize],
    tol: f64,
) -> Result<(bool, Vec<Complex64>)> {
    if mats.len() != phases.len() || mats.len() != selections.len() {
        return Err(PhaseError::Dimension("one phase and one selection per matrix".into()));
    }
    let sum: PhaseInterval = phases
        .iter()
        .zip(selections)
        .map(|(p, &k)| p.branches[k.min(p.branches.len() - 1)].interval())
        .sum();
    let (lo, hi) = sum.bounds().expect("branch intervals are never empty");
    let prod = ordered_product(mats)?;
    let scale = linalg::frobenius(prod.matrix());
    let bad: Vec<Complex64> = linalg::eigenvalues(prod.matrix())
        .into_iter()
        .filter(|l| l.norm() > 1e-9 * scale)
        .filter(|l| {
            let a = unwrap_near(l.arg(), 0.5 * (lo + hi));
            let fits = |x: f64| x >= lo - tol && x <= hi + tol;
            !(fits(a) || fits(a - TAU) || fits(a + TAU))
        })
        .collect();
    Ok((bad.is_empty(), bad))
}

/// Small phase test for the invertibility of `I + A_m···A_1`.
pub fn certify_invertibility_small_phase(mats: &[ComplexSquareMatrix], tol: f64) -> Result<InvertibilityCertificate> {
    let phases: Vec<SegmentalPhase> = mats
        .iter()
        .map(|a| segmental_phase(a, tol))
        .collect::<Result<_>>()?;
    Ok(certify_from_phases(&phases))
}

/// Same test on precomputed segmental phases. Tries every branch combination.
pub fn certify_from_phases(phases: &[SegmentalPhase]) -> InvertibilityCertificate {
    let counts: Vec<usize> = phases.iter().map(|p| p.branches.len()).collect();
    let mut sel = vec![0usize; phases.len()];
    let mut best: Option<(f64, Vec<usize>, PhaseInterval)> = None;
    loop {
        let sum: PhaseInterval = phases
            .iter()
            .zip(&sel)
            .map(|(p, &k)| p.branches[k].interval())
            .sum();
        let margin = cone_margin_any(&sum);
        if best.as_ref().is_none_or(|b| margin > b.0) {
            best = Some((margin, sel.clone(), sum));
        }
        if !advance(&mut sel, &counts) {
            break;
        }
    }
    let (_, selections, sum) = best.expect("at least one combination");
    let branch = sum.in_open_pi_cone(true);
    InvertibilityCertificate {
        verdict: if branch.is_some() {
            CertificationVerdict::Certified
        } else {
            CertificationVerdict::NotCertified
        },
        selections,
        sum,
        branch,
    }
}

fn advance(sel: &mut [usize], counts: &[usize]) -> bool {
    for i in 0..sel.len() {
        sel[i] += 1;
        if sel[i] < counts[i] {
            return true;
        }
        sel[i] = 0;
    }
    false
}

/// Clearance of an interval to the boundary of the best cone `(−π, π) + 2πℓ`.
pub(crate) fn cone_margin_any(iv: &PhaseInterval) -> f64 {
    match iv.midpoint() {
        Some(mid) => iv
            .cone_margin((mid / TAU).round() as i64)
            .unwrap_or(f64::NEG_INFINITY),
        None => f64::NEG_INFINITY,
    }
}

/// Profile `θ(e^{-jγ}A)` on a set of rotations, computed by warm-started continuation.
pub fn rotated_angle_profile(a: &ComplexSquareMatrix, gammas: &[f64]) -> Result<Vec<f64>> {
    nonzero(a)?;
    if let Some(p) = scalar_entry(a) {
        return Ok(gammas.iter().map(|g| wrap_angle(p.arg() - g).abs()).collect());
    }
    let mut solver = NnrSolver::new(a, DEFAULT_SEED)?;
    let mut prev: Option<CVec> = None;
    let mut out = Vec::with_capacity(gammas.len());
    for &g in gammas {
        let warm: Vec<&CVec> = prev.iter().collect();
        let s = solver.min_projection(g, &warm, 2);
        out.push(s.value.clamp(-1.0, 1.0).acos());
        prev = Some(s.x);
    }
    Ok(out)
}

const SCALE_POINTS: usize = 181;
const SCALE_HALF_WIDTH: f64 = PI / 4.0;

/// Angular-scaling test for `I + A_m···A_1` with some factors only known through phase bounds.
///
/// Each known factor gets a prescribed center `γ_k` searched on a grid
/// around its own phase center; the bounds enter the sum unchanged.
pub fn certify_invertibility_scaled(
    known: &[ComplexSquareMatrix],
    uncertain: &[MatrixPhaseBound],
    tol: f64,
) -> Result<ScaledCertificate> {
    let mut grids: Vec<Vec<f64>> = Vec::new();
    let mut profiles: Vec<Vec<PhaseInterval>> = Vec::new();
    for a in known {
        let sp = segmental_phase(a, tol)?;
        let base = sp.branches[0].center;
        let mut grid: Vec<f64> = (0..SCALE_POINTS)
            .map(|k| base - SCALE_HALF_WIDTH + 2.0 * SCALE_HALF_WIDTH * k as f64 / (SCALE_POINTS - 1) as f64)
            .collect();
        // exact zero is a natural candidate and often the one a user wants to see
        if grid[0] < 0.0 && *grid.last().unwrap() > 0.0 {
            grid.push(0.0);
        }
        let th = rotated_angle_profile(a, &grid)?;
        profiles.push(grid.iter().zip(&th).map(|(&g, &t)| PhaseInterval::centered(g, t)).collect());
        grids.push(grid);
    }
    let fixed: PhaseInterval = uncertain.iter().map(MatrixPhaseBound::interval).sum();
    let score = |sel: &[usize]| -> (f64, f64, f64) {
        let sum: PhaseInterval = profiles.iter().zip(sel).map(|(p, &i)| p[i]).sum::<PhaseInterval>() + fixed;
        let gmax = grids.iter().zip(sel).map(|(g, &i)| g[i].abs()).fold(0.0, f64::max);
        (-cone_margin_any(&sum), sum.width().unwrap_or(f64::INFINITY), gmax)
    };
    let better = |a: (f64, f64, f64), b: (f64, f64, f64)| {
        if (a.0 - b.0).abs() > 1e-12 {
            a.0 < b.0
        } else if (a.1 - b.1).abs() > 1e-12 {
            a.1 < b.1
        } else {
            a.2 < b.2 - 1e-12
        }
    };
    let mut sel: Vec<usize> = vec![(SCALE_POINTS - 1) / 2; known.len()];
    let mut cur = score(&sel);
    for _ in 0..3 {
        let mut changed = false;
        for k in 0..known.len() {
            for i in 0..grids[k].len() {
                let mut trial = sel.clone();
                trial[k] = i;
                let s = score(&trial);
                if better(s, cur) {
                    cur = s;
                    sel = trial;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let gammas: Vec<f64> = grids.iter().zip(&sel).map(|(g, &i)| g[i]).collect();
    let sum: PhaseInterval = profiles.iter().zip(&sel).map(|(p, &i)| p[i]).sum::<PhaseInterval>() + fixed;
    Ok(scaled_verdict(gammas, sum))
}

/// The scaled test at user-chosen centers.
pub fn certify_invertibility_scaled_at(
    known: &[ComplexSquareMatrix],
    gammas: &[f64],
    uncertain: &[MatrixPhaseBound],
    tol: f64,
) -> Result<ScaledCertificate> {
    if known.len() != gammas.len() {
        return Err(PhaseError::Dimension("one center per known matrix".into()));
    }
    let mut sum: PhaseInterval = uncertain.iter().map(MatrixPhaseBound::interval).sum();
    for (a, &g) in known.iter().zip(gammas) {
        sum = sum + gamma_segmental_phase(a, g, tol)?;
    }
    Ok(scaled_verdict(gammas.to_vec(), sum))
}

fn scaled_verdict(gammas: Vec<f64>, sum: PhaseInterval) -> ScaledCertificate {
    let branch = sum.in_open_pi_cone(true);
    let margin = cone_margin_any(&sum);
    ScaledCertificate {
        verdict: if branch.is_some() {
            CertificationVerdict::Certified
        } else {
            CertificationVerdict::NotCertified
        },
        gammas,
        branch: branch.unwrap_or_else(|| sum.midpoint().map_or(0, |m| (m / TAU).round() as i64)),
        sum,
        margin,
    }
}

/// A random unit vector, used by samplers.
pub fn random_unit(rng: &mut impl Rng, n: usize) -> CVec {
    let v = DVector::from_fn(n, |_, _| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let nv = v.norm();
    v / Complex64::new(nv, 0.0)
}
