//! Real-rational square MIMO systems, their `jω`-axis structure and phase responses.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{PhaseError, Result};
use crate::interval::{unwrap_near, wrap_angle, PhaseInterval};
use crate::linalg::{self, CMat, CVec, RMat};
use crate::matrix_phase::{
    self, ComplexSquareMatrix, NnrSolver, PhaseBranch, SegmentalPhase, DEFAULT_SEED,
};

/// `P(s) = C(sI − A)⁻¹B + D` with `n` inputs and `n` outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpaceSystem {
    pub a: RMat,
    pub b: RMat,
    pub c: RMat,
    pub d: RMat,
    poles: Vec<Complex64>,
}

/// A scalar rational function, coefficients in ascending powers of `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rational {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

impl Rational {
    pub fn new(num: &[f64], den: &[f64]) -> Self {
        Self {
            num: num.to_vec(),
            den: den.to_vec(),
        }
    }

    pub fn constant(k: f64) -> Self {
        Self::new(&[k], &[1.0])
    }
}

fn trim(p: &[f64]) -> Vec<f64> {
    let mut v = p.to_vec();
    while v.len() > 1 && *v.last().unwrap() == 0.0 {
        v.pop();
    }
    v
}

/// Controllable canonical realization of one proper scalar entry.
fn realize_scalar(r: &Rational) -> Result<(RMat, RMat, RMat, f64)> {
    let den = trim(&r.den);
    let num = trim(&r.num);
    if den.iter().all(|&x| x == 0.0) {
        return Err(PhaseError::InvalidModel("zero denominator".into()));
    }
    let k = den.len() - 1;
    if num.len() - 1 > k && num.iter().any(|&x| x != 0.0) {
        return Err(PhaseError::InvalidModel("improper transfer function".into()));
    }
    let lead = den[k];
    let a_coef: Vec<f64> = den.iter().map(|x| x / lead).collect();
    let mut b_coef: Vec<f64> = (0..=k).map(|i| num.get(i).copied().unwrap_or(0.0) / lead).collect();
    let d = b_coef[k];
    for i in 0..k {
        b_coef[i] -= d * a_coef[i];
    }
    let a = RMat::from_fn(k, k, |i, j| {
        if i + 1 < k {
            if j == i + 1 {
                1.0
            } else {
                0.0
            }
        } else {
            -a_coef[j]
        }
    });
    let mut b = RMat::zeros(k, 1);
    if k > 0 {
        b[(k - 1, 0)] = 1.0;
    }
    let c = RMat::from_fn(1, k, |_, j| b_coef[j]);
    Ok((a, b, c, d))
}

/// Orthonormal basis of the smallest `A`-invariant subspace containing the columns of `b`.
fn krylov_basis(a: &RMat, b: &RMat, tol: f64) -> RMat {
    let nx = a.nrows();
    let mut basis = RMat::zeros(nx, 0);
    let mut block = b.clone();
    for _ in 0..=nx {
        // project out what we already have, twice for stability
        for _ in 0..2 {
            if basis.ncols() > 0 {
                block = &block - &basis * (basis.transpose() * &block);
            }
        }
        let fresh = linalg::real_range_basis(&block, 0.0, tol);
        if fresh.ncols() == 0 {
            break;
        }
        let mut next = RMat::zeros(nx, basis.ncols() + fresh.ncols());
        next.columns_mut(0, basis.ncols()).copy_from(&basis);
        next.columns_mut(basis.ncols(), fresh.ncols()).copy_from(&fresh);
        basis = next;
        if basis.ncols() >= nx {
            break;
        }
        block = a * &fresh;
    }
    basis
}

impl StateSpaceSystem {
    /// Builds the system and reduces it to a minimal realization.
    pub fn new(a: RMat, b: RMat, c: RMat, d: RMat) -> Result<Self> {
        Ok(Self::unreduced(a, b, c, d)?.minimal())
    }

    /// Builds the system exactly as given.
    pub fn unreduced(a: RMat, b: RMat, c: RMat, d: RMat) -> Result<Self> {
        let nx = a.nrows();
        let n = d.nrows();
        if a.ncols() != nx || b.nrows() != nx || c.ncols() != nx {
            return Err(PhaseError::Dimension("state dimensions of A, B, C disagree".into()));
        }
        if d.ncols() != n || b.ncols() != n || c.nrows() != n {
            return Err(PhaseError::Dimension("system must be square: B is nx×n, C is n×nx, D is n×n".into()));
        }
        if n == 0 {
            return Err(PhaseError::Dimension("zero input/output dimension".into()));
        }
        if a.iter().chain(b.iter()).chain(c.iter()).chain(d.iter()).any(|x| !x.is_finite()) {
            return Err(PhaseError::InvalidModel("non-finite entry".into()));
        }
        let poles = linalg::real_eigenvalues(&a);
        Ok(Self { a, b, c, d, poles })
    }

    pub fn static_gain(d: RMat) -> Result<Self> {
        let n = d.nrows();
        Self::unreduced(RMat::zeros(0, 0), RMat::zeros(0, n), RMat::zeros(n, 0), d)
    }

    /// Realizes a matrix of scalar transfer functions, one canonical block per entry, then minimizes.
    pub fn from_tf(entries: &[Vec<Rational>]) -> Result<Self> {
        let n = entries.len();
        if n == 0 || entries.iter().any(|r| r.len() != n) {
            return Err(PhaseError::Dimension("transfer matrix must be square and nonempty".into()));
        }
        let mut blocks = Vec::new();
        let mut d = RMat::zeros(n, n);
        for (i, row) in entries.iter().enumerate() {
            for (j, r) in row.iter().enumerate() {
                let (a, b, c, dd) = realize_scalar(r)?;
                d[(i, j)] = dd;
                blocks.push((i, j, a, b, c));
            }
        }
        let nx: usize = blocks.iter().map(|b| b.2.nrows()).sum();
        let mut a = RMat::zeros(nx, nx);
        let mut b = RMat::zeros(nx, n);
        let mut c = RMat::zeros(n, nx);
        let mut off = 0;
        for (i, j, ab, bb, cb) in &blocks {
            let k = ab.nrows();
            a.view_mut((off, off), (k, k)).copy_from(ab);
            b.view_mut((off, *j), (k, 1)).copy_from(bb);
            c.view_mut((*i, off), (1, k)).copy_from(cb);
            off += k;
        }
        Self::new(a, b, c, d)
    }

    /// Scalar system `num(s)/den(s)`.
    pub fn siso(num: &[f64], den: &[f64]) -> Result<Self> {
        Self::from_tf(&[vec![Rational::new(num, den)]])
    }

    /// Kalman reduction to the controllable and observable part.
    pub fn minimal(&self) -> Self {
        if self.states() == 0 {
            return self.clone();
        }
        let scale = self.a.norm().max(self.b.norm()).max(self.c.norm()).max(1.0);
        let tol = 1e-9 * scale;
        let v = krylov_basis(&self.a, &self.b, tol);
        let ac = v.transpose() * &self.a * &v;
        let bc = v.transpose() * &self.b;
        let cc = &self.c * &v;
        let w = krylov_basis(&ac.transpose(), &cc.transpose(), tol);
        let a = w.transpose() * &ac * &w;
        let b = w.transpose() * &bc;
        let c = &cc * &w;
        Self::unreduced(a, b, c, self.d.clone()).expect("projection keeps dimensions consistent")
    }

    /// Input/output dimension.
    pub fn io_dim(&self) -> usize {
        self.d.nrows()
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn poles(&self) -> &[Complex64] {
        &self.poles
    }

    /// `P(s)`.
    pub fn freq_response(&self, s: Complex64) -> Result<CMat> {
        let nx = self.states();
        let d = linalg::to_complex(&self.d);
        if nx == 0 {
            return Ok(d);
        }
        for p in &self.poles {
            let dist = (s - p).norm();
            if dist < 1e-10 {
                return Err(PhaseError::PoleEvaluation {
                    pole: format!("{p}"),
                    distance: dist,
                });
            }
        }
        let m = CMat::identity(nx, nx) * s - linalg::to_complex(&self.a);
        let x = m
            .lu()
            .solve(&linalg::to_complex(&self.b))
            .ok_or(PhaseError::PoleEvaluation {
                pole: format!("{s}"),
                distance: 0.0,
            })?;
        Ok(linalg::to_complex(&self.c) * x + d)
    }

    /// Poles with each near-coincident cluster replaced by its mean; repeated poles split under rounding.
    fn clustered_poles(&self) -> Vec<Complex64> {
        let ps = &self.poles;
        let mut label: Vec<usize> = (0..ps.len()).collect();
        for i in 0..ps.len() {
            for j in 0..i {
                if (ps[i] - ps[j]).norm() < 1e-4 * (1.0 + ps[i].norm()) {
                    let (a, b) = (label[i], label[j]);
                    label.iter_mut().filter(|l| **l == a).for_each(|l| *l = b);
                }
            }
        }
        (0..ps.len())
            .map(|i| {
                let members: Vec<Complex64> = (0..ps.len()).filter(|&j| label[j] == label[i]).map(|j| ps[j]).collect();
                members.iter().sum::<Complex64>() / members.len() as f64
            })
            .collect()
    }

    pub fn is_stable(&self) -> bool {
        self.clustered_poles().iter().all(|p| p.re < -axis_tol(*p))
    }

    /// No pole in the open right half-plane.
    pub fn is_semi_stable(&self) -> bool {
        self.clustered_poles().iter().all(|p| p.re <= axis_tol(*p))
    }

    /// Number of poles in the closed right half-plane, counted with multiplicity.
    pub fn unstable_pole_count(&self) -> usize {
        self.clustered_poles().iter().filter(|p| p.re >= -axis_tol(**p)).count()
    }

    pub fn has_axis_poles(&self) -> bool {
        self.clustered_poles().iter().any(|p| p.re.abs() <= axis_tol(*p))
    }

    /// `other · self`: the output of `self` drives `other`.
    pub fn then(&self, other: &Self) -> Result<Self> {
        let (n1, n2) = (self.states(), other.states());
        if self.io_dim() != other.io_dim() {
            return Err(PhaseError::Dimension("series connection of different sizes".into()));
        }
        let mut a = RMat::zeros(n1 + n2, n1 + n2);
        a.view_mut((0, 0), (n1, n1)).copy_from(&self.a);
        a.view_mut((n1, n1), (n2, n2)).copy_from(&other.a);
        a.view_mut((n1, 0), (n2, n1)).copy_from(&(&other.b * &self.c));
        let mut b = RMat::zeros(n1 + n2, self.io_dim());
        b.view_mut((0, 0), (n1, self.io_dim())).copy_from(&self.b);
        b.view_mut((n1, 0), (n2, self.io_dim())).copy_from(&(&other.b * &self.d));
        let mut c = RMat::zeros(self.io_dim(), n1 + n2);
        c.view_mut((0, 0), (self.io_dim(), n1)).copy_from(&(&other.d * &self.c));
        c.view_mut((0, n1), (self.io_dim(), n2)).copy_from(&other.c);
        let d = &other.d * &self.d;
        Self::unreduced(a, b, c, d)
    }

    pub fn to_json(&self) -> SystemJson {
        let rows = |m: &RMat| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        SystemJson::Ss(SsJson {
            a: rows(&self.a),
            b: rows(&self.b),
            c: rows(&self.c),
            d: rows(&self.d),
        })
    }

    pub fn from_json(j: &SystemJson) -> Result<Self> {
        match j {
            SystemJson::Ss(ss) => {
                let n = ss.d.len();
                let nx = ss.a.len();
                let mat = |rows: &Vec<Vec<f64>>, r: usize, c: usize, name: &str| -> Result<RMat> {
                    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
                        return Err(PhaseError::Dimension(format!("{name} must be {r}x{c}")));
                    }
                    Ok(RMat::from_fn(r, c, |i, k| rows[i][k]))
                };
                let a = mat(&ss.a, nx, nx, "A")?;
                let b = if ss.b.is_empty() { RMat::zeros(nx, n) } else { mat(&ss.b, nx, n, "B")? };
                let c = if ss.c.is_empty() || ss.c.iter().all(Vec::is_empty) {
                    RMat::zeros(n, nx)
                } else {
                    mat(&ss.c, n, nx, "C")?
                };
                let d = mat(&ss.d, n, n, "D")?;
                Self::new(a, b, c, d)
            }
            SystemJson::Tf(tf) => Self::from_tf(&tf.entries),
        }
    }
}

fn axis_tol(p: Complex64) -> f64 {
    1e-8 * (1.0 + p.norm())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemJson {
    Ss(SsJson),
    Tf(TfJson),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsJson {
    #[serde(rename = "A", default)]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B", default)]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C", default)]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfJson {
    pub entries: Vec<Vec<Rational>>,
}

/// A `jω`-axis pole or zero with its order and leading coefficient matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisPoint {
    pub omega: f64,
    pub order: usize,
    pub coeff: CMat,
}

impl AxisPoint {
    pub fn coeff_full_rank(&self) -> bool {
        let s = linalg::singular_values(&self.coeff);
        let top = s.first().copied().unwrap_or(0.0);
        top > 0.0 && s.last().copied().unwrap_or(0.0) > 1e-6 * top
    }
}

/// Poles and zeros on the nonnegative imaginary axis.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct OmegaSets {
    pub poles: Vec<AxisPoint>,
    pub zeros: Vec<AxisPoint>,
}

impl OmegaSets {
    /// All pole and zero frequencies, sorted.
    pub fn frequencies(&self) -> Vec<f64> {
        let mut w: Vec<f64> = self.poles.iter().chain(&self.zeros).map(|p| p.omega).collect();
        w.sort_by(f64::total_cmp);
        w.dedup_by(|a, b| (*a - *b).abs() < 1e-9 * (1.0 + b.abs()));
        w
    }

    pub fn union(sets: &[&OmegaSets]) -> OmegaSets {
        let mut out = OmegaSets::default();
        for s in sets {
            out.poles.extend(s.poles.iter().cloned());
            out.zeros.extend(s.zeros.iter().cloned());
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.poles.is_empty() && self.zeros.is_empty()
    }

    pub fn contains_zero_frequency(&self) -> bool {
        self.frequencies().first().is_some_and(|&w| w == 0.0)
    }

    pub fn pole_order_at(&self, omega: f64) -> usize {
        self.poles.iter().filter(|p| same_freq(p.omega, omega)).map(|p| p.order).sum()
    }

    pub fn zero_order_at(&self, omega: f64) -> usize {
        self.zeros.iter().filter(|p| same_freq(p.omega, omega)).map(|p| p.order).sum()
    }
}

fn same_freq(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-7 * (1.0 + a.abs())
}

/// Groups nearly equal axis frequencies; returns `(ω₀, multiplicity)` for `ω₀ ≥ 0`.
fn cluster_axis(points: &[Complex64]) -> Vec<(f64, usize)> {
    let mut on_axis: Vec<f64> = points
        .iter()
        .filter(|p| p.re.abs() < 1e-6 * (1.0 + p.norm()))
        .map(|p| p.im)
        .filter(|w| *w > -1e-6)
        .collect();
    on_axis.sort_by(f64::total_cmp);
    let mut out: Vec<(f64, Vec<f64>)> = Vec::new();
    for w in on_axis {
        match out.last_mut() {
            Some((_, members)) if (w - members[0]).abs() < 1e-4 * (1.0 + w.abs()) => members.push(w),
            _ => out.push((w, vec![w])),
        }
    }
    out.into_iter()
        .map(|(_, m)| {
            let w = m.iter().sum::<f64>() / m.len() as f64;
            (if w.abs() < 1e-7 { 0.0 } else { w }, m.len())
        })
        .collect()
}

/// Laurent coefficients `c_k`, `k ∈ [−kmax, kmax]`, of `P` around `s0` by the trapezoid rule on a circle.
fn laurent(p: &StateSpaceSystem, s0: Complex64, rho: f64, kmax: i32) -> Result<Vec<(i32, CMat)>> {
    const N: usize = 128;
    let n = p.io_dim();
    let mut coeffs: Vec<(i32, CMat)> = (-kmax..=kmax).map(|k| (k, CMat::zeros(n, n))).collect();
    for j in 0..N {
        let t = TAU * (j as f64 + 0.5) / N as f64;
        let h = Complex64::from_polar(rho, t);
        let v = p.freq_response(s0 + h)?;
        for (k, c) in coeffs.iter_mut() {
            *c += &v * (h.powi(-*k) / N as f64);
        }
    }
    Ok(coeffs)
}

/// Distance from `s0` to the nearest pole or finite zero other than those at `s0`.
fn isolation_radius(p: &StateSpaceSystem, zeros: &[Complex64], s0: Complex64) -> f64 {
    let scale = 1.0 + s0.norm();
    p.poles()
        .iter()
        .chain(zeros)
        .map(|q| (q - s0).norm())
        .filter(|&d| d > 1e-3 * scale)
        .fold(f64::INFINITY, f64::min)
}

fn leading_from_laurent(p: &StateSpaceSystem, zeros: &[Complex64], omega: f64, pole: bool) -> Result<AxisPoint> {
    let s0 = Complex64::new(0.0, omega);
    let iso = isolation_radius(p, zeros, s0);
    let rho = (0.25 * iso).min(0.1 * (1.0 + omega)).min(1.0);
    let kmax = 4;
    let coeffs = laurent(p, s0, rho, kmax)?;
    let size = |k: i32| -> f64 {
        coeffs
            .iter()
            .find(|c| c.0 == k)
            .map(|c| linalg::frobenius(&c.1) * rho.powi(k))
            .unwrap_or(0.0)
    };
    let top = (-kmax..=kmax).map(size).fold(0.0, f64::max);
    let nonzero = |k: i32| size(k) > 1e-7 * top;
    let k = if pole {
        (1..=kmax).rev().find(|&k| nonzero(-k)).map(|k| -k)
    } else {
        (0..=kmax).find(|&k| nonzero(k))
    };
    let k = k.unwrap_or(0);
    let coeff = coeffs.iter().find(|c| c.0 == k).unwrap().1.clone();
    Ok(AxisPoint {
        omega,
        order: k.unsigned_abs() as usize,
        coeff,
    })
}

/// Finite transmission zeros: generalized eigenvalues of `([A B; C D], diag(I, 0))`, by shift-and-invert.
pub fn transmission_zeros(p: &StateSpaceSystem) -> Vec<Complex64> {
    let nx = p.states();
    let n = p.io_dim();
    if nx == 0 {
        return Vec::new();
    }
    let big = nx + n;
    let mut m0 = CMat::zeros(big, big);
    m0.view_mut((0, 0), (nx, nx)).copy_from(&linalg::to_complex(&p.a));
    m0.view_mut((0, nx), (nx, n)).copy_from(&linalg::to_complex(&p.b));
    m0.view_mut((nx, 0), (n, nx)).copy_from(&linalg::to_complex(&p.c));
    m0.view_mut((nx, nx), (n, n)).copy_from(&linalg::to_complex(&p.d));
    let mut e = CMat::zeros(big, big);
    for i in 0..nx {
        e[(i, i)] = Complex64::new(1.0, 0.0);
    }
    let scale = 1.0 + p.a.norm();
    let sigma = Complex64::new(0.37, 0.91) * scale;
    let Some(inv_e) = (&m0 - &e * sigma).lu().solve(&e) else {
        return Vec::new();
    };
    linalg::eigenvalues(&inv_e)
        .into_iter()
        .filter(|mu| mu.norm() > 1e-5 / scale)
        .map(|mu| sigma + Complex64::new(1.0, 0.0) / mu)
        .collect()
}

/// Locates `jω`-axis poles and zeros with orders and leading coefficient matrices.
///
/// Orders and coefficients come from Laurent coefficients of `P` on a small
/// circle around each point: `K^p` is the coefficient of `(s − jω₀)^{−l}`, `K^z`
/// the first nonvanishing Taylor coefficient.
pub fn jw_structure(p: &StateSpaceSystem) -> Result<OmegaSets> {
    let zeros = transmission_zeros(p);
    let pole_freqs = cluster_axis(p.poles());
    let zero_freqs = cluster_axis(&zeros);
    for &(wp, _) in &pole_freqs {
        if zero_freqs.iter().any(|&(wz, _)| same_freq(wp, wz) || (wp - wz).abs() < 1e-6 * (1.0 + wp)) {
            return Err(PhaseError::PoleZeroCollision { omega: wp });
        }
    }
    let mut out = OmegaSets::default();
    for (w, _) in pole_freqs {
        out.poles.push(leading_from_laurent(p, &zeros, w, true)?);
    }
    for (w, _) in zero_freqs {
        out.zeros.push(leading_from_laurent(p, &zeros, w, false)?);
    }
    Ok(out)
}

/// Result of the structural and phase-uniqueness checks on one system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub semi_stable: bool,
    pub full_normal_rank: bool,
    pub leading_coeffs_full_rank: bool,
    pub poles_zeros_disjoint: bool,
    /// Grid points where the phase center is not unique.
    pub multi_center_omegas: Vec<f64>,
    pub unique_center: bool,
    pub messages: Vec<String>,
}

impl AssumptionReport {
    /// Assumption 1: every structural item holds.
    pub fn structural_ok(&self) -> bool {
        self.semi_stable && self.full_normal_rank && self.leading_coeffs_full_rank && self.poles_zeros_disjoint
    }

    pub fn passed(&self) -> bool {
        self.structural_ok() && self.unique_center
    }
}

pub fn has_full_normal_rank(p: &StateSpaceSystem) -> bool {
    let s = Complex64::new(0.4137, 1.2791) * (1.0 + p.a.norm());
    match p.freq_response(s) {
        Ok(m) => linalg::rank(&m, 1e-9) == p.io_dim(),
        Err(_) => false,
    }
}

/// Checks semi-stability, normal rank, leading coefficients, and (sampled) phase-center uniqueness.
pub fn check_assumptions(p: &StateSpaceSystem, grid: &[f64], tol: f64) -> AssumptionReport {
    let mut r = AssumptionReport {
        semi_stable: p.is_semi_stable(),
        full_normal_rank: has_full_normal_rank(p),
        leading_coeffs_full_rank: true,
        poles_zeros_disjoint: true,
        multi_center_omegas: Vec::new(),
        unique_center: true,
        messages: Vec::new(),
    };
    if !r.semi_stable {
        r.messages.push("pole in the open right half-plane".into());
    }
    if !r.full_normal_rank {
        r.messages.push("P(s) is not of full normal rank".into());
    }
    let sets = match jw_structure(p) {
        Ok(s) => Some(s),
        Err(PhaseError::PoleZeroCollision { omega }) => {
            r.poles_zeros_disjoint = false;
            r.leading_coeffs_full_rank = false;
            r.messages.push(format!("pole and zero coincide at ω = {omega}"));
            None
        }
        Err(e) => {
            r.leading_coeffs_full_rank = false;
            r.messages.push(e.to_string());
            None
        }
    };
    if let Some(sets) = &sets {
        for pt in sets.poles.iter().chain(&sets.zeros) {
            if !pt.coeff_full_rank() {
                r.leading_coeffs_full_rank = false;
                r.messages.push(format!("leading coefficient at ω = {} is rank deficient", pt.omega));
            }
        }
    }
    if p.io_dim() > 1 {
        let omega: Vec<f64> = sets.as_ref().map(|s| s.frequencies()).unwrap_or_default();
        for &w in grid {
            if omega.iter().any(|&w0| (w - w0).abs() < 1e-9 * (1.0 + w0)) {
                continue;
            }
            let Ok(m) = p.freq_response(Complex64::new(0.0, w)) else { continue };
            let Ok(m) = ComplexSquareMatrix::new(m) else { continue };
            match matrix_phase::segmental_phase(&m, tol) {
                Ok(sp) if sp.branches.len() == 1 && !sp.degenerate => {}
                _ => r.multi_center_omegas.push(w),
            }
        }
        if !r.multi_center_omegas.is_empty() {
            r.unique_center = false;
            r.messages.push(format!(
                "phase center not unique at {} grid point(s), first ω = {}",
                r.multi_center_omegas.len(),
                r.multi_center_omegas[0]
            ));
        }
    }
    r
}

/// Log-spaced grid with `ppd` points per decade, endpoints included.
pub fn log_grid(wmin: f64, wmax: f64, ppd: usize) -> Vec<f64> {
    let decades = (wmax / wmin).log10();
    let n = ((decades * ppd as f64).ceil() as usize).max(1);
    (0..=n)
        .map(|k| wmin * 10f64.powf(decades * k as f64 / n as f64))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Segment {
    Axis { omega: f64 },
    /// `s = jω₀ + ε e^{jα}`.
    Semicircle { omega0: f64, alpha: f64 },
    /// Sample exactly at a `jω`-axis pole or zero; the phase there is empty.
    OmegaPoint { omega: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourPoint {
    pub s: Complex64,
    pub segment: Segment,
}

/// The `jω`-axis path with right-half-plane semicircles of radius `ε` around `Ω`.
///
/// The closing arc at infinity is not sampled; proper systems tend to `D` there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndentedContour {
    pub points: Vec<ContourPoint>,
    pub epsilon: f64,
    pub omega_min: f64,
    pub omega_max: f64,
}

pub const SEMICIRCLE_POINTS: usize = 64;

/// Default indentation radius for a set of pole/zero frequencies.
pub fn default_epsilon(omegas: &[f64]) -> f64 {
    let mut eps = 1e-4 * omegas.iter().copied().filter(|w| *w > 0.0).fold(1.0, f64::min).max(1e-3);
    for w in omegas.windows(2) {
        eps = eps.min(0.25 * (w[1] - w[0]));
    }
    eps
}

pub fn indented_contour(
    omega: &[f64],
    epsilon: f64,
    omega_min: f64,
    omega_max: f64,
    ppd: usize,
    pts_arc: usize,
) -> Result<IndentedContour> {
    let mut om: Vec<f64> = omega.to_vec();
    om.sort_by(f64::total_cmp);
    om.dedup_by(|a, b| same_freq(*a, *b));
    let gap = om.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if epsilon <= 0.0 || epsilon >= 0.5 * gap {
        return Err(PhaseError::EpsilonTooLarge { epsilon, gap });
    }
    let nonzero: Vec<f64> = om.iter().copied().filter(|w| *w > 0.0).collect();
    let wmin = nonzero.first().map_or(omega_min, |w| omega_min.min(0.1 * w)).max(2.0 * epsilon);
    let wmax = nonzero.last().map_or(omega_max, |w| omega_max.max(10.0 * w));
    let mut pts: Vec<ContourPoint> = Vec::new();
    let axis = |w: f64| ContourPoint {
        s: Complex64::new(0.0, w),
        segment: Segment::Axis { omega: w },
    };
    let arc = |w0: f64, alpha: f64| ContourPoint {
        s: Complex64::new(0.0, w0) + Complex64::from_polar(epsilon, alpha),
        segment: Segment::Semicircle { omega0: w0, alpha },
    };
    let zero_in = om.first().is_some_and(|&w| w == 0.0);
    if zero_in {
        pts.push(ContourPoint {
            s: Complex64::new(0.0, 0.0),
            segment: Segment::OmegaPoint { omega: 0.0 },
        });
        let k = pts_arc / 2;
        for i in 0..=k {
            pts.push(arc(0.0, FRAC_PI_2 * i as f64 / k as f64));
        }
    } else {
        pts.push(axis(0.0));
    }
    let grid = log_grid(wmin, wmax, ppd);
    let mut pending: Vec<f64> = om.iter().copied().filter(|w| *w > 0.0).collect();
    for w in grid {
        while let Some(&w0) = pending.first() {
            if w0 - epsilon > w {
                break;
            }
            pts.push(ContourPoint {
                s: Complex64::new(0.0, w0),
                segment: Segment::OmegaPoint { omega: w0 },
            });
            for i in 0..pts_arc {
                let alpha = -FRAC_PI_2 + PI * i as f64 / (pts_arc - 1) as f64;
                pts.push(arc(w0, alpha));
            }
            pending.remove(0);
        }
        let inside = om.iter().any(|&w0| (w - w0).abs() <= epsilon);
        let last_im = pts.last().map_or(0.0, |p| p.s.im);
        if !inside && w > last_im && (w > epsilon || !zero_in) {
            pts.push(axis(w));
        }
    }
    Ok(IndentedContour {
        points: pts,
        epsilon,
        omega_min: wmin,
        omega_max: wmax,
    })
}

/// One sample of a phase response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSample {
    pub s: Complex64,
    pub segment: Segment,
    /// Continuous (unwrapped) interval; empty at `jω`-axis poles and zeros.
    pub interval: PhaseInterval,
    pub center: Option<f64>,
    pub radius: Option<f64>,
    /// Number of `2π` shifts between `center` and its principal value.
    pub branch_offset: i64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl PhaseSample {
    pub fn omega(&self) -> f64 {
        self.s.im
    }

    pub fn on_axis(&self) -> bool {
        matches!(self.segment, Segment::Axis { .. } | Segment::OmegaPoint { .. })
    }

    pub fn is_omega_point(&self) -> bool {
        matches!(self.segment, Segment::OmegaPoint { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseResponse {
    pub samples: Vec<PhaseSample>,
}

impl PhaseResponse {
    /// Samples on the imaginary axis (including pole/zero markers).
    pub fn axis(&self) -> impl Iterator<Item = &PhaseSample> {
        self.samples.iter().filter(|s| s.on_axis())
    }

    /// Samples on the semicircular indentations.
    pub fn contour_samples(&self) -> impl Iterator<Item = &PhaseSample> {
        self.samples.iter().filter(|s| matches!(s.segment, Segment::Semicircle { .. }))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("omega,psi_lo,psi_hi,gamma_center,r_star,sigma_min,sigma_max,is_omega_point\n");
        for s in self.axis() {
            let f = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.12e}"));
            out.push_str(&format!(
                "{:.12e},{},{},{},{},{:.12e},{:.12e},{}\n",
                s.omega(),
                f(s.interval.lo()),
                f(s.interval.hi()),
                f(s.center),
                f(s.radius),
                s.sigma_min,
                s.sigma_max,
                s.is_omega_point()
            ));
        }
        out
    }
}

/// Pointwise phase of `P(s)` tracked along a path.
struct Tracker {
    seed: u64,
    tol: f64,
    prev_center: Option<f64>,
    prev_x: Option<CVec>,
    since_global: usize,
    /// Follow the branch nearest the previous center instead of rejecting multi-branch points.
    nearest_branch: bool,
}

const GLOBAL_EVERY: usize = 8;
const LOCAL_WINDOW: f64 = 0.35;

impl Tracker {
    /// Principal-branch center and radius of the phase at `m`, chosen nearest the previous center.
    fn eval(&mut self, m: &CMat) -> Result<(f64, f64)> {
        let a = ComplexSquareMatrix::new(m.clone())?;
        if a.is_zero() {
            return Err(PhaseError::ZeroMatrix);
        }
        if a.n() == 1 {
            let p = a[(0, 0)];
            return Ok((wrap_angle(p.arg()), 0.0));
        }
        let local = match (self.prev_center, &self.prev_x) {
            (Some(c), Some(x)) if self.since_global < GLOBAL_EVERY => {
                let mut solver = NnrSolver::light(&a, std::slice::from_ref(x), self.seed)?;
                solver.local_center(c, LOCAL_WINDOW, Some(x)).map(|(g, r, x)| (g, r, x))
            }
            _ => None,
        };
        if let Some((g, r, x)) = local {
            self.since_global += 1;
            self.prev_x = Some(x);
            return Ok((g, r));
        }
        self.since_global = 0;
        let sp = matrix_phase::segmental_phase_seeded(&a, self.tol, self.seed)?;
        if sp.degenerate {
            return Err(PhaseError::AssumptionViolation(
                "phase is undefined (θ ≡ π) at a contour point".into(),
            ));
        }
        if sp.is_multi() && !self.nearest_branch {
            return Err(PhaseError::AssumptionViolation(format!(
                "phase center is not unique ({} branches)",
                sp.branches.len()
            )));
        }
        let b = match self.prev_center {
            Some(c) => *sp
                .branches
                .iter()
                .min_by(|x, y| (unwrap_near(x.center, c) - c).abs().total_cmp(&(unwrap_near(y.center, c) - c).abs()))
                .unwrap_or(&sp.branches[0]),
            None => sp.branches[0],
        };
        let reference = self.prev_center.unwrap_or(b.center);
        // warm vector for the next local step
        let mut solver = NnrSolver::light(&a, &[], self.seed)?;
        let start = unwrap_near(b.center, reference);
        let x = solver
            .local_center(start, 0.05, None)
            .map(|t| t.2)
            .unwrap_or_else(|| solver.min_projection(start, &[], 2).x);
        self.prev_x = Some(x);
        Ok((b.center, b.radius))
    }
}

fn sigma_pair(m: &CMat) -> (f64, f64) {
    let s = linalg::singular_values(m);
    (s.last().copied().unwrap_or(0.0), s.first().copied().unwrap_or(0.0))
}

/// Point between two contour points, following the same segment.
fn midpoint(a: &ContourPoint, b: &ContourPoint, eps: f64) -> ContourPoint {
    match (a.segment, b.segment) {
        (Segment::Semicircle { omega0: w0, alpha: a0 }, Segment::Semicircle { omega0: w1, alpha: a1 }) if w0 == w1 => {
            let alpha = 0.5 * (a0 + a1);
            ContourPoint {
                s: Complex64::new(0.0, w0) + Complex64::from_polar(eps, alpha),
                segment: Segment::Semicircle { omega0: w0, alpha },
            }
        }
        _ => {
            let (wa, wb) = (a.s.im, b.s.im);
            let w = if wa > 0.0 && wb > 0.0 { (wa * wb).sqrt() } else { 0.5 * (wa + wb) };
            let re = 0.5 * (a.s.re + b.s.re);
            ContourPoint {
                s: Complex64::new(re, w),
                segment: if re == 0.0 { Segment::Axis { omega: w } } else { a.segment },
            }
        }
    }
}

/// Frequency-wise segmental phase along a contour, made continuous by nearest-branch unwrapping.
///
/// Adjacent centers that differ by more than 0.1 rad trigger bisection of the
/// contour step; a remaining jump above π/2 is reported as [`PhaseError::ContinuationJump`].
pub fn phase_response(p: &StateSpaceSystem, contour: &IndentedContour, tol: f64) -> Result<PhaseResponse> {
    phase_response_seeded(p, contour, tol, DEFAULT_SEED)
}

pub fn phase_response_seeded(p: &StateSpaceSystem, contour: &IndentedContour, tol: f64, seed: u64) -> Result<PhaseResponse> {
    track(p, contour, tol, seed, false)
}

/// Like [`phase_response_seeded`], but where the phase has several branches the one
/// nearest the previous center is followed. The result need not be a valid phase response.
pub fn phase_response_nearest_branch(p: &StateSpaceSystem, contour: &IndentedContour, tol: f64, seed: u64) -> Result<PhaseResponse> {
    track(p, contour, tol, seed, true)
}

fn track(p: &StateSpaceSystem, contour: &IndentedContour, tol: f64, seed: u64, nearest_branch: bool) -> Result<PhaseResponse> {
    let mut tracker = Tracker {
        seed,
        tol,
        prev_center: None,
        prev_x: None,
        since_global: 0,
        nearest_branch,
    };
    let mut samples: Vec<PhaseSample> = Vec::with_capacity(contour.points.len());
    let mut prev_point: Option<ContourPoint> = None;
    for pt in &contour.points {
        if let Segment::OmegaPoint { .. } = pt.segment {
            samples.push(PhaseSample {
                s: pt.s,
                segment: pt.segment,
                interval: PhaseInterval::Empty,
                center: None,
                radius: None,
                branch_offset: 0,
                sigma_min: 0.0,
                sigma_max: f64::INFINITY,
            });
            continue;
        }
        let refined = match prev_point {
            Some(prev) => refine_step(p, &mut tracker, &prev, pt, contour.epsilon, 0)?,
            None => vec![evaluate(p, &mut tracker, pt)?],
        };
        samples.extend(refined);
        prev_point = Some(*pt);
    }
    Ok(PhaseResponse { samples })
}

fn evaluate(p: &StateSpaceSystem, tracker: &mut Tracker, pt: &ContourPoint) -> Result<PhaseSample> {
    let m = p.freq_response(pt.s)?;
    let (sigma_min, sigma_max) = sigma_pair(&m);
    let (c, r) = tracker.eval(&m)?;
    let center = match tracker.prev_center {
        Some(prev) => unwrap_near(c, prev),
        None => c,
    };
    tracker.prev_center = Some(center);
    let offset = ((center - wrap_angle(center)) / TAU).round() as i64;
    Ok(PhaseSample {
        s: pt.s,
        segment: pt.segment,
        interval: PhaseInterval::centered(center, r),
        center: Some(center),
        radius: Some(r),
        branch_offset: offset,
        sigma_min,
        sigma_max,
    })
}

fn refine_step(
    p: &StateSpaceSystem,
    tracker: &mut Tracker,
    a: &ContourPoint,
    b: &ContourPoint,
    eps: f64,
    depth: usize,
) -> Result<Vec<PhaseSample>> {
    let before = tracker.prev_center;
    let saved_x = tracker.prev_x.clone();
    let saved_count = tracker.since_global;
    let sb = evaluate(p, tracker, b)?;
    let jump = match (before, sb.center) {
        (Some(x), Some(y)) => (y - x).abs(),
        _ => 0.0,
    };
    if jump <= 0.1 {
        return Ok(vec![sb]);
    }
    let close = (a.s - b.s).norm() < 1e-9 * (1.0 + b.s.norm());
    if depth >= 14 || close {
        if jump > FRAC_PI_2 {
            return Err(PhaseError::ContinuationJump {
                at: format!("{}", b.s),
                jump,
            });
        }
        return Ok(vec![sb]);
    }
    tracker.prev_center = before;
    tracker.prev_x = saved_x;
    tracker.since_global = saved_count;
    let mid = midpoint(a, b, eps);
    let mut out = refine_step(p, tracker, a, &mid, eps, depth + 1)?;
    out.extend(refine_step(p, tracker, &mid, b, eps, depth + 1)?);
    Ok(out)
}

/// Largest and smallest singular values of `P(jω)` on a grid.
pub fn gain_response(p: &StateSpaceSystem, grid: &[f64]) -> Vec<(f64, f64)> {
    grid.iter()
        .map(|&w| match p.freq_response(Complex64::new(0.0, w)) {
            Ok(m) => sigma_pair(&m),
            Err(_) => (f64::INFINITY, f64::INFINITY),
        })
        .collect()
}

/// Supremum of `σ̄(P(jω))` over a grid.
pub fn hinf_on_grid(p: &StateSpaceSystem, grid: &[f64]) -> f64 {
    gain_response(p, grid).iter().map(|g| g.1).fold(0.0, f64::max)
}

/// `P(s) = q(s)·A` with `A` a real matrix whose segmental phase has several branches.
#[derive(Clone, Debug, PartialEq)]
pub struct QClassSystem {
    pub q: StateSpaceSystem,
    pub a: RMat,
}

impl QClassSystem {
    pub fn new(q: StateSpaceSystem, a: RMat) -> Result<Self> {
        if q.io_dim() != 1 {
            return Err(PhaseError::Dimension("q must be scalar".into()));
        }
        if !q.is_semi_stable() {
            return Err(PhaseError::NotSemiStable("q".into()));
        }
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(PhaseError::Dimension("A must be square".into()));
        }
        Ok(Self { q, a })
    }

    /// Branches of `Ψ(A)`, ordered by `|center|` and unwrapped into `[c₁, c₁ + 2π)`.
    pub fn matrix_branches(&self, tol: f64) -> Result<Vec<PhaseBranch>> {
        let ca = linalg::to_complex(&self.a);
        let unitary = (ca.adjoint() * &ca - CMat::identity(ca.nrows(), ca.nrows())).norm() < 1e-12;
        let sp: SegmentalPhase = if unitary {
            matrix_phase::unitary_phase(&ca, tol)
        } else {
            matrix_phase::segmental_phase(&ComplexSquareMatrix::new(ca)?, tol)?
        };
        let mut b = sp.branches;
        b.sort_by(|x, y| x.center.abs().total_cmp(&y.center.abs()));
        let first = b[0].center;
        for br in b.iter_mut().skip(1) {
            let mut c = unwrap_near(br.center, first + PI);
            if c >= first + TAU {
                c -= TAU;
            }
            br.center = c;
        }
        Ok(b)
    }
}

/// The `N` phase responses `∠q(jω) + Ψ_r(A)` of a Q-class system.
pub fn q_class_phase(q: &QClassSystem, contour: &IndentedContour, tol: f64) -> Result<Vec<PhaseResponse>> {
    let scalar = phase_response(&q.q, contour, tol)?;
    let branches = q.matrix_branches(tol)?;
    let sv = linalg::singular_values(&linalg::to_complex(&q.a));
    Ok(branches
        .iter()
        .map(|br| PhaseResponse {
            samples: scalar
                .samples
                .iter()
                .map(|s| {
                    let mut t = s.clone();
                    if let Some(c) = s.center {
                        let center = c + br.center;
                        t.center = Some(center);
                        t.radius = Some(br.radius);
                        t.interval = PhaseInterval::centered(center, br.radius);
                        t.branch_offset = ((center - wrap_angle(center)) / TAU).round() as i64;
                        let g = s.sigma_max;
                        t.sigma_max = g * sv[0];
                        t.sigma_min = g * sv[sv.len() - 1];
                    }
                    t
                })
                .collect(),
        })
        .collect())
}
