//! Cyclic feedback loops and their gain, phase, mixed and scaled stability certificates.
//!
//! The loop is `u₁ = e₁ − y_m`, `u_k = e_k + y_{k−1}`, `y_k = P_k u_k`. It is
//! stable when every transfer matrix from the `e_k` to the `u_k` is stable,
//! equivalently when `(I + P_m···P_1)⁻¹` is stable and no unstable pole-zero
//! cancellation occurs in the product.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PhaseError, Result};
use crate::interval::{unwrap_near, PhaseInterval};
use crate::linalg::{self, CMat, RMat};
use crate::lti::{
    self, check_assumptions, indented_contour, jw_structure, phase_response_seeded, ContourPoint,
    IndentedContour, OmegaSets, Segment, StateSpaceSystem, SystemJson,
};
use crate::matrix_phase::{
    self, CertificationVerdict, ComplexSquareMatrix, NnrSolver, DEFAULT_SEED, DEFAULT_TOL,
};

/// A function of frequency, linear in `log ω` between knots and constant outside them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogPiecewise {
    pub omega: Vec<f64>,
    pub values: Vec<f64>,
}

impl LogPiecewise {
    pub fn new(omega: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if omega.is_empty() || omega.len() != values.len() {
            return Err(PhaseError::InvalidModel("knots and values must be nonempty and of equal length".into()));
        }
        if omega.windows(2).any(|w| w[1] <= w[0]) || omega[0] <= 0.0 {
            return Err(PhaseError::InvalidModel("knot frequencies must be positive and increasing".into()));
        }
        Ok(Self { omega, values })
    }

    pub fn constant(v: f64) -> Self {
        Self {
            omega: vec![1.0],
            values: vec![v],
        }
    }

    pub fn eval(&self, w: f64) -> f64 {
        let k = self.omega.len();
        if w <= self.omega[0] {
            return self.values[0];
        }
        if w >= self.omega[k - 1] {
            return self.values[k - 1];
        }
        let i = self.omega.partition_point(|&x| x <= w) - 1;
        let (l0, l1) = (self.omega[i].ln(), self.omega[i + 1].ln());
        let t = (w.ln() - l0) / (l1 - l0);
        self.values[i] + t * (self.values[i + 1] - self.values[i])
    }
}

/// A stable subsystem known only through frequency-wise phase (and optionally gain) bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertainSubsystem {
    pub alpha: LogPiecewise,
    pub beta: LogPiecewise,
    pub delta: Option<LogPiecewise>,
    /// Concrete members of the set, used by oracle cross-checks.
    pub samples: Vec<StateSpaceSystem>,
}

impl UncertainSubsystem {
    pub fn new(alpha: LogPiecewise, beta: LogPiecewise, delta: Option<LogPiecewise>, samples: Vec<StateSpaceSystem>) -> Result<Self> {
        let mut knots: Vec<f64> = alpha.omega.iter().chain(&beta.omega).copied().collect();
        knots.push(0.0);
        for w in knots {
            let width = beta.eval(w) - alpha.eval(w);
            if !(0.0..TAU).contains(&width) {
                return Err(PhaseError::InvalidModel(format!("phase bound width {width} at ω = {w} is not in [0, 2π)")));
            }
        }
        Ok(Self {
            alpha,
            beta,
            delta,
            samples,
        })
    }

    /// Constant bound `[alpha, beta]` at all frequencies.
    pub fn constant(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(LogPiecewise::constant(alpha), LogPiecewise::constant(beta), None, Vec::new())
    }

    pub fn phase_at(&self, w: f64) -> PhaseInterval {
        PhaseInterval::new(self.alpha.eval(w), self.beta.eval(w))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Subsystem {
    Known(StateSpaceSystem),
    Uncertain(UncertainSubsystem),
}

/// Single-loop cyclic interconnection of `P_1, …, P_m`, all `n × n`.
#[derive(Clone, Debug, PartialEq)]
pub struct CyclicLoop {
    pub n: usize,
    pub subsystems: Vec<Subsystem>,
}

impl CyclicLoop {
    pub fn new(subsystems: Vec<Subsystem>) -> Result<Self> {
        let n = subsystems
            .iter()
            .find_map(|s| match s {
                Subsystem::Known(p) => Some(p.io_dim()),
                Subsystem::Uncertain(u) => u.samples.first().map(|p| p.io_dim()),
            })
            .unwrap_or(1);
        Self::with_dim(n, subsystems)
    }

    pub fn with_dim(n: usize, subsystems: Vec<Subsystem>) -> Result<Self> {
        if subsystems.is_empty() {
            return Err(PhaseError::InvalidModel("a loop needs at least one subsystem".into()));
        }
        for s in &subsystems {
            let dims: Vec<usize> = match s {
                Subsystem::Known(p) => vec![p.io_dim()],
                Subsystem::Uncertain(u) => u.samples.iter().map(|p| p.io_dim()).collect(),
            };
            if dims.iter().any(|&d| d != n) {
                return Err(PhaseError::Dimension(format!("every subsystem must be {n}x{n}")));
            }
        }
        Ok(Self { n, subsystems })
    }

    /// Loop of known systems.
    pub fn known(systems: Vec<StateSpaceSystem>) -> Result<Self> {
        Self::new(systems.into_iter().map(Subsystem::Known).collect())
    }

    pub fn m(&self) -> usize {
        self.subsystems.len()
    }

    pub fn known_systems(&self) -> Result<Vec<&StateSpaceSystem>> {
        self.subsystems
            .iter()
            .map(|s| match s {
                Subsystem::Known(p) => Ok(p),
                Subsystem::Uncertain(_) => Err(PhaseError::UncertainSubsystem),
            })
            .collect()
    }

    /// The loop with every uncertain subsystem replaced by its `k`-th sample.
    pub fn instance(&self, k: usize) -> Option<CyclicLoop> {
        let subs: Option<Vec<Subsystem>> = self
            .subsystems
            .iter()
            .map(|s| match s {
                Subsystem::Known(p) => Some(Subsystem::Known(p.clone())),
                Subsystem::Uncertain(u) => u.samples.get(k).cloned().map(Subsystem::Known),
            })
            .collect();
        subs.map(|subsystems| CyclicLoop { n: self.n, subsystems })
    }

    pub fn sample_count(&self) -> usize {
        self.subsystems
            .iter()
            .filter_map(|s| match s {
                Subsystem::Uncertain(u) => Some(u.samples.len()),
                Subsystem::Known(_) => None,
            })
            .min()
            .unwrap_or(0)
    }

    pub fn from_json(j: &LoopJson) -> Result<Self> {
        let mut subs = Vec::new();
        for s in &j.subsystems {
            subs.push(match s {
                SubsystemJson::Known { model } => Subsystem::Known(StateSpaceSystem::from_json(model)?),
                SubsystemJson::Uncertain {
                    phase_bound,
                    gain_bound,
                    samples,
                } => {
                    let (alpha, beta) = match phase_bound {
                        Some(pb) => (
                            LogPiecewise::new(pb.omega.clone(), pb.alpha.clone())?,
                            LogPiecewise::new(pb.omega.clone(), pb.beta.clone())?,
                        ),
                        None => (LogPiecewise::constant(-PI), LogPiecewise::constant(PI - 1e-12)),
                    };
                    let delta = gain_bound
                        .as_ref()
                        .map(|g| LogPiecewise::new(g.omega.clone(), g.delta.clone()))
                        .transpose()?;
                    let samples = samples.iter().map(StateSpaceSystem::from_json).collect::<Result<_>>()?;
                    Subsystem::Uncertain(UncertainSubsystem::new(alpha, beta, delta, samples)?)
                }
            });
        }
        Self::with_dim(j.n, subs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopJson {
    pub n: usize,
    pub subsystems: Vec<SubsystemJson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SubsystemJson {
    Known {
        model: SystemJson,
    },
    Uncertain {
        #[serde(default)]
        phase_bound: Option<PhaseBoundJson>,
        #[serde(default)]
        gain_bound: Option<GainBoundJson>,
        #[serde(default)]
        samples: Vec<SystemJson>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseBoundJson {
    pub omega: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainBoundJson {
    pub omega: Vec<f64>,
    pub delta: Vec<f64>,
}

/// State-space realization of the map `e ↦ u`; its state matrix is the closed-loop matrix.
pub fn build_interconnection(lp: &CyclicLoop) -> Result<StateSpaceSystem> {
    let sys = lp.known_systems()?;
    let n = lp.n;
    let m = lp.m();
    let a_blocks: Vec<&RMat> = sys.iter().map(|p| &p.a).collect();
    let b_blocks: Vec<&RMat> = sys.iter().map(|p| &p.b).collect();
    let c_blocks: Vec<&RMat> = sys.iter().map(|p| &p.c).collect();
    let d_blocks: Vec<&RMat> = sys.iter().map(|p| &p.d).collect();
    let a = linalg::block_diag(&a_blocks);
    let b = linalg::block_diag(&b_blocks);
    let c = linalg::block_diag(&c_blocks);
    let d = linalg::block_diag(&d_blocks);
    let mut l = RMat::zeros(m * n, m * n);
    for k in 0..m {
        let src = if k == 0 { m - 1 } else { k - 1 };
        let sign = if k == 0 { -1.0 } else { 1.0 };
        for i in 0..n {
            l[(k * n + i, src * n + i)] += sign;
        }
    }
    let f = RMat::identity(m * n, m * n) - &l * &d;
    let f_inv = f.clone().try_inverse().ok_or(PhaseError::AlgebraicLoop)?;
    if linalg::real_rank(&f, 1e-12) < m * n {
        return Err(PhaseError::AlgebraicLoop);
    }
    let abar = &a + &b * &f_inv * &l * &c;
    let bbar = &b * &f_inv;
    let cbar = &f_inv * &l * &c;
    StateSpaceSystem::unreduced(abar, bbar, cbar, f_inv)
}

/// `P_m···P_1` as a single minimal system.
pub fn loop_product(lp: &CyclicLoop) -> Result<StateSpaceSystem> {
    let sys = lp.known_systems()?;
    let mut acc = sys[0].clone();
    for p in &sys[1..] {
        acc = acc.then(p)?;
    }
    Ok(acc.minimal())
}

/// True iff the product keeps every closed right-half-plane pole of the factors.
pub fn check_no_cancellation(lp: &CyclicLoop) -> Result<bool> {
    let sys = lp.known_systems()?;
    let total: usize = sys.iter().map(|p| p.unstable_pole_count()).sum();
    Ok(loop_product(lp)?.unstable_pole_count() == total)
}

/// Ground truth: every closed-loop eigenvalue strictly in the left half-plane.
pub fn oracle_is_stable(lp: &CyclicLoop) -> Result<bool> {
    if !check_no_cancellation(lp)? {
        return Err(PhaseError::CancellationPresent);
    }
    match build_interconnection(lp) {
        Ok(cl) => Ok(cl.poles().iter().all(|l| l.re < -1e-9 * (1.0 + l.norm()))),
        Err(PhaseError::AlgebraicLoop) => Ok(false),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Theorem {
    Gain,
    Phase,
    Mixed,
    Scaled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Gain,
    Phase,
    None,
}

/// Frequency grid and contour settings shared by the certificates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertConfig {
    pub omega_min: f64,
    pub omega_max: f64,
    pub points_per_decade: usize,
    /// Indentation radius; `None` picks a default from the pole/zero spacing.
    pub epsilon: Option<f64>,
    pub tol: f64,
    pub seed: u64,
    /// For the mixed test: phase below this frequency, gain at and above it.
    pub split: Option<f64>,
}

impl Default for CertConfig {
    fn default() -> Self {
        Self {
            omega_min: 1e-2,
            omega_max: 1e2,
            points_per_decade: 200,
            epsilon: None,
            tol: DEFAULT_TOL,
            seed: DEFAULT_SEED,
            split: None,
        }
    }
}

impl CertConfig {
    pub fn with_ppd(mut self, ppd: usize) -> Self {
        self.points_per_decade = ppd;
        self
    }
}

/// Margins at or below this are treated as zero.
pub const MARGIN_FLOOR: f64 = 1e-9;

/// Margin of the active condition at one contour point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginSample {
    pub omega: f64,
    pub s: Complex64,
    pub on_semicircle: bool,
    /// `1 − Πσ̄` where evaluated.
    pub gain_margin: Option<f64>,
    /// `π − max(|Σψ̄ − 2πℓ|, |Σψ̲ − 2πℓ|)` where evaluated.
    pub phase_margin: Option<f64>,
    pub phase_sum: Option<PhaseInterval>,
    pub condition: Condition,
}

impl MarginSample {
    fn margin(&self) -> f64 {
        match self.condition {
            Condition::Gain => self.gain_margin.unwrap_or(f64::NEG_INFINITY),
            Condition::Phase => self.phase_margin.unwrap_or(f64::NEG_INFINITY),
            Condition::None => self
                .gain_margin
                .into_iter()
                .chain(self.phase_margin)
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Piecewise-linear `γ_k(ω)` for one known subsystem, sampled on the contour.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaProfile {
    pub subsystem: usize,
    pub omega: Vec<f64>,
    pub gamma: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub verdict: CertificationVerdict,
    pub theorem: Theorem,
    pub samples: Vec<MarginSample>,
    pub min_margin: f64,
    pub worst: Option<MarginSample>,
    /// `ℓ` of the cone `(−π, π) + 2πℓ` used by the first phase run.
    pub branch: Option<i64>,
    pub gamma_profiles: Vec<GammaProfile>,
    pub no_cancellation: Option<bool>,
    pub infinity_ok: bool,
    pub notes: Vec<String>,
}

impl CertificationReport {
    fn finish(theorem: Theorem, samples: Vec<MarginSample>, infinity_ok: bool) -> Self {
        let worst = samples
            .iter()
            .min_by(|a, b| a.margin().total_cmp(&b.margin()))
            .cloned();
        let min_margin = worst.as_ref().map_or(f64::INFINITY, MarginSample::margin);
        let verdict = if min_margin > MARGIN_FLOOR && infinity_ok {
            CertificationVerdict::Certified
        } else {
            CertificationVerdict::NotCertified
        };
        Self {
            verdict,
            theorem,
            samples,
            min_margin,
            worst,
            branch: None,
            gamma_profiles: Vec::new(),
            no_cancellation: None,
            infinity_ok,
            notes: Vec::new(),
        }
    }

    pub fn is_certified(&self) -> bool {
        self.verdict.is_certified()
    }
}

fn axis_grid(cfg: &CertConfig) -> Vec<f64> {
    let mut g = vec![0.0];
    g.extend(lti::log_grid(cfg.omega_min, cfg.omega_max, cfg.points_per_decade));
    g
}

/// Gain bound of subsystem `k` at `s`: `σ̄(P_k(s))` or `δ_k(|s|)`.
fn gain_at(sub: &Subsystem, s: Complex64) -> Result<f64> {
    match sub {
        Subsystem::Known(p) => Ok(linalg::sigma_max(&p.freq_response(s)?)),
        Subsystem::Uncertain(u) => u
            .delta
            .as_ref()
            .map(|d| d.eval(s.norm()))
            .ok_or_else(|| PhaseError::InvalidModel("uncertain subsystem has no gain bound".into())),
    }
}

/// Small gain test: `Π δ_k Π σ̄(P_k(jω)) < 1` on the grid.
pub fn certify_small_gain(lp: &CyclicLoop, cfg: &CertConfig) -> Result<CertificationReport> {
    for (i, s) in lp.subsystems.iter().enumerate() {
        if let Subsystem::Known(p) = s {
            if !p.is_stable() {
                return Err(PhaseError::SemiStableNotAllowed { index: i });
            }
        }
    }
    let mut samples = Vec::new();
    for w in axis_grid(cfg) {
        let s = Complex64::new(0.0, w);
        let mut prod = 1.0;
        for sub in &lp.subsystems {
            prod *= gain_at(sub, s)?;
        }
        samples.push(MarginSample {
            omega: w,
            s,
            on_semicircle: false,
            gain_margin: Some(1.0 - prod),
            phase_margin: None,
            phase_sum: None,
            condition: Condition::Gain,
        });
    }
    let inf_ok = infinity_gain_ok(lp);
    Ok(CertificationReport::finish(Theorem::Gain, samples, inf_ok))
}

fn infinity_gain_ok(lp: &CyclicLoop) -> bool {
    lp.subsystems
        .iter()
        .map(|s| match s {
            Subsystem::Known(p) => linalg::sigma_max(&linalg::to_complex(&p.d)),
            Subsystem::Uncertain(u) => u.delta.as_ref().map_or(f64::INFINITY, |d| d.eval(f64::MAX)),
        })
        .product::<f64>()
        < 1.0
}

/// Eigenvalues of `D_m···D_1` avoid `(−∞, −1]`, so the arc at infinity cannot encircle `−1`.
fn infinity_arc_ok(sys: &[&StateSpaceSystem]) -> bool {
    let n = sys[0].io_dim();
    let mut prod = CMat::identity(n, n);
    for p in sys {
        prod = linalg::to_complex(&p.d) * prod;
    }
    linalg::eigenvalues(&prod)
        .iter()
        .all(|l| !(l.re <= -1.0 + 1e-9 && l.im.abs() <= 1e-9 * (1.0 + l.norm())))
}

/// Checks Assumption 1 on every known subsystem and the combined order rule.
fn structural_checks(sys: &[&StateSpaceSystem], tol: f64) -> Result<OmegaSets> {
    let mut sets = Vec::new();
    for (i, p) in sys.iter().enumerate() {
        let rep = check_assumptions(p, &[], tol);
        if !rep.structural_ok() {
            return Err(PhaseError::AssumptionViolation(format!(
                "subsystem {}: {}",
                i + 1,
                rep.messages.join("; ")
            )));
        }
        sets.push(jw_structure(p)?);
    }
    let refs: Vec<&OmegaSets> = sets.iter().collect();
    let all = OmegaSets::union(&refs);
    for w in all.frequencies() {
        let order = all.pole_order_at(w) + all.zero_order_at(w);
        if all.pole_order_at(w) > 0 && all.zero_order_at(w) > 0 {
            return Err(PhaseError::PoleZeroCollision { omega: w });
        }
        if order > 2 {
            return Err(PhaseError::PoleOrderTooHigh { omega: w, order });
        }
    }
    Ok(all)
}

fn shared_contours(all: &OmegaSets, cfg: &CertConfig) -> Result<Vec<IndentedContour>> {
    let freqs = all.frequencies();
    let eps = cfg.epsilon.unwrap_or_else(|| lti::default_epsilon(&freqs));
    let main = indented_contour(&freqs, eps, cfg.omega_min, cfg.omega_max, cfg.points_per_decade, lti::SEMICIRCLE_POINTS)?;
    if freqs.is_empty() {
        return Ok(vec![main]);
    }
    let small = indented_contour(&freqs, eps / 10.0, cfg.omega_min, cfg.omega_max, cfg.points_per_decade, lti::SEMICIRCLE_POINTS)?;
    Ok(vec![main, small])
}

/// Phase sums along a contour from continuous subsystem responses, merged by position.
fn phase_sums(sys: &[&StateSpaceSystem], contour: &IndentedContour, cfg: &CertConfig) -> Result<Vec<(ContourPoint, PhaseInterval)>> {
    let responses: Vec<_> = sys
        .par_iter()
        .map(|p| phase_response_seeded(p, contour, cfg.tol, cfg.seed))
        .collect::<Result<_>>()?;
    // refinement may add points to some responses only; keep the points every response has
    let base: Vec<ContourPoint> = responses[0]
        .samples
        .iter()
        .map(|s| ContourPoint { s: s.s, segment: s.segment })
        .collect();
    let mut out = Vec::new();
    for (i, pt) in base.iter().enumerate() {
        if matches!(pt.segment, Segment::OmegaPoint { .. }) {
            continue;
        }
        let mut sum = PhaseInterval::singleton(0.0);
        let mut ok = true;
        for (k, r) in responses.iter().enumerate() {
            let sample = if k == 0 {
                Some(&r.samples[i])
            } else {
                r.samples.iter().find(|x| x.s == pt.s)
            };
            match sample {
                Some(x) => sum = sum + x.interval,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            out.push((*pt, sum));
        }
    }
    Ok(out)
}

fn phase_sample(pt: &ContourPoint, sum: PhaseInterval, branch: i64) -> MarginSample {
    let margin = sum.cone_margin(branch).unwrap_or(f64::NEG_INFINITY);
    MarginSample {
        omega: pt.s.im,
        s: pt.s,
        on_semicircle: matches!(pt.segment, Segment::Semicircle { .. }),
        gain_margin: None,
        phase_margin: Some(margin),
        phase_sum: Some(sum),
        condition: Condition::Phase,
    }
}

fn branch_of(sum: &PhaseInterval) -> i64 {
    sum.midpoint().map_or(0, |m| (m / TAU).round() as i64)
}

/// Cyclic small phase test: `Σ Ψ(P_k(s)) ⊂ (−π, π) + 2πℓ` along the indented contour, one `ℓ` throughout.
pub fn certify_small_phase(lp: &CyclicLoop, cfg: &CertConfig) -> Result<CertificationReport> {
    let sys = lp.known_systems()?;
    if !check_no_cancellation(lp)? {
        return Err(PhaseError::CancellationPresent);
    }
    let all = structural_checks(&sys, cfg.tol)?;
    let mut samples = Vec::new();
    let mut branch = None;
    for contour in shared_contours(&all, cfg)? {
        let sums = phase_sums(&sys, &contour, cfg)?;
        let l = *branch.get_or_insert_with(|| sums.first().map_or(0, |s| branch_of(&s.1)));
        samples.extend(sums.iter().map(|(pt, sum)| phase_sample(pt, *sum, l)));
    }
    let mut rep = CertificationReport::finish(Theorem::Phase, samples, infinity_arc_ok(&sys));
    rep.branch = branch;
    rep.no_cancellation = Some(true);
    Ok(rep)
}

/// Worst clearance of the summed phase to `±π` (relative to the loop's cone).
pub fn phase_margin(lp: &CyclicLoop, cfg: &CertConfig) -> Result<f64> {
    Ok(certify_small_phase(lp, cfg)?.min_margin)
}

/// Frequency-wise mixed test: at every contour point the gain or the phase condition holds.
///
/// Phase sums are tracked along each maximal run of points that need them, with one `ℓ` per run.
pub fn certify_mixed(lp: &CyclicLoop, cfg: &CertConfig) -> Result<CertificationReport> {
    let sys = lp.known_systems()?;
    if !check_no_cancellation(lp)? {
        return Err(PhaseError::CancellationPresent);
    }
    let all = structural_checks(&sys, cfg.tol)?;
    let mut samples = Vec::new();
    let mut first_branch = None;
    for contour in shared_contours(&all, cfg)? {
        let mut gains: Vec<Option<f64>> = Vec::with_capacity(contour.points.len());
        for pt in &contour.points {
            let g = if matches!(pt.segment, Segment::OmegaPoint { .. }) {
                None
            } else {
                let mut prod = 1.0;
                for p in &sys {
                    prod *= linalg::sigma_max(&p.freq_response(pt.s)?);
                }
                Some(1.0 - prod)
            };
            gains.push(g);
        }
        let wants_phase = |i: usize| -> bool {
            let pt = &contour.points[i];
            if matches!(pt.segment, Segment::OmegaPoint { .. }) {
                return false;
            }
            let w = match pt.segment {
                Segment::Semicircle { omega0, .. } => omega0,
                _ => pt.s.im,
            };
            match cfg.split {
                Some(wc) => w < wc,
                None => gains[i].is_none_or(|g| g <= 0.0),
            }
        };
        let mut phase_at: HashMap<usize, (PhaseInterval, i64)> = HashMap::new();
        let mut i = 0;
        let n = contour.points.len();
        while i < n {
            let pt = contour.points[i];
            if matches!(pt.segment, Segment::OmegaPoint { .. }) {
                i += 1;
                continue;
            }
            if !wants_phase(i) {
                samples.push(MarginSample {
                    omega: pt.s.im,
                    s: pt.s,
                    on_semicircle: matches!(pt.segment, Segment::Semicircle { .. }),
                    gain_margin: gains[i],
                    phase_margin: None,
                    phase_sum: None,
                    condition: Condition::Gain,
                });
                i += 1;
                continue;
            }
            // a run continues through pole/zero markers, which the semicircles bridge
            let start = i;
            while i < n && (wants_phase(i) || matches!(contour.points[i].segment, Segment::OmegaPoint { .. })) {
                i += 1;
            }
            let run = IndentedContour {
                points: contour.points[start..i].to_vec(),
                epsilon: contour.epsilon,
                omega_min: contour.omega_min,
                omega_max: contour.omega_max,
            };
            let sums = phase_sums(&sys, &run, cfg)?;
            let l = sums.first().map_or(0, |s| branch_of(&s.1));
            first_branch.get_or_insert(l);
            for (pt, sum) in &sums {
                let mut ms = phase_sample(pt, *sum, l);
                let idx = contour.points[start..i].iter().position(|q| q.s == pt.s).map(|k| k + start);
                ms.gain_margin = idx.and_then(|k| gains[k]);
                if let Some(k) = idx {
                    phase_at.insert(k, (*sum, l));
                }
                samples.push(ms);
            }
        }
        if cfg.split.is_none() {
            for i in 0..n.saturating_sub(1) {
                let (p, q) = (&contour.points[i], &contour.points[i + 1]);
                if !matches!(p.segment, Segment::Axis { .. }) || !matches!(q.segment, Segment::Axis { .. }) || wants_phase(i) == wants_phase(i + 1) {
                    continue;
                }
                let (ph, g) = if wants_phase(i) { (i, i + 1) } else { (i + 1, i) };
                if let Some(&(sum, l)) = phase_at.get(&ph) {
                    samples.push(switch_sample(&sys, contour.points[ph].s.im, contour.points[g].s.im, sum, l, cfg)?);
                }
            }
        }
    }
    let inf_ok = infinity_arc_ok(&sys) || infinity_gain_ok(lp);
    let mut rep = CertificationReport::finish(Theorem::Mixed, samples, inf_ok);
    rep.branch = first_branch;
    rep.no_cancellation = Some(true);
    if let Some(wc) = cfg.split {
        rep.notes.push(format!("phase condition below ω = {wc}, gain condition at and above it"));
    }
    Ok(rep)
}

fn loop_gain_margin(sys: &[&StateSpaceSystem], w: f64) -> Result<f64> {
    let s = Complex64::new(0.0, w);
    let mut prod = 1.0;
    for p in sys {
        prod *= linalg::sigma_max(&p.freq_response(s)?);
    }
    Ok(1.0 - prod)
}

/// Both margins at the frequency where the gain condition starts to hold, between two grid points.
fn switch_sample(sys: &[&StateSpaceSystem], w_phase: f64, w_gain: f64, sum: PhaseInterval, l: i64, cfg: &CertConfig) -> Result<MarginSample> {
    let (mut a, mut b) = (w_phase, w_gain);
    for _ in 0..60 {
        let mid = 0.5 * (a + b);
        if loop_gain_margin(sys, mid)? > 0.0 {
            b = mid;
        } else {
            a = mid;
        }
    }
    let gm = loop_gain_margin(sys, b)?;
    let mut ws = [w_phase, b];
    ws.sort_by(f64::total_cmp);
    let run = IndentedContour {
        points: ws
            .iter()
            .map(|&w| ContourPoint {
                s: Complex64::new(0.0, w),
                segment: Segment::Axis { omega: w },
            })
            .collect(),
        epsilon: cfg.epsilon.unwrap_or(1e-4),
        omega_min: ws[0],
        omega_max: ws[1],
    };
    let sums = phase_sums(sys, &run, cfg)?;
    let at = |w: f64| sums.iter().find(|x| x.0.s.im == w).map(|x| x.1);
    let (Some(p0), Some(px)) = (at(w_phase), at(b)) else {
        return Err(PhaseError::InvalidModel("phase unavailable at a condition switch".into()));
    };
    let shift = match (sum.midpoint(), p0.midpoint()) {
        (Some(x), Some(y)) => ((y - x) / TAU).round() as i64,
        _ => 0,
    };
    Ok(MarginSample {
        omega: b,
        s: Complex64::new(0.0, b),
        on_semicircle: false,
        gain_margin: Some(gm),
        phase_margin: Some(px.cone_margin(l + shift).unwrap_or(f64::NEG_INFINITY)),
        phase_sum: Some(px),
        condition: Condition::None,
    })
}

/// Search settings for the angular scaling test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledSearch {
    /// Grid step in radians (a 181-point grid on `[−π, π)` by default).
    pub step: f64,
    pub trust_region: f64,
    pub sweeps: usize,
    /// Pin every `γ_k` to the phase center instead of searching.
    pub default_centers: bool,
}

impl Default for ScaledSearch {
    fn default() -> Self {
        Self {
            step: TAU / 181.0,
            trust_region: PI / 4.0,
            sweeps: 3,
            default_centers: false,
        }
    }
}

/// Per-point state for one known subsystem in the scaled search.
struct KnownTrack {
    gamma: f64,
    x: Option<linalg::CVec>,
}

/// `θ(e^{-jγ}M)` for the candidate rotations, plus the phase center nearest `near`.
fn rotated_profile(m: &CMat, gammas: &[f64], near: f64, warm: Option<&linalg::CVec>, cfg: &CertConfig) -> Result<(Vec<f64>, f64, Option<linalg::CVec>)> {
    let a = ComplexSquareMatrix::new(m.clone())?;
    if a.n() == 1 {
        let arg = a[(0, 0)].arg();
        let th = gammas.iter().map(|g| crate::interval::wrap_angle(arg - g).abs()).collect();
        return Ok((th, unwrap_near(arg, near), None));
    }
    let mut solver = match warm {
        Some(x) => NnrSolver::light(&a, std::slice::from_ref(x), cfg.seed)?,
        None => NnrSolver::new(&a, cfg.seed)?,
    };
    let center = match solver.local_center(near, 0.35, warm) {
        Some((c, _, _)) => c,
        None => {
            let sp = matrix_phase::segmental_phase_seeded(&a, cfg.tol, cfg.seed)?;
            sp.branches
                .iter()
                .map(|b| unwrap_near(b.center, near))
                .min_by(|x, y| (x - near).abs().total_cmp(&(y - near).abs()))
                .unwrap_or(near)
        }
    };
    let mut prev = warm.cloned();
    let mut th = Vec::with_capacity(gammas.len());
    for &g in gammas {
        let w: Vec<&linalg::CVec> = prev.iter().collect();
        let s = solver.min_projection(g, &w, 1);
        th.push(s.value.clamp(-1.0, 1.0).acos());
        prev = Some(s.x);
    }
    Ok((th, center, prev))
}

/// Angular-scaling test: search `γ_k(ω)` so that `Σ Ψ_{γ_k}(P_k) + Σ [α_k, β_k]` fits a cone.
pub fn certify_scaled(lp: &CyclicLoop, cfg: &CertConfig, search: &ScaledSearch) -> Result<CertificationReport> {
    let known: Vec<(usize, &StateSpaceSystem)> = lp
        .subsystems
        .iter()
        .enumerate()
        .filter_map(|(i, s)| match s {
            Subsystem::Known(p) => Some((i, p)),
            Subsystem::Uncertain(_) => None,
        })
        .collect();
    let uncertain: Vec<&UncertainSubsystem> = lp
        .subsystems
        .iter()
        .filter_map(|s| match s {
            Subsystem::Uncertain(u) => Some(u),
            Subsystem::Known(_) => None,
        })
        .collect();
    for u in &uncertain {
        if let Some(p) = u.samples.iter().find(|p| !p.is_stable()) {
            return Err(PhaseError::NotSemiStable(format!("uncertain sample with poles {:?}", p.poles())));
        }
    }
    let ksys: Vec<&StateSpaceSystem> = known.iter().map(|k| k.1).collect();
    let all = if ksys.is_empty() {
        OmegaSets::default()
    } else {
        structural_checks(&ksys, cfg.tol)?
    };
    let contours = shared_contours(&all, cfg)?;
    let mut samples = Vec::new();
    let mut profiles: Vec<GammaProfile> = known
        .iter()
        .map(|(i, _)| GammaProfile {
            subsystem: *i + 1,
            omega: Vec::new(),
            gamma: Vec::new(),
        })
        .collect();
    let mut branch: Option<i64> = None;
    for (ci, contour) in contours.iter().enumerate() {
        let mut tracks: Vec<KnownTrack> = known.iter().map(|_| KnownTrack { gamma: 0.0, x: None }).collect();
        let mut started = false;
        for pt in &contour.points {
            if matches!(pt.segment, Segment::OmegaPoint { .. }) {
                continue;
            }
            let w_eff = match pt.segment {
                Segment::Semicircle { omega0, .. } => omega0,
                _ => pt.s.im,
            };
            let fixed: PhaseInterval = uncertain.iter().map(|u| u.phase_at(w_eff)).sum();
            // candidate intervals per known subsystem
            let mut cands: Vec<Vec<(f64, PhaseInterval)>> = Vec::new();
            for (k, (_, p)) in known.iter().enumerate() {
                let m = p.freq_response(pt.s)?;
                let near = if started { tracks[k].gamma } else { 0.0 };
                let half = (search.trust_region / search.step).floor() as i64;
                let base = (near / search.step).round() as i64;
                let mut gammas: Vec<f64> = if started && !search.default_centers {
                    (-half..=half).map(|i| (base + i) as f64 * search.step).filter(|g| (g - near).abs() <= search.trust_region + 1e-12).collect()
                } else {
                    Vec::new()
                };
                let (_, center, _) = rotated_profile(&m, &[], near, tracks[k].x.as_ref(), cfg)?;
                let center = if started { unwrap_near(center, tracks[k].gamma) } else { center };
                gammas.push(center);
                let (th, _, x) = rotated_profile(&m, &gammas, center, tracks[k].x.as_ref(), cfg)?;
                tracks[k].x = x;
                cands.push(gammas.iter().zip(&th).map(|(&g, &t)| (g, PhaseInterval::centered(g, t))).collect());
            }
            // coordinate descent on max(|hi − 2πℓ|, |lo − 2πℓ|), starting from the centers
            let mut sel: Vec<usize> = cands.iter().map(|c| c.len() - 1).collect();
            let total = |sel: &[usize]| -> PhaseInterval {
                cands.iter().zip(sel).map(|(c, &i)| c[i].1).sum::<PhaseInterval>() + fixed
            };
            let score = |sum: &PhaseInterval, l: Option<i64>| -> f64 {
                let b = l.unwrap_or_else(|| branch_of(sum));
                -sum.cone_margin(b).unwrap_or(f64::NEG_INFINITY)
            };
            let run_branch = branch.filter(|_| started);
            let mut best = score(&total(&sel), run_branch);
            if !search.default_centers {
                for _ in 0..search.sweeps {
                    let mut changed = false;
                    for k in 0..cands.len() {
                        for i in 0..cands[k].len() {
                            let mut trial = sel.clone();
                            trial[k] = i;
                            let sc = score(&total(&trial), run_branch);
                            if sc < best - 1e-12 {
                                best = sc;
                                sel = trial;
                                changed = true;
                            }
                        }
                    }
                    if !changed {
                        break;
                    }
                }
            }
            let sum = total(&sel);
            let l = *branch.get_or_insert_with(|| branch_of(&sum));
            for (k, c) in cands.iter().enumerate() {
                let g = c[sel[k]].0;
                if started && (g - tracks[k].gamma).abs() > FRAC_PI_2 {
                    return Err(PhaseError::ProfileDiscontinuity {
                        index: known[k].0 + 1,
                        omega: pt.s.im,
                        jump: (g - tracks[k].gamma).abs(),
                    });
                }
                tracks[k].gamma = g;
                if ci == 0 {
                    profiles[k].omega.push(pt.s.im);
                    profiles[k].gamma.push(g);
                }
            }
            started = true;
            samples.push(phase_sample(pt, sum, l));
        }
    }
    let inf_ok = if ksys.is_empty() {
        true
    } else {
        let ok = infinity_arc_ok(&ksys);
        ok || known.len() == lp.m()
    };
    let mut rep = CertificationReport::finish(Theorem::Scaled, samples, inf_ok);
    rep.branch = branch;
    rep.gamma_profiles = profiles;
    rep.notes.push("γ search is a heuristic grid search; NOT_CERTIFIED does not rule out other scalings".into());
    Ok(rep)
}

/// Net clockwise encirclements of the origin by `det(I + P_m···P_1(s))` along the Nyquist contour.
///
/// For a semi-stable loop this equals the number of closed-loop poles in the
/// right half-plane; zero means the loop is stable.
pub fn nyquist_winding(lp: &CyclicLoop, cfg: &CertConfig) -> Result<i64> {
    let sys = lp.known_systems()?;
    let mut sets = Vec::new();
    for p in &sys {
        sets.push(jw_structure(p)?);
    }
    let refs: Vec<&OmegaSets> = sets.iter().collect();
    let all = OmegaSets::union(&refs);
    let mut poles: Vec<f64> = all.poles.iter().map(|p| p.omega).collect();
    poles.sort_by(f64::total_cmp);
    poles.dedup_by(|a, b| (*a - *b).abs() < 1e-9 * (1.0 + *b));
    let eps = cfg.epsilon.unwrap_or_else(|| lti::default_epsilon(&poles));
    let radius = cfg.omega_max.max(1e3) * 10.0;
    let contour = indented_contour(&poles, eps, cfg.omega_min, radius, cfg.points_per_decade.max(50), lti::SEMICIRCLE_POINTS)?;
    let n = lp.n;
    let value = |s: Complex64| -> Result<(Complex64, f64)> {
        let mut prod = CMat::identity(n, n);
        for p in &sys {
            prod = p.freq_response(s)? * prod;
        }
        let dist = linalg::eigenvalues(&prod)
            .iter()
            .map(|l| (l + 1.0).norm())
            .fold(f64::INFINITY, f64::min);
        let det = linalg::determinant(&(CMat::identity(n, n) + prod));
        Ok((det, dist))
    };
    let mut path: Vec<Complex64> = contour
        .points
        .iter()
        .filter(|p| !matches!(p.segment, Segment::OmegaPoint { .. }))
        .map(|p| p.s)
        .collect();
    let upper_len = path.len();
    for k in 1..=256 {
        let phi = FRAC_PI_2 - PI * k as f64 / 256.0;
        path.push(Complex64::from_polar(radius, phi));
    }
    let mut total_upper = 0.0;
    let mut total_arc = 0.0;
    let mut prev: Option<(Complex64, Complex64)> = None;
    let mut closest = f64::INFINITY;
    for (idx, &s) in path.iter().enumerate() {
        let (d, dist) = value(s)?;
        closest = closest.min(dist);
        if let Some((ps, pd)) = prev {
            let inc = arg_increment(&value, ps, pd, s, d, 0, &mut closest)?;
            if idx < upper_len {
                total_upper += inc;
            } else {
                total_arc += inc;
            }
        }
        prev = Some((s, d));
    }
    if closest < 1e-8 {
        return Err(PhaseError::CriticalPointOnLocus { distance: closest });
    }
    // the lower half mirrors the upper half and contributes the same increment
    let total = 2.0 * total_upper + total_arc;
    Ok(-(total / TAU).round() as i64)
}

fn arg_increment(
    value: &dyn Fn(Complex64) -> Result<(Complex64, f64)>,
    s0: Complex64,
    d0: Complex64,
    s1: Complex64,
    d1: Complex64,
    depth: usize,
    closest: &mut f64,
) -> Result<f64> {
    let inc = (d1 / d0).arg();
    if inc.abs() < 0.3 || depth > 30 {
        return Ok(inc);
    }
    let mid = midpoint_on_path(s0, s1);
    let (dm, dist) = value(mid)?;
    *closest = closest.min(dist);
    Ok(arg_increment(value, s0, d0, mid, dm, depth + 1, closest)? + arg_increment(value, mid, dm, s1, d1, depth + 1, closest)?)
}

/// Midpoint keeping to circles centered on the imaginary axis where both ends lie on one.
fn midpoint_on_path(a: Complex64, b: Complex64) -> Complex64 {
    if a.re == 0.0 && b.re == 0.0 {
        return Complex64::new(0.0, 0.5 * (a.im + b.im));
    }
    let m = 0.5 * (a + b);
    // project radially onto the circle through both points centered at j·Im
    let c = Complex64::new(0.0, 0.5 * (a.im + b.im));
    let r = 0.5 * ((a - c).norm() + (b - c).norm());
    let dir = m - c;
    if dir.norm() == 0.0 {
        return m;
    }
    c + dir / dir.norm() * r
}
