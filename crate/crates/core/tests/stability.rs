mod common;

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI};

use approx::assert_abs_diff_eq;
use common::*;
use num_complex::Complex64;
use phasekit::linalg::RMat;
use phasekit::lti::{log_grid, StateSpaceSystem};
use phasekit::oracles::{sampled_uncertain_systems, OracleConfig};
use phasekit::stability::*;
use phasekit::PhaseError;

fn cfg() -> CertConfig {
    CertConfig::default().with_ppd(40)
}

fn stat(v: &[f64]) -> StateSpaceSystem {
    let n = (v.len() as f64).sqrt() as usize;
    StateSpaceSystem::static_gain(RMat::from_row_slice(n, n, v)).unwrap()
}


#[test]
fn interconnection_examples() {
    let zero = stat(&[0.0]);
    let cl = build_interconnection(&known(vec![zero.clone(), zero])).unwrap();
    assert_eq!(cl.d, RMat::identity(2, 2));

    let cl = build_interconnection(&known(vec![stat(&[1.0])])).unwrap();
    assert_abs_diff_eq!(cl.d[(0, 0)], 0.5, epsilon = 1e-15);

    let lp = known(vec![siso(&[1.0], &[0.0, 0.0, 1.0]), siso(&[1.0, 1.0], &[2.0, 1.0])]);
    let cl = build_interconnection(&lp).unwrap();
    let poles = cl.poles();
    assert_eq!(poles.len(), 3);
    for s in poles {
        let v = s * s * s + 2.0 * s * s + s + 1.0;
        assert!(v.norm() < 1e-9, "{s}");
    }

    assert!(matches!(build_interconnection(&known(vec![stat(&[-1.0])])), Err(PhaseError::AlgebraicLoop)));
}

#[test]
fn cancellation_examples() {
    let int = siso(&[1.0], &[0.0, 1.0]);
    assert!(!check_no_cancellation(&known(vec![int.clone(), siso(&[0.0, 1.0], &[1.0, 1.0])])).unwrap());
    assert!(check_no_cancellation(&known(vec![int, lag()])).unwrap());
    assert!(check_no_cancellation(&integrator_loop()).unwrap());
    let lp = known(vec![siso(&[1.0], &[0.0, 1.0]), siso(&[0.0, 1.0], &[1.0, 1.0])]);
    assert!(matches!(oracle_is_stable(&lp), Err(PhaseError::CancellationPresent)));
}

#[test]
fn oracle_examples() {
    let lp = known(vec![siso(&[1.0], &[0.0, 0.0, 1.0]), siso(&[1.0, 1.0], &[2.0, 1.0])]);
    assert!(oracle_is_stable(&lp).unwrap());
    assert!(oracle_is_stable(&known(vec![stat(&[2.0])])).unwrap());
    assert!(!oracle_is_stable(&known(vec![stat(&[-1.0])])).unwrap());
    assert!(oracle_is_stable(&integrator_loop()).unwrap());
}

#[test]
fn small_gain_examples() {
    let p = stat(&[0.9, 0.0, 0.0, 0.9]);
    assert!(certify_small_gain(&known(vec![p.clone(), p.clone(), p]), &cfg()).unwrap().is_certified());

    let unc = UncertainSubsystem::new(
        LogPiecewise::constant(-3.0),
        LogPiecewise::constant(3.0),
        Some(LogPiecewise::constant(0.6)),
        Vec::new(),
    )
    .unwrap();
    let lp = CyclicLoop::new(vec![Subsystem::Known(stat(&[2.0, 0.0, 0.0, 2.0])), Subsystem::Uncertain(unc)]).unwrap();
    let rep = certify_small_gain(&lp, &cfg()).unwrap();
    assert!(!rep.is_certified());
    assert_abs_diff_eq!(rep.min_margin, -0.2, epsilon = 1e-12);

    let rep = certify_small_gain(&known(vec![lag(), lag(), lag()]), &cfg()).unwrap();
    assert!(!rep.is_certified());
    assert_eq!(rep.worst.unwrap().omega, 0.0);

    assert!(matches!(
        certify_small_gain(&known(vec![integrator_pair(), stat(&[0.1, 0.0, 0.0, 0.1])]), &cfg()),
        Err(PhaseError::SemiStableNotAllowed { index: 0 })
    ));
}

#[test]
fn small_phase_examples() {
    let lp = known(vec![siso(&[1.0], &[0.0, 0.0, 1.0]), siso(&[1.0, 1.0], &[2.0, 1.0])]);
    let rep = certify_small_phase(&lp, &cfg()).unwrap();
    assert!(rep.is_certified(), "{}", rep.min_margin);
    assert!(rep.samples.iter().any(|s| s.on_semicircle));

    let rep = certify_small_phase(&known(vec![lag(), lag(), lag()]), &cfg()).unwrap();
    assert!(!rep.is_certified());
    assert!(rep.worst.unwrap().omega > 3f64.sqrt());

    let i = stat(&[1.0, 0.0, 0.0, 1.0]);
    let rep = certify_small_phase(&known(vec![i.clone(), i]), &cfg()).unwrap();
    assert!(rep.is_certified());
    assert_abs_diff_eq!(rep.min_margin, PI, epsilon = 1e-9);
}

#[test]
fn small_phase_rejects_high_order_and_cancellation() {
    let int = siso(&[1.0], &[0.0, 1.0]);
    let dbl = siso(&[1.0], &[0.0, 0.0, 1.0]);
    let e = certify_small_phase(&known(vec![int, dbl]), &cfg());
    assert!(matches!(e, Err(PhaseError::PoleOrderTooHigh { order: 3, .. })), "{e:?}");
    let lp = known(vec![siso(&[1.0], &[0.0, 1.0]), siso(&[0.0, 1.0], &[1.0, 1.0])]);
    assert!(matches!(certify_small_phase(&lp, &cfg()), Err(PhaseError::CancellationPresent)));
}

#[test]
fn mixed_examples() {
    let mut c = cfg().with_ppd(50);
    c.split = Some(2.6);
    let rep = certify_mixed(&integrator_loop(), &c).unwrap();
    assert!(rep.is_certified(), "{:?}", rep.worst);
    for s in &rep.samples {
        let w = if s.on_semicircle { 0.0 } else { s.omega };
        let want = if w < 2.6 { Condition::Phase } else { Condition::Gain };
        assert_eq!(s.condition, want, "ω = {}", s.omega);
    }

    let rep = certify_mixed(&known(vec![lag(), lag(), lag()]), &cfg()).unwrap();
    assert!(rep.is_certified());
    assert!(rep.samples.iter().any(|s| s.condition == Condition::Gain));
    assert!(rep.samples.iter().any(|s| s.condition == Condition::Phase));

    assert!(certify_mixed(&known(vec![stat(&[0.5])]), &cfg()).unwrap().is_certified());
}

#[test]
fn phase_margin_examples() {
    assert_abs_diff_eq!(phase_margin(&known(vec![lag()]), &cfg()).unwrap(), PI - 100f64.atan(), epsilon = 1e-9);
    assert_abs_diff_eq!(phase_margin(&known(vec![stat(&[1.0])]), &cfg()).unwrap(), PI, epsilon = 1e-12);
    let m = phase_margin(&known(vec![lag(), lag(), lag()]), &cfg()).unwrap();
    assert_abs_diff_eq!(m, PI - 3.0 * 100f64.atan(), epsilon = 1e-9);
    assert!(m < -FRAC_PI_2 + 0.05);
}

#[test]
fn winding_examples() {
    assert_eq!(nyquist_winding(&known(vec![siso(&[0.5], &[1.0, 1.0])]), &cfg()).unwrap(), 0);
    let cube = [1.0, 3.0, 3.0, 1.0];
    assert_eq!(nyquist_winding(&known(vec![siso(&[4.0], &cube)]), &cfg()).unwrap(), 0);
    assert_eq!(nyquist_winding(&known(vec![siso(&[10.0], &cube)]), &cfg()).unwrap(), 2);
    assert_eq!(nyquist_winding(&integrator_loop(), &cfg()).unwrap(), 0);
    let lp = known(vec![siso(&[1.0], &[0.0, 0.0, 1.0]), siso(&[1.0, 1.0], &[2.0, 1.0])]);
    assert_eq!(nyquist_winding(&lp, &cfg()).unwrap(), 0);
    assert!(matches!(
        nyquist_winding(&known(vec![siso(&[8.0], &cube)]), &cfg()),
        Err(PhaseError::CriticalPointOnLocus { .. })
    ));
}

#[test]
fn scaled_siso_lag_with_uncertain_bound() {
    let lp = CyclicLoop::new(vec![
        Subsystem::Known(diag_tf((&[1.0], &[1.0, 1.0]), (&[1.0], &[1.0, 1.0]))),
        Subsystem::Uncertain(UncertainSubsystem::constant(-FRAC_PI_3, FRAC_PI_3).unwrap()),
    ])
    .unwrap();
    let rep = certify_scaled(&lp, &cfg(), &ScaledSearch::default()).unwrap();
    assert!(rep.is_certified(), "{}", rep.min_margin);
    let prof = &rep.gamma_profiles[0];
    assert_eq!(prof.subsystem, 1);
    for (w, g) in prof.omega.iter().zip(&prof.gamma) {
        if *w > 0.0 {
            assert!((g + w.atan()).abs() < 0.05, "ω = {w}: γ = {g}");
        }
    }
}

#[test]
fn scaled_rotated_pd_twin() {
    let a1 = rot(2.0 * PI / 9.0) * RMat::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
    let lp = CyclicLoop::new(vec![
        Subsystem::Known(StateSpaceSystem::static_gain(a1).unwrap()),
        Subsystem::Uncertain(UncertainSubsystem::constant(-FRAC_PI_2, FRAC_PI_2).unwrap()),
    ])
    .unwrap();
    let rep = certify_scaled(&lp, &cfg().with_ppd(10), &ScaledSearch::default()).unwrap();
    assert!(rep.is_certified(), "{}", rep.min_margin);
    assert!(rep.gamma_profiles[0].gamma.iter().all(|g| g.abs() < 0.05));
}

#[test]
fn scaled_with_no_room() {
    let u = || Subsystem::Uncertain(UncertainSubsystem::constant(-2.0, 2.0).unwrap());
    let lp = CyclicLoop::with_dim(1, vec![u(), u()]).unwrap();
    let rep = certify_scaled(&lp, &cfg().with_ppd(10), &ScaledSearch::default()).unwrap();
    assert!(!rep.is_certified());
}

#[test]
fn loop_json_round_trip() {
    let j = r#"{"n": 1, "subsystems": [
        {"kind": "known", "model": {"tf": {"entries": [[{"num": [1.0], "den": [1.0, 1.0]}]]}}},
        {"kind": "uncertain", "phase_bound": {"omega": [0.1, 10.0], "alpha": [-0.5, -1.0], "beta": [0.5, 1.0]}}
    ]}"#;
    let lp = CyclicLoop::from_json(&serde_json::from_str(j).unwrap()).unwrap();
    assert_eq!(lp.m(), 2);
    let Subsystem::Uncertain(u) = &lp.subsystems[1] else { panic!() };
    assert_abs_diff_eq!(u.alpha.eval(1.0), -0.75, epsilon = 1e-12);
    assert_abs_diff_eq!(u.beta.eval(1e3), 1.0, epsilon = 1e-12);
    let bad = r#"{"n": 1, "subsystems": [{"kind": "uncertain", "phase_bound": {"omega": [1.0], "alpha": [-4.0], "beta": [4.0]}}]}"#;
    assert!(CyclicLoop::from_json(&serde_json::from_str(bad).unwrap()).is_err());
}

struct Outcome {
    name: String,
    stable: bool,
    gain: Option<bool>,
    phase: Option<CertificationReport>,
    mixed: Option<bool>,
    scaled_default: Option<bool>,
}

fn evaluate(name: &str, lp: &CyclicLoop) -> Outcome {
    let c = cfg();
    let stable = oracle_is_stable(lp).unwrap();
    let gain = certify_small_gain(lp, &c).ok().map(|r| r.is_certified());
    let phase = certify_small_phase(lp, &c).ok();
    let mixed = certify_mixed(lp, &c).ok().map(|r| r.is_certified());
    let search = ScaledSearch {
        default_centers: true,
        ..ScaledSearch::default()
    };
    let scaled_default = certify_scaled(lp, &c, &search).ok().map(|r| r.is_certified());
    Outcome {
        name: name.into(),
        stable,
        gain,
        phase,
        mixed,
        scaled_default,
    }
}

#[test]
fn certificates_are_sound_and_coherent() {
    let fx = loop_fixtures();
    assert!(fx.len() >= 30);
    let outcomes: Vec<Outcome> = fx.iter().map(|(n, lp)| evaluate(n, lp)).collect();
    let mut certified = 0;
    let mut rejected = 0;
    for (o, (_, lp)) in outcomes.iter().zip(&fx) {
        let any = [o.gain, o.phase.as_ref().map(|r| r.is_certified()), o.mixed]
            .into_iter()
            .flatten()
            .any(|v| v);
        if any {
            certified += 1;
            assert!(o.stable, "{} certified but unstable", o.name);
        } else {
            rejected += 1;
        }
        if let Some(rep) = &o.phase {
            // margin coherence
            assert_eq!(rep.min_margin > 0.0, rep.is_certified(), "{}", o.name);
            // monotone conservatism: pinned centers evaluate the same condition
            if let Some(sd) = o.scaled_default {
                assert!(!sd || rep.is_certified(), "{}", o.name);
            }
            // nyquist consistency
            if rep.is_certified() {
                assert_eq!(nyquist_winding(lp, &cfg()).unwrap(), 0, "{}", o.name);
                assert!(rep.samples.iter().all(|s| s.phase_margin.unwrap() > 0.0));
            }
        }
        if lp.known_systems().unwrap().iter().all(|p| p.is_stable()) {
            let w = nyquist_winding(lp, &cfg());
            if let Ok(w) = w {
                assert_eq!(w == 0, o.stable, "{}: winding {w}", o.name);
            }
        }
    }
    assert!(certified >= 10 && rejected >= 5, "{certified} certified, {rejected} rejected");
}

#[test]
fn siso_small_phase_matches_classical_angle_sum() {
    let c = cfg();
    for (name, lp) in loop_fixtures() {
        let sys = lp.known_systems().unwrap();
        if lp.n != 1 || sys.iter().any(|p| p.has_axis_poles()) {
            continue;
        }
        let rep = certify_small_phase(&lp, &c).unwrap();
        let mut prev: Option<f64> = None;
        let mut classical = true;
        for w in std::iter::once(0.0).chain(log_grid(c.omega_min, c.omega_max, c.points_per_decade)) {
            let s = Complex64::new(0.0, w);
            let v: Complex64 = sys.iter().map(|p| p.freq_response(s).unwrap()[(0, 0)]).product();
            let a = match prev {
                Some(x) => phasekit::interval::unwrap_near(v.arg(), x),
                None => v.arg(),
            };
            prev = Some(a);
            classical &= a.abs() < PI;
        }
        assert_eq!(rep.is_certified(), classical, "{name}");
    }
}

#[test]
fn scaled_certificate_is_sound_on_sampled_instances() {
    let c = cfg().with_ppd(20);
    let known_part = diag_tf((&[1.0], &[1.0, 1.0]), (&[2.0], &[2.0, 1.0]));
    let bound = UncertainSubsystem::constant(-FRAC_PI_3, FRAC_PI_3).unwrap();
    let lp = CyclicLoop::new(vec![Subsystem::Known(known_part.clone()), Subsystem::Uncertain(bound.clone())]).unwrap();
    let rep = certify_scaled(&lp, &c, &ScaledSearch::default()).unwrap();
    assert!(rep.is_certified());
    let grid = log_grid(c.omega_min, c.omega_max, c.points_per_decade);
    let ocfg = OracleConfig::new(24, 7).unwrap();
    let instances = sampled_uncertain_systems(&bound, 2, &grid, &ocfg).unwrap();
    assert!(instances.len() >= 20);
    for p in instances {
        let concrete = known(vec![known_part.clone(), p]);
        assert!(oracle_is_stable(&concrete).unwrap());
    }
}
