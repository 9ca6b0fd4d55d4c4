#![allow(dead_code)]

use phasekit::linalg::RMat;
use phasekit::lti::{Rational, StateSpaceSystem};
use phasekit::stability::CyclicLoop;

pub fn siso(num: &[f64], den: &[f64]) -> StateSpaceSystem {
    StateSpaceSystem::siso(num, den).unwrap()
}

pub fn tf(entries: &[Vec<Rational>]) -> StateSpaceSystem {
    StateSpaceSystem::from_tf(entries).unwrap()
}

pub fn r(num: &[f64], den: &[f64]) -> Rational {
    Rational::new(num, den)
}

pub fn k(v: f64) -> Rational {
    Rational::constant(v)
}

/// `(1 + s)(s²I + sI + K)⁻¹` with `K = [[5, 3], [2, 2]]`.
pub fn mass_spring() -> StateSpaceSystem {
    let kk = RMat::from_row_slice(2, 2, &[5.0, 3.0, 2.0, 2.0]);
    let mut a = RMat::zeros(4, 4);
    a.view_mut((0, 2), (2, 2)).copy_from(&RMat::identity(2, 2));
    a.view_mut((2, 0), (2, 2)).copy_from(&(-&kk));
    a.view_mut((2, 2), (2, 2)).copy_from(&(-RMat::identity(2, 2)));
    let mut b = RMat::zeros(4, 2);
    b.view_mut((2, 0), (2, 2)).copy_from(&RMat::identity(2, 2));
    let mut c = RMat::zeros(2, 4);
    c.view_mut((0, 0), (2, 2)).copy_from(&RMat::identity(2, 2));
    c.view_mut((0, 2), (2, 2)).copy_from(&RMat::identity(2, 2));
    StateSpaceSystem::new(a, b, c, RMat::zeros(2, 2)).unwrap()
}

pub fn integrator_pair() -> StateSpaceSystem {
    tf(&[vec![r(&[10.0], &[0.0, 1.0]), k(0.0)], vec![k(0.0), r(&[10.0], &[0.0, 1.0])]])
}

pub fn integrator_loop() -> CyclicLoop {
    let p2 = tf(&[vec![r(&[1.0], &[1.0, 1.0]), k(0.1)], vec![k(0.0), r(&[1.0], &[1.0, 1.0])]]);
    let p3 = tf(&[vec![r(&[1.0, 1.0], &[10.0, 1.0]), k(0.0)], vec![k(0.1), r(&[2.0, 1.0], &[5.0, 1.0])]]);
    CyclicLoop::known(vec![integrator_pair(), p2, p3]).unwrap()
}

pub fn lag() -> StateSpaceSystem {
    siso(&[1.0], &[1.0, 1.0])
}

pub fn known(ps: Vec<StateSpaceSystem>) -> CyclicLoop {
    CyclicLoop::known(ps).unwrap()
}

pub fn rot(t: f64) -> RMat {
    RMat::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()])
}

pub fn scaled_2x2(p: &StateSpaceSystem, m: &RMat) -> StateSpaceSystem {
    p.then(&StateSpaceSystem::static_gain(m.clone()).unwrap()).unwrap()
}

pub fn diag_tf(a: Rational2, b: Rational2) -> StateSpaceSystem {
    tf(&[vec![r(a.0, a.1), k(0.0)], vec![k(0.0), r(b.0, b.1)]])
}

pub type Rational2<'a> = (&'a [f64], &'a [f64]);

/// Concrete loops spanning certified and uncertified cases.
pub fn loop_fixtures() -> Vec<(String, CyclicLoop)> {
    let mut out = Vec::new();
    let cube = [1.0, 3.0, 3.0, 1.0];
    for g in [0.5, 2.0, 8.0, 20.0] {
        out.push((format!("{g}/(s+1)"), known(vec![siso(&[g], &[1.0, 1.0])])));
        out.push((format!("{g}/(s+1)^3"), known(vec![siso(&[g], &cube)])));
        out.push((format!("{g}/(s+1) x3"), known(vec![siso(&[g], &[1.0, 1.0]), lag(), lag()])));
        out.push((format!("{g}/s * 1/(s+2)"), known(vec![siso(&[g], &[0.0, 1.0]), siso(&[1.0], &[2.0, 1.0])])));
    }
    for (a, b) in [(1.0, 2.0), (0.5, 5.0), (2.0, 1.0), (0.1, 10.0)] {
        out.push((format!("1/s^2, (s+{a})/(s+{b})"), known(vec![siso(&[1.0], &[0.0, 0.0, 1.0]), siso(&[a, 1.0], &[b, 1.0])])));
    }
    for g in [0.3, 1.0, 5.0] {
        let m = RMat::identity(2, 2) * g;
        out.push((format!("{g}·mass_spring"), known(vec![scaled_2x2(&mass_spring(), &m)])));
        out.push((format!("{g}·mass_spring, lag"), known(vec![scaled_2x2(&mass_spring(), &m), diag_tf((&[1.0], &[1.0, 1.0]), (&[1.0], &[1.0, 1.0]))])));
    }
    for t in [0.3, 1.2, 2.5] {
        let m = rot(t) * RMat::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        out.push((format!("R({t})·PD, 1/(s+1)"), known(vec![StateSpaceSystem::static_gain(m).unwrap(), diag_tf((&[1.0], &[1.0, 1.0]), (&[1.0], &[1.0, 1.0]))])));
    }
    out.push(("integrators, coupled lags".into(), integrator_loop()));
    for g in [0.05, 0.5] {
        let m = RMat::identity(2, 2) * g;
        out.push((format!("{g}·integrators, lag"), known(vec![scaled_2x2(&integrator_pair(), &m), diag_tf((&[1.0], &[1.0, 1.0]), (&[2.0], &[1.0, 1.0]))])));
    }
    out.push(("s/(s+1), 1/(s+1)".into(), known(vec![siso(&[0.0, 1.0], &[1.0, 1.0]), lag()])));
    for g in [0.5, 3.0] {
        out.push((format!("{g}(s²+4)/(s+1)², lag"), known(vec![siso(&[4.0 * g, 0.0, g], &[1.0, 2.0, 1.0]), lag()])));
    }
    for g in [0.8, 1.5] {
        out.push((format!("{g}/(s+1) x4"), known(vec![siso(&[g], &[1.0, 1.0]); 4])));
    }
    let lags = diag_tf((&[1.0], &[1.0, 1.0]), (&[1.0], &[1.0, 1.0]));
    out.push(("0.3·mass_spring, lag x3".into(), known(vec![scaled_2x2(&mass_spring(), &(RMat::identity(2, 2) * 0.3)), lags.clone(), lags.clone(), lags])));
    out.push(("coupled lag pair".into(), known(vec![
        tf(&[vec![r(&[1.0], &[1.0, 1.0]), r(&[0.5], &[2.0, 1.0])], vec![k(0.0), r(&[2.0], &[3.0, 1.0])]]),
        tf(&[vec![r(&[3.0], &[1.0, 1.0]), k(0.0)], vec![r(&[1.0], &[1.0, 1.0]), r(&[1.0], &[4.0, 1.0])]]),
    ])));
    out
}

