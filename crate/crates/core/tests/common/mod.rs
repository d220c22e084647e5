#![allow(dead_code)]

use std::ops::{Add, Div, Mul, Neg, Sub};

use ballpiston::real::Real;
use dashu_float::{round::mode::HalfEven, FBig};

/// Working precision of [`Big`] in bits.
pub const PREC: usize = 4096;

/// Arbitrary-precision float, enough for a thousand collisions to round
/// trip with no visible loss.
#[derive(Clone, Debug, PartialEq, PartialOrd)]
pub struct Big(FBig<HalfEven>);

macro_rules! big_op {
    ($t:ident, $m:ident) => {
        impl $t for Big {
            type Output = Big;
            fn $m(self, o: Big) -> Big {
                Big(self.0.$m(o.0))
            }
        }
    };
}
big_op!(Add, add);
big_op!(Sub, sub);
big_op!(Mul, mul);
big_op!(Div, div);

impl Neg for Big {
    type Output = Big;
    fn neg(self) -> Big {
        Big(-self.0)
    }
}

impl Real for Big {
    fn lift(x: f64) -> Self {
        Big(FBig::<HalfEven>::try_from(x).unwrap().with_precision(PREC).value())
    }

    fn to_f64(&self) -> f64 {
        self.0.to_f64().value()
    }

    fn sqrt(&self) -> Self {
        Big(self.0.sqrt())
    }
}

use ballpiston::dynamics::{FlowState, Simulator};
use ballpiston::geometry::GeometryParams;

/// Runs `events` collisions forward from `s0`, stops halfway through the
/// following free flight, reverses the velocity and flies back for the
/// same time. Returns the position and velocity distance from
/// `(q0, -v0)`.
pub fn reversal_error<T: Real>(params: &GeometryParams, s0: &FlowState, events: usize) -> (f64, f64) {
    let start: FlowState<T> = FlowState::lift(s0);
    let mut sim = Simulator::new(params, start.clone());
    for _ in 0..events {
        sim.step().unwrap();
    }
    let (dt, _) = sim.peek().unwrap();
    let target = sim.time().clone() + dt * T::lift(0.5);

    let mut fwd = Simulator::new(params, start);
    fwd.advance_to(&target, |_| {}).unwrap();
    let mut back = Simulator::new(params, fwd.state().reversed());
    back.advance_to(&target, |_| {}).unwrap();

    let end = back.state().to_f64();
    let dq = ((end.q.q1 - s0.q.q1).powi(2) + (end.q.q2 - s0.q.q2).powi(2) + (end.q.q3 - s0.q.q3).powi(2)).sqrt();
    let dv = ((end.v.v1 + s0.v.v1).powi(2) + (end.v.v2 + s0.v.v2).powi(2) + (end.v.v3 + s0.v.v3).powi(2)).sqrt();
    (dq, dv)
}

use ballpiston::geometry::{contains, Position};
use ballpiston::sampling::Seed;
use ballpiston::stats::Estimate;
use rand::Rng;
use rayon::prelude::*;

/// Hit-or-miss estimates of `|Gamma|` and `|dGamma_bp|` from `n` uniform
/// points each, drawn in `chunks` independent streams.
pub fn mc_geometry(params: &GeometryParams, n: u64, seed: Seed) -> (Estimate, Estimate) {
    let chunks = 64u64;
    let per = n / chunks;
    let (lo, hi) = (params.slot_min(), params.slot_max());
    let (vol_hits, face_hits): (u64, u64) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seed.rng("mc-geometry", c);
            let (mut v, mut f) = (0u64, 0u64);
            for _ in 0..per {
                let q1 = rng.random::<f64>() - 0.5;
                let q2 = rng.random::<f64>() - 0.5;
                let q3 = lo + (hi - lo) * rng.random::<f64>();
                v += contains(params, &Position::new(q1, q2, q3)) as u64;
                // face q1 = q3, projected on (q1, q2)
                let p1 = lo + (hi - lo) * rng.random::<f64>();
                let p2 = rng.random::<f64>() - 0.5;
                f += contains(params, &Position::new(p1, p2, p1)) as u64;
            }
            (v, f)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let total = per * chunks;
    let est = |hits: u64, scale: f64| {
        let p = hits as f64 / total as f64;
        Estimate {
            value: scale * p,
            standard_error: scale * (p * (1.0 - p) / total as f64).sqrt(),
            sample_count: total,
        }
    };
    let width = hi - lo;
    (est(vol_hits, width), est(face_hits, std::f64::consts::SQRT_2 * width))
}

use ballpiston::estimators::Histogram;
use ballpiston::geometry::flux_weight;
use ballpiston::quadrature::{integrate, Tolerance};
use ballpiston::sampling::{sample_bp_flux, AlphaDensity, AlphaSampler};
use ballpiston::stats::{chi_square, TestResult};

/// Chi-square test of `samples` draws of the angular density `h_n` at
/// `ep` against the density itself, `bins` bins per branch.
pub fn alpha_chi_square(ep: f64, n: u32, samples: u64, bins: usize, seed: Seed) -> TestResult {
    let sampler = AlphaSampler::new(ep, n).unwrap();
    let density = AlphaDensity::new(ep, n).unwrap();
    let mut h = Histogram::new(ep, bins).unwrap();
    let mut rng = seed.rng("alpha-chi2", u64::from(n));
    for _ in 0..samples {
        h.add(&sampler.sample(&mut rng));
    }
    assert_eq!(h.outside, 0);
    let expected = h.expected_counts(|a, s| density.density(a, s));
    chi_square(&h.observed_counts(), &expected).unwrap()
}

/// Chi-square test of `|v3| = sqrt(2 ep)` of flux samples against the
/// density proportional to `g(ep)` in that variable.
pub fn flux_energy_chi_square(params: &GeometryParams, samples: u64, bins: usize, seed: Seed) -> TestResult {
    let mut rng = seed.rng("flux-chi2", 0);
    let mut observed = vec![0u64; bins];
    for _ in 0..samples {
        let s = sample_bp_flux(params, &mut rng);
        let k = ((s.v.v3.abs() * bins as f64) as usize).min(bins - 1);
        observed[k] += 1;
    }
    let expected: Vec<f64> = (0..bins)
        .map(|k| {
            let (a, b) = (k as f64 / bins as f64, (k + 1) as f64 / bins as f64);
            integrate(|s| flux_weight(0.5 * s * s), a, b, Tolerance::relative(1e-10))
                .unwrap()
                .value
        })
        .collect();
    chi_square(&observed, &expected).unwrap()
}
