//! Globally adaptive Gauss-Kronrod (7/15) quadrature.
//!
//! Integrands with integrable endpoint singularities are expected to be
//! regularised by a change of variables before they reach this module; the
//! rule itself never evaluates the interval endpoints.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_3,
    0.949_107_912_342_758_524_526_189_684_047_9,
    0.864_864_423_359_769_072_789_712_788_640_9,
    0.741_531_185_599_394_439_863_864_773_280_8,
    0.586_087_235_467_691_130_294_144_845_693_0,
    0.405_845_151_377_397_166_906_606_412_076_9,
    0.207_784_955_007_898_467_600_689_403_773_2,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_97,
    0.063_092_092_629_978_553_290_700_663_189_20,
    0.104_790_010_322_250_183_839_876_322_541_5,
    0.140_653_259_715_525_918_745_189_590_510_2,
    0.169_004_726_639_267_902_826_583_426_598_6,
    0.190_350_578_064_785_409_913_256_402_421_0,
    0.204_432_940_075_298_892_414_161_999_234_6,
    0.209_482_141_084_727_828_012_999_174_891_7,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_1,
    0.279_705_391_489_276_667_901_467_771_423_8,
    0.381_830_050_505_118_944_950_369_775_489_0,
    0.417_959_183_673_469_387_755_102_040_816_3,
];

/// Convergence controls for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            abs: 1e-14,
            rel: 1e-11,
            max_intervals: 2000,
        }
    }
}

impl Tolerance {
    pub fn relative(rel: f64) -> Self {
        Self {
            abs: 0.0,
            rel,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, &x) in XGK.iter().take(7).enumerate() {
        let dx = half * x;
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    (value, error)
}

/// Integrates `f` over `[a, b]`, bisecting the worst interval until the
/// summed error estimate meets the tolerance.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: Tolerance) -> Result<Quadrature> {
    if a == b {
        return Ok(Quadrature {
            value: 0.0,
            error: 0.0,
            intervals: 0,
        });
    }
    let (value, error) = kronrod15(&mut f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value, error });
    let mut total = value;
    let mut total_error = error;
    let mut intervals = 1;
    loop {
        let target = tol.abs.max(tol.rel * total.abs());
        if total_error <= target {
            break;
        }
        if intervals >= tol.max_intervals {
            return Err(Error::QuadratureNonConvergence {
                value: total,
                error: total_error,
                intervals,
            });
        }
        let worst = heap.pop().expect("heap holds at least one segment");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval exhausted at machine precision; accept what we have.
            heap.push(worst);
            break;
        }
        let (lv, le) = kronrod15(&mut f, worst.a, mid);
        let (rv, re) = kronrod15(&mut f, mid, worst.b);
        total += lv + rv - worst.value;
        total_error += le + re - worst.error;
        heap.push(Segment { a: worst.a, b: mid, value: lv, error: le });
        heap.push(Segment { a: mid, b: worst.b, value: rv, error: re });
        intervals += 1;
    }
    // Re-sum to shed the drift of the incremental updates.
    let (value, error) = heap
        .iter()
        .fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.error));
    Ok(Quadrature {
        value,
        error,
        intervals,
    })
}

/// Integrates over consecutive pieces `[p0, p1], [p1, p2], ...`, so that
/// known kinks can be placed on interval boundaries.
pub fn integrate_pieces<F: FnMut(f64) -> f64>(mut f: F, breakpoints: &[f64], tol: Tolerance) -> Result<Quadrature> {
    let mut out = Quadrature {
        value: 0.0,
        error: 0.0,
        intervals: 0,
    };
    for w in breakpoints.windows(2) {
        let q = integrate(&mut f, w[0], w[1], tol)?;
        out.value += q.value;
        out.error += q.error;
        out.intervals += q.intervals;
    }
    Ok(out)
}

const GL8_X: [f64; 4] = [
    0.183_434_642_495_649_804_939_476_142_360_2,
    0.525_532_409_916_328_985_817_739_049_189_2,
    0.796_666_477_413_626_739_591_553_936_475_8,
    0.960_289_856_497_536_231_683_560_868_569_5,
];
const GL8_W: [f64; 4] = [
    0.362_683_783_378_361_982_965_150_449_277_2,
    0.313_706_645_877_887_287_337_962_201_986_6,
    0.222_381_034_453_374_470_544_355_994_426_2,
    0.101_228_536_290_376_259_152_531_354_309_9,
];

/// Fixed 8-point Gauss-Legendre rule on `[a, b]`.
pub fn gauss_legendre8<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut s = 0.0;
    for k in 0..4 {
        s += GL8_W[k] * (f(c - h * GL8_X[k]) + f(c + h * GL8_X[k]));
    }
    s * h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let q = integrate(|x| x.powi(5) - 3.0 * x * x, -1.0, 2.0, Tolerance::default()).unwrap();
        let exact = (64.0 - 1.0) / 6.0 - (8.0 + 1.0);
        assert!((q.value - exact).abs() < 1e-13);
    }

    #[test]
    fn kinked_integrand_converges() {
        let q = integrate(|x: f64| (x - 0.3).abs(), 0.0, 1.0, Tolerance::relative(1e-12)).unwrap();
        let exact = 0.5 * 0.09 + 0.5 * 0.49;
        assert!((q.value - exact).abs() < 1e-12);
    }

    #[test]
    fn substitution_handles_inverse_sqrt() {
        // int_0^1 x^{-1/2} dx with x = s^2
        let q = integrate(|s| 2.0 * s / s.max(f64::MIN_POSITIVE), 0.0, 1.0, Tolerance::default()).unwrap();
        assert!((q.value - 2.0).abs() < 1e-13);
    }

    #[test]
    fn gauss_legendre_degree_fifteen() {
        let v = gauss_legendre8(|x| x.powi(15) + x.powi(14), 0.0, 1.0);
        assert!((v - (1.0 / 16.0 + 1.0 / 15.0)).abs() < 1e-14);
    }

    #[test]
    fn reports_non_convergence() {
        let tol = Tolerance {
            abs: 0.0,
            rel: 1e-15,
            max_intervals: 3,
        };
        assert!(integrate(|x: f64| x.sqrt().sin() / x.max(1e-300), 0.0, 1.0, tol).is_err());
    }
}
