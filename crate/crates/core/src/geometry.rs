//! Closed-form geometry of the single ball-piston cell.
//!
//! The ball cell is the unit square centred at the origin with discs of
//! radius `rho` removed at its four corners. The piston is a vertical
//! segment moving along `q3` in the slot `[(1-lambda)/2 - delta,
//! (1+lambda)/2 + delta]`, centred on the right edge of the cell, and the
//! ball always stays to its left (`q1 <= q3`). All speeds are unit speeds:
//! the total kinetic energy is fixed at 1/2.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use serde::Serialize;

use crate::error::{Error, Result};

/// Disc radius used for every published data set of the model,
/// `(sqrt(33) - 2) / (5 sqrt(2))`, for which `rho/sqrt(2) - lambda/2 = 1/5`.
pub fn reference_rho() -> f64 {
    (33f64.sqrt() - 2.0) / (5.0 * SQRT_2)
}

/// Centres of the four corner discs, indexed by arc number.
pub const CORNERS: [(f64, f64); 4] = [(0.5, 0.5), (-0.5, 0.5), (-0.5, -0.5), (0.5, -0.5)];

/// Slot width `lambda = sqrt(4 rho^2 - 1)`: the overlap of two adjacent discs
/// along the cell edge.
pub fn slot_width(rho: f64) -> f64 {
    (4.0 * rho * rho - 1.0).max(0.0).sqrt()
}

/// Area of the ball cell, `1 - lambda - rho^2 (pi - 4 arctan lambda)`.
pub fn core_area(rho: f64) -> f64 {
    let lambda = slot_width(rho);
    1.0 - lambda - rho * rho * (PI - 4.0 * lambda.atan())
}

/// Validated model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeometryParams {
    rho: f64,
    delta: f64,
}

impl GeometryParams {
    /// Accepts `1/2 < rho < 1/sqrt(2)` and `0 < delta < (1 - lambda)/2`.
    ///
    /// The upper bound on `delta` keeps the leftmost piston position in the
    /// right half of the cell. The tighter bound `rho/sqrt(2) - lambda/2`,
    /// which only matters when neighbouring cells carry pistons, is reported
    /// by [`GeometryParams::fits_lattice`].
    pub fn new(rho: f64, delta: f64) -> Result<Self> {
        if !(rho > 0.5 && rho < FRAC_1_SQRT_2) {
            return Err(Error::RhoOutOfRange { rho });
        }
        let max = 0.5 * (1.0 - slot_width(rho));
        if !(delta > 0.0 && delta < max) {
            return Err(Error::DeltaOutOfRange { delta, max });
        }
        Ok(Self { rho, delta })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn lambda(&self) -> f64 {
        slot_width(self.rho)
    }

    /// Piston height, `1 - 2 sqrt(rho^2 - (lambda/2 + delta)^2)`.
    pub fn eta(&self) -> f64 {
        let lambda = self.lambda();
        let x = 4.0 * self.delta * (lambda + self.delta);
        x / (1.0 + (1.0 - x).sqrt())
    }

    /// Leftmost piston position.
    pub fn slot_min(&self) -> f64 {
        0.5 * (1.0 - self.lambda()) - self.delta
    }

    /// Rightmost piston position.
    pub fn slot_max(&self) -> f64 {
        0.5 * (1.0 + self.lambda()) + self.delta
    }

    /// Rightmost position reachable by the ball (the pinch point of the two
    /// right discs).
    pub fn pinch(&self) -> f64 {
        0.5 * (1.0 - self.lambda())
    }

    /// Whether `delta < rho/sqrt(2) - lambda/2`, the bound that prevents
    /// overlap with pistons of neighbouring cells in an extended gas.
    pub fn fits_lattice(&self) -> bool {
        self.delta < self.rho * FRAC_1_SQRT_2 - 0.5 * self.lambda()
    }
}

/// Configuration-space point: ball at `(q1, q2)`, piston at `q3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Position<T = f64> {
    pub q1: T,
    pub q2: T,
    pub q3: T,
}

impl<T> Position<T> {
    pub fn new(q1: T, q2: T, q3: T) -> Self {
        Self { q1, q2, q3 }
    }
}

/// Membership in the configuration space, boundaries included.
pub fn contains(params: &GeometryParams, q: &Position) -> bool {
    contains_within(params, q, 0.0)
}

/// [`contains`] with every constraint relaxed by `tol` (a length). Points
/// snapped onto a boundary are only guaranteed to pass this with a small
/// positive `tol`.
pub fn contains_within(params: &GeometryParams, q: &Position, tol: f64) -> bool {
    let h = 0.5 + tol;
    if !(q.q1.abs() <= h && q.q2.abs() <= h && q.q1 <= q.q3 + tol) {
        return false;
    }
    if !(q.q3 >= params.slot_min() - tol && q.q3 <= params.slot_max() + tol) {
        return false;
    }
    let r = (params.rho - tol).max(0.0);
    let r2 = r * r;
    CORNERS.iter().all(|&(cx, cy)| {
        let (dx, dy) = (q.q1 - cx, q.q2 - cy);
        dx * dx + dy * dy >= r2
    })
}

/// Derived volumes, areas and mean free times of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeometrySummary {
    pub rho: f64,
    pub delta: f64,
    pub lambda: f64,
    pub eta: f64,
    /// `|Gamma|`, volume of configuration space.
    pub gamma_volume: f64,
    /// Area of the ball-piston collision surface.
    pub area_bp: f64,
    /// Area of the ball-wall (arc) collision surfaces.
    pub area_bw: f64,
    /// Area of the two piston-wall collision surfaces.
    pub area_pw: f64,
    /// Area of the ball cell.
    pub core_area: f64,
    pub tau_bp: f64,
    pub tau_bw: f64,
    pub tau_pw: f64,
    pub tau_total: f64,
}

impl GeometrySummary {
    /// Ball-piston collision frequency `1 / tau_bp`.
    pub fn bp_rate(&self) -> f64 {
        1.0 / self.tau_bp
    }

    /// Ratio `|dGamma_bp| / |Gamma|`, the prefactor of the energy kernel.
    pub fn bp_flux_ratio(&self) -> f64 {
        self.area_bp / self.gamma_volume
    }
}

/// Raw closed forms evaluated without parameter validation. `rho = 1/2`
/// (closed slot) is allowed here so that degenerate limits can be probed.
#[derive(Debug, Clone, Copy)]
pub struct ClosedForms {
    pub gamma_volume: f64,
    pub area_bp: f64,
    pub area_bw: f64,
    pub area_pw: f64,
    pub core_area: f64,
}

impl ClosedForms {
    pub fn evaluate(rho: f64, delta: f64) -> Self {
        let lambda = slot_width(rho);
        let r2 = rho * rho;
        let width = lambda + 2.0 * delta;
        let x = 4.0 * delta * (lambda + delta);
        let root = (1.0 - x).sqrt();
        // 1 - sqrt(1 - x), free of cancellation for small delta
        let gap = x / (1.0 + root);
        // arctan(lambda) - arctan(width / root)
        let face_angle = {
            let y = width / root;
            ((lambda - y) / (1.0 + lambda * y)).atan()
        };
        let core = core_area(rho);

        let gamma_volume = width * core
            - (2.0 * delta * (lambda + 4.0 * delta) + gap * (2.0 + x + 3.0 * lambda * lambda)) / 24.0
            - 0.5 * r2 * width * face_angle;

        let area_bp = (2.0 * delta + width * gap) / (2.0 * SQRT_2) + SQRT_2 * r2 * face_angle;

        let area_bw = rho
            * width
            * (8.0 * ((1.0 - lambda) / (2.0 * SQRT_2 * rho)).asin() - (width / (2.0 * rho)).asin()
                + (lambda / (2.0 * rho)).asin())
            + rho * gap;

        let area_pw = 2.0 * core - area_bp / SQRT_2;

        Self {
            gamma_volume,
            area_bp,
            area_bw,
            area_pw,
            core_area: core,
        }
    }
}

/// Evaluates every closed form for validated parameters.
pub fn derive_geometry(params: &GeometryParams) -> GeometrySummary {
    let cf = ClosedForms::evaluate(params.rho, params.delta);
    let four_vol = 4.0 * cf.gamma_volume;
    GeometrySummary {
        rho: params.rho,
        delta: params.delta,
        lambda: params.lambda(),
        eta: params.eta(),
        gamma_volume: cf.gamma_volume,
        area_bp: cf.area_bp,
        area_bw: cf.area_bw,
        area_pw: cf.area_pw,
        core_area: cf.core_area,
        tau_bp: four_vol / cf.area_bp,
        tau_bw: four_vol / cf.area_bw,
        tau_pw: four_vol / cf.area_pw,
        tau_total: four_vol / (cf.area_bp + cf.area_bw + cf.area_pw),
    }
}

/// `lim_{delta -> 0} (tau_bp delta^2)^{-1} = 1 / (2 sqrt(2) A)` where `A` is
/// the ball-cell area.
///
/// At `rho = 1/2` the slot closes and the small-`delta` asymptotics change
/// order: `delta^2 |Gamma| / |dGamma_bp|` tends to `(4 - pi)/(4 sqrt 2)` when
/// `delta -> 0` is taken first and `rho -> 1/2` second, but to three times
/// that value in the opposite order. See [`limit_delta_then_rho`] and
/// [`limit_rho_then_delta`].
pub fn small_delta_rate(rho: f64) -> Result<f64> {
    if !(rho > 0.5 && rho < FRAC_1_SQRT_2) {
        return Err(Error::RhoOutOfRange { rho });
    }
    Ok(1.0 / (2.0 * SQRT_2 * core_area(rho)))
}

/// `lim_{rho -> 1/2} lim_{delta -> 0} delta^2 |Gamma| / |dGamma_bp|`.
///
/// For `rho > 1/2`, `|Gamma| ~ lambda A(rho)` and `|dGamma_bp| ~ sqrt(2)
/// lambda delta^2`, so the inner limit is `A(rho)/sqrt(2)`, continuous at
/// `rho = 1/2`.
pub fn limit_delta_then_rho() -> f64 {
    core_area(0.5) / SQRT_2
}

/// `lim_{delta -> 0} delta^2 |Gamma| / |dGamma_bp|` at `rho = 1/2`,
/// extracted from the raw closed forms by Richardson extrapolation in
/// `delta`.
pub fn limit_rho_then_delta() -> f64 {
    let ratio = |d: f64| {
        let cf = ClosedForms::evaluate(0.5, d);
        d * d * cf.gamma_volume / cf.area_bp
    };
    // ratio(d) = L + c d + O(d^2)
    let (d1, d2) = (2e-4, 1e-4);
    2.0 * ratio(d2) - ratio(d1)
}

/// Flux weight `g(ep)` of the fixed-energy shell: the velocity integral of
/// `(v . n)_+` over the two circles, divided by `4 pi`.
pub fn flux_weight(ep: f64) -> f64 {
    if ep < 0.25 {
        flux_weight_two_circles(ep)
    } else {
        flux_weight_one_circle(ep)
    }
}

// Both circles at heights +-sqrt(2 ep) contribute.
fn flux_weight_two_circles(ep: f64) -> f64 {
    let eb = 0.5 - ep;
    ((0.5 - 2.0 * ep).max(0.0).sqrt() + ep.sqrt() * (ep / eb).sqrt().min(1.0).asin()) / PI
}

// Only the upper circle contributes, over its full length.
fn flux_weight_one_circle(ep: f64) -> f64 {
    0.5 * ep.sqrt()
}

/// Dimensionless energy-dependent collision frequency `phi_bp(ep)`.
pub fn phi_bp(ep: f64) -> f64 {
    4.0 * flux_weight(ep)
}

/// Conditional collision rate at fixed piston energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionalRate {
    /// `nu_bp(ep) = 1 / tau_bp(ep)`.
    pub nu: f64,
    /// `phi_bp(ep) = tau_bp * nu_bp(ep)`.
    pub phi: f64,
}

pub fn conditional_rate(summary: &GeometrySummary, ep: f64) -> Result<ConditionalRate> {
    if !(ep > 0.0 && ep < 0.5) {
        return Err(Error::PistonEnergyOutOfRange { ep });
    }
    let g = flux_weight(ep);
    let nu = summary.area_bp * g / summary.gamma_volume;
    Ok(ConditionalRate {
        nu,
        phi: summary.tau_bp * nu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference(delta: f64) -> GeometryParams {
        GeometryParams::new(reference_rho(), delta).unwrap()
    }

    #[test]
    fn reference_rho_saturates_lattice_bound() {
        let rho = reference_rho();
        assert!((rho * FRAC_1_SQRT_2 - 0.5 * slot_width(rho) - 0.2).abs() < 1e-14);
        assert!((rho - 0.5296).abs() < 1e-4);
    }

    #[test]
    fn parameter_validation_names_the_inequality() {
        let err = GeometryParams::new(0.5, 0.1).unwrap_err();
        assert!(err.to_string().contains("1/2 < rho"));
        let err = GeometryParams::new(reference_rho(), 0.4).unwrap_err();
        assert!(err.to_string().contains("delta <"));
        assert!(GeometryParams::new(reference_rho(), 0.0).is_err());
        assert!(GeometryParams::new(0.71, 0.01).is_err());
    }

    #[test]
    fn lattice_bound_flag() {
        assert!(reference(0.19).fits_lattice());
        assert!(!reference(0.25).fits_lattice());
    }

    #[test]
    fn eta_matches_definition() {
        let p = reference(0.1);
        let lambda = p.lambda();
        let direct = 1.0 - 2.0 * (p.rho() * p.rho() - (0.5 * lambda + 0.1f64).powi(2)).sqrt();
        assert!((p.eta() - direct).abs() < 1e-15);
        assert!(p.eta() > 0.0 && p.eta() < 1.0);
    }

    #[test]
    fn contains_examples() {
        let p = reference(0.1);
        assert!(contains(&p, &Position::new(0.0, 0.0, 0.5)));
        assert!(!contains(&p, &Position::new(-0.5, 0.0, 0.5)));
        let q3 = 0.3;
        assert!(!contains(&p, &Position::new(q3 + 0.01, 0.0, q3)));
        assert!(!contains(&p, &Position::new(0.0, 0.0, p.slot_max() + 1e-9)));
    }

    #[test]
    fn summary_fields_positive_and_rates_additive() {
        for &d in &[1e-4, 0.01, 0.05, 0.1, 0.2, 0.32] {
            let s = derive_geometry(&reference(d));
            for v in [
                s.lambda, s.eta, s.gamma_volume, s.area_bp, s.area_bw, s.area_pw, s.core_area, s.tau_bp,
                s.tau_bw, s.tau_pw, s.tau_total,
            ] {
                assert!(v > 0.0 && v.is_finite(), "delta {d}: {s:?}");
            }
            let lhs = 1.0 / s.tau_total;
            let rhs = 1.0 / s.tau_bp + 1.0 / s.tau_bw + 1.0 / s.tau_pw;
            assert!((lhs - rhs).abs() <= 1e-13 * lhs);
        }
    }

    #[test]
    fn volume_tends_to_lambda_times_core() {
        let rho = reference_rho();
        let d = 1e-7;
        let cf = ClosedForms::evaluate(rho, d);
        let lambda = slot_width(rho);
        assert!((cf.gamma_volume / (lambda * core_area(rho)) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn bp_area_small_delta_asymptote() {
        let s = derive_geometry(&reference(1e-4));
        let ratio = s.area_bp / (SQRT_2 * s.lambda * 1e-8);
        assert!((ratio - 1.0).abs() < 0.01, "ratio {ratio}");
    }

    #[test]
    fn small_delta_rate_matches_closed_forms() {
        let rho = reference_rho();
        let s = derive_geometry(&reference(1e-3));
        let finite = 1.0 / (s.tau_bp * 1e-6);
        let limit = small_delta_rate(rho).unwrap();
        assert!((finite / limit - 1.0).abs() < 0.01);
        assert!(small_delta_rate(0.5).is_err());
    }

    #[test]
    fn footnote_limits() {
        let target = (4.0 - PI) / (4.0 * SQRT_2);
        assert!((limit_delta_then_rho() - target).abs() < 1e-14);
        assert!((limit_rho_then_delta() - 3.0 * target).abs() < 1e-6);
    }

    #[test]
    fn phi_branches_meet_at_quarter() {
        let below = 4.0 * flux_weight_two_circles(0.25);
        let above = 4.0 * flux_weight_one_circle(0.25);
        assert!((below - above).abs() < 1e-12);
        assert!((below - 1.0).abs() < 1e-15);
        assert!((phi_bp(0.25 - 1e-15) - phi_bp(0.25)).abs() < 1e-7);
        assert!((phi_bp(0.5 - 1e-12) - SQRT_2).abs() < 1e-11);
    }

    #[test]
    fn conditional_rate_rejects_bad_energy() {
        let s = derive_geometry(&reference(0.1));
        assert!(conditional_rate(&s, 0.0).is_err());
        assert!(conditional_rate(&s, 0.5).is_err());
        let r = conditional_rate(&s, 0.1).unwrap();
        assert!((r.phi - phi_bp(0.1)).abs() < 1e-14);
    }
}
