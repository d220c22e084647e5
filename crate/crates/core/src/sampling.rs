//! Random sampling from the invariant measures of the flow and of the
//! ball-piston collision surface.
//!
//! Random streams come from ChaCha8 (`rand_chacha` 0.9). A [`Seed`] plus a
//! text label selects a key, and the trajectory index selects the stream,
//! so each trajectory sees the same numbers no matter how work is split
//! across threads.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{FlowState, Velocity};
use crate::error::{Error, Result};
use crate::geometry::{contains, derive_geometry, flux_weight, GeometryParams, Position, CORNERS};

/// Master seed of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Seed(pub u64);

impl Seed {
    /// Generator for stream `stream` of the sub-experiment `label`.
    pub fn rng(&self, label: &str, stream: u64) -> ChaCha8Rng {
        // FNV-1a over the label, then a splitmix64 finaliser.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        let mut z = self.0 ^ h.rotate_left(17);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        let mut rng = ChaCha8Rng::seed_from_u64(z);
        rng.set_stream(stream);
        rng
    }
}

/// Uniform point on the unit sphere.
pub fn unit_sphere<R: Rng + ?Sized>(rng: &mut R) -> Velocity {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    Velocity::new(r * phi.cos(), r * phi.sin(), z)
}

/// Uniform sampler of the flow-invariant measure (uniform position in the
/// configuration space, uniform direction).
#[derive(Debug, Clone, Copy)]
pub struct FlowSampler {
    params: GeometryParams,
    acceptance: f64,
}

impl FlowSampler {
    pub fn new(params: &GeometryParams) -> Result<Self> {
        let g = derive_geometry(params);
        let acceptance = g.gamma_volume / (params.slot_max() - params.slot_min());
        if acceptance < 1e-4 {
            return Err(Error::DegenerateConfiguration { acceptance });
        }
        Ok(Self {
            params: *params,
            acceptance,
        })
    }

    /// Expected fraction of bounding-box proposals that are accepted.
    pub fn acceptance(&self) -> f64 {
        self.acceptance
    }

    /// Uniform position in the configuration space, returned with the
    /// number of proposals it took.
    pub fn position<R: Rng + ?Sized>(&self, rng: &mut R) -> (Position, u64) {
        let (lo, hi) = (self.params.slot_min(), self.params.slot_max());
        let mut tries = 0;
        loop {
            tries += 1;
            let q = Position::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(lo..hi),
            );
            if contains(&self.params, &q) {
                return (q, tries);
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> FlowState {
        let (q, _) = self.position(rng);
        FlowState::new(q, unit_sphere(rng))
    }
}

/// One draw from the flow-invariant measure.
pub fn sample_flow<R: Rng + ?Sized>(params: &GeometryParams, rng: &mut R) -> Result<FlowState> {
    Ok(FlowSampler::new(params)?.sample(rng))
}

/// Uniform sampler of the ball-piston collision face `q1 = q3`.
#[derive(Debug, Clone, Copy)]
pub struct FaceSampler {
    params: GeometryParams,
    half_eta: f64,
}

impl FaceSampler {
    pub fn new(params: &GeometryParams) -> Self {
        Self {
            params: *params,
            half_eta: 0.5 * params.eta(),
        }
    }

    /// Uniform point of the face: `(q1, q2)` uniform on its projection,
    /// `q3 = q1`.
    pub fn position<R: Rng + ?Sized>(&self, rng: &mut R) -> Position {
        let (lo, hi) = (self.params.slot_min(), self.params.pinch());
        let r2 = self.params.rho() * self.params.rho();
        loop {
            let q1 = rng.random_range(lo..hi);
            let q2 = rng.random_range(-self.half_eta..=self.half_eta);
            let clear = CORNERS.iter().all(|&(cx, cy)| (q1 - cx).powi(2) + (q2 - cy).powi(2) >= r2);
            if clear {
                return Position::new(q1, q2, q1);
            }
        }
    }

    /// Outgoing velocity with density proportional to `v . n` on the
    /// hemisphere `v . n > 0`.
    pub fn outgoing_velocity<R: Rng + ?Sized>(&self, rng: &mut R) -> Velocity {
        loop {
            let mut v = unit_sphere(rng);
            let mut vn = v.normal_component();
            if vn < 0.0 {
                v = -v;
                vn = -vn;
            }
            if vn > 0.0 && rng.random::<f64>() < vn {
                return v;
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> FlowState {
        let q = self.position(rng);
        FlowState::new(q, self.outgoing_velocity(rng))
    }
}

/// One draw from the flux measure of the ball-piston surface (an outgoing
/// state).
pub fn sample_bp_flux<R: Rng + ?Sized>(params: &GeometryParams, rng: &mut R) -> FlowState {
    FaceSampler::new(params).sample(rng)
}

/// Which velocity an [`AngleCoord`] is turned into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `(sqrt(2 eb) cos a, sqrt(2 eb) sin a, s sqrt(2 ep))`, with `v . n < 0`
    /// on the support of the angular densities.
    Incoming,
    /// Image of the incoming vector under the ball-piston exchange. The
    /// piston energy of this vector is `eb cos^2 a`, not `ep`.
    Outgoing,
    /// Negated incoming vector: outgoing (`v . n > 0`) at the same piston
    /// energy and with the same angular density.
    Reversed,
}

/// Angle parametrisation of a unit velocity at piston energy `ep`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AngleCoord {
    /// In `[0, 2 pi)`.
    pub alpha: f64,
    pub sigma: i8,
    pub ep: f64,
}

impl AngleCoord {
    pub fn new(alpha: f64, sigma: i8, ep: f64) -> Result<Self> {
        if !(ep > 0.0 && ep < 0.5) {
            return Err(Error::PistonEnergyOutOfRange { ep });
        }
        if sigma != 1 && sigma != -1 {
            return Err(Error::InvalidArgument(format!("sigma must be +1 or -1, got {sigma}")));
        }
        Ok(Self {
            alpha: alpha.rem_euclid(TAU),
            sigma,
            ep,
        })
    }

    /// Angle mapped to `(-pi, pi]`.
    pub fn centered_alpha(&self) -> f64 {
        if self.alpha > PI {
            self.alpha - TAU
        } else {
            self.alpha
        }
    }

    /// Coordinates of an incoming velocity. `v3 = 0` is assigned `sigma = +1`.
    pub fn from_incoming(v: &Velocity) -> Self {
        Self {
            alpha: v.v2.atan2(v.v1).rem_euclid(TAU),
            sigma: if v.v3 < 0.0 { -1 } else { 1 },
            ep: 0.5 * v.v3 * v.v3,
        }
    }

    pub fn velocity(&self, direction: Direction) -> Velocity {
        angle_to_velocity(self, direction)
    }
}

pub fn angle_to_velocity(a: &AngleCoord, direction: Direction) -> Velocity {
    let rb = (1.0 - 2.0 * a.ep).sqrt();
    let rp = f64::from(a.sigma) * (2.0 * a.ep).sqrt();
    let (s, c) = a.alpha.sin_cos();
    let incoming = Velocity::new(rb * c, rb * s, rp);
    match direction {
        Direction::Incoming => incoming,
        Direction::Outgoing => Velocity::new(incoming.v3, incoming.v2, incoming.v1),
        Direction::Reversed => -incoming,
    }
}

/// Support of branch `sigma` at piston energy `ep`, as a centred interval
/// `(-L, L)` of angles. `None` if the branch is empty.
pub fn branch_support(ep: f64, sigma: i8) -> Option<(f64, f64)> {
    let a = (ep / (0.5 - ep)).sqrt();
    let half = if sigma > 0 {
        if a >= 1.0 {
            return None;
        }
        a.acos()
    } else if a >= 1.0 {
        PI
    } else {
        PI - a.acos()
    };
    Some((-half, half))
}

/// Angular densities `h_n(alpha, sigma) ~ (sqrt(eb) cos alpha - sigma sqrt(ep))_+^n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaDensity {
    pub ep: f64,
    pub n: u32,
    sqrt_eb: f64,
    sqrt_ep: f64,
    norm: f64,
}

impl AlphaDensity {
    pub fn new(ep: f64, n: u32) -> Result<Self> {
        if !(ep > 0.0 && ep < 0.5) {
            return Err(Error::PistonEnergyOutOfRange { ep });
        }
        let mut d = Self {
            ep,
            n,
            sqrt_eb: (0.5 - ep).sqrt(),
            sqrt_ep: ep.sqrt(),
            norm: 1.0,
        };
        d.norm = d.normalization()?;
        Ok(d)
    }

    /// Unnormalised value. For `n = 0` this is the indicator of the support.
    pub fn unnormalized(&self, alpha: f64, sigma: i8) -> f64 {
        let x = self.sqrt_eb * alpha.cos() - f64::from(sigma) * self.sqrt_ep;
        if x <= 0.0 {
            0.0
        } else if self.n == 0 {
            1.0
        } else {
            x.powi(self.n as i32)
        }
    }

    /// Probability density in `(alpha, sigma)`, summing to one over both branches.
    pub fn density(&self, alpha: f64, sigma: i8) -> f64 {
        self.unnormalized(alpha, sigma) / self.norm
    }

    /// `sum_sigma int h_n dalpha`. Closed form for `n = 0, 1`, quadrature
    /// otherwise.
    pub fn normalization(&self) -> Result<f64> {
        match self.n {
            0 => Ok([1i8, -1]
                .iter()
                .filter_map(|&s| branch_support(self.ep, s))
                .map(|(lo, hi)| hi - lo)
                .sum()),
            1 => Ok(4.0 * PI * flux_weight(self.ep)),
            _ => self.normalization_by_quadrature(),
        }
    }

    pub fn normalization_by_quadrature(&self) -> Result<f64> {
        use crate::quadrature::{integrate_pieces, Tolerance};
        let mut total = 0.0;
        for sigma in [1i8, -1] {
            if let Some((lo, hi)) = branch_support(self.ep, sigma) {
                let q = integrate_pieces(|a| self.unnormalized(a, sigma), &[lo, 0.0, hi], Tolerance::relative(1e-13))?;
                total += q.value;
            }
        }
        Ok(total)
    }

    /// Probability of branch `sigma`.
    pub fn branch_weight(&self, sigma: i8) -> Result<f64> {
        use crate::quadrature::{integrate_pieces, Tolerance};
        match branch_support(self.ep, sigma) {
            None => Ok(0.0),
            Some((lo, hi)) => Ok(integrate_pieces(|a| self.density(a, sigma), &[lo, 0.0, hi], Tolerance::relative(1e-13))?.value),
        }
    }
}

const ENVELOPE_PIECES: usize = 64;

#[derive(Debug, Clone)]
struct Piece {
    sigma: i8,
    lo: f64,
    width: f64,
    bound: f64,
}

/// Rejection sampler for [`AlphaDensity`] with a piecewise-constant
/// envelope over 64 equal sub-intervals of each branch support.
#[derive(Debug, Clone)]
pub struct AlphaSampler {
    density: AlphaDensity,
    pieces: Vec<Piece>,
    cumulative: Vec<f64>,
}

impl AlphaSampler {
    pub fn new(ep: f64, n: u32) -> Result<Self> {
        let density = AlphaDensity::new(ep, n)?;
        let mut pieces = Vec::with_capacity(2 * ENVELOPE_PIECES);
        for sigma in [1i8, -1] {
            let Some((lo, hi)) = branch_support(ep, sigma) else {
                continue;
            };
            let width = (hi - lo) / ENVELOPE_PIECES as f64;
            for k in 0..ENVELOPE_PIECES {
                let a = lo + k as f64 * width;
                let b = if k + 1 == ENVELOPE_PIECES { hi } else { a + width };
                // cos is largest at the point closest to alpha = 0
                let peak = 0.0f64.clamp(a, b);
                pieces.push(Piece {
                    sigma,
                    lo: a,
                    width: b - a,
                    bound: density.unnormalized(peak, sigma),
                });
            }
        }
        let mut acc = 0.0;
        let cumulative = pieces
            .iter()
            .map(|p| {
                acc += p.bound * p.width;
                acc
            })
            .collect();
        Ok(Self {
            density,
            pieces,
            cumulative,
        })
    }

    pub fn density(&self) -> &AlphaDensity {
        &self.density
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AngleCoord {
        let total = *self.cumulative.last().expect("at least one branch is nonempty");
        loop {
            let u = rng.random::<f64>() * total;
            let k = self.cumulative.partition_point(|&c| c <= u).min(self.pieces.len() - 1);
            let p = &self.pieces[k];
            let alpha = p.lo + rng.random::<f64>() * p.width;
            let f = self.density.unnormalized(alpha, p.sigma);
            if f > 0.0 && rng.random::<f64>() * p.bound < f {
                return AngleCoord {
                    alpha: alpha.rem_euclid(TAU),
                    sigma: p.sigma,
                    ep: self.density.ep,
                };
            }
        }
    }
}

/// One draw of `(alpha, sigma)` from `h_n` at piston energy `ep`.
pub fn sample_alpha<R: Rng + ?Sized>(ep: f64, n: u32, rng: &mut R) -> Result<AngleCoord> {
    Ok(AlphaSampler::new(ep, n)?.sample(rng))
}

/// Initial conditions on the collision face at fixed piston energy:
/// uniform face position, angles from `h_n`, outgoing velocity.
#[derive(Debug, Clone)]
pub struct ConditionalSampler {
    face: FaceSampler,
    alpha: AlphaSampler,
}

impl ConditionalSampler {
    pub fn new(params: &GeometryParams, ep: f64, n: u32) -> Result<Self> {
        Ok(Self {
            face: FaceSampler::new(params),
            alpha: AlphaSampler::new(ep, n)?,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (FlowState, AngleCoord) {
        let q = self.face.position(rng);
        let a = self.alpha.sample(rng);
        (FlowState::new(q, a.velocity(Direction::Reversed)), a)
    }
}

/// `(v . n)` of a unit vector, for tests and diagnostics.
pub fn normal_speed(v: &Velocity) -> f64 {
    (v.v3 - v.v1) * FRAC_1_SQRT_2
}
