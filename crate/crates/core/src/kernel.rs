//! Energy-exchange kernel of the ball-piston pair and the Markov jump
//! process it generates.
//!
//! A collision moves the piston energy from `ep` to `ep_out` with rate
//! density `W`. Both endpoint singularities of `W` in `ep_out` disappear
//! under `ep_out = eb cos^2(alpha)`, `alpha` in `[0, pi/2]`, where the
//! density becomes `(pref / pi) max(sqrt(eb) cos(alpha), sqrt(ep))`. All
//! integrals and the jump sampler work in that variable.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::io::{self, Write};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{core_area, GeometrySummary};
use crate::quadrature::{integrate, integrate_pieces, Tolerance};

/// Ball and piston energies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyPair {
    pub eb: f64,
    pub ep: f64,
}

impl EnergyPair {
    pub fn new(eb: f64, ep: f64) -> Result<Self> {
        if !(eb >= 0.0 && ep >= 0.0 && eb.is_finite() && ep.is_finite() && eb + ep > 0.0) {
            return Err(Error::InvalidEnergyPair { eb, ep });
        }
        Ok(Self { eb, ep })
    }

    pub fn total(&self) -> f64 {
        self.eb + self.ep
    }
}

/// `|dGamma_bp| / |Gamma|`, the geometric factor of every rate.
pub fn prefactor(geom: &GeometrySummary) -> f64 {
    geom.area_bp / geom.gamma_volume
}

/// Rate density of a jump from `pair` to piston energy `ep_out`. Infinite at
/// `ep_out = 0` and `ep_out = eb`, zero beyond `eb`.
pub fn kernel_density(pair: &EnergyPair, ep_out: f64, geom: &GeometrySummary) -> f64 {
    if ep_out > pair.eb || ep_out < 0.0 {
        return 0.0;
    }
    let denom = (ep_out * (pair.eb - ep_out)).sqrt();
    if denom == 0.0 {
        return f64::INFINITY;
    }
    prefactor(geom) / (2.0 * PI) * ep_out.sqrt().max(pair.ep.sqrt()) / denom
}

/// Zeroth, first and second moments of the energy transfer
/// `zeta = ep_out - ep` under the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    /// Total jump rate.
    pub f: f64,
    pub j: f64,
    pub h: f64,
}

/// Closed-form moments, branch `eb > ep`.
fn moments_wide(eb: f64, ep: f64) -> (f64, f64, f64) {
    let d = (eb - ep).sqrt();
    let s = ep.sqrt();
    let a = (ep / eb).sqrt().min(1.0).asin();
    let f = (d + s * a) / PI;
    let j = ((4.0 * eb - 7.0 * ep) * d + 3.0 * (eb - 2.0 * ep) * s * a) / (6.0 * PI);
    let c = 0.375 * eb * eb - eb * ep + ep * ep;
    let h = (8.0 * (eb - ep).powf(2.5) + 15.0 * (-0.375 * ep * (eb - 2.0 * ep) * d + s * c * a)) / (15.0 * PI);
    (f, j, h)
}

/// Closed-form moments, branch `eb <= ep`.
fn moments_narrow(eb: f64, ep: f64) -> (f64, f64, f64) {
    let s = ep.sqrt();
    let f = 0.5 * s;
    let j = 0.25 * (eb - 2.0 * ep) * s;
    let h = 0.5 * s * (0.375 * eb * eb - eb * ep + ep * ep);
    (f, j, h)
}

/// Closed-form branch of the moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// `eb > ep`
    Wide,
    /// `eb <= ep`
    Narrow,
}

impl Branch {
    pub fn of(pair: &EnergyPair) -> Self {
        if pair.eb > pair.ep {
            Branch::Wide
        } else {
            Branch::Narrow
        }
    }
}

pub fn moments(pair: &EnergyPair, geom: &GeometrySummary) -> Moments {
    moments_on_branch(pair, Branch::of(pair), geom)
}

/// Moments from one closed form regardless of where `pair` lies; the two
/// forms agree on `eb = ep`.
pub fn moments_on_branch(pair: &EnergyPair, branch: Branch, geom: &GeometrySummary) -> Moments {
    let (f, j, h) = match branch {
        Branch::Wide => moments_wide(pair.eb, pair.ep),
        Branch::Narrow => moments_narrow(pair.eb, pair.ep),
    };
    let p = prefactor(geom);
    Moments {
        f: p * f,
        j: p * j,
        h: p * h,
    }
}

/// Total jump rate `f(eb, ep)`.
pub fn jump_rate(pair: &EnergyPair, geom: &GeometrySummary) -> f64 {
    moments(pair, geom).f
}

/// Moments by quadrature in the angle variable, for cross-checking the
/// closed forms.
pub fn moments_by_quadrature(pair: &EnergyPair, geom: &GeometrySummary, rel: f64) -> Result<Moments> {
    let (eb, ep) = (pair.eb, pair.ep);
    let (sb, sp) = (eb.sqrt(), ep.sqrt());
    // kink where sqrt(eb) cos(alpha) = sqrt(ep)
    let kink = if ep < eb { (sp / sb).acos() } else { 0.0 };
    let breaks = [0.0, kink, FRAC_PI_2];
    let tol = Tolerance::relative(rel);
    let dens = |a: f64| (sb * a.cos()).max(sp);
    let zeta = |a: f64| eb * a.cos().powi(2) - ep;
    let f = integrate_pieces(dens, &breaks, tol)?.value;
    let j = integrate_pieces(|a| zeta(a) * dens(a), &breaks, tol)?.value;
    let h = integrate_pieces(|a| zeta(a).powi(2) * dens(a), &breaks, tol)?.value;
    let p = prefactor(geom) / PI;
    Ok(Moments {
        f: p * f,
        j: p * j,
        h: p * h,
    })
}

/// Values of the canonical-average identities at inverse temperature `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CanonicalCheck {
    pub beta: f64,
    /// `<f>`
    pub rate: f64,
    /// `(beta^2 / 2) <(eb - ep) j>`
    pub current: f64,
    /// `(beta^2 / 2) <h>`
    pub spread: f64,
    /// `(2 pi beta)^{-1/2} |dGamma_bp| / |Gamma|`
    pub target: f64,
}

impl CanonicalCheck {
    pub fn values(&self) -> [f64; 4] {
        [self.rate, self.current, self.spread, self.target]
    }

    /// Largest pairwise difference relative to the target.
    pub fn max_relative_spread(&self) -> f64 {
        let v = self.values();
        let hi = v.iter().cloned().fold(f64::MIN, f64::max);
        let lo = v.iter().cloned().fold(f64::MAX, f64::min);
        (hi - lo) / self.target.abs()
    }
}

/// Averages of `f`, `(eb - ep) j` and `h` over the canonical distribution
/// `beta^{3/2} / sqrt(pi ep) exp(-beta (eb + ep))`, by nested adaptive
/// quadrature in total energy `E` and split `ep = E sin^2(theta)`.
pub fn canonical_check(beta: f64, geom: &GeometrySummary, tol: f64) -> Result<CanonicalCheck> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    let p = prefactor(geom);
    let inner_tol = Tolerance {
        abs: 0.0,
        rel: tol * 1e-2,
        max_intervals: 4000,
    };
    let outer_tol = Tolerance {
        abs: 0.0,
        rel: tol * 1e-1,
        max_intervals: 4000,
    };
    // e^{-beta E} is below 1e-26 beyond this cutoff
    let e_max = 60.0 / beta;
    let average = |g: &dyn Fn(f64, f64) -> f64| -> Result<f64> {
        let mut failure = None;
        let q = integrate(
            |e| {
                // dp = beta^{3/2}/sqrt(pi) e^{-beta E} E^{1/2} 2 cos(theta) d(theta) dE
                let inner = integrate_pieces(
                    |t: f64| {
                        let (s, c) = t.sin_cos();
                        let ep = e * s * s;
                        let eb = e * c * c;
                        2.0 * c * g(eb, ep)
                    },
                    &[0.0, FRAC_PI_4, FRAC_PI_2],
                    inner_tol,
                );
                match inner {
                    Ok(v) => v.value * e.sqrt() * (-beta * e).exp(),
                    Err(err) => {
                        failure.get_or_insert(err);
                        0.0
                    }
                }
            },
            0.0,
            e_max,
            outer_tol,
        )?;
        if let Some(err) = failure {
            return Err(err);
        }
        Ok(q.value * beta.powf(1.5) / PI.sqrt())
    };
    let m = |eb: f64, ep: f64| {
        if eb > ep {
            moments_wide(eb, ep)
        } else {
            moments_narrow(eb, ep)
        }
    };
    let rate = p * average(&|eb, ep| m(eb, ep).0)?;
    let current = p * 0.5 * beta * beta * average(&|eb, ep| (eb - ep) * m(eb, ep).1)?;
    let spread = p * 0.5 * beta * beta * average(&|eb, ep| m(eb, ep).2)?;
    Ok(CanonicalCheck {
        beta,
        rate,
        current,
        spread,
        target: p / (2.0 * PI * beta).sqrt(),
    })
}

/// Small-`delta` limit of `delta^-2 <f>`: `(pi beta)^{-1/2} / A(rho)`.
pub fn rare_interaction_rate(beta: f64, rho: f64) -> f64 {
    1.0 / ((PI * beta).sqrt() * core_area(rho))
}

pub fn write_canonical_csv<W: Write>(rows: &[CanonicalCheck], mut out: W) -> io::Result<()> {
    writeln!(out, "beta,rate,current,spread,target,max_relative_spread")?;
    for r in rows {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.beta,
            r.rate,
            r.current,
            r.spread,
            r.target,
            r.max_relative_spread()
        )?;
    }
    Ok(())
}

/// Draws the outgoing piston energy of a jump from `pair`: `alpha` in
/// `[0, pi/2]` with density proportional to `max(sqrt(eb) cos(alpha),
/// sqrt(ep))`, by rejection under the constant bound.
pub fn sample_ep_out<R: Rng + ?Sized>(pair: &EnergyPair, rng: &mut R) -> f64 {
    let (sb, sp) = (pair.eb.sqrt(), pair.ep.sqrt());
    let bound = sb.max(sp);
    loop {
        let a = rng.random::<f64>() * FRAC_PI_2;
        let c = a.cos();
        if rng.random::<f64>() * bound <= (sb * c).max(sp) {
            return pair.eb * c * c;
        }
    }
}

/// Energy transferred to the piston in one jump from `pair`.
pub fn sample_jump<R: Rng + ?Sized>(pair: &EnergyPair, rng: &mut R) -> f64 {
    sample_ep_out(pair, rng) - pair.ep
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Jump {
    /// Time of the jump.
    pub t: f64,
    pub zeta: f64,
    /// State after the jump.
    pub eb: f64,
    pub ep: f64,
}

/// Path of the jump process.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpLog {
    pub start: EnergyPair,
    pub jumps: Vec<Jump>,
    pub total_time: f64,
}

impl JumpLog {
    /// State at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> EnergyPair {
        let k = self.jumps.partition_point(|j| j.t <= t);
        if k == 0 {
            self.start
        } else {
            let j = &self.jumps[k - 1];
            EnergyPair { eb: j.eb, ep: j.ep }
        }
    }

    /// Holding intervals `(state, duration)` in order, the last one cut at
    /// `total_time`.
    pub fn holdings(&self) -> Vec<(EnergyPair, f64)> {
        let mut out = Vec::with_capacity(self.jumps.len() + 1);
        let mut state = self.start;
        let mut t0 = 0.0;
        for j in &self.jumps {
            out.push((state, j.t - t0));
            state = EnergyPair { eb: j.eb, ep: j.ep };
            t0 = j.t;
        }
        out.push((state, self.total_time - t0));
        out
    }

    /// Piston energy at `n` equally spaced times in `(0, total_time]`,
    /// i.e. draws from the time-weighted occupation of the path.
    pub fn ep_on_grid(&self, n: usize) -> Vec<f64> {
        let dt = self.total_time / n as f64;
        let mut out = Vec::with_capacity(n);
        let mut k = 0;
        for i in 1..=n {
            let t = dt * i as f64;
            while k < self.jumps.len() && self.jumps[k].t <= t {
                k += 1;
            }
            out.push(if k == 0 { self.start.ep } else { self.jumps[k - 1].ep });
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,zeta,eb,ep")?;
        for j in &self.jumps {
            writeln!(out, "{:.16e},{:.16e},{:.16e},{:.16e}", j.t, j.zeta, j.eb, j.ep)?;
        }
        Ok(())
    }
}

/// When a Gillespie path ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathLimit {
    /// Run up to this time.
    Time(f64),
    /// Run until this many jumps have happened.
    Jumps(u64),
}

/// Exact path simulation of the jump process with rates `f` and jump law
/// `W / f`. The total energy is preserved exactly at each jump.
pub fn gillespie<R: Rng + ?Sized>(
    start: &EnergyPair,
    limit: PathLimit,
    geom: &GeometrySummary,
    rng: &mut R,
) -> Result<JumpLog> {
    if let PathLimit::Time(t) = limit {
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(format!("tmax must be positive, got {t}")));
        }
    }
    let total = start.total();
    let mut log = JumpLog {
        start: *start,
        jumps: Vec::new(),
        total_time: 0.0,
    };
    let mut state = *start;
    let mut t = 0.0;
    loop {
        let rate = jump_rate(&state, geom);
        if !(rate > f64::MIN_POSITIVE) || !rate.is_finite() {
            return Err(Error::RateUnderflow {
                eb: state.eb,
                ep: state.ep,
            });
        }
        let u: f64 = rng.random();
        let wait = -(1.0 - u).ln() / rate;
        match limit {
            PathLimit::Time(tmax) if t + wait > tmax => {
                log.total_time = tmax;
                return Ok(log);
            }
            PathLimit::Jumps(n) if log.jumps.len() as u64 >= n => {
                log.total_time = t;
                return Ok(log);
            }
            _ => {}
        }
        t += wait;
        let ep_out = sample_ep_out(&state, rng);
        let zeta = ep_out - state.ep;
        state = EnergyPair {
            eb: (total - ep_out).max(0.0),
            ep: ep_out,
        };
        log.jumps.push(Jump {
            t,
            zeta,
            eb: state.eb,
            ep: state.ep,
        });
    }
}

/// Probabilities of `K` equal cells of piston energy on `(0, total)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyGridDensity {
    pub total: f64,
    pub probabilities: Vec<f64>,
}

impl EnergyGridDensity {
    pub fn cells(&self) -> usize {
        self.probabilities.len()
    }

    pub fn edge(&self, i: usize) -> f64 {
        self.total * i as f64 / self.cells() as f64
    }

    /// Cell masses of the stationary density `(2 ep)^{-1/2}` (normalised).
    pub fn stationary(total: f64, cells: usize) -> Self {
        let norm = (2.0 * total).sqrt();
        let probabilities = (0..cells)
            .map(|i| {
                let a = total * i as f64 / cells as f64;
                let b = total * (i + 1) as f64 / cells as f64;
                ((2.0 * b).sqrt() - (2.0 * a).sqrt()) / norm
            })
            .collect();
        Self { total, probabilities }
    }

    /// All mass in the cell containing `ep`.
    pub fn point_mass(total: f64, cells: usize, ep: f64) -> Self {
        let mut probabilities = vec![0.0; cells];
        let k = ((ep / total * cells as f64).floor() as usize).min(cells - 1);
        probabilities[k] = 1.0;
        Self { total, probabilities }
    }

    /// Normalised histogram of `eps`.
    pub fn from_samples(total: f64, cells: usize, eps: &[f64]) -> Self {
        let mut probabilities = vec![0.0; cells];
        for &e in eps {
            let k = ((e / total * cells as f64).floor().max(0.0) as usize).min(cells - 1);
            probabilities[k] += 1.0;
        }
        let n = eps.len().max(1) as f64;
        probabilities.iter_mut().for_each(|p| *p /= n);
        Self { total, probabilities }
    }

    pub fn total_variation(&self, other: &Self) -> f64 {
        0.5 * self
            .probabilities
            .iter()
            .zip(&other.probabilities)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "cell_left,cell_right,probability")?;
        for (i, p) in self.probabilities.iter().enumerate() {
            writeln!(out, "{:.16e},{:.16e},{:.16e}", self.edge(i), self.edge(i + 1), p)?;
        }
        Ok(())
    }
}

/// Cell-to-cell jump rates of the master equation on a uniform grid.
///
/// `F[i][j]` is the stationary probability flux from cell `i` to cell `j`,
/// `int_i pi(x) int_j W(total - x, x -> y) dy dx`. It is symmetrised, so
/// the rates `F[i][j] / Pi[i]` satisfy discrete detailed balance with the
/// stationary cell masses `Pi` exactly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MasterOperator {
    pub total: f64,
    /// Row-major `K x K` rates, diagonal zero.
    rates: Vec<f64>,
    out_rate: Vec<f64>,
    cells: usize,
}

// int_0^alpha max(sqrt(eb) cos a, sqrt(x)) da
fn alpha_antiderivative(alpha: f64, sb: f64, sx: f64, alpha_star: f64) -> f64 {
    if alpha <= alpha_star {
        sb * alpha.sin()
    } else {
        sb * alpha_star.sin() + sx * (alpha - alpha_star)
    }
}

impl MasterOperator {
    pub fn new(geom: &GeometrySummary, total: f64, cells: usize) -> Result<Self> {
        if !(total > 0.0) || cells < 2 {
            return Err(Error::InvalidArgument("grid needs a positive total energy and at least two cells".into()));
        }
        let p = prefactor(geom);
        let edge = |i: usize| total * i as f64 / cells as f64;
        let tol = Tolerance {
            abs: 1e-16,
            rel: 1e-11,
            max_intervals: 2000,
        };
        let mut flux = vec![0.0; cells * cells];
        for i in 0..cells {
            let (x0, x1) = (edge(i), edge(i + 1));
            for j in 0..cells {
                if i == j {
                    continue;
                }
                let (y0, y1) = (edge(j), edge(j + 1));
                // inner integral over y in cell j, closed form in alpha
                let inner = |x: f64| -> f64 {
                    let eb = total - x;
                    if eb <= y0 {
                        return 0.0;
                    }
                    let sb = eb.sqrt();
                    let sx = x.sqrt();
                    let alpha_star = if x < eb { (sx / sb).acos() } else { 0.0 };
                    let a_lo = (y1.min(eb) / eb).sqrt().min(1.0).acos();
                    let a_hi = (y0 / eb).sqrt().min(1.0).acos();
                    p / PI
                        * (alpha_antiderivative(a_hi, sb, sx, alpha_star)
                            - alpha_antiderivative(a_lo, sb, sx, alpha_star))
                };
                // x = s^2 turns pi(x) dx into sqrt(2) ds; kinks where the
                // branch of the max or the support edge meets a cell edge
                let (s0, s1) = (x0.sqrt(), x1.sqrt());
                let mut breaks = vec![s0, s1];
                for k in [y0, y1, total - y0, total - y1] {
                    let s = k.max(0.0).sqrt();
                    if s > s0 && s < s1 {
                        breaks.push(s);
                    }
                }
                breaks.sort_by(f64::total_cmp);
                breaks.dedup();
                let q = integrate_pieces(|s| std::f64::consts::SQRT_2 * inner(s * s), &breaks, tol)?;
                // normalise pi on (0, total)
                flux[i * cells + j] = q.value / (2.0 * total).sqrt();
            }
        }
        let stationary = EnergyGridDensity::stationary(total, cells).probabilities;
        let mut rates = vec![0.0; cells * cells];
        for i in 0..cells {
            for j in 0..cells {
                if i != j {
                    let sym = 0.5 * (flux[i * cells + j] + flux[j * cells + i]);
                    rates[i * cells + j] = sym / stationary[i];
                }
            }
        }
        let out_rate = (0..cells).map(|i| rates[i * cells..(i + 1) * cells].iter().sum()).collect();
        Ok(Self {
            total,
            rates,
            out_rate,
            cells,
        })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    /// Jump rate from cell `i` to cell `j`.
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.rates[i * self.cells + j]
    }

    pub fn max_out_rate(&self) -> f64 {
        self.out_rate.iter().cloned().fold(0.0, f64::max)
    }

    /// One explicit Euler step of length `dt`.
    pub fn step(&self, p: &mut EnergyGridDensity, dt: f64) -> Result<()> {
        let max_rate = self.max_out_rate();
        if !(dt * max_rate < 0.5) {
            return Err(Error::StabilityBound { dt, max_rate });
        }
        let k = self.cells;
        let old = p.probabilities.clone();
        for j in 0..k {
            let mut gain = 0.0;
            for i in 0..k {
                gain += old[i] * self.rates[i * k + j];
            }
            p.probabilities[j] = old[j] + dt * (gain - old[j] * self.out_rate[j]);
        }
        Ok(())
    }

    pub fn evolve(&self, p0: &EnergyGridDensity, dt: f64, steps: usize) -> Result<EnergyGridDensity> {
        if p0.cells() != self.cells || p0.total != self.total {
            return Err(Error::InvalidArgument("density grid does not match the operator".into()));
        }
        let mut p = p0.clone();
        for _ in 0..steps {
            self.step(&mut p, dt)?;
        }
        Ok(p)
    }
}

/// Evolves `p0` by `steps` Euler steps of the master equation.
pub fn master_evolve(p0: &EnergyGridDensity, dt: f64, steps: usize, geom: &GeometrySummary) -> Result<EnergyGridDensity> {
    MasterOperator::new(geom, p0.total, p0.cells())?.evolve(p0, dt, steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{derive_geometry, reference_rho, GeometryParams};
    use crate::sampling::Seed;

    fn geom() -> GeometrySummary {
        derive_geometry(&GeometryParams::new(reference_rho(), 0.1).unwrap())
    }

    #[test]
    fn density_vanishes_beyond_ball_energy() {
        let g = geom();
        let pair = EnergyPair::new(0.3, 0.2).unwrap();
        assert_eq!(kernel_density(&pair, 0.31, &g), 0.0);
        assert!(kernel_density(&pair, 0.0, &g).is_infinite());
        assert!(kernel_density(&pair, 0.3, &g).is_infinite());
    }

    #[test]
    fn zero_piston_energy_picks_outgoing_branch() {
        let g = geom();
        let pair = EnergyPair::new(0.5, 0.0).unwrap();
        let w = kernel_density(&pair, 0.2, &g);
        let expected = prefactor(&g) / (2.0 * PI) / (0.5f64 - 0.2).sqrt();
        assert!((w - expected).abs() < 1e-14 * expected);
    }

    #[test]
    fn branches_meet_on_diagonal() {
        for e in [1e-3, 0.1, 0.25, 2.0] {
            let (f1, j1, h1) = moments_wide(e, e);
            let (f2, j2, h2) = moments_narrow(e, e);
            assert!((f1 - f2).abs() < 1e-12 * f2.abs().max(1e-300));
            assert!((j1 - j2).abs() < 1e-12 * j2.abs());
            assert!((h1 - h2).abs() < 1e-12 * h2.abs());
            assert!((j2 + 0.25 * e.powf(1.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn rate_on_unit_shell_is_conditional_rate() {
        let g = geom();
        for ep in [0.01, 0.2, 0.25, 0.4] {
            let f = jump_rate(&EnergyPair::new(0.5 - ep, ep).unwrap(), &g);
            let nu = crate::geometry::conditional_rate(&g, ep).unwrap().nu;
            assert!((f - nu).abs() < 1e-13 * nu);
        }
    }

    #[test]
    fn zeta_stays_in_range() {
        let mut rng = Seed(1).rng("jump", 0);
        let pair = EnergyPair::new(0.2, 0.3).unwrap();
        for _ in 0..10_000 {
            let z = sample_jump(&pair, &mut rng);
            assert!(z >= -pair.ep && z <= pair.eb);
        }
    }

    #[test]
    fn underflow_at_zero_energy() {
        let g = geom();
        let mut rng = Seed(1).rng("jump", 1);
        let pair = EnergyPair { eb: 0.0, ep: 0.0 };
        assert!(matches!(
            gillespie(&pair, PathLimit::Jumps(1), &g, &mut rng),
            Err(Error::RateUnderflow { .. })
        ));
        assert!(EnergyPair::new(0.0, 0.0).is_err());
    }

    #[test]
    fn path_conserves_energy() {
        let g = geom();
        let mut rng = Seed(2).rng("path", 0);
        let log = gillespie(&EnergyPair::new(0.5, 0.0).unwrap(), PathLimit::Jumps(1000), &g, &mut rng).unwrap();
        assert_eq!(log.jumps.len(), 1000);
        for j in &log.jumps {
            assert!(j.eb >= 0.0 && j.ep >= 0.0);
            assert!((j.eb + j.ep - 0.5).abs() < 1e-15);
        }
        assert!(log.jumps.windows(2).all(|w| w[0].t < w[1].t));
    }

    #[test]
    fn stability_bound_is_enforced() {
        let g = geom();
        let op = MasterOperator::new(&g, 0.5, 10).unwrap();
        let mut p = EnergyGridDensity::stationary(0.5, 10);
        let dt = 0.6 / op.max_out_rate();
        assert!(matches!(op.step(&mut p, dt), Err(Error::StabilityBound { .. })));
    }
}
