//! Estimators built on simulated trajectories: mean free times,
//! conditional mean free times at fixed piston energy, angular histograms
//! of incoming velocities and their relative entropy to equilibrium.
//!
//! Parallel experiments draw trajectory `i` from stream `i` of the seed,
//! collect results in index order and reduce sequentially, so results do
//! not depend on the thread count.

use std::io::{self, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{CollisionEvent, CollisionLog, EventClass, EventKind, KindCounts, Simulator, StopRule};
use crate::error::{Error, Result};
use crate::geometry::{conditional_rate, derive_geometry, GeometryParams};
use crate::quadrature::gauss_legendre8;
use crate::sampling::{branch_support, AlphaDensity, AngleCoord, ConditionalSampler, FlowSampler, Seed};
use crate::stats::{BatchMeans, Estimate, Moments};

const BATCHES: usize = 100;

/// Default cap on events per trajectory while waiting for a ball-piston hit.
pub const DEFAULT_MAX_EVENTS: u64 = 100_000_000;

#[derive(Debug, Clone, Serialize)]
struct Tally {
    count: u64,
    last: Option<f64>,
    gaps: BatchMeans,
}

impl Tally {
    fn new() -> Self {
        Self {
            count: 0,
            last: None,
            gaps: BatchMeans::new(BATCHES),
        }
    }

    fn hit(&mut self, t: f64) {
        self.count += 1;
        if let Some(prev) = self.last {
            self.gaps.push(t - prev);
        }
        self.last = Some(t);
    }

    fn estimate(&self, total_time: f64, kind: &'static str) -> Result<KindEstimate> {
        if self.count < 2 {
            return Err(Error::InsufficientEvents {
                kind,
                needed: 2,
                found: self.count,
            });
        }
        let gap = self.gaps.estimate();
        Ok(KindEstimate {
            mft: Estimate {
                value: total_time / self.count as f64,
                standard_error: gap.standard_error,
                sample_count: self.count,
            },
            gap,
        })
    }
}

/// Mean free time of one event kind or class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KindEstimate {
    /// Total time over number of events, with a batch-means error bar.
    pub mft: Estimate,
    /// Mean gap between successive events of this kind.
    pub gap: Estimate,
}

impl KindEstimate {
    /// Collision rate `1 / mft` with its propagated error.
    pub fn rate(&self) -> Estimate {
        let v = 1.0 / self.mft.value;
        Estimate {
            value: v,
            standard_error: self.mft.standard_error * v * v,
            sample_count: self.mft.sample_count,
        }
    }
}

/// Streaming mean-free-time accumulator; feed it events in time order.
#[derive(Debug, Clone, Serialize)]
pub struct MftAccumulator {
    time: f64,
    counts: KindCounts,
    kinds: Vec<Tally>,
    classes: Vec<Tally>,
    all: Tally,
}

impl Default for MftAccumulator {
    fn default() -> Self {
        Self {
            time: 0.0,
            counts: KindCounts::default(),
            kinds: (0..EventKind::COUNT).map(|_| Tally::new()).collect(),
            classes: (0..3).map(|_| Tally::new()).collect(),
            all: Tally::new(),
        }
    }
}

fn class_index(c: EventClass) -> usize {
    match c {
        EventClass::BallPiston => 0,
        EventClass::BallWall => 1,
        EventClass::PistonWall => 2,
    }
}

impl MftAccumulator {
    pub fn observe(&mut self, e: &CollisionEvent) {
        self.time += e.time;
        self.counts.record(e.kind);
        self.kinds[e.kind.index()].hit(self.time);
        self.classes[class_index(e.kind.class())].hit(self.time);
        self.all.hit(self.time);
    }

    pub fn total_time(&self) -> f64 {
        self.time
    }

    pub fn counts(&self) -> &KindCounts {
        &self.counts
    }

    pub fn kind(&self, kind: EventKind) -> Result<KindEstimate> {
        self.kinds[kind.index()].estimate(self.time, kind.label())
    }

    pub fn class(&self, class: EventClass) -> Result<KindEstimate> {
        let label = match class {
            EventClass::BallPiston => "BP",
            EventClass::BallWall => "BW",
            EventClass::PistonWall => "PW",
        };
        self.classes[class_index(class)].estimate(self.time, label)
    }

    /// All events together.
    pub fn total(&self) -> Result<KindEstimate> {
        self.all.estimate(self.time, "any")
    }
}

/// Mean free times of every kind present in `log`.
pub fn estimate_mft(log: &CollisionLog) -> MftAccumulator {
    let mut acc = MftAccumulator::default();
    log.events.iter().for_each(|e| acc.observe(e));
    acc
}

/// Equilibrium run from a flow-invariant initial state, accumulated
/// without storing events.
pub fn equilibrium_run(params: &GeometryParams, stop: StopRule, seed: Seed, stream: u64) -> Result<MftAccumulator> {
    let sampler = FlowSampler::new(params)?;
    let mut rng = seed.rng("equilibrium", stream);
    let s0 = sampler.sample(&mut rng);
    let mut acc = MftAccumulator::default();
    crate::dynamics::simulate_with(params, s0, stop, |e| acc.observe(e))?;
    Ok(acc)
}

/// Settings for [`estimate_cond_mft`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CondMftConfig {
    pub ep: f64,
    /// Width of the piston-energy window; `None` fixes the energy exactly.
    pub window: Option<f64>,
    pub samples: usize,
    pub max_events: u64,
}

impl CondMftConfig {
    pub fn new(ep: f64, samples: usize) -> Self {
        Self {
            ep,
            window: None,
            samples,
            max_events: DEFAULT_MAX_EVENTS,
        }
    }

    fn validate(&self) -> Result<()> {
        let half = 0.5 * self.window.unwrap_or(0.0);
        if !(self.ep - half > 0.0 && self.ep + half < 0.5) {
            return Err(Error::PistonEnergyOutOfRange { ep: self.ep });
        }
        if let Some(w) = self.window {
            if !(w > 0.0) {
                return Err(Error::InvalidArgument(format!("window must be positive, got {w}")));
            }
        }
        if self.samples < 1000 {
            return Err(Error::InvalidArgument(format!(
                "conditional mean free time needs at least 1000 samples, got {}",
                self.samples
            )));
        }
        Ok(())
    }
}

/// Time from an outgoing state on the collision face to the next
/// ball-piston collision, with the incoming state of that collision.
fn first_return(
    params: &GeometryParams,
    s0: crate::dynamics::FlowState,
    max_events: u64,
) -> Result<(f64, CollisionEvent)> {
    let mut sim = Simulator::new(params, s0);
    let (e, _) = sim.run_to_bp(max_events)?;
    Ok((e.time, e))
}

/// Conditional mean free time at piston energy `ep`: mean time to the
/// next ball-piston collision from the conditional flux measure.
///
/// In window mode the initial piston energy is drawn uniformly from
/// `(ep - w/2, ep + w/2)` and the mean hit time over the window
/// converges to the fixed-energy value as `w -> 0`.
pub fn estimate_cond_mft(params: &GeometryParams, cfg: &CondMftConfig, seed: Seed) -> Result<Estimate> {
    cfg.validate()?;
    let fixed = match cfg.window {
        None => Some(ConditionalSampler::new(params, cfg.ep, 1)?),
        Some(_) => None,
    };
    let label = format!("cond-mft/{:e}/{:?}", cfg.ep, cfg.window);
    let times: Vec<Result<f64>> = (0..cfg.samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.rng(&label, i);
            let (s0, _) = match (&fixed, cfg.window) {
                (Some(s), _) => s.sample(&mut rng),
                (None, Some(w)) => {
                    let ep = cfg.ep + w * (rng.random::<f64>() - 0.5);
                    ConditionalSampler::new(params, ep, 1)?.sample(&mut rng)
                }
                (None, None) => unreachable!(),
            };
            Ok(first_return(params, s0, cfg.max_events)?.0)
        })
        .collect();
    let mut m = Moments::default();
    for t in times {
        m.push(t?);
    }
    Ok(m.estimate())
}

/// One row of the collapse plot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhiRow {
    pub delta: f64,
    pub ep: f64,
    pub tau_bp_analytic: f64,
    pub nu_emp: f64,
    pub nu_stderr: f64,
    pub phi_analytic: f64,
    pub phi_emp: f64,
    pub phi_stderr: f64,
    pub samples: u64,
}

impl PhiRow {
    /// Deviation of the measured frequency in standard errors.
    pub fn z_score(&self) -> f64 {
        (self.phi_emp - self.phi_analytic).abs() / self.phi_stderr
    }
}

/// Measured `tau_bp * nu_bp(ep)` for each `ep` in `grid`.
pub fn phi_scan(params: &GeometryParams, grid: &[f64], samples: usize, seed: Seed) -> Result<Vec<PhiRow>> {
    let geom = derive_geometry(params);
    grid.iter()
        .map(|&ep| {
            let t = estimate_cond_mft(params, &CondMftConfig::new(ep, samples), seed)?;
            let nu = 1.0 / t.value;
            let nu_se = t.standard_error * nu * nu;
            let rate = conditional_rate(&geom, ep)?;
            Ok(PhiRow {
                delta: params.delta(),
                ep,
                tau_bp_analytic: geom.tau_bp,
                nu_emp: nu,
                nu_stderr: nu_se,
                phi_analytic: rate.phi,
                phi_emp: geom.tau_bp * nu,
                phi_stderr: geom.tau_bp * nu_se,
                samples: t.sample_count,
            })
        })
        .collect()
}

pub fn write_phi_csv<W: Write>(rows: &[PhiRow], mut out: W) -> io::Result<()> {
    writeln!(out, "delta,ep,tau_bp_analytic,nu_emp,nu_stderr,phi_analytic,phi_emp")?;
    for r in rows {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.delta, r.ep, r.tau_bp_analytic, r.nu_emp, r.nu_stderr, r.phi_analytic, r.phi_emp
        )?;
    }
    Ok(())
}

/// Piston energies of the published collapse plot: `k/100` for
/// `k = 1..49`, plus `2^-j / 200` and `1/2 - 2^-j / 200` for `j = 0..4`.
pub fn paper_energy_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (1..50).map(|k| k as f64 / 100.0).collect();
    for j in 0..5 {
        let e = 1.0 / (200.0 * f64::from(1u32 << j));
        grid.push(e);
        grid.push(0.5 - e);
    }
    grid.sort_by(f64::total_cmp);
    grid
}

/// Admissible band around a branch support.
pub const SUPPORT_TOL: f64 = 1e-9;

/// Counts over the admissible angle interval of one `sigma` branch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchHistogram {
    pub sigma: i8,
    /// Increasing bin edges in centred angle, `counts.len() + 1` of them.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl BranchHistogram {
    fn locate(&self, alpha: f64) -> Option<usize> {
        let (lo, hi) = (self.edges[0], *self.edges.last().unwrap());
        if alpha < lo - SUPPORT_TOL || alpha > hi + SUPPORT_TOL {
            return None;
        }
        let k = ((alpha - lo) / (hi - lo) * self.counts.len() as f64).floor();
        Some((k.max(0.0) as usize).min(self.counts.len() - 1))
    }
}

/// Histogram of `(alpha, sigma)` at one piston energy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub ep: f64,
    pub branches: Vec<BranchHistogram>,
    /// Samples off the support or at a different piston energy.
    pub outside: u64,
    /// Samples placed in a bin.
    pub total: u64,
}

impl Histogram {
    /// Empty histogram with `bins` uniform bins on each nonempty branch.
    pub fn new(ep: f64, bins: usize) -> Result<Self> {
        if !(ep > 0.0 && ep < 0.5) {
            return Err(Error::PistonEnergyOutOfRange { ep });
        }
        if bins == 0 {
            return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
        }
        let branches = [1i8, -1]
            .iter()
            .filter_map(|&sigma| {
                branch_support(ep, sigma).map(|(lo, hi)| BranchHistogram {
                    sigma,
                    edges: (0..=bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect(),
                    counts: vec![0; bins],
                })
            })
            .collect();
        Ok(Self {
            ep,
            branches,
            outside: 0,
            total: 0,
        })
    }

    pub fn add(&mut self, a: &AngleCoord) {
        if (a.ep - self.ep).abs() > SUPPORT_TOL {
            self.outside += 1;
            return;
        }
        let alpha = a.centered_alpha();
        let slot = self
            .branches
            .iter_mut()
            .find(|b| b.sigma == a.sigma)
            .and_then(|b| b.locate(alpha).map(|k| (b, k)));
        match slot {
            Some((b, k)) => {
                b.counts[k] += 1;
                self.total += 1;
            }
            None => self.outside += 1,
        }
    }

    /// Number of bins over all branches.
    pub fn bin_count(&self) -> usize {
        self.branches.iter().map(|b| b.counts.len()).sum()
    }

    /// Leading-order expectation of the relative entropy of a histogram
    /// drawn from its own reference: `(bins - 1) / (2 N)`.
    pub fn noise_floor(&self) -> f64 {
        (self.bin_count() as f64 - 1.0) / (2.0 * self.total as f64)
    }

    /// Expected counts under `reference` (a density in centred angle and
    /// sigma), from 8-point Gauss-Legendre bin averages.
    pub fn expected_counts<F: Fn(f64, i8) -> f64>(&self, reference: F) -> Vec<f64> {
        let n = self.total as f64;
        self.branches
            .iter()
            .flat_map(|b| {
                let r = &reference;
                b.edges.windows(2).map(move |w| n * gauss_legendre8(|a| r(a, b.sigma), w[0], w[1]))
            })
            .collect()
    }

    pub fn observed_counts(&self) -> Vec<u64> {
        self.branches.iter().flat_map(|b| b.counts.iter().copied()).collect()
    }

    /// CSV rows `branch, bin_left, bin_right, count, density, reference_density`.
    pub fn write_csv<W: Write, F: Fn(f64, i8) -> f64>(&self, reference: F, mut out: W) -> io::Result<()> {
        writeln!(out, "branch,bin_left,bin_right,count,density,reference_density")?;
        let n = self.total.max(1) as f64;
        for b in &self.branches {
            for (w, &c) in b.edges.windows(2).zip(&b.counts) {
                let width = w[1] - w[0];
                let q = gauss_legendre8(|a| reference(a, b.sigma), w[0], w[1]) / width;
                writeln!(
                    out,
                    "{},{:.16e},{:.16e},{},{:.16e},{:.16e}",
                    b.sigma,
                    w[0],
                    w[1],
                    c,
                    c as f64 / (n * width),
                    q
                )?;
            }
        }
        Ok(())
    }
}

/// Histogram of `samples` at piston energy `ep` with `bins` bins per branch.
pub fn build_histogram(ep: f64, samples: &[AngleCoord], bins: usize) -> Result<Histogram> {
    let mut h = Histogram::new(ep, bins)?;
    samples.iter().for_each(|a| h.add(a));
    Ok(h)
}

/// Relative entropy of the empirical bin densities to the bin-averaged
/// `reference` density. Empty bins contribute nothing.
pub fn kl_divergence<F: Fn(f64, i8) -> f64>(h: &Histogram, reference: F) -> Result<f64> {
    if h.total == 0 {
        return Ok(0.0);
    }
    let n = h.total as f64;
    let mut d = 0.0;
    for b in &h.branches {
        for (w, &c) in b.edges.windows(2).zip(&b.counts) {
            if c == 0 {
                continue;
            }
            let width = w[1] - w[0];
            let q = gauss_legendre8(|a| reference(a, b.sigma), w[0], w[1]) / width;
            if !(q > 0.0) {
                return Err(Error::NonPositiveReference {
                    sigma: b.sigma,
                    left: w[0],
                    right: w[1],
                    value: q,
                });
            }
            let p = c as f64 / n;
            d += p * (p / width / q).ln();
        }
    }
    Ok(d)
}

/// Settings for [`relaxation_experiment`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RelaxConfig {
    pub ep: f64,
    /// Exponent of the initial angular density.
    pub n: u32,
    pub samples: usize,
    pub bins: usize,
    pub max_events: u64,
}

impl RelaxConfig {
    pub fn new(ep: f64, n: u32, samples: usize) -> Self {
        Self {
            ep,
            n,
            samples,
            bins: 1000,
            max_events: DEFAULT_MAX_EVENTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelaxResult {
    /// Incoming angles at the first ball-piston collision.
    pub histogram: Histogram,
    /// Relative entropy to the equilibrium density.
    pub kl: f64,
}

/// Starts trajectories on the collision face from `h_n` at fixed piston
/// energy and histograms the incoming angles at their first return. The
/// piston energy is unchanged in between.
pub fn relaxation_experiment(params: &GeometryParams, cfg: &RelaxConfig, seed: Seed) -> Result<RelaxResult> {
    let sampler = ConditionalSampler::new(params, cfg.ep, cfg.n)?;
    let equilibrium = AlphaDensity::new(cfg.ep, 1)?;
    let label = format!("relax/{:e}/{}", cfg.ep, cfg.n);
    let hits: Vec<Result<AngleCoord>> = (0..cfg.samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.rng(&label, i);
            let (s0, _) = sampler.sample(&mut rng);
            let (_, e) = first_return(params, s0, cfg.max_events)?;
            Ok(AngleCoord::from_incoming(&e.state_pre.v))
        })
        .collect();
    let mut h = Histogram::new(cfg.ep, cfg.bins)?;
    for a in hits {
        h.add(&a?);
    }
    let kl = kl_divergence(&h, |a, s| equilibrium.density(a, s))?;
    Ok(RelaxResult { histogram: h, kl })
}

/// Row of the relaxation summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RelaxRow {
    pub delta: f64,
    pub ep: f64,
    pub n: u32,
    pub kl: f64,
    pub kl_floor: f64,
    pub samples: u64,
}

pub fn write_relax_csv<W: Write>(rows: &[RelaxRow], mut out: W) -> io::Result<()> {
    writeln!(out, "delta,ep,n,kl,kl_floor,samples")?;
    for r in rows {
        writeln!(
            out,
            "{:.16e},{:.16e},{},{:.16e},{:.16e},{}",
            r.delta, r.ep, r.n, r.kl, r.kl_floor, r.samples
        )?;
    }
    Ok(())
}
