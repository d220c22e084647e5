//! One function per subcommand. Each resolves its defaults, runs, and
//! returns the resolved settings with the rendered body.

use std::io::{self, Write};

use ballpiston::dynamics::{EventClass, StopRule};
use ballpiston::estimators::{
    equilibrium_run, estimate_cond_mft, paper_energy_grid, phi_scan, relaxation_experiment, write_phi_csv,
    write_relax_csv, CondMftConfig, RelaxConfig, RelaxRow, DEFAULT_MAX_EVENTS,
};
use ballpiston::geometry::{conditional_rate, derive_geometry, GeometryParams};
use ballpiston::kernel::{
    canonical_check, gillespie, kernel_density, moments, moments_by_quadrature, write_canonical_csv, Branch,
    EnergyGridDensity, EnergyPair, MasterOperator, PathLimit,
};
use ballpiston::sampling::{AlphaDensity, Seed};
use serde::Serialize;
use serde_json::Value;

use crate::options::*;
use crate::CliError;

/// Rendered output without the metadata header.
pub enum Body {
    Csv(Vec<u8>),
    Json(Value),
}

pub struct Outcome {
    pub settings: Value,
    pub body: Body,
}

/// Reference penetration lengths, largest first.
pub fn paper_delta_grid() -> Vec<f64> {
    vec![0.325, 0.2, 0.175, 0.1, 0.05, 0.0125]
}

const DEFAULT_DELTA: f64 = 0.1;

fn resolve_deltas(d: &mut Deltas) -> Result<Vec<f64>, CliError> {
    let list = match (d.delta.take(), d.delta_grid.take()) {
        (Some(v), _) if !v.is_empty() => v,
        (_, Some(Grid::Paper)) => paper_delta_grid(),
        _ => return Err(CliError::Config("give --delta or --delta-grid".into())),
    };
    d.delta = Some(list.clone());
    Ok(list)
}

fn resolve_energies(e: &mut Energies, default: Option<Vec<f64>>) -> Result<Vec<f64>, CliError> {
    let list = match (e.ep.take(), e.ep_grid.take()) {
        (Some(v), _) if !v.is_empty() => v,
        (_, Some(Grid::Paper)) => paper_energy_grid(),
        _ => default.ok_or_else(|| CliError::Config("give --ep or --ep-grid".into()))?,
    };
    e.ep = Some(list.clone());
    Ok(list)
}

fn required<T: Copy>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Config(format!("--{flag} is required")))
}

/// Resolved settings for the header; unset options are left out.
fn settings<T: Serialize>(args: &T) -> Value {
    let mut v = serde_json::to_value(args).expect("settings serialize");
    if let Value::Object(m) = &mut v {
        m.retain(|_, x| !x.is_null());
    }
    v
}

fn csv_number(v: &Value) -> String {
    match v {
        Value::Number(n) if n.is_f64() => format!("{:.16e}", n.as_f64().unwrap()),
        Value::Number(n) => n.to_string(),
        Value::String(s) => s.clone(),
        Value::Bool(b) => b.to_string(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

/// Flat records as CSV, columns in field order.
fn write_records<T: Serialize>(rows: &[T], out: &mut Vec<u8>) -> io::Result<()> {
    let mut header_done = false;
    for row in rows {
        let Value::Object(m) = serde_json::to_value(row).map_err(io::Error::other)? else {
            return Err(io::Error::other("record is not an object"));
        };
        if !header_done {
            writeln!(out, "{}", m.keys().cloned().collect::<Vec<_>>().join(","))?;
            header_done = true;
        }
        writeln!(out, "{}", m.values().map(csv_number).collect::<Vec<_>>().join(","))?;
    }
    Ok(())
}

fn render<T: Serialize>(
    format: Format,
    value: &T,
    csv: impl FnOnce(&mut Vec<u8>) -> io::Result<()>,
) -> Result<Body, CliError> {
    Ok(match format {
        Format::Json => Body::Json(serde_json::to_value(value).map_err(|e| CliError::Numerical(e.to_string()))?),
        Format::Csv => {
            let mut buf = Vec::new();
            csv(&mut buf)?;
            Body::Csv(buf)
        }
    })
}

fn params(rho: f64, delta: f64) -> Result<GeometryParams, CliError> {
    Ok(GeometryParams::new(rho, delta)?)
}

pub fn geometry(mut args: GeometryArgs, rho: f64, format: Format) -> Result<Outcome, CliError> {
    let deltas = resolve_deltas(&mut args.deltas)?;
    let rows = deltas
        .iter()
        .map(|&d| Ok(derive_geometry(&params(rho, d)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let body = if rows.len() == 1 {
        render(format, &rows[0], |out| write_records(&rows, out))?
    } else {
        render(format, &rows, |out| write_records(&rows, out))?
    };
    Ok(Outcome {
        settings: settings(&args),
        body,
    })
}

#[derive(Serialize)]
struct MftRow {
    delta: f64,
    class: &'static str,
    events: u64,
    mft: f64,
    mft_stderr: f64,
    mft_analytic: f64,
    total_time: f64,
}

pub fn mft(mut args: MftArgs, rho: f64, seed: Seed, format: Format) -> Result<Outcome, CliError> {
    let deltas = resolve_deltas(&mut args.deltas)?;
    let events = *args.events.get_or_insert(1_000_000);
    let mut rows = Vec::new();
    for &d in &deltas {
        let p = params(rho, d)?;
        let g = derive_geometry(&p);
        let acc = equilibrium_run(&p, StopRule::Events(events), seed, 0)?;
        for (class, label, tau) in [
            (EventClass::BallPiston, "bp", g.tau_bp),
            (EventClass::BallWall, "bw", g.tau_bw),
            (EventClass::PistonWall, "pw", g.tau_pw),
        ] {
            let e = acc.class(class)?;
            rows.push(MftRow {
                delta: d,
                class: label,
                events: acc.counts().class(class),
                mft: e.mft.value,
                mft_stderr: e.mft.standard_error,
                mft_analytic: tau,
                total_time: acc.total_time(),
            });
        }
    }
    Ok(Outcome {
        settings: settings(&args),
        body: render(format, &rows, |out| write_records(&rows, out))?,
    })
}

#[derive(Serialize)]
struct CondMftRow {
    delta: f64,
    ep: f64,
    window: Option<f64>,
    mean_time: f64,
    stderr: f64,
    samples: u64,
    /// `1 / nu_bp(ep)`
    mean_time_analytic: f64,
}

pub fn cond_mft(mut args: CondMftArgs, rho: f64, seed: Seed, format: Format) -> Result<Outcome, CliError> {
    let deltas = resolve_deltas(&mut args.deltas)?;
    let eps = resolve_energies(&mut args.energies, None)?;
    let samples = *args.samples.get_or_insert(10_000);
    let max_events = *args.max_events.get_or_insert(DEFAULT_MAX_EVENTS);
    let mut rows = Vec::new();
    for &d in &deltas {
        let p = params(rho, d)?;
        let g = derive_geometry(&p);
        for &ep in &eps {
            let cfg = CondMftConfig {
                ep,
                window: args.window,
                samples,
                max_events,
            };
            let t = estimate_cond_mft(&p, &cfg, seed)?;
            rows.push(CondMftRow {
                delta: d,
                ep,
                window: args.window,
                mean_time: t.value,
                stderr: t.standard_error,
                samples: t.sample_count,
                mean_time_analytic: 1.0 / conditional_rate(&g, ep)?.nu,
            });
        }
    }
    Ok(Outcome {
        settings: settings(&args),
        body: render(format, &rows, |out| write_records(&rows, out))?,
    })
}

pub fn phi(mut args: PhiScanArgs, rho: f64, seed: Seed, format: Format) -> Result<Outcome, CliError> {
    let deltas = resolve_deltas(&mut args.deltas)?;
    let eps = resolve_energies(&mut args.energies, None)?;
    let samples = *args.samples.get_or_insert(10_000);
    let mut rows = Vec::new();
    for &d in &deltas {
        rows.extend(phi_scan(&params(rho, d)?, &eps, samples, seed)?);
    }
    Ok(Outcome {
        settings: settings(&args),
        body: render(format, &rows, |out| write_phi_csv(&rows, out))?,
    })
}

#[derive(Serialize)]
struct HistogramBlock {
    delta: f64,
    ep: f64,
    n: u32,
    kl: f64,
    histogram: ballpiston::estimators::Histogram,
}

pub fn relax(mut args: RelaxArgs, rho: f64, seed: Seed, format: Format) -> Result<Outcome, CliError> {
    let deltas = resolve_deltas(&mut args.deltas)?;
    let eps = resolve_energies(&mut args.energies, Some(vec![0.03125, 0.125, 0.25]))?;
    let ns = args.n.get_or_insert_with(|| vec![0]).clone();
    let samples = *args.samples.get_or_insert(10_000);
    let bins = *args.bins.get_or_insert(1000);
    let max_events = *args.max_events.get_or_insert(DEFAULT_MAX_EVENTS);
    let mut blocks = Vec::new();
    for &d in &deltas {
        let p = params(rho, d)?;
        for &ep in &eps {
            for &n in &ns {
                let cfg = RelaxConfig {
                    ep,
                    n,
                    samples,
                    bins,
                    max_events,
                };
                let r = relaxation_experiment(&p, &cfg, seed)?;
                blocks.push(HistogramBlock {
                    delta: d,
                    ep,
                    n,
                    kl: r.kl,
                    histogram: r.histogram,
                });
            }
        }
    }
    let body = if args.histograms {
        render(format, &blocks, |out| {
            writeln!(out, "delta,ep,n,branch,bin_left,bin_right,count,density,reference_density")?;
            for b in &blocks {
                let eq = AlphaDensity::new(b.ep, 1).map_err(io::Error::other)?;
                let mut buf = Vec::new();
                b.histogram.write_csv(|a, s| eq.density(a, s), &mut buf)?;
                let prefix = format!("{:.16e},{:.16e},{},", b.delta, b.ep, b.n);
                for line in String::from_utf8_lossy(&buf).lines().skip(1) {
                    writeln!(out, "{prefix}{line}")?;
                }
            }
            Ok(())
        })?
    } else {
        let rows: Vec<RelaxRow> = blocks
            .iter()
            .map(|b| RelaxRow {
                delta: b.delta,
                ep: b.ep,
                n: b.n,
                kl: b.kl,
                kl_floor: b.histogram.noise_floor(),
                samples: b.histogram.total,
            })
            .collect();
        render(format, &rows, |out| write_relax_csv(&rows, out))?
    };
    Ok(Outcome {
        settings: settings(&args),
        body,
    })
}

#[derive(Serialize)]
struct DensityRow {
    ep_out: f64,
    density: f64,
}

#[derive(Serialize)]
struct MomentRow {
    eb: f64,
    ep: f64,
    branch: Branch,
    f: f64,
    j: f64,
    h: f64,
    f_quadrature: f64,
    j_quadrature: f64,
    h_quadrature: f64,
}

pub fn kernel(mut args: KernelArgs, rho: f64, format: Format) -> Result<Outcome, CliError> {
    let mode = required(args.mode, "mode")?;
    let delta = *args.delta.get_or_insert(DEFAULT_DELTA);
    let g = derive_geometry(&params(rho, delta)?);
    let tol = *args.tol.get_or_insert(1e-9);
    let body = match mode {
        KernelMode::Density | KernelMode::Moments => {
            let pair = EnergyPair::new(required(args.eb, "eb")?, required(args.ep, "ep")?)?;
            if mode == KernelMode::Density {
                let points = *args.points.get_or_insert(200);
                let rows: Vec<DensityRow> = (0..points)
                    .map(|k| {
                        let ep_out = pair.eb * (k as f64 + 0.5) / points as f64;
                        DensityRow {
                            ep_out,
                            density: kernel_density(&pair, ep_out, &g),
                        }
                    })
                    .collect();
                render(format, &rows, |out| write_records(&rows, out))?
            } else {
                let m = moments(&pair, &g);
                let q = moments_by_quadrature(&pair, &g, tol)?;
                let rows = [MomentRow {
                    eb: pair.eb,
                    ep: pair.ep,
                    branch: Branch::of(&pair),
                    f: m.f,
                    j: m.j,
                    h: m.h,
                    f_quadrature: q.f,
                    j_quadrature: q.j,
                    h_quadrature: q.h,
                }];
                render(format, &rows, |out| write_records(&rows, out))?
            }
        }
        KernelMode::Canonical => {
            let betas = args.beta.get_or_insert_with(|| vec![1.0]).clone();
            let rows = betas
                .iter()
                .map(|&b| {
                    if !(b > 0.0 && b.is_finite()) {
                        return Err(CliError::Domain(format!("beta must be positive, got {b}")));
                    }
                    Ok(canonical_check(b, &g, tol)?)
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            render(format, &rows, |out| write_canonical_csv(&rows, out))?
        }
    };
    Ok(Outcome {
        settings: settings(&args),
        body,
    })
}

pub fn jump_path(mut args: GillespieArgs, rho: f64, seed: Seed, format: Format) -> Result<Outcome, CliError> {
    let delta = *args.delta.get_or_insert(DEFAULT_DELTA);
    let g = derive_geometry(&params(rho, delta)?);
    let start = EnergyPair::new(required(args.eb, "eb")?, required(args.ep, "ep")?)?;
    let limit = match (args.jumps, args.time) {
        (Some(n), _) => PathLimit::Jumps(n),
        (None, Some(t)) if t > 0.0 => PathLimit::Time(t),
        (None, Some(t)) => return Err(CliError::Domain(format!("time must be positive, got {t}"))),
        (None, None) => return Err(CliError::Config("give --jumps or --time".into())),
    };
    let mut rng = seed.rng("gillespie", 0);
    let log = gillespie(&start, limit, &g, &mut rng)?;
    Ok(Outcome {
        settings: settings(&args),
        body: render(format, &log, |out| log.write_csv(out))?,
    })
}

pub fn master(mut args: MasterArgs, rho: f64, format: Format) -> Result<Outcome, CliError> {
    let delta = *args.delta.get_or_insert(DEFAULT_DELTA);
    let g = derive_geometry(&params(rho, delta)?);
    let total = *args.total.get_or_insert(0.5);
    let cells = *args.cells.get_or_insert(200);
    let op = MasterOperator::new(&g, total, cells)?;
    let dt = *args.dt.get_or_insert(0.25 / op.max_out_rate());
    if !(dt > 0.0) {
        return Err(CliError::Domain(format!("dt must be positive, got {dt}")));
    }
    let steps = match (args.steps, args.time) {
        (Some(s), _) => s,
        (None, Some(t)) if t >= 0.0 => (t / dt).ceil() as usize,
        (None, Some(t)) => return Err(CliError::Domain(format!("time must be nonnegative, got {t}"))),
        (None, None) => return Err(CliError::Config("give --steps or --time".into())),
    };
    args.steps = Some(steps);
    args.time = None;
    let p0 = match args.initial_ep {
        Some(ep) if (0.0..=total).contains(&ep) => EnergyGridDensity::point_mass(total, cells, ep),
        Some(ep) => return Err(CliError::Domain(format!("initial piston energy {ep} outside [0, {total}]"))),
        None => EnergyGridDensity::stationary(total, cells),
    };
    let p = op.evolve(&p0, dt, steps)?;
    Ok(Outcome {
        settings: settings(&args),
        body: render(format, &p, |out| p.write_csv(out))?,
    })
}
