//! Event-driven billiard flow of the ball-piston pair.
//!
//! Between collisions the phase point moves freely in the three-dimensional
//! configuration space. Three kinds of boundary are met: the four corner
//! arcs (ball-wall), the two ends of the piston slot (piston-wall), and the
//! tilted plane `q1 = q3` with inward normal `(-1, 0, 1)/sqrt(2)`
//! (ball-piston). Every event time is an exact root of a linear or
//! quadratic equation.
//!
//! The integrator is generic over the scalar type (see [`Real`]); all
//! public conveniences work in `f64`.

use std::fmt;
use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{contains, GeometryParams, Position, CORNERS};
use crate::real::Real;

/// Free-flight length inserted after each event so that the surface just
/// left is not detected again.
pub const NUDGE: f64 = 1e-14;

/// Relative separation below which two candidate event times are reported
/// as a corner hit.
pub const EVENT_TIME_TOL: f64 = 1e-12;

/// Distance from a surface tolerated by [`apply_event`].
pub const SURFACE_TOL: f64 = 1e-9;

// Slack on the face bounds when accepting a ball-piston hit.
const FACE_SLACK: f64 = 1e-12;

const RATE_CAP_EVENTS: u64 = 1_000_000;
const RATE_CAP_WINDOW: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Velocity<T = f64> {
    pub v1: T,
    pub v2: T,
    pub v3: T,
}

impl<T> Velocity<T> {
    pub fn new(v1: T, v2: T, v3: T) -> Self {
        Self { v1, v2, v3 }
    }
}

impl Velocity {
    pub fn norm_squared(&self) -> f64 {
        self.v1 * self.v1 + self.v2 * self.v2 + self.v3 * self.v3
    }

    /// Component along the inward normal of the ball-piston surface.
    pub fn normal_component(&self) -> f64 {
        (self.v3 - self.v1) * std::f64::consts::FRAC_1_SQRT_2
    }

    pub fn ball_energy(&self) -> f64 {
        0.5 * (self.v1 * self.v1 + self.v2 * self.v2)
    }

    pub fn piston_energy(&self) -> f64 {
        0.5 * self.v3 * self.v3
    }
}

impl<T: Real> std::ops::Neg for Velocity<T> {
    type Output = Velocity<T>;

    fn neg(self) -> Velocity<T> {
        Velocity::new(-self.v1, -self.v2, -self.v3)
    }
}

/// Phase point of the flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowState<T = f64> {
    pub q: Position<T>,
    pub v: Velocity<T>,
}

impl<T: Real> FlowState<T> {
    pub fn new(q: Position<T>, v: Velocity<T>) -> Self {
        Self { q, v }
    }

    /// Converts an `f64` state to the working precision of `T`.
    pub fn lift(s: &FlowState) -> Self {
        Self {
            q: Position::new(T::lift(s.q.q1), T::lift(s.q.q2), T::lift(s.q.q3)),
            v: Velocity::new(T::lift(s.v.v1), T::lift(s.v.v2), T::lift(s.v.v3)),
        }
    }

    /// Nearest `f64` state.
    pub fn to_f64(&self) -> FlowState {
        FlowState {
            q: Position::new(self.q.q1.to_f64(), self.q.q2.to_f64(), self.q.q3.to_f64()),
            v: Velocity::new(self.v.v1.to_f64(), self.v.v2.to_f64(), self.v.v3.to_f64()),
        }
    }

    /// Free flight over `dt`.
    pub fn advanced(&self, dt: T) -> Self {
        FlowState {
            q: Position::new(
                self.q.q1.clone() + dt.clone() * self.v.v1.clone(),
                self.q.q2.clone() + dt.clone() * self.v.v2.clone(),
                self.q.q3.clone() + dt * self.v.v3.clone(),
            ),
            v: self.v.clone(),
        }
    }

    /// Same position, reversed velocity.
    pub fn reversed(&self) -> Self {
        FlowState {
            q: self.q.clone(),
            v: -self.v.clone(),
        }
    }
}

impl FlowState {
    /// Total kinetic energy, 1/2 for unit speed.
    pub fn energy(&self) -> f64 {
        0.5 * self.v.norm_squared()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum PistonEnd {
    /// `q3 = (1 - lambda)/2 - delta`
    Left,
    /// `q3 = (1 + lambda)/2 + delta`
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum EventKind {
    BallPiston,
    /// Arc index into [`CORNERS`].
    BallWall(u8),
    PistonWall(PistonEnd),
}

/// Aggregated event classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum EventClass {
    BallPiston,
    BallWall,
    PistonWall,
}

impl EventKind {
    pub const COUNT: usize = 7;

    pub fn all() -> [EventKind; 7] {
        [
            EventKind::BallPiston,
            EventKind::BallWall(0),
            EventKind::BallWall(1),
            EventKind::BallWall(2),
            EventKind::BallWall(3),
            EventKind::PistonWall(PistonEnd::Left),
            EventKind::PistonWall(PistonEnd::Right),
        ]
    }

    pub fn index(&self) -> usize {
        match *self {
            EventKind::BallPiston => 0,
            EventKind::BallWall(i) => 1 + i as usize,
            EventKind::PistonWall(PistonEnd::Left) => 5,
            EventKind::PistonWall(PistonEnd::Right) => 6,
        }
    }

    pub fn class(&self) -> EventClass {
        match self {
            EventKind::BallPiston => EventClass::BallPiston,
            EventKind::BallWall(_) => EventClass::BallWall,
            EventKind::PistonWall(_) => EventClass::PistonWall,
        }
    }

    pub fn label(&self) -> &'static str {
        match *self {
            EventKind::BallPiston => "BP",
            EventKind::BallWall(0) => "BW0",
            EventKind::BallWall(1) => "BW1",
            EventKind::BallWall(2) => "BW2",
            EventKind::BallWall(_) => "BW3",
            EventKind::PistonWall(PistonEnd::Left) => "PW-",
            EventKind::PistonWall(PistonEnd::Right) => "PW+",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollisionEvent<T = f64> {
    /// Flight time since the previous event (or since the start).
    pub time: T,
    pub kind: EventKind,
    pub state_pre: FlowState<T>,
    pub state_post: FlowState<T>,
}

/// Event counts indexed by [`EventKind::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct KindCounts(pub [u64; EventKind::COUNT]);

impl KindCounts {
    pub fn record(&mut self, kind: EventKind) {
        self.0[kind.index()] += 1;
    }

    pub fn get(&self, kind: EventKind) -> u64 {
        self.0[kind.index()]
    }

    pub fn class(&self, class: EventClass) -> u64 {
        match class {
            EventClass::BallPiston => self.0[0],
            EventClass::BallWall => self.0[1..5].iter().sum(),
            EventClass::PistonWall => self.0[5] + self.0[6],
        }
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }
}

/// Time-ordered record of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CollisionLog {
    pub events: Vec<CollisionEvent>,
    pub total_time: f64,
    pub counts: KindCounts,
}

impl CollisionLog {
    pub fn push(&mut self, event: CollisionEvent) {
        self.total_time += event.time;
        self.counts.record(event.kind);
        self.events.push(event);
    }

    /// Writes the log as CSV (post-collision states).
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "event_index,kind,flight_time,q1,q2,q3,v1,v2,v3,cumulative_time")?;
        let mut cumulative = 0.0;
        for (i, e) in self.events.iter().enumerate() {
            cumulative += e.time;
            let s = &e.state_post;
            writeln!(
                out,
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                i, e.kind, e.time, s.q.q1, s.q.q2, s.q.q3, s.v.v1, s.v.v2, s.v.v3, cumulative
            )?;
        }
        Ok(())
    }
}

/// When to end a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Stop after this many ball-piston collisions.
    BpEvents(u64),
    /// Stop after this many events of any kind.
    Events(u64),
    /// Stop before the first event that would occur after this time.
    Time(f64),
}

/// Boundary data for one parameter set at the working precision.
#[derive(Debug, Clone)]
pub struct Table<T = f64> {
    params: GeometryParams,
    rho: T,
    rho2: T,
    slot_min: T,
    slot_max: T,
    half_eta: T,
    corners: [(T, T); 4],
    zero: T,
    nudge: T,
    time_tol: T,
    face_slack: T,
    surface_tol: T,
}

impl<T: Real> Table<T> {
    pub fn new(params: &GeometryParams) -> Self {
        let l = T::lift;
        let rho = l(params.rho());
        let delta = l(params.delta());
        let lambda = (l(4.0) * rho.clone() * rho.clone() - l(1.0)).sqrt();
        // 1 - 2 sqrt(rho^2 - (lambda/2 + delta)^2) = x / (1 + sqrt(1 - x))
        let x = l(4.0) * delta.clone() * (lambda.clone() + delta.clone());
        let eta = x.clone() / (l(1.0) + (l(1.0) - x).sqrt());
        Self {
            params: *params,
            rho2: rho.clone() * rho.clone(),
            rho,
            slot_min: l(0.5) * (l(1.0) - lambda.clone()) - delta.clone(),
            slot_max: l(0.5) * (l(1.0) + lambda) + delta,
            half_eta: l(0.5) * eta,
            corners: CORNERS.map(|(a, b)| (l(a), l(b))),
            zero: l(0.0),
            nudge: l(NUDGE),
            time_tol: l(EVENT_TIME_TOL),
            face_slack: l(FACE_SLACK),
            surface_tol: l(SURFACE_TOL),
        }
    }

    pub fn params(&self) -> &GeometryParams {
        &self.params
    }

    /// Smallest positive root of `|p + t u - c|^2 = rho^2` for a ball
    /// approaching the disc from outside.
    #[inline]
    fn arc_time(&self, s: &FlowState<T>, corner: &(T, T)) -> Option<T> {
        let dx = s.q.q1.clone() - corner.0.clone();
        let dy = s.q.q2.clone() - corner.1.clone();
        let b = dx.clone() * s.v.v1.clone() + dy.clone() * s.v.v2.clone();
        if b >= self.zero {
            return None;
        }
        let a = s.v.v1.clone() * s.v.v1.clone() + s.v.v2.clone() * s.v.v2.clone();
        let c = dx.clone() * dx + dy.clone() * dy - self.rho2.clone();
        let disc = b.clone() * b.clone() - a * c.clone();
        if disc < self.zero {
            return None;
        }
        // citardauq form of the smaller root (-b - sqrt(disc)) / a
        Some((c / (disc.sqrt() - b)).max0())
    }

    #[inline]
    fn face_time(&self, s: &FlowState<T>) -> Option<T> {
        let closing = s.v.v1.clone() - s.v.v3.clone();
        if closing <= self.zero {
            return None;
        }
        let t = ((s.q.q3.clone() - s.q.q1.clone()) / closing).max0();
        let q2 = s.q.q2.clone() + t.clone() * s.v.v2.clone();
        let q3 = s.q.q3.clone() + t.clone() * s.v.v3.clone();
        let slack = &self.face_slack;
        if q2.abs() <= self.half_eta.clone() + slack.clone()
            && q3 >= self.slot_min.clone() - slack.clone()
            && q3 <= self.slot_max.clone() + slack.clone()
        {
            Some(t)
        } else {
            None
        }
    }

    #[inline]
    fn piston_wall_time(&self, s: &FlowState<T>) -> Option<(T, PistonEnd)> {
        if s.v.v3 > self.zero {
            let t = (self.slot_max.clone() - s.q.q3.clone()) / s.v.v3.clone();
            Some((t.max0(), PistonEnd::Right))
        } else if s.v.v3 < self.zero {
            let t = (self.slot_min.clone() - s.q.q3.clone()) / s.v.v3.clone();
            Some((t.max0(), PistonEnd::Left))
        } else {
            None
        }
    }

    /// Earliest boundary hit from `s`.
    pub fn next_event(&self, s: &FlowState<T>) -> Result<(T, EventKind)> {
        let mut best: Option<(T, EventKind)> = None;
        let mut second: Option<(T, EventKind)> = None;
        let mut offer = |t: T, kind: EventKind| {
            let beats_best = match &best {
                Some((tb, _)) => t < *tb,
                None => true,
            };
            if beats_best {
                second = best.take();
                best = Some((t, kind));
            } else if second.as_ref().map_or(true, |(ts, _)| t < *ts) {
                second = Some((t, kind));
            }
        };
        for (i, corner) in self.corners.iter().enumerate() {
            if let Some(t) = self.arc_time(s, corner) {
                offer(t, EventKind::BallWall(i as u8));
            }
        }
        if let Some(t) = self.face_time(s) {
            offer(t, EventKind::BallPiston);
        }
        if let Some((t, end)) = self.piston_wall_time(s) {
            offer(t, EventKind::PistonWall(end));
        }
        let Some((t_first, first)) = best else {
            return Err(Error::NoEvent { state: s.to_f64() });
        };
        if let Some((t_second, second)) = second {
            let scale = T::lift(1.0) + t_first.clone();
            if t_second.clone() - t_first.clone() < self.time_tol.clone() * scale {
                return Err(Error::CornerAmbiguity {
                    state: s.to_f64(),
                    first,
                    t_first: t_first.to_f64(),
                    second,
                    t_second: t_second.to_f64(),
                });
            }
        }
        Ok((t_first, first))
    }

    fn check_surface(&self, kind: EventKind, residual: T) -> Result<()> {
        if residual > self.surface_tol {
            Err(Error::NotOnSurface {
                kind,
                residual: residual.to_f64(),
            })
        } else {
            Ok(())
        }
    }

    /// Resolves a collision of kind `kind` at `s`. The position is snapped
    /// onto the surface.
    pub fn apply_event(&self, s: &FlowState<T>, kind: EventKind) -> Result<FlowState<T>> {
        let mut out = s.clone();
        match kind {
            EventKind::BallPiston => {
                self.check_surface(kind, (s.q.q1.clone() - s.q.q3.clone()).abs())?;
                out.q.q1 = s.q.q3.clone();
                out.v = Velocity::new(s.v.v3.clone(), s.v.v2.clone(), s.v.v1.clone());
            }
            EventKind::BallWall(i) => {
                let (cx, cy) = self.corners[i as usize].clone();
                let dx = s.q.q1.clone() - cx.clone();
                let dy = s.q.q2.clone() - cy.clone();
                let r = (dx.clone() * dx.clone() + dy.clone() * dy.clone()).sqrt();
                self.check_surface(kind, (r.clone() - self.rho.clone()).abs())?;
                let nx = dx / r.clone();
                let ny = dy / r;
                out.q.q1 = cx + self.rho.clone() * nx.clone();
                out.q.q2 = cy + self.rho.clone() * ny.clone();
                let (v1, v2) = (s.v.v1.clone(), s.v.v2.clone());
                let speed2 = v1.clone() * v1.clone() + v2.clone() * v2.clone();
                let un = v1.clone() * nx.clone() + v2.clone() * ny.clone();
                let two_un = T::lift(2.0) * un;
                let mut w1 = v1 - two_un.clone() * nx;
                let mut w2 = v2 - two_un * ny;
                let new2 = w1.clone() * w1.clone() + w2.clone() * w2.clone();
                if new2 > self.zero {
                    // restore the incoming speed exactly
                    let scale = (speed2 / new2).sqrt();
                    w1 = w1 * scale.clone();
                    w2 = w2 * scale;
                }
                out.v.v1 = w1;
                out.v.v2 = w2;
            }
            EventKind::PistonWall(end) => {
                let wall = match end {
                    PistonEnd::Left => self.slot_min.clone(),
                    PistonEnd::Right => self.slot_max.clone(),
                };
                self.check_surface(kind, (s.q.q3.clone() - wall.clone()).abs())?;
                out.q.q3 = wall;
                out.v.v3 = -s.v.v3.clone();
            }
        }
        Ok(out)
    }
}

/// Earliest boundary hit `(dt, kind)` from `s`.
pub fn next_event(params: &GeometryParams, s: &FlowState) -> Result<(f64, EventKind)> {
    Table::<f64>::new(params).next_event(s)
}

/// Elastic collision law for `kind` applied at `s`.
pub fn apply_event(params: &GeometryParams, s: &FlowState, kind: EventKind) -> Result<FlowState> {
    Table::<f64>::new(params).apply_event(s, kind)
}

/// Stateful trajectory integrator.
#[derive(Debug, Clone)]
pub struct Simulator<T = f64> {
    table: Table<T>,
    state: FlowState<T>,
    /// Flight time already spent since the last event (the nudge).
    carried: T,
    time: T,
    /// `|v|^2` at the start; ball-wall reflections are projected back onto
    /// it so that rounding errors do not accumulate.
    speed2: T,
    window_start: f64,
    window_events: u64,
}

impl<T: Real> Simulator<T> {
    pub fn new(params: &GeometryParams, s0: FlowState<T>) -> Self {
        let v = &s0.v;
        let speed2 = v.v1.clone() * v.v1.clone() + v.v2.clone() * v.v2.clone() + v.v3.clone() * v.v3.clone();
        Self {
            table: Table::new(params),
            state: s0,
            carried: T::lift(0.0),
            time: T::lift(0.0),
            speed2,
            window_start: 0.0,
            window_events: 0,
        }
    }

    pub fn state(&self) -> &FlowState<T> {
        &self.state
    }

    /// Elapsed flight time.
    pub fn time(&self) -> &T {
        &self.time
    }

    /// Flight time until the next event.
    pub fn peek(&self) -> Result<(T, EventKind)> {
        self.table.next_event(&self.state)
    }

    /// Advances to and resolves the next collision.
    pub fn step(&mut self) -> Result<CollisionEvent<T>> {
        let (dt, kind) = self.table.next_event(&self.state)?;
        self.resolve(dt, kind)
    }

    fn resolve(&mut self, dt: T, kind: EventKind) -> Result<CollisionEvent<T>> {
        let pre = self.state.advanced(dt.clone());
        let mut post = self.table.apply_event(&pre, kind)?;
        if let EventKind::BallWall(_) = kind {
            let v = &mut post.v;
            let ball2 = v.v1.clone() * v.v1.clone() + v.v2.clone() * v.v2.clone();
            let target = self.speed2.clone() - v.v3.clone() * v.v3.clone();
            if ball2 > T::lift(0.0) && target > T::lift(0.0) {
                let scale = (target / ball2).sqrt();
                v.v1 = v.v1.clone() * scale.clone();
                v.v2 = v.v2.clone() * scale;
            }
        }
        let event = CollisionEvent {
            time: self.carried.clone() + dt.clone(),
            kind,
            state_pre: pre,
            state_post: post.clone(),
        };
        let nudge = self.table.nudge.clone();
        self.state = post.advanced(nudge.clone());
        self.time = self.time.clone() + dt + nudge.clone();
        self.carried = nudge;

        self.window_events += 1;
        if self.window_events >= RATE_CAP_EVENTS {
            let now = self.time.to_f64();
            let window = now - self.window_start;
            if window < RATE_CAP_WINDOW {
                return Err(Error::EventRateCap {
                    events: self.window_events,
                    window,
                    state: post.to_f64(),
                });
            }
            self.window_start = now;
            self.window_events = 0;
        }
        Ok(event)
    }

    /// Resolves every event up to `target` and then flies freely to it.
    /// `on_event` sees each event as it happens.
    pub fn advance_to<F: FnMut(&CollisionEvent<T>)>(&mut self, target: &T, mut on_event: F) -> Result<()> {
        loop {
            let (dt, kind) = self.table.next_event(&self.state)?;
            if self.time.clone() + dt.clone() > *target {
                let rest = (target.clone() - self.time.clone()).max0();
                self.carried = self.carried.clone() + rest.clone();
                self.state = self.state.advanced(rest);
                self.time = target.clone();
                return Ok(());
            }
            let e = self.resolve(dt, kind)?;
            on_event(&e);
        }
    }

    /// Steps until the next ball-piston collision, giving up after
    /// `max_events` events. The returned event's time is the full time
    /// since the call.
    pub fn run_to_bp(&mut self, max_events: u64) -> Result<(CollisionEvent<T>, u64)> {
        let mut n = 0;
        let mut elapsed = T::lift(0.0);
        loop {
            let mut e = self.step()?;
            n += 1;
            elapsed = elapsed + e.time.clone();
            if e.kind == EventKind::BallPiston {
                e.time = elapsed;
                return Ok((e, n));
            }
            if n >= max_events {
                return Err(Error::TrajectoryTimeout { max_events });
            }
        }
    }
}

/// Runs the flow from `s0` and records every collision.
pub fn simulate(params: &GeometryParams, s0: FlowState, stop: StopRule) -> Result<CollisionLog> {
    let mut log = CollisionLog::default();
    simulate_with(params, s0, stop, |e| log.push(*e))?;
    Ok(log)
}

/// Streaming variant of [`simulate`] that hands each event to `sink`
/// instead of storing it. Returns the simulator positioned after the last
/// event.
pub fn simulate_with<T: Real, F: FnMut(&CollisionEvent<T>)>(
    params: &GeometryParams,
    s0: FlowState<T>,
    stop: StopRule,
    mut sink: F,
) -> Result<Simulator<T>> {
    let mut sim = Simulator::new(params, s0);
    match stop {
        StopRule::Events(n) => {
            for _ in 0..n {
                let e = sim.step()?;
                sink(&e);
            }
        }
        StopRule::BpEvents(n) => {
            let mut bp = 0;
            while bp < n {
                let e = sim.step()?;
                if e.kind == EventKind::BallPiston {
                    bp += 1;
                }
                sink(&e);
            }
        }
        StopRule::Time(t_max) => {
            let t_max = T::lift(t_max);
            loop {
                let (dt, kind) = sim.peek()?;
                if sim.time().clone() + dt.clone() > t_max {
                    break;
                }
                let e = sim.resolve(dt, kind)?;
                sink(&e);
            }
        }
    }
    Ok(sim)
}

/// Checks that `s` is a valid phase point: inside the configuration space
/// and at unit speed.
pub fn is_valid_state(params: &GeometryParams, s: &FlowState) -> bool {
    contains(params, &s.q) && (s.v.norm_squared() - 1.0).abs() < 1e-12
}

pub mod oracle {
    //! Brute-force time stepping with bisection on constraint sign changes.
    //! Used to cross-check exact event finding. A step of length `dt` can
    //! miss a boundary that is entered and left again within the step
    //! (grazing incidence), so results are only meaningful for small `dt`.

    use super::*;

    fn constraints(p: &GeometryParams, q: &Position) -> [f64; 7] {
        let r2 = p.rho() * p.rho();
        let arc = |i: usize| {
            let (cx, cy) = CORNERS[i];
            (q.q1 - cx).powi(2) + (q.q2 - cy).powi(2) - r2
        };
        [
            q.q3 - q.q1,
            arc(0),
            arc(1),
            arc(2),
            arc(3),
            q.q3 - p.slot_min(),
            p.slot_max() - q.q3,
        ]
    }

    fn reflect(p: &GeometryParams, s: &FlowState, which: usize) -> FlowState {
        let mut out = *s;
        match which {
            0 => {
                let n = [-std::f64::consts::FRAC_1_SQRT_2, 0.0, std::f64::consts::FRAC_1_SQRT_2];
                let vn = s.v.v1 * n[0] + s.v.v3 * n[2];
                out.v.v1 -= 2.0 * vn * n[0];
                out.v.v3 -= 2.0 * vn * n[2];
            }
            1..=4 => {
                let (cx, cy) = CORNERS[which - 1];
                let (dx, dy) = (s.q.q1 - cx, s.q.q2 - cy);
                let r = dx.hypot(dy);
                let (nx, ny) = (dx / r, dy / r);
                let vn = s.v.v1 * nx + s.v.v2 * ny;
                out.v.v1 -= 2.0 * vn * nx;
                out.v.v2 -= 2.0 * vn * ny;
            }
            _ => out.v.v3 = -s.v.v3,
        }
        let _ = p;
        out
    }

    /// Advances `s` by total time `duration` in fixed steps of `dt`.
    pub fn oracle_advance(p: &GeometryParams, s: &FlowState, duration: f64, dt: f64) -> FlowState {
        let mut state = *s;
        let mut remaining = duration;
        while remaining > 0.0 {
            let h = dt.min(remaining);
            let trial = state.advanced(h);
            let g_end = constraints(p, &trial.q);
            if g_end.iter().all(|&g| g >= 0.0) {
                state = trial;
                remaining -= h;
                continue;
            }
            // Earliest crossing among the violated constraints.
            let mut t_hit = h;
            let mut which = 0;
            for (k, &g) in g_end.iter().enumerate() {
                if g >= 0.0 {
                    continue;
                }
                let (mut lo, mut hi) = (0.0, h);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if constraints(p, &state.advanced(mid).q)[k] >= 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                if lo < t_hit {
                    t_hit = lo;
                    which = k;
                }
            }
            state = reflect(p, &state.advanced(t_hit), which);
            remaining -= t_hit;
        }
        state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::reference_rho;

    fn params(delta: f64) -> GeometryParams {
        GeometryParams::new(reference_rho(), delta).unwrap()
    }

    fn state(q: [f64; 3], v: [f64; 3]) -> FlowState {
        FlowState::new(Position::new(q[0], q[1], q[2]), Velocity::new(v[0], v[1], v[2]))
    }

    #[test]
    fn straight_shot_hits_piston() {
        let p = params(0.05);
        let s = state([0.0, 0.0, 0.3], [1.0, 0.0, 0.0]);
        let (dt, kind) = next_event(&p, &s).unwrap();
        assert_eq!(kind, EventKind::BallPiston);
        assert!((dt - 0.3).abs() < 1e-15);
        // the straight path along q2 = 0 stays clear of every disc until the pinch
        let pinch_time = p.pinch();
        assert!(pinch_time > 0.3);
    }

    #[test]
    fn pure_piston_motion() {
        let p = params(0.1);
        let q3 = 0.4;
        let s = state([0.0, 0.0, q3], [0.0, 0.0, 1.0]);
        let (dt, kind) = next_event(&p, &s).unwrap();
        assert_eq!(kind, EventKind::PistonWall(PistonEnd::Right));
        let expected = 0.5 * (1.0 + p.lambda()) + 0.1 - q3;
        assert!((dt - expected).abs() < 1e-15);
    }

    #[test]
    fn radial_hit_reverses_ball_velocity() {
        let p = params(0.1);
        // toward the lower-left disc along the diagonal
        let u = -std::f64::consts::FRAC_1_SQRT_2;
        let s = state([0.0, 0.0, 0.5], [u, u, 0.0]);
        let (dt, kind) = next_event(&p, &s).unwrap();
        assert_eq!(kind, EventKind::BallWall(2));
        let expected = std::f64::consts::SQRT_2 * 0.5 - p.rho();
        assert!((dt - expected).abs() < 1e-14);
        let post = apply_event(&p, &s.advanced(dt), kind).unwrap();
        assert!((post.v.v1 + u).abs() < 1e-14 && (post.v.v2 + u).abs() < 1e-14);
        assert_eq!(post.v.v3, 0.0);
    }

    #[test]
    fn collision_laws() {
        let p = params(0.1);
        let q3 = 0.3;
        let s = state([q3, 0.0, q3], [0.8, 0.6, 0.0]);
        let post = apply_event(&p, &s, EventKind::BallPiston).unwrap();
        assert_eq!(post.v, Velocity::new(0.0, 0.6, 0.8));

        let s = state([0.0, 0.0, p.slot_max()], [0.6, 0.0, 0.8]);
        let post = apply_event(&p, &s, EventKind::PistonWall(PistonEnd::Right)).unwrap();
        assert_eq!(post.v, Velocity::new(0.6, 0.0, -0.8));
    }

    #[test]
    fn off_surface_is_rejected() {
        let p = params(0.1);
        let s = state([0.0, 0.0, 0.5], [1.0, 0.0, 0.0]);
        assert!(matches!(
            apply_event(&p, &s, EventKind::BallPiston),
            Err(Error::NotOnSurface { .. })
        ));
        assert!(apply_event(&p, &s, EventKind::BallWall(0)).is_err());
        assert!(apply_event(&p, &s, EventKind::PistonWall(PistonEnd::Left)).is_err());
    }

    #[test]
    fn grazing_piston_contact_is_not_a_collision() {
        let p = params(0.1);
        let s = state([0.3, 0.0, 0.3], [0.6, 0.52915026221291817, 0.6]);
        let (_, kind) = next_event(&p, &s).unwrap();
        assert_ne!(kind, EventKind::BallPiston);
    }

    #[test]
    fn decoupled_piston_bounces_forever() {
        let p = params(0.1);
        let s0 = state([0.0, 0.0, 0.5], [0.0, 0.0, 1.0]);
        let log = simulate(&p, s0, StopRule::Events(50)).unwrap();
        assert!(log.events.iter().all(|e| e.kind.class() == EventClass::PistonWall));
        let period = 2.0 * (p.lambda() + 0.2);
        for w in log.events[1..].windows(2) {
            assert!((w[0].time + w[1].time - period).abs() < 1e-12);
        }
    }

    #[test]
    fn stationary_ball_and_piston_has_no_event() {
        let p = params(0.1);
        let s = state([0.0, 0.0, 0.5], [0.0, 0.0, 0.0]);
        assert!(matches!(next_event(&p, &s), Err(Error::NoEvent { .. })));
    }

    #[test]
    fn log_csv_header() {
        let p = params(0.1);
        let s0 = state([0.0, 0.0, 0.5], [0.48, 0.36, 0.8]);
        let log = simulate(&p, s0, StopRule::Events(3)).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "event_index,kind,flight_time,q1,q2,q3,v1,v2,v3,cumulative_time"
        );
        assert_eq!(lines.count(), 3);
    }
}
