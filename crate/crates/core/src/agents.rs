//! Discrete-time agent engine: runs, tumbles, finite-speed turns, wall
//! reflections and hard-sphere contacts.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exit_time::SignalField;
use crate::kinematics::{delay_kernel, sample_heading};
use crate::num::{wrap_angle, Real};
use crate::params::{Arena, Omega, PhysicalParams, SignalGain, TargetEdge};
use crate::rng::{replicate_rng, SimRng};
use crate::stats::Sample2D;
use crate::vec2::Vec2;

/// Turn probability per step must stay below this.
pub const MAX_TURN_PROBABILITY: f64 = 0.1;
/// Default pen warmup before release, in s.
pub const DEFAULT_WARMUP: f64 = 20.0;
const MAX_COLLISION_SWEEPS: usize = 100;
const PACKING_RESTARTS: usize = 50;
const PACKING_TRIES_PER_AGENT: usize = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Collisions {
    Point,
    HardSphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Turning {
    Instant,
    FiniteOmega,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalMode {
    None,
    /// `λ = λ₀ − γ v·∇S`.
    GradientApprox,
    /// Adaptive internal variable `z` driving `λ = λ₀ + λ₀(1 − α(S − z))`.
    InternalVariable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimMode {
    pub collisions: Collisions,
    pub turning: Turning,
    pub signal: SignalMode,
}

impl SimMode {
    pub fn new(collisions: Collisions, turning: Turning, signal: SignalMode) -> Self {
        Self {
            collisions,
            turning,
            signal,
        }
    }

    pub fn point(turning: Turning) -> Self {
        Self::new(Collisions::Point, turning, SignalMode::None)
    }

    pub fn validate<T: Real>(&self, params: &PhysicalParams<T>, signal: Option<&SignalField<T>>) -> Result<()> {
        if self.turning == Turning::FiniteOmega && params.omega.is_infinite() {
            return Err(Error::InvalidParameter(
                "finite-omega turning needs a finite angular speed".into(),
            ));
        }
        if self.signal != SignalMode::None {
            if params.signal.is_none() {
                return Err(Error::InvalidParameter("signal modes need alpha and t_a".into()));
            }
            if signal.is_none() {
                return Err(Error::InvalidParameter("signal modes need a signal field".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phase<T> {
    Running,
    /// Rotating in place toward `heading`; `remaining` in s.
    Turning {
        remaining: T,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState<T> {
    pub pos: Vec2<T>,
    /// Current heading, or the target heading while turning.
    pub heading: T,
    pub phase: Phase<T>,
    pub z: T,
    pub exited_at: Option<T>,
}

impl<T: Real> AgentState<T> {
    pub fn running(pos: Vec2<T>, heading: T) -> Self {
        Self {
            pos,
            heading,
            phase: Phase::Running,
            z: T::zero(),
            exited_at: None,
        }
    }

    pub fn velocity(&self, speed: T) -> Vec2<T> {
        Vec2::from_angle(self.heading, speed)
    }

    pub fn is_running(&self) -> bool {
        matches!(self.phase, Phase::Running)
    }

    pub fn is_active(&self) -> bool {
        self.exited_at.is_none()
    }
}

/// Exit log of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord<T> {
    /// Master seed of the experiment.
    pub seed: u64,
    /// Replicate index; also the RNG stream.
    pub run_index: u64,
    /// `(agent_id, exit time in s)`, ascending in time.
    pub exit_times: Vec<(usize, T)>,
    pub censored: usize,
    pub config_digest: String,
}

impl<T> RunRecord<T> {
    pub fn agent_count(&self) -> usize {
        self.exit_times.len() + self.censored
    }
}

/// Counters accumulated by [`Stepper::step`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats<T> {
    /// Steps an agent spent fully running (each one a tumble draw at `λ·dt`).
    pub full_run_steps: u64,
    /// Tumbles drawn during fully running steps.
    pub full_run_tumbles: u64,
    pub tumbles: u64,
    /// Sum of assigned free-space turn durations.
    pub tumble_delay: T,
    pub wall_hits: u64,
    pub turning_time: T,
    pub running_time: T,
}

impl<T: Real> StepStats<T> {
    pub fn merge(&mut self, o: &Self) {
        self.full_run_steps += o.full_run_steps;
        self.full_run_tumbles += o.full_run_tumbles;
        self.tumbles += o.tumbles;
        self.tumble_delay += o.tumble_delay;
        self.wall_hits += o.wall_hits;
        self.turning_time += o.turning_time;
        self.running_time += o.running_time;
    }

    pub fn mean_tumble_delay(&self) -> Option<T> {
        (self.tumbles > 0).then(|| self.tumble_delay / T::from_usize_lossy(self.tumbles as usize))
    }
}

/// Axis-aligned box the agent centres live in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds<T> {
    pub x_min: T,
    pub x_max: T,
    pub y_min: T,
    pub y_max: T,
    /// Agents crossing `x_max` leave the system.
    pub open_right: bool,
}

impl<T: Real> Bounds<T> {
    pub fn arena(a: &Arena<T>) -> Self {
        Self {
            x_min: T::zero(),
            x_max: a.lx,
            y_min: a.y_min(),
            y_max: a.y_max(),
            open_right: a.target == TargetEdge::Open,
        }
    }

    pub fn pen(a: &Arena<T>) -> Self {
        Self {
            x_min: a.pen_x.lo,
            x_max: a.pen_x.hi,
            y_min: a.pen_y.lo,
            y_max: a.pen_y.hi,
            open_right: false,
        }
    }

    pub fn contains(&self, p: Vec2<T>) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    fn clamp(&self, p: Vec2<T>) -> Vec2<T> {
        Vec2::new(p.x.max(self.x_min).min(self.x_max), p.y.max(self.y_min).min(self.y_max))
    }
}

/// Explicit Euler update of the internal variable followed by the adaptive
/// turning frequency, clamped at zero. Returns `(z', λ)`.
pub fn signal_controller<T: Real>(z: T, s_here: T, dt: T, lambda0: T, gain: SignalGain<T>) -> (T, T) {
    let z1 = z + dt * (s_here - z) / gain.t_a;
    let lam = lambda0 + lambda0 * (T::one() - gain.alpha * (s_here - z1));
    (z1, lam.max(T::zero()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

/// One time step of the agent dynamics inside fixed bounds.
#[derive(Debug, Clone, Copy)]
pub struct Stepper<'a, T> {
    pub mode: SimMode,
    pub params: &'a PhysicalParams<T>,
    pub bounds: Bounds<T>,
    pub signal: Option<&'a SignalField<T>>,
}

impl<'a, T: Real> Stepper<'a, T> {
    pub fn new(
        mode: SimMode,
        params: &'a PhysicalParams<T>,
        bounds: Bounds<T>,
        signal: Option<&'a SignalField<T>>,
    ) -> Self {
        Self {
            mode,
            params,
            bounds,
            signal,
        }
    }

    fn omega(&self) -> Omega<T> {
        match self.mode.turning {
            Turning::Instant => Omega::Infinite,
            Turning::FiniteOmega => self.params.omega,
        }
    }

    /// Advances every active agent by `dt`; `clock` is the time at the start
    /// of the step and stamps exits.
    pub fn step<R: Rng + ?Sized>(
        &self,
        agents: &mut [AgentState<T>],
        clock: T,
        dt: T,
        rng: &mut R,
        stats: &mut StepStats<T>,
    ) -> Result<()> {
        let p = self.params;
        let omega = self.omega();
        for a in agents.iter_mut().filter(|a| a.is_active()) {
            let lambda = self.rate(a, dt)?;
            if lambda * dt > T::lit(MAX_TURN_PROBABILITY) {
                return Err(Error::Cfl(format!(
                    "turn probability lambda*dt = {} exceeds {MAX_TURN_PROBABILITY}",
                    lambda * dt
                )));
            }

            let mut left = dt;
            let mut ran = T::zero();
            let mut guard = 0;
            while left > T::zero() && a.is_active() && guard < 64 {
                guard += 1;
                match a.phase {
                    Phase::Turning { remaining } => {
                        if remaining > left {
                            a.phase = Phase::Turning {
                                remaining: remaining - left,
                            };
                            stats.turning_time += left;
                            left = T::zero();
                        } else {
                            stats.turning_time += remaining;
                            left -= remaining;
                            a.phase = Phase::Running;
                        }
                    }
                    Phase::Running => {
                        let used = self.advance(a, left, clock + dt - left, omega, stats);
                        ran += used;
                        left -= used;
                    }
                }
            }
            stats.running_time += ran;

            if !a.is_active() || !a.is_running() {
                continue;
            }
            let r2: f64 = rng.gen();
            let full = ran == dt;
            if full {
                stats.full_run_steps += 1;
            }
            if T::lit(r2) < lambda * ran {
                if full {
                    stats.full_run_tumbles += 1;
                }
                let old = a.heading;
                let new: T = sample_heading(rng);
                a.heading = new;
                stats.tumbles += 1;
                let eta = delay_kernel(old, new, omega);
                stats.tumble_delay += eta;
                if eta > T::zero() {
                    a.phase = Phase::Turning { remaining: eta };
                }
            }
        }
        if self.mode.collisions == Collisions::HardSphere {
            collide_hard_spheres(agents, p.diameter, p.speed, Some(&self.bounds));
        }
        Ok(())
    }

    /// Turning frequency for this step; also advances `z`.
    fn rate(&self, a: &mut AgentState<T>, dt: T) -> Result<T> {
        let p = self.params;
        let (Some(field), Some(gain)) = (self.signal, p.signal) else {
            return Ok(p.lambda0);
        };
        match self.mode.signal {
            SignalMode::None => Ok(p.lambda0),
            SignalMode::GradientApprox => {
                let g = p.gamma().unwrap_or(T::zero());
                let lam = p.lambda0 - g * p.speed * a.heading.cos() * field.slope;
                if lam < T::zero() {
                    return Err(Error::NonPositiveRate {
                        rate: lam.to_f64_lossy(),
                        x: a.pos.x.to_f64_lossy(),
                        theta: a.heading.to_f64_lossy(),
                    });
                }
                Ok(lam)
            }
            SignalMode::InternalVariable => {
                let (z, lam) = signal_controller(a.z, field.value(a.pos.x), dt, p.lambda0, gain);
                a.z = z;
                Ok(lam)
            }
        }
    }

    /// Runs for up to `budget` seconds; returns the time actually spent running.
    fn advance(&self, a: &mut AgentState<T>, budget: T, t_start: T, omega: Omega<T>, stats: &mut StepStats<T>) -> T {
        let b = &self.bounds;
        let mut used = T::zero();
        for _ in 0..16 {
            let rest = budget - used;
            if rest <= T::zero() {
                break;
            }
            let v = a.velocity(self.params.speed);
            let Some((t_hit, side)) = first_hit(a.pos, v, rest, b) else {
                a.pos += v * rest;
                return budget;
            };
            a.pos += v * t_hit;
            used += t_hit;
            match side {
                Side::Left => a.pos.x = b.x_min,
                Side::Right => a.pos.x = b.x_max,
                Side::Bottom => a.pos.y = b.y_min,
                Side::Top => a.pos.y = b.y_max,
            }
            if side == Side::Right && b.open_right {
                a.exited_at = Some(t_start + used);
                return used;
            }
            stats.wall_hits += 1;
            let old = a.heading;
            a.heading = match side {
                Side::Left | Side::Right => wrap_angle(T::PI() - old),
                Side::Bottom | Side::Top => wrap_angle(-old),
            };
            let eta = delay_kernel(old, a.heading, omega);
            if eta > T::zero() {
                a.phase = Phase::Turning { remaining: eta };
                return used;
            }
        }
        used
    }
}

/// Earliest wall crossing within `horizon`.
fn first_hit<T: Real>(p: Vec2<T>, v: Vec2<T>, horizon: T, b: &Bounds<T>) -> Option<(T, Side)> {
    let mut best: Option<(T, Side)> = None;
    let mut consider = |t: T, s: Side| {
        let t = t.max(T::zero());
        if t <= horizon && best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, s));
        }
    };
    let end = p + v * horizon;
    if v.x > T::zero() && end.x > b.x_max {
        consider((b.x_max - p.x) / v.x, Side::Right);
    }
    if v.x < T::zero() && end.x < b.x_min {
        consider((b.x_min - p.x) / v.x, Side::Left);
    }
    if v.y > T::zero() && end.y > b.y_max {
        consider((b.y_max - p.y) / v.y, Side::Top);
    }
    if v.y < T::zero() && end.y < b.y_min {
        consider((b.y_min - p.y) / v.y, Side::Bottom);
    }
    best
}

/// Resolves every overlapping pair (centre distance below `epsilon`).
///
/// A running agent moving toward its partner has its velocity reflected about
/// the centre line; pairs are pushed apart along that line to contact
/// distance, splitting the correction evenly unless one side is turning, in
/// which case it stays put. Whatever a wall absorbs goes to the partner, so a
/// turning agent only yields to a partner pinned against a wall. Repeats until
/// no overlap remains or the sweep cap is reached. Exited agents are ignored.
pub fn collide_hard_spheres<T: Real>(agents: &mut [AgentState<T>], epsilon: T, speed: T, bounds: Option<&Bounds<T>>) {
    if !(epsilon > T::zero()) {
        return;
    }
    let eps2 = epsilon * epsilon;
    let target = epsilon * (T::one() + T::lit(4.0) * T::epsilon());
    let half = T::lit(0.5);
    for _ in 0..MAX_COLLISION_SWEEPS {
        let mut touched = false;
        for i in 0..agents.len() {
            for j in (i + 1)..agents.len() {
                let (ai, aj) = (&agents[i], &agents[j]);
                if !ai.is_active() || !aj.is_active() {
                    continue;
                }
                let d = aj.pos - ai.pos;
                let dist2 = d.dot(d);
                if dist2 >= eps2 {
                    continue;
                }
                touched = true;
                let dist = dist2.sqrt();
                let n = if dist > T::zero() {
                    d * (T::one() / dist)
                } else {
                    Vec2::new(T::one(), T::zero())
                };
                let (run_i, run_j) = (ai.is_running(), aj.is_running());
                for (idx, sign, runs) in [(i, T::one(), run_i), (j, -T::one(), run_j)] {
                    if !runs {
                        continue;
                    }
                    let a = &mut agents[idx];
                    let v = a.velocity(speed);
                    let toward = n * sign;
                    if v.dot(toward) > T::zero() {
                        let r = v - toward * (T::lit(2.0) * v.dot(toward));
                        a.heading = r.angle();
                    }
                }
                let gap = target - dist;
                let (si, sj) = match (run_i, run_j) {
                    (true, false) => (gap, T::zero()),
                    (false, true) => (T::zero(), gap),
                    _ => (gap * half, gap * half),
                };
                let clamp = |p: Vec2<T>| bounds.map_or(p, |b| b.clamp(p));
                let mut pi = clamp(agents[i].pos - n * si);
                let mut pj = clamp(agents[j].pos + n * sj);
                // a wall may absorb part of one share; the partner takes the rest
                let short = target - (pj - pi).dot(n);
                if short > T::zero() && sj > T::zero() {
                    pj = clamp(pj + n * short);
                }
                let short = target - (pj - pi).dot(n);
                if short > T::zero() && si > T::zero() {
                    pi = clamp(pi - n * short);
                }
                // pinned against a wall: a turning partner has to yield after all
                let short = target - (pj - pi).dot(n);
                if short > T::zero() {
                    pj = clamp(pj + n * short);
                    let short = target - (pj - pi).dot(n);
                    if short > T::zero() {
                        pi = clamp(pi - n * short);
                    }
                }
                agents[i].pos = pi;
                agents[j].pos = pj;
            }
        }
        if !touched {
            break;
        }
    }
}

/// Random sequential placement of non-overlapping agents in the pen followed
/// by `warmup` seconds of hard-sphere motion inside the closed pen.
#[allow(clippy::too_many_arguments)]
pub fn init_pen<T: Real, R: Rng + ?Sized>(
    arena: &Arena<T>,
    params: &PhysicalParams<T>,
    n_agents: usize,
    warmup: T,
    dt: T,
    turning: Turning,
    rng: &mut R,
) -> Result<Vec<AgentState<T>>> {
    let eps = params.diameter;
    let disk = T::PI() * eps * eps / T::lit(4.0);
    if T::from_usize_lossy(n_agents) * disk >= arena.pen_area() {
        return Err(Error::Packing {
            requested: n_agents,
            attempts: 0,
        });
    }
    let pen = Bounds::pen(arena);
    let mut attempts = 0;
    let mut placed: Vec<Vec2<T>> = Vec::with_capacity(n_agents);
    'restart: for _ in 0..PACKING_RESTARTS {
        placed.clear();
        while placed.len() < n_agents {
            let mut ok = false;
            for _ in 0..PACKING_TRIES_PER_AGENT {
                attempts += 1;
                let (rx, ry): (f64, f64) = (rng.gen(), rng.gen());
                let c = Vec2::new(
                    pen.x_min + (pen.x_max - pen.x_min) * T::lit(rx),
                    pen.y_min + (pen.y_max - pen.y_min) * T::lit(ry),
                );
                if placed.iter().all(|q| {
                    let d = *q - c;
                    d.dot(d) >= eps * eps
                }) {
                    placed.push(c);
                    ok = true;
                    break;
                }
            }
            if !ok {
                continue 'restart;
            }
        }
        break;
    }
    if placed.len() < n_agents {
        return Err(Error::Packing {
            requested: n_agents,
            attempts,
        });
    }
    let mut agents: Vec<AgentState<T>> = placed
        .into_iter()
        .map(|pos| AgentState::running(pos, sample_heading(rng)))
        .collect();
    let mode = SimMode::new(Collisions::HardSphere, turning, SignalMode::None);
    let stepper = Stepper::new(mode, params, pen, None);
    let steps = (warmup / dt).round().to_usize().unwrap_or(0);
    let mut stats = StepStats::default();
    for n in 0..steps {
        stepper.step(&mut agents, T::from_usize_lossy(n) * dt, dt, rng, &mut stats)?;
    }
    Ok(agents)
}

/// Everything a replicate needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig<T> {
    pub params: PhysicalParams<T>,
    pub arena: Arena<T>,
    pub mode: SimMode,
    pub signal: Option<SignalField<T>>,
    pub n_agents: usize,
    pub dt: T,
    pub t_end: T,
    pub warmup: T,
    /// Copied into every [`RunRecord`].
    pub config_digest: String,
}

impl<T: Real> ExperimentConfig<T> {
    /// Sixteen robots, 20 s warmup, 300 s horizon.
    pub fn new(params: PhysicalParams<T>, arena: Arena<T>, mode: SimMode, dt: T) -> Self {
        Self {
            params,
            arena,
            mode,
            signal: None,
            n_agents: 16,
            dt,
            t_end: T::lit(300.0),
            warmup: T::lit(DEFAULT_WARMUP),
            config_digest: String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.arena.validate()?;
        self.mode.validate(&self.params, self.signal.as_ref())?;
        if let Some(s) = &self.signal {
            s.validate(self.arena.lx)?;
        }
        if !(self.dt > T::zero()) || !(self.t_end >= T::zero()) || !(self.warmup >= T::zero()) {
            return Err(Error::InvalidParameter("dt must be > 0; t_end and warmup >= 0".into()));
        }
        if self.params.lambda0 * self.dt > T::lit(MAX_TURN_PROBABILITY) {
            return Err(Error::Cfl(format!(
                "lambda0*dt = {} exceeds {MAX_TURN_PROBABILITY}",
                self.params.lambda0 * self.dt
            )));
        }
        Ok(())
    }

    fn steps(&self, horizon: T) -> usize {
        (horizon / self.dt - T::lit(1e-9)).ceil().to_usize().unwrap_or(0)
    }

    fn released(&self, rng: &mut SimRng) -> Result<Vec<AgentState<T>>> {
        let mut agents = init_pen(
            &self.arena,
            &self.params,
            self.n_agents,
            self.warmup,
            self.dt,
            self.mode.turning,
            rng,
        )?;
        if let Some(s) = &self.signal {
            for a in &mut agents {
                a.z = s.value(a.pos.x);
            }
        }
        Ok(agents)
    }

    fn stepper(&self) -> Stepper<'_, T> {
        Stepper::new(
            self.mode,
            &self.params,
            Bounds::arena(&self.arena),
            self.signal.as_ref(),
        )
    }
}

/// One replicate: pen release, then steps until `t_end` or no agent left.
pub fn run_replicate<T: Real>(
    cfg: &ExperimentConfig<T>,
    seed: u64,
    index: u64,
) -> Result<(RunRecord<T>, StepStats<T>)> {
    cfg.validate()?;
    let mut rng = replicate_rng(seed, index);
    let mut agents = cfg.released(&mut rng)?;
    let stepper = cfg.stepper();
    let mut stats = StepStats::default();
    for n in 0..cfg.steps(cfg.t_end) {
        if agents.iter().all(|a| !a.is_active()) {
            break;
        }
        stepper.step(
            &mut agents,
            T::from_usize_lossy(n) * cfg.dt,
            cfg.dt,
            &mut rng,
            &mut stats,
        )?;
    }
    let mut exit_times: Vec<(usize, T)> = agents
        .iter()
        .enumerate()
        .filter_map(|(i, a)| a.exited_at.filter(|&t| t <= cfg.t_end).map(|t| (i, t)))
        .collect();
    exit_times.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite exit times").then(a.0.cmp(&b.0)));
    let censored = agents.len() - exit_times.len();
    Ok((
        RunRecord {
            seed,
            run_index: index,
            exit_times,
            censored,
            config_digest: cfg.config_digest.clone(),
        },
        stats,
    ))
}

/// Independent replicates in parallel; replicate `i` uses RNG stream `i` of `seed`.
pub fn run_exit_experiment<T: Real>(cfg: &ExperimentConfig<T>, n_runs: usize, seed: u64) -> Result<Vec<RunRecord<T>>> {
    cfg.validate()?;
    (0..n_runs as u64)
        .into_par_iter()
        .map(|i| run_replicate(cfg, seed, i).map(|r| r.0))
        .collect()
}

/// Positions of every agent at time `t` after release, pooled over replicates.
pub fn snapshot_positions<T: Real>(cfg: &ExperimentConfig<T>, n_runs: usize, seed: u64, t: T) -> Result<Sample2D<T>> {
    cfg.validate()?;
    let per_run: Vec<Vec<(T, T)>> = (0..n_runs as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i);
            let mut agents = cfg.released(&mut rng)?;
            let stepper = cfg.stepper();
            let mut stats = StepStats::default();
            for n in 0..cfg.steps(t) {
                stepper.step(
                    &mut agents,
                    T::from_usize_lossy(n) * cfg.dt,
                    cfg.dt,
                    &mut rng,
                    &mut stats,
                )?;
            }
            Ok(agents
                .iter()
                .filter(|a| a.is_active())
                .map(|a| (a.pos.x, a.pos.y))
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(Sample2D::new(per_run.into_iter().flatten().collect()))
}
