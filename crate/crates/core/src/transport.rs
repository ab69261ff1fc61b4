//! Forward finite-volume solvers on the effective arena.
//!
//! The running density `p(t, x, y, θ)` is advanced with an explicit, unsplit
//! first-order upwind scheme per discrete heading. The resting (mid-turn)
//! population lives in a ring of time slots: mass leaving the run phase with
//! delay `K` is parked `K/Δt` steps ahead and added back to `p` when its slot
//! comes up. Because `Δη = Δθ/ω` and `Δt` divides `Δη`, every delay on the
//! angular grid is a whole number of steps and the η-advection is an exact
//! shift.
//!
//! Walls: the upwind outflow through a reflective face is re-injected in the
//! same boundary cell at the specular heading, immediately for instant
//! turning, after `K(v, v')` when delays are active. The target face absorbs.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exit_time::SignalField;
use crate::kinematics::AngleGrid;
use crate::num::{compensated_sum, Real};
use crate::params::{Arena, NumericalParams, PhysicalParams, TargetEdge};

/// Cell geometry of the `(x, y, θ)` grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellLayout<T> {
    pub nx: usize,
    pub ny: usize,
    pub dx: T,
    pub dy: T,
    /// Lower y edge (−L_y/2).
    pub y0: T,
    pub angles: AngleGrid,
}

impl<T: Real> CellLayout<T> {
    /// `nx = round(L_x/Δx)`, `ny = round(L_y/Δx)`, cells resized to fit exactly.
    pub fn new(arena: &Arena<T>, dx: T, n_theta: usize) -> Self {
        let nx = (arena.lx / dx).round().to_usize().unwrap_or(1).max(1);
        let ny = (arena.ly / dx).round().to_usize().unwrap_or(1).max(1);
        Self {
            nx,
            ny,
            dx: arena.lx / T::from_usize_lossy(nx),
            dy: arena.ly / T::from_usize_lossy(ny),
            y0: arena.y_min(),
            angles: AngleGrid::new(n_theta),
        }
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn len(&self) -> usize {
        self.cells() * self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, k: usize, j: usize, i: usize) -> usize {
        (k * self.ny + j) * self.nx + i
    }

    /// Phase-space volume of one cell, `Δx·Δy·Δθ`.
    pub fn volume(&self) -> T {
        self.dx * self.dy * self.angles.dtheta::<T>()
    }

    pub fn x_edge(&self, i: usize) -> T {
        T::from_usize_lossy(i) * self.dx
    }

    pub fn y_edge(&self, j: usize) -> T {
        self.y0 + T::from_usize_lossy(j) * self.dy
    }
}

/// Running-phase density `p`, units 1/(m²·rad), index `(k·ny + j)·nx + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid<T> {
    pub layout: CellLayout<T>,
    pub values: Vec<T>,
}

impl<T: Real> DensityGrid<T> {
    pub fn zeros(layout: CellLayout<T>) -> Self {
        Self {
            values: vec![T::zero(); layout.len()],
            layout,
        }
    }

    pub fn mass(&self) -> T {
        compensated_sum(self.values.iter().copied()) * self.layout.volume()
    }

    /// `∫ p dθ` per spatial cell, index `j·nx + i`, units 1/m².
    pub fn spatial_density(&self) -> Vec<T> {
        let cells = self.layout.cells();
        let dth = self.layout.angles.dtheta::<T>();
        let mut out = vec![T::zero(); cells];
        for chunk in self.values.chunks(cells) {
            for (o, v) in out.iter_mut().zip(chunk) {
                *o += *v * dth;
            }
        }
        out
    }

    /// Mass per spatial cell, summing to [`mass`](Self::mass).
    pub fn cell_masses(&self) -> Vec<T> {
        let area = self.layout.dx * self.layout.dy;
        self.spatial_density().into_iter().map(|v| v * area).collect()
    }

    /// `∫∫ p dx dy` per heading, units 1/rad.
    pub fn angular_marginal(&self) -> Vec<T> {
        let area = self.layout.dx * self.layout.dy;
        self.values
            .chunks(self.layout.cells())
            .map(|c| c.iter().copied().sum::<T>() * area)
            .collect()
    }

    /// Angle-integrated density: one row per x-cell, comma-separated y-cells.
    pub fn write_marginal_grid<W: Write>(&self, w: W) -> io::Result<()> {
        write_rows(w, &self.spatial_density(), self.layout.nx, self.layout.ny)
    }

    /// Density of heading `k`, same row layout.
    pub fn write_angle_grid<W: Write>(&self, w: W, k: usize) -> io::Result<()> {
        let c = self.layout.cells();
        write_rows(w, &self.values[k * c..(k + 1) * c], self.layout.nx, self.layout.ny)
    }
}

fn write_rows<T: Real, W: Write>(mut w: W, field: &[T], nx: usize, ny: usize) -> io::Result<()> {
    for i in 0..nx {
        let row: Vec<String> = (0..ny).map(|j| field[j * nx + i].to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Resting population `r(x, y, θ, η)` in 1/(m²·rad·s); η-cell `e` covers
/// remaining times `(e·Δη, (e+1)·Δη]`. Index `e·(n_θ·cells) + (k·ny + j)·nx + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RestingGrid<T> {
    pub layout: CellLayout<T>,
    pub d_eta: T,
    pub n_eta: usize,
    pub values: Vec<T>,
}

impl<T: Real> RestingGrid<T> {
    pub fn mass(&self) -> T {
        compensated_sum(self.values.iter().copied()) * self.layout.volume() * self.d_eta
    }
}

/// `(t, m(t))` samples, normalised so that `m(0) = 1`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MassCurve<T> {
    pub samples: Vec<(T, T)>,
}

impl<T: Real> MassCurve<T> {
    pub fn is_non_increasing(&self, slack: T) -> bool {
        self.samples.windows(2).all(|w| w[1].1 <= w[0].1 + slack)
    }

    pub fn last(&self) -> Option<(T, T)> {
        self.samples.last().copied()
    }

    /// Linear interpolation; clamps outside the sampled range.
    pub fn value_at(&self, t: T) -> Option<T> {
        let s = &self.samples;
        let first = s.first()?;
        if t <= first.0 {
            return Some(first.1);
        }
        for w in s.windows(2) {
            if t <= w[1].0 {
                let f = (t - w[0].0) / (w[1].0 - w[0].0);
                return Some(w[0].1 + f * (w[1].1 - w[0].1));
            }
        }
        s.last().map(|p| p.1)
    }

    /// Two columns `t_s,mass`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t_s,mass")?;
        for (t, m) in &self.samples {
            writeln!(w, "{t},{m}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition<T> {
    /// Uniform over the pen and all headings, unit mass.
    Pen,
    /// Uniform over the arena and all headings, unit mass.
    Uniform,
    Density(DensityGrid<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardConfig<T> {
    pub params: PhysicalParams<T>,
    pub arena: Arena<T>,
    pub numerics: NumericalParams<T>,
    /// Turning frequency `λ₀ − γ v·∇S` when set; requires signal gains.
    pub signal: Option<SignalField<T>>,
    pub initial: InitialCondition<T>,
    pub snapshot_times: Vec<T>,
    /// Mass-curve cadence in s.
    pub mass_interval: T,
    /// `false` freezes the turning operator (pure advection).
    pub turning: bool,
}

impl<T: Real> ForwardConfig<T> {
    pub fn new(params: PhysicalParams<T>, arena: Arena<T>, numerics: NumericalParams<T>) -> Self {
        Self {
            params,
            arena,
            numerics,
            signal: None,
            initial: InitialCondition::Pen,
            snapshot_times: Vec::new(),
            mass_interval: T::one(),
            turning: true,
        }
    }

    pub fn layout(&self) -> CellLayout<T> {
        CellLayout::new(&self.arena, self.numerics.dx, self.numerics.n_theta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<T> {
    pub t: T,
    pub density: DensityGrid<T>,
    pub resting: Option<RestingGrid<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSolution<T> {
    pub snapshots: Vec<Snapshot<T>>,
    /// Running plus resting mass.
    pub mass: MassCurve<T>,
    /// Running-phase mass only.
    pub running_mass: MassCurve<T>,
    pub steps: usize,
    pub dt: T,
    pub final_density: DensityGrid<T>,
    /// Resting mass at `t_end`, normalised like the mass curves.
    pub final_resting_mass: T,
}

/// Step function over the pen, `χ_{Ω₀}/(L₀²·2π)`, with area-fraction weights on
/// cells that straddle the pen edge. Normalised to unit total mass.
pub fn initial_condition<T: Real>(arena: &Arena<T>, layout: &CellLayout<T>) -> DensityGrid<T> {
    let mut g = DensityGrid::zeros(*layout);
    let area = layout.dx * layout.dy;
    let spatial: Vec<T> = (0..layout.cells())
        .map(|c| {
            let (j, i) = (c / layout.nx, c % layout.nx);
            let fx = arena.pen_x.overlap(layout.x_edge(i), layout.x_edge(i + 1));
            let fy = arena.pen_y.overlap(layout.y_edge(j), layout.y_edge(j + 1));
            fx * fy / area
        })
        .collect();
    fill_isotropic(&mut g, &spatial);
    g
}

fn uniform_condition<T: Real>(layout: &CellLayout<T>) -> DensityGrid<T> {
    let mut g = DensityGrid::zeros(*layout);
    fill_isotropic(&mut g, &vec![T::one(); layout.cells()]);
    g
}

/// Spreads spatial weights over all headings and rescales to unit mass.
fn fill_isotropic<T: Real>(g: &mut DensityGrid<T>, spatial: &[T]) {
    let cells = g.layout.cells();
    let total: T = spatial.iter().copied().sum::<T>() * g.layout.dx * g.layout.dy;
    let norm = T::one() / (total * T::TAU());
    for chunk in g.values.chunks_mut(cells) {
        for (v, w) in chunk.iter_mut().zip(spatial) {
            *v = *w * norm;
        }
    }
}

/// Classical transport equation: instant turning regardless of `ω`.
pub fn solve_classical<T: Real>(cfg: &ForwardConfig<T>) -> Result<ForwardSolution<T>> {
    Engine::new(cfg, false)?.run(cfg)
}

/// Running/resting system with turning delays `K(θ, θ') = |θ − θ'|/ω`.
/// With `ω = ∞` it reduces to [`solve_classical`].
pub fn solve_resting_state<T: Real>(cfg: &ForwardConfig<T>) -> Result<ForwardSolution<T>> {
    Engine::new(cfg, true)?.run(cfg)
}

struct Engine<T> {
    layout: CellLayout<T>,
    dt: T,
    /// `Δt·|c_x|/Δx` and `Δt·|c_y|/Δy` per heading.
    ax: Vec<T>,
    ay: Vec<T>,
    pos_x: Vec<bool>,
    pos_y: Vec<bool>,
    /// Turning frequency per `(k, i)`; `None` disables turning.
    rate: Option<Vec<T>>,
    /// Delay in steps for a turn across `m` angular cells, `m = 0..=n/2`.
    delay_steps: Vec<usize>,
    ring: Vec<Vec<T>>,
    right_open: bool,
    step_index: usize,
    steps_per_eta: usize,
    d_eta: T,
}

impl<T: Real> Engine<T> {
    fn new(cfg: &ForwardConfig<T>, delayed: bool) -> Result<Self> {
        cfg.params.validate()?;
        cfg.arena.validate()?;
        cfg.numerics.validate()?;
        let layout = cfg.layout();
        let num = &cfg.numerics;
        let params = &cfg.params;
        let n = layout.angles.len();
        let dt = num.dt;
        num.check_cfl(params.speed)?;

        let thetas: Vec<T> = layout.angles.thetas();
        let ax: Vec<T> = thetas
            .iter()
            .map(|t| dt * params.speed * t.cos().abs() / layout.dx)
            .collect();
        let ay: Vec<T> = thetas
            .iter()
            .map(|t| dt * params.speed * t.sin().abs() / layout.dy)
            .collect();

        let rate = if cfg.turning {
            let mut r = Vec::with_capacity(n * layout.nx);
            let slope = match (&cfg.signal, params.gamma()) {
                (Some(s), Some(g)) => g * s.slope,
                (Some(_), None) => {
                    return Err(Error::InvalidParameter(
                        "signal-modulated turning needs alpha and t_a".into(),
                    ))
                }
                (None, _) => T::zero(),
            };
            for t in &thetas {
                let lam = params.lambda0 - slope * params.speed * t.cos();
                if !(lam > T::zero()) {
                    return Err(Error::NonPositiveRate {
                        rate: lam.to_f64_lossy(),
                        x: 0.0,
                        theta: t.to_f64_lossy(),
                    });
                }
                r.extend(std::iter::repeat_n(lam, layout.nx));
            }
            Some(r)
        } else {
            None
        };

        let lam_max = rate
            .as_ref()
            .map(|r| r.iter().fold(T::zero(), |m, &v| m.max(v)))
            .unwrap_or(T::zero());
        let worst = (0..n).fold(T::zero(), |m, k| m.max(ax[k] + ay[k])) + lam_max * dt;
        if worst > T::one() {
            return Err(Error::Cfl(format!(
                "dt*(|cx|/dx + |cy|/dy + lambda) = {worst} > 1 breaks positivity"
            )));
        }

        let active_delay = delayed && !params.omega.is_infinite();
        let (steps_per_eta, d_eta) = if active_delay {
            let expected = NumericalParams::matching_d_eta(n, params.omega);
            if ((num.d_eta - expected) / expected).abs() > T::lit(1e-9) {
                return Err(Error::Config(format!(
                    "d_eta = {} must equal dtheta/omega = {expected}",
                    num.d_eta
                )));
            }
            let ratio = num.d_eta / dt;
            let k = ratio.round();
            if k < T::one() || ((ratio - k) / k).abs() > T::lit(1e-9) {
                return Err(Error::Config(format!(
                    "d_eta / dt = {ratio} must be a positive integer"
                )));
            }
            (k.to_usize().unwrap_or(1), num.d_eta)
        } else {
            (0, T::zero())
        };
        let delay_steps: Vec<usize> = (0..=n / 2).map(|m| m * steps_per_eta).collect();
        let ring_len = delay_steps.last().copied().unwrap_or(0) + 1;
        let ring = if ring_len > 1 {
            (0..ring_len).map(|_| vec![T::zero(); layout.len()]).collect()
        } else {
            Vec::new()
        };

        Ok(Self {
            pos_x: thetas.iter().map(|t| t.cos() > T::zero()).collect(),
            pos_y: thetas.iter().map(|t| t.sin() > T::zero()).collect(),
            layout,
            dt,
            ax,
            ay,
            rate,
            delay_steps,
            ring,
            right_open: cfg.arena.target == TargetEdge::Open,
            step_index: 0,
            steps_per_eta,
            d_eta,
        })
    }

    fn run(mut self, cfg: &ForwardConfig<T>) -> Result<ForwardSolution<T>> {
        let layout = self.layout;
        let mut p = match &cfg.initial {
            InitialCondition::Pen => initial_condition(&cfg.arena, &layout),
            InitialCondition::Uniform => uniform_condition(&layout),
            InitialCondition::Density(d) => {
                if d.layout != layout {
                    return Err(Error::Config("initial density does not match the grid".into()));
                }
                d.clone()
            }
        };
        let mut next = DensityGrid::zeros(layout);
        let m0 = p.mass();
        if !(m0 > T::zero()) {
            return Err(Error::Config("initial condition carries no mass".into()));
        }

        let dt = self.dt;
        let n_steps = (cfg.numerics.t_end / dt).round().to_usize().unwrap_or(0);
        let mass_every = (cfg.mass_interval / dt).round().to_usize().unwrap_or(1).max(1);
        let mut snap_steps: Vec<(usize, T)> = cfg
            .snapshot_times
            .iter()
            .map(|&t| ((t / dt).round().to_usize().unwrap_or(0).min(n_steps), t))
            .collect();
        snap_steps.sort_by_key(|s| s.0);

        let mut mass = MassCurve::default();
        let mut running = MassCurve::default();
        let mut snapshots = Vec::new();
        let mut record = |step: usize, engine: &Self, p: &DensityGrid<T>, force: bool| {
            if step.is_multiple_of(mass_every) || force {
                let t = T::from_usize_lossy(step) * dt;
                let run = p.mass();
                mass.samples.push((t, (run + engine.resting_mass()) / m0));
                running.samples.push((t, run / m0));
            }
        };
        record(0, &self, &p, true);
        let mut snap_iter = snap_steps.into_iter().peekable();
        for step in 0..=n_steps {
            while let Some(&(s, t)) = snap_iter.peek() {
                if s != step {
                    break;
                }
                snapshots.push(Snapshot {
                    t,
                    density: p.clone(),
                    resting: self.resting_grid(),
                });
                snap_iter.next();
            }
            if step == n_steps {
                break;
            }
            self.step(&p, &mut next);
            std::mem::swap(&mut p, &mut next);
            record(step + 1, &self, &p, step + 1 == n_steps);
        }
        if let (Some(a), Some(b)) = (mass.samples.len().checked_sub(2), mass.samples.len().checked_sub(1)) {
            // the forced final record can duplicate a cadence sample
            if mass.samples[a].0 == mass.samples[b].0 {
                mass.samples.pop();
                running.samples.pop();
            }
        }
        let final_resting_mass = self.resting_mass() / m0;
        Ok(ForwardSolution {
            snapshots,
            mass,
            running_mass: running,
            steps: n_steps,
            dt,
            final_density: p,
            final_resting_mass,
        })
    }

    fn resting_mass(&self) -> T {
        let v = self.layout.volume();
        compensated_sum(self.ring.iter().flat_map(|s| s.iter().copied())) * v
    }

    /// Resting slots reordered by remaining delay.
    fn resting_grid(&self) -> Option<RestingGrid<T>> {
        if self.ring.is_empty() {
            return None;
        }
        let len = self.ring.len();
        let n_eta = self.layout.angles.len() / 2;
        let per = self.layout.len();
        let mut values = vec![T::zero(); n_eta * per];
        let inv = T::one() / self.d_eta;
        // slot for release at the end of step `step_index + r - 1` holds remaining time r·dt
        for r in 1..len {
            let slot = (self.step_index + r - 1) % len;
            let e = ((r - 1) / self.steps_per_eta).min(n_eta - 1);
            let dst = &mut values[e * per..(e + 1) * per];
            for (d, s) in dst.iter_mut().zip(&self.ring[slot]) {
                *d += *s * inv;
            }
        }
        Some(RestingGrid {
            layout: self.layout,
            d_eta: self.d_eta,
            n_eta,
            values,
        })
    }

    fn step(&mut self, p: &DensityGrid<T>, next: &mut DensityGrid<T>) {
        let l = self.layout;
        let (nx, ny, cells) = (l.nx, l.ny, l.cells());
        let n = l.angles.len();
        let dt = self.dt;

        // Transport and turning loss, heading by heading.
        let rate = self.rate.as_deref();
        next.values.par_chunks_mut(cells).enumerate().for_each(|(k, out)| {
            let src = &p.values[k * cells..(k + 1) * cells];
            let (ax, ay) = (self.ax[k], self.ay[k]);
            let keep = T::one() - ax - ay;
            for j in 0..ny {
                let row = j * nx;
                for i in 0..nx {
                    let c = row + i;
                    let loss = rate.map_or(T::zero(), |r| r[k * nx + i] * dt);
                    let mut v = src[c] * (keep - loss);
                    if self.pos_x[k] {
                        if i > 0 {
                            v += ax * src[c - 1];
                        }
                    } else if i + 1 < nx {
                        v += ax * src[c + 1];
                    }
                    if self.pos_y[k] {
                        if j > 0 {
                            v += ay * src[c - nx];
                        }
                    } else if j + 1 < ny {
                        v += ay * src[c + nx];
                    }
                    out[c] = v;
                }
            }
        });

        // Wall outflow re-enters at the specular heading.
        for k in 0..n {
            let src = &p.values[k * cells..(k + 1) * cells];
            let rx = l.angles.reflect_x(k);
            let dx_steps = self.delay_steps[l.angles.cell_distance(k, rx)];
            let i_wall = if self.pos_x[k] { nx - 1 } else { 0 };
            if !(self.pos_x[k] && self.right_open) {
                let a = self.ax[k];
                for j in 0..ny {
                    let c = j * nx + i_wall;
                    self.deposit(next, dx_steps, rx * cells + c, a * src[c]);
                }
            }
            let ry = l.angles.reflect_y(k);
            let dy_steps = self.delay_steps[l.angles.cell_distance(k, ry)];
            let j_wall = if self.pos_y[k] { ny - 1 } else { 0 };
            let a = self.ay[k];
            for i in 0..nx {
                let c = j_wall * nx + i;
                self.deposit(next, dy_steps, ry * cells + c, a * src[c]);
            }
        }

        // Turning gain under the uniform kernel.
        if let Some(rate) = self.rate.as_deref() {
            let w = dt / T::from_usize_lossy(n);
            let mut flux = vec![T::zero(); l.len()];
            for k in 0..n {
                for j in 0..ny {
                    for i in 0..nx {
                        let c = l.index(k, j, i);
                        flux[c] = rate[k * nx + i] * p.values[c] * w;
                    }
                }
            }
            if self.ring.is_empty() {
                let mut total = vec![T::zero(); cells];
                for chunk in flux.chunks(cells) {
                    for (t, f) in total.iter_mut().zip(chunk) {
                        *t += *f;
                    }
                }
                for chunk in next.values.chunks_mut(cells) {
                    for (v, t) in chunk.iter_mut().zip(&total) {
                        *v += *t;
                    }
                }
            } else {
                let len = self.ring.len();
                for m in 0..=n / 2 {
                    let d = self.delay_steps[m];
                    for j in 0..n {
                        let a = (j + m) % n;
                        let b = (j + n - m) % n;
                        let fa = &flux[a * cells..(a + 1) * cells];
                        let dst: &mut [T] = if d == 0 {
                            &mut next.values[j * cells..(j + 1) * cells]
                        } else {
                            let slot = (self.step_index + d) % len;
                            &mut self.ring[slot][j * cells..(j + 1) * cells]
                        };
                        if a == b {
                            for (v, f) in dst.iter_mut().zip(fa) {
                                *v += *f;
                            }
                        } else {
                            let fb = &flux[b * cells..(b + 1) * cells];
                            for ((v, f), g) in dst.iter_mut().zip(fa).zip(fb) {
                                *v += *f + *g;
                            }
                        }
                    }
                }
            }
        }

        // Turns completing this step rejoin the run phase.
        if !self.ring.is_empty() {
            let slot = self.step_index % self.ring.len();
            let released = &mut self.ring[slot];
            for (v, r) in next.values.iter_mut().zip(released.iter_mut()) {
                *v += *r;
                *r = T::zero();
            }
        }
        self.step_index += 1;
    }

    fn deposit(&mut self, next: &mut DensityGrid<T>, delay: usize, idx: usize, amount: T) {
        if delay == 0 {
            next.values[idx] += amount;
        } else {
            let len = self.ring.len();
            self.ring[(self.step_index + delay) % len][idx] += amount;
        }
    }
}
