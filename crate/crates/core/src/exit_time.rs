//! Backward (adjoint) solvers for the y-averaged mean exit time `τ_x(x, θ)`.
//!
//! Every variant solves an equation of the form
//!
//! ```text
//! s·cosθ·∂τ/∂x − λ(x,θ)·τ + λ(x,θ)·τ̄(x) = −q(x,θ),   τ̄ = (1/2π)∫τ dφ
//! ```
//!
//! on `(0, L_x) × (−π, π]` with `τ(L_x, θ) = 0` for outgoing `θ` and a
//! reflective (optionally delayed) condition at `x = 0`. The angular integral
//! is handled by source iteration: freeze `τ̄`, sweep every angle along its
//! characteristic, refresh `τ̄`, repeat.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kinematics::{delay_kernel, mean_turn_time, AngleGrid};
use crate::num::Real;
use crate::params::{Arena, NumericalParams, Omega, PhysicalParams, TargetEdge};

/// Linear signal `S(x) = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalField<T> {
    pub intercept: T,
    /// 1/m
    pub slope: T,
}

impl<T: Real> SignalField<T> {
    pub fn new(intercept: T, slope: T) -> Self {
        Self { intercept, slope }
    }

    /// Colour gradient of the signal experiment: `S(x) = 0.23 + 0.39·x/L_x`.
    pub fn measured(lx: T) -> Self {
        Self::new(T::lit(0.23), T::lit(0.39) / lx)
    }

    pub fn value(&self, x: T) -> T {
        self.intercept + self.slope * x
    }

    /// `S` must lie in `[0, 1]` on `[0, L_x]`.
    pub fn validate(&self, lx: T) -> Result<()> {
        let (a, b) = (self.value(T::zero()), self.value(lx));
        let ok = |v: T| v >= T::zero() && v <= T::one();
        if ok(a) && ok(b) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "signal leaves [0, 1] on the arena: S(0) = {a}, S(Lx) = {b}"
            )))
        }
    }
}

/// Wall-delay weight: `|sinθ|·K(θ → −θ)·ω/2`, written piecewise.
pub fn a_weight<T: Real>(theta: T) -> T {
    let pi = T::PI();
    let half = T::FRAC_PI_2();
    if theta <= -half {
        -(pi + theta) * theta.sin()
    } else if theta <= half {
        theta * theta.sin()
    } else {
        (pi - theta) * theta.sin()
    }
}

/// Discretisation of the x-derivative along each characteristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepScheme {
    /// Exact exponential attenuation across each cell with a flat cell source.
    #[default]
    StepCharacteristic,
    /// Implicit donor-cell differencing, `|c|(τ_in − τ)/Δx`.
    DonorCell,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetOptions {
    pub scheme: SweepScheme,
    /// Solve only `θ ∈ (0, π)` and mirror onto `θ < 0`.
    pub use_symmetry: bool,
    /// Add the reflection delay `(π − 2|θ|)/ω` at `x = 0` in the signal
    /// solver; off by default (plain specular condition there).
    pub signal_wall_delay: bool,
}

impl Default for MetOptions {
    fn default() -> Self {
        Self {
            scheme: SweepScheme::StepCharacteristic,
            use_symmetry: true,
            signal_wall_delay: false,
        }
    }
}

/// Converged mean exit time on `nx` x-cells by `n_theta` angle cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitTimeGrid<T> {
    pub nx: usize,
    pub dx: T,
    pub angles: AngleGrid,
    /// Cell averages, index `i * n_theta + k`.
    pub values: Vec<T>,
    /// Face values at `x = 0`, one per angle.
    pub left_face: Vec<T>,
    /// Face values at `x = L_x`, one per angle.
    pub right_face: Vec<T>,
    pub iterations: usize,
    pub residual: T,
}

impl<T: Real> ExitTimeGrid<T> {
    pub fn n_theta(&self) -> usize {
        self.angles.len()
    }

    pub fn value(&self, i: usize, k: usize) -> T {
        self.values[i * self.angles.len() + k]
    }

    pub fn x_center(&self, i: usize) -> T {
        (T::from_usize_lossy(i) + T::lit(0.5)) * self.dx
    }

    pub fn max(&self) -> T {
        self.values.iter().fold(T::zero(), |m, &v| m.max(v))
    }

    /// Direction-averaged exit time `τ̄(x_i)` per cell.
    pub fn angle_average(&self) -> Vec<T> {
        let n = self.angles.len();
        let w = T::one() / T::from_usize_lossy(n);
        self.values
            .chunks(n)
            .map(|row| row.iter().copied().sum::<T>() * w)
            .collect()
    }

    /// `(x, τ̄)` pairs at cell centres.
    pub fn profile(&self) -> Vec<(T, T)> {
        self.angle_average()
            .into_iter()
            .enumerate()
            .map(|(i, v)| (self.x_center(i), v))
            .collect()
    }

    /// CSV with header `x_m,theta_rad,tau_s`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x_m,theta_rad,tau_s")?;
        for i in 0..self.nx {
            for k in 0..self.angles.len() {
                writeln!(
                    w,
                    "{},{},{}",
                    self.x_center(i),
                    self.angles.theta::<T>(k),
                    self.value(i, k)
                )?;
            }
        }
        Ok(())
    }

    /// CSV with header `x_m,tau_mean_s`.
    pub fn write_profile_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x_m,tau_mean_s")?;
        for (x, v) in self.profile() {
            writeln!(w, "{x},{v}")?;
        }
        Ok(())
    }
}

/// Mean of `τ` over all directions and over the pen's x-range, area weighted.
pub fn pen_average<T: Real>(grid: &ExitTimeGrid<T>, arena: &Arena<T>) -> T {
    let avg = grid.angle_average();
    let mut num = T::zero();
    let mut den = T::zero();
    for (i, v) in avg.into_iter().enumerate() {
        let lo = T::from_usize_lossy(i) * grid.dx;
        let w = arena.pen_x.overlap(lo, lo + grid.dx);
        num += w * v;
        den += w;
    }
    if den > T::zero() {
        num / den
    } else {
        T::nan()
    }
}

/// Coefficients of one backward problem, laid out like [`ExitTimeGrid::values`].
struct BackwardProblem<T> {
    nx: usize,
    dx: T,
    angles: AngleGrid,
    speed: T,
    rate: Vec<T>,
    source: Vec<T>,
    /// Added to the reflected inflow at `x = 0`, indexed by the left-moving angle.
    jump: Vec<T>,
}

/// Per-angle sweep output.
struct Sweep<T> {
    column: Vec<T>,
    left: T,
    right: T,
}

/// Source-iteration driver for the exit-time problems.
#[derive(Debug, Clone, Copy)]
pub struct MetSolver<T> {
    pub numerics: NumericalParams<T>,
    pub options: MetOptions,
}

impl<T: Real> MetSolver<T> {
    pub fn new(numerics: NumericalParams<T>) -> Self {
        Self {
            numerics,
            options: MetOptions::default(),
        }
    }

    pub fn with_options(mut self, options: MetOptions) -> Self {
        self.options = options;
        self
    }

    fn layout(&self, params: &PhysicalParams<T>, arena: &Arena<T>) -> Result<(usize, T, AngleGrid)> {
        params.validate()?;
        arena.validate()?;
        self.numerics.validate()?;
        if arena.target != TargetEdge::Open {
            return Err(Error::Config("mean exit time needs an open target edge".into()));
        }
        let nx = (arena.lx / self.numerics.dx).round().to_usize().unwrap_or(0).max(1);
        Ok((
            nx,
            arena.lx / T::from_usize_lossy(nx),
            AngleGrid::new(self.numerics.n_theta),
        ))
    }

    /// `s cosθ ∂τ/∂x − λτ + λτ̄ = −1` with specular reflection at `x = 0`.
    pub fn classical(&self, params: &PhysicalParams<T>, arena: &Arena<T>) -> Result<ExitTimeGrid<T>> {
        let (nx, dx, angles) = self.layout(params, arena)?;
        let n = angles.len();
        let problem = BackwardProblem {
            nx,
            dx,
            angles,
            speed: params.speed,
            rate: vec![params.lambda0; nx * n],
            source: vec![T::one(); nx * n],
            jump: vec![T::zero(); n],
        };
        self.run(&problem)
    }

    /// Delayed problem: source `1 + λπ/(2ω) + 2sA(θ)/(L_y ω)` and a reflection
    /// delay `(π − 2|θ|)/ω` at `x = 0`.
    pub fn delayed(&self, params: &PhysicalParams<T>, arena: &Arena<T>) -> Result<ExitTimeGrid<T>> {
        let (nx, dx, angles) = self.layout(params, arena)?;
        let n = angles.len();
        let omega = params.omega;
        let free = params.lambda0 * mean_turn_time(omega);
        let wall = T::lit(2.0) * params.speed * omega.inverse() / arena.ly;
        let per_angle: Vec<T> = (0..n)
            .map(|k| T::one() + free + wall * a_weight(angles.theta::<T>(k)))
            .collect();
        let source = (0..nx).flat_map(|_| per_angle.iter().copied()).collect();
        let problem = BackwardProblem {
            nx,
            dx,
            angles,
            speed: params.speed,
            rate: vec![params.lambda0; nx * n],
            source,
            jump: reflection_jumps(&angles, omega),
        };
        self.run(&problem)
    }

    /// Signal-modulated problem with `λ(x,θ) = λ₀ − γ s cosθ ∂S/∂x`.
    pub fn signal(
        &self,
        params: &PhysicalParams<T>,
        arena: &Arena<T>,
        signal: &SignalField<T>,
        omega: Omega<T>,
    ) -> Result<ExitTimeGrid<T>> {
        let (nx, dx, angles) = self.layout(params, arena)?;
        signal.validate(arena.lx)?;
        let gamma = params
            .gamma()
            .ok_or_else(|| Error::InvalidParameter("signal solver needs alpha and t_a".into()))?;
        let n = angles.len();
        let mean_turn = mean_turn_time(omega);
        let wall = T::lit(2.0) * params.speed * omega.inverse() / arena.ly;
        let mut rate = Vec::with_capacity(nx * n);
        let mut source = Vec::with_capacity(nx * n);
        for i in 0..nx {
            let x = (T::from_usize_lossy(i) + T::lit(0.5)) * dx;
            for k in 0..n {
                let theta: T = angles.theta(k);
                let lam = params.lambda0 - gamma * params.speed * theta.cos() * signal.slope;
                if !(lam > T::zero()) {
                    return Err(Error::NonPositiveRate {
                        rate: lam.to_f64_lossy(),
                        x: x.to_f64_lossy(),
                        theta: theta.to_f64_lossy(),
                    });
                }
                rate.push(lam);
                source.push(T::one() + lam * mean_turn + wall * a_weight(theta));
            }
        }
        let jump = if self.options.signal_wall_delay {
            reflection_jumps(&angles, omega)
        } else {
            vec![T::zero(); n]
        };
        let problem = BackwardProblem {
            nx,
            dx,
            angles,
            speed: params.speed,
            rate,
            source,
            jump,
        };
        self.run(&problem)
    }

    fn run(&self, p: &BackwardProblem<T>) -> Result<ExitTimeGrid<T>> {
        let n = p.angles.len();
        let nx = p.nx;
        let half = n / 2;
        let active: Vec<usize> = if self.options.use_symmetry {
            (half..n).collect()
        } else {
            (0..n).collect()
        };
        let cos: Vec<T> = (0..n).map(|k| p.speed * p.angles.theta::<T>(k).cos()).collect();
        let (right_movers, left_movers): (Vec<usize>, Vec<usize>) = active.iter().partition(|&&k| cos[k] > T::zero());

        let mut tau = vec![T::zero(); nx * n];
        let mut left = vec![T::zero(); n];
        let mut right = vec![T::zero(); n];
        let inv_n = T::one() / T::from_usize_lossy(n);
        let tol = self.numerics.solver_tol;
        let mut residual = T::infinity();

        for iter in 1..=self.numerics.max_iters {
            let mean: Vec<T> = tau.chunks(n).map(|r| r.iter().copied().sum::<T>() * inv_n).collect();
            let mut next = vec![T::zero(); nx * n];

            // Right movers start from τ = 0 at the target face.
            let sweeps: Vec<(usize, Sweep<T>)> = right_movers
                .par_iter()
                .map(|&k| (k, self.sweep(p, &mean, k, cos[k], T::zero())))
                .collect();
            for (k, s) in sweeps {
                scatter(&mut next, n, k, &s.column);
                left[k] = s.left;
                right[k] = T::zero();
            }
            // Left movers inherit the reflected right mover at x = 0.
            let sweeps: Vec<(usize, Sweep<T>)> = left_movers
                .par_iter()
                .map(|&k| {
                    let inflow = left[p.angles.reflect_x(k)] + p.jump[k];
                    (k, self.sweep(p, &mean, k, cos[k], inflow))
                })
                .collect();
            for (k, s) in sweeps {
                scatter(&mut next, n, k, &s.column);
                left[k] = s.left;
                right[k] = s.right;
            }
            if self.options.use_symmetry {
                for &k in &active {
                    let m = p.angles.reflect_y(k);
                    for i in 0..nx {
                        next[i * n + m] = next[i * n + k];
                    }
                    left[m] = left[k];
                    right[m] = right[k];
                }
            }

            let mut diff = T::zero();
            let mut scale = T::zero();
            for (a, b) in next.iter().zip(&tau) {
                diff = diff.max((*a - *b).abs());
                scale = scale.max(a.abs());
            }
            residual = if scale > T::zero() { diff / scale } else { T::zero() };
            tau = next;
            if residual <= tol {
                return Ok(ExitTimeGrid {
                    nx,
                    dx: p.dx,
                    angles: p.angles,
                    values: tau,
                    left_face: left,
                    right_face: right,
                    iterations: iter,
                    residual,
                });
            }
        }
        Err(Error::NoConvergence {
            iterations: self.numerics.max_iters,
            residual: residual.to_f64_lossy(),
        })
    }

    /// Sweeps angle `k` along its characteristic, entering with face value `inflow`.
    fn sweep(&self, p: &BackwardProblem<T>, mean: &[T], k: usize, c: T, inflow: T) -> Sweep<T> {
        let n = p.angles.len();
        let nx = p.nx;
        let speed = c.abs();
        let mut column = vec![T::zero(); nx];
        let mut edge = inflow;
        let order: Box<dyn Iterator<Item = usize>> = if c > T::zero() {
            Box::new((0..nx).rev())
        } else {
            Box::new(0..nx)
        };
        for i in order {
            let lam = p.rate[i * n + k];
            let q = p.source[i * n + k] + lam * mean[i];
            let (avg, out) = match self.options.scheme {
                SweepScheme::StepCharacteristic => {
                    let eq = q / lam;
                    let sigma = lam * p.dx / speed;
                    let att = (-sigma).exp();
                    let out = att * edge + (T::one() - att) * eq;
                    let avg = if sigma > T::lit(1e-6) {
                        eq + (edge - out) / sigma
                    } else {
                        (edge + out) / T::lit(2.0)
                    };
                    (avg, out)
                }
                SweepScheme::DonorCell => {
                    let a = speed / p.dx;
                    let v = (a * edge + q) / (a + lam);
                    (v, v)
                }
            };
            column[i] = avg;
            edge = out;
        }
        if c > T::zero() {
            Sweep {
                column,
                left: edge,
                right: T::zero(),
            }
        } else {
            Sweep {
                column,
                left: inflow,
                right: edge,
            }
        }
    }
}

fn scatter<T: Copy>(dst: &mut [T], n: usize, k: usize, column: &[T]) {
    for (i, v) in column.iter().enumerate() {
        dst[i * n + k] = *v;
    }
}

/// `K(θ_r → θ_k)` for every left-moving `k`, where `θ_r = π − θ_k` is its
/// right-moving mirror: time lost turning at the `x = 0` wall.
fn reflection_jumps<T: Real>(angles: &AngleGrid, omega: Omega<T>) -> Vec<T> {
    (0..angles.len())
        .map(|k| {
            let theta: T = angles.theta(k);
            if theta.cos() < T::zero() {
                delay_kernel(angles.theta(angles.reflect_x(k)), theta, omega)
            } else {
                T::zero()
            }
        })
        .collect()
}

pub fn solve_met_classical<T: Real>(
    params: &PhysicalParams<T>,
    arena: &Arena<T>,
    numerics: &NumericalParams<T>,
) -> Result<ExitTimeGrid<T>> {
    MetSolver::new(*numerics).classical(params, arena)
}

pub fn solve_met_delayed<T: Real>(
    params: &PhysicalParams<T>,
    arena: &Arena<T>,
    numerics: &NumericalParams<T>,
) -> Result<ExitTimeGrid<T>> {
    MetSolver::new(*numerics).delayed(params, arena)
}

pub fn solve_met_signal<T: Real>(
    params: &PhysicalParams<T>,
    arena: &Arena<T>,
    numerics: &NumericalParams<T>,
    signal: &SignalField<T>,
    omega: Omega<T>,
) -> Result<ExitTimeGrid<T>> {
    MetSolver::new(*numerics).signal(params, arena, signal, omega)
}
