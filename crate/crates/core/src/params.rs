//! Physical, geometric and numerical parameter sets.

use crate::error::{Error, Result};
use crate::num::Real;
use crate::vec2::Vec2;

/// Angular speed of a reorientation. `Infinite` turns instantly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Omega<T> {
    Finite(T),
    Infinite,
}

impl<T: Real> Omega<T> {
    /// Maps `+inf` to the sentinel.
    pub fn from_value(v: T) -> Self {
        if v.is_infinite() && v > T::zero() {
            Omega::Infinite
        } else {
            Omega::Finite(v)
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Omega::Infinite)
    }

    /// Rad/s, with `+inf` for the sentinel.
    pub fn value(&self) -> T {
        match *self {
            Omega::Finite(w) => w,
            Omega::Infinite => T::infinity(),
        }
    }

    /// Time to sweep `angle` radians; zero for instant turning.
    pub fn time_for(&self, angle: T) -> T {
        match *self {
            Omega::Finite(w) => angle / w,
            Omega::Infinite => T::zero(),
        }
    }

    /// `1/ω`, zero for instant turning.
    pub fn inverse(&self) -> T {
        self.time_for(T::one())
    }
}

/// Parameters of the adaptive signal response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalGain<T> {
    /// Dimensionless gain α.
    pub alpha: T,
    /// Adaptation time t_a in seconds.
    pub t_a: T,
}

/// Robot-level constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams<T> {
    /// Running speed s in m/s.
    pub speed: T,
    /// Base turning frequency λ₀ in 1/s.
    pub lambda0: T,
    pub omega: Omega<T>,
    /// Robot diameter ε in m.
    pub diameter: T,
    pub signal: Option<SignalGain<T>>,
}

impl<T: Real> PhysicalParams<T> {
    pub fn new(speed: T, lambda0: T, omega: Omega<T>, diameter: T) -> Result<Self> {
        let p = Self {
            speed,
            lambda0,
            omega,
            diameter,
            signal: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// E-Puck values: s = 5.8 cm/s, λ₀ = 0.25/s, ω = 4.65 rad/s, ε = 7.5 cm.
    pub fn epuck() -> Self {
        Self {
            speed: T::lit(5.8e-2),
            lambda0: T::lit(0.25),
            omega: Omega::Finite(T::lit(4.65)),
            diameter: T::lit(0.075),
            signal: None,
        }
    }

    pub fn with_omega(mut self, omega: Omega<T>) -> Self {
        self.omega = omega;
        self
    }

    pub fn with_signal(mut self, alpha: T, t_a: T) -> Self {
        self.signal = Some(SignalGain { alpha, t_a });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.speed > T::zero() && self.speed.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "speed must be > 0, got {}",
                self.speed
            )));
        }
        if !(self.lambda0 > T::zero() && self.lambda0.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "turning frequency must be > 0, got {}",
                self.lambda0
            )));
        }
        if let Omega::Finite(w) = self.omega {
            if !(w > T::zero() && w.is_finite()) {
                return Err(Error::InvalidParameter(format!("angular speed must be > 0, got {w}")));
            }
        }
        if !(self.diameter >= T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "diameter must be >= 0, got {}",
                self.diameter
            )));
        }
        if let Some(g) = self.signal {
            if !(g.t_a > T::zero()) {
                return Err(Error::InvalidParameter(format!(
                    "adaptation time must be > 0, got {}",
                    g.t_a
                )));
            }
        }
        Ok(())
    }

    /// Drift gain γ = α·t_a·λ₀ / (1 + λ₀·t_a), when signal parameters are set.
    pub fn gamma(&self) -> Option<T> {
        self.signal
            .map(|g| g.alpha * g.t_a * self.lambda0 / (T::one() + self.lambda0 * g.t_a))
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Real> Interval<T> {
    pub fn new(lo: T, hi: T) -> Self {
        Self { lo, hi }
    }

    pub fn len(&self) -> T {
        self.hi - self.lo
    }

    pub fn contains(&self, v: T) -> bool {
        v >= self.lo && v <= self.hi
    }

    /// Length of the overlap with `[a, b]`.
    pub fn overlap(&self, a: T, b: T) -> T {
        (self.hi.min(b) - self.lo.max(a)).max(T::zero())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetEdge {
    /// The `x = L_x` edge absorbs.
    Open,
    /// All four edges reflect.
    Closed,
}

/// The four edges of the effective arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wall {
    Left,
    Right,
    Bottom,
    Top,
}

impl Wall {
    pub const ALL: [Wall; 4] = [Wall::Left, Wall::Right, Wall::Bottom, Wall::Top];

    /// Outward unit normal.
    pub fn normal<T: Real>(self) -> Vec2<T> {
        match self {
            Wall::Left => Vec2::new(-T::one(), T::zero()),
            Wall::Right => Vec2::new(T::one(), T::zero()),
            Wall::Bottom => Vec2::new(T::zero(), -T::one()),
            Wall::Top => Vec2::new(T::zero(), T::one()),
        }
    }
}

/// Effective arena `[0, L_x] × [−L_y/2, L_y/2]` with its release pen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arena<T> {
    pub lx: T,
    pub ly: T,
    /// Pen edge length L₀.
    pub l0: T,
    pub pen_x: Interval<T>,
    pub pen_y: Interval<T>,
    pub target: TargetEdge,
}

impl<T: Real> Arena<T> {
    /// Experimental arena with the pen against the left wall, vertically centred.
    pub fn epuck() -> Self {
        let l0 = T::lit(0.305);
        let half = l0 / T::lit(2.0);
        Self {
            lx: T::lit(1.183),
            ly: T::lit(1.145),
            l0,
            pen_x: Interval::new(T::zero(), l0),
            pen_y: Interval::new(-half, half),
            target: TargetEdge::Open,
        }
    }

    pub fn with_target(mut self, target: TargetEdge) -> Self {
        self.target = target;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lx > T::zero() && self.ly > T::zero()) {
            return Err(Error::InvalidParameter("arena dimensions must be positive".into()));
        }
        if !(self.l0 > T::zero() && self.l0 <= self.lx.min(self.ly)) {
            return Err(Error::InvalidParameter(format!(
                "pen edge must satisfy 0 < L0 <= min(Lx, Ly), got {}",
                self.l0
            )));
        }
        let half = self.ly / T::lit(2.0);
        let ok = self.pen_x.lo >= T::zero()
            && self.pen_x.hi <= self.lx
            && self.pen_x.lo < self.pen_x.hi
            && self.pen_y.lo >= -half
            && self.pen_y.hi <= half
            && self.pen_y.lo < self.pen_y.hi;
        if !ok {
            return Err(Error::InvalidParameter("pen must lie inside the arena".into()));
        }
        Ok(())
    }

    pub fn y_min(&self) -> T {
        -self.ly / T::lit(2.0)
    }

    pub fn y_max(&self) -> T {
        self.ly / T::lit(2.0)
    }

    pub fn pen_area(&self) -> T {
        self.pen_x.len() * self.pen_y.len()
    }

    /// Whether `wall` belongs to the absorbing part of the boundary.
    pub fn is_target(&self, wall: Wall) -> bool {
        wall == Wall::Right && self.target == TargetEdge::Open
    }

    pub fn contains(&self, p: Vec2<T>) -> bool {
        p.x >= T::zero() && p.x <= self.lx && p.y >= self.y_min() && p.y <= self.y_max()
    }
}

/// Discretisation constants shared by the grid solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericalParams<T> {
    /// Time step in s.
    pub dt: T,
    /// Spatial cell size in m.
    pub dx: T,
    /// Number of angular cells (even).
    pub n_theta: usize,
    /// Delay cell in s; must equal Δθ/ω whenever turning delays are active.
    pub d_eta: T,
    /// Simulation horizon in s.
    pub t_end: T,
    pub solver_tol: T,
    pub max_iters: usize,
}

impl<T: Real> NumericalParams<T> {
    /// `Δx = L_x/200`, `Δθ = π/20`, `Δη = Δθ/ω` and `Δt = Δη` (Courant number ≈ 0.33).
    pub fn paper(arena: &Arena<T>, omega: Omega<T>) -> Self {
        let n_theta = 40;
        let d_eta = Self::matching_d_eta(n_theta, omega);
        let dt = if omega.is_infinite() { T::lit(1e-2) } else { d_eta };
        Self {
            dt,
            dx: arena.lx / T::lit(200.0),
            n_theta,
            d_eta,
            t_end: T::lit(300.0),
            solver_tol: T::lit(1e-10),
            max_iters: 100_000,
        }
    }

    /// Δθ/ω, or zero for instant turning.
    pub fn matching_d_eta(n_theta: usize, omega: Omega<T>) -> T {
        omega.time_for(T::TAU() / T::from_usize_lossy(n_theta))
    }

    pub fn dtheta(&self) -> T {
        T::TAU() / T::from_usize_lossy(self.n_theta)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_theta < 2 || !self.n_theta.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "n_theta must be an even integer >= 2, got {}",
                self.n_theta
            )));
        }
        if !(self.dt > T::zero() && self.dx > T::zero() && self.t_end >= T::zero()) {
            return Err(Error::InvalidParameter("dt, dx must be > 0 and t_end >= 0".into()));
        }
        if !(self.solver_tol > T::zero()) || self.max_iters == 0 {
            return Err(Error::InvalidParameter(
                "solver tolerance and iteration cap must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `s·dt/dx ≤ 1`.
    pub fn check_cfl(&self, speed: T) -> Result<()> {
        let c = speed * self.dt / self.dx;
        if c > T::one() {
            return Err(Error::Cfl(format!("s*dt/dx = {c} > 1")));
        }
        Ok(())
    }
}
