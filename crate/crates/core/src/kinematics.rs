//! Turning and delay kernels, specular reflection and the angular grid.

use num_rational::Ratio;
use rand::Rng;

use crate::num::{wrap_angle, Real};
use crate::params::Omega;
use crate::vec2::Vec2;

/// Shortest angular distance between two headings, in `[0, π]`.
pub fn angular_distance<T: Real>(a: T, b: T) -> T {
    wrap_angle(b - a).abs()
}

/// Time needed to rotate from `theta_from` to `theta_to` at angular speed `omega`:
/// `arccos(cos(θ_to − θ_from))/ω`. Zero for instant turning.
pub fn delay_kernel<T: Real>(theta_from: T, theta_to: T, omega: Omega<T>) -> T {
    omega.time_for(angular_distance(theta_from, theta_to))
}

/// Specular reflection `v − 2(v·n)n` about a unit normal.
pub fn reflect_velocity<T: Real>(v: Vec2<T>, n: Vec2<T>) -> Vec2<T> {
    let two = T::lit(2.0);
    v - n * (two * v.dot(n))
}

/// Maps a uniform deviate `r ∈ [0, 1]` to `s·(cos 2πr, sin 2πr)`.
pub fn direction_from_uniform<T: Real>(r: T, speed: T) -> Vec2<T> {
    Vec2::from_angle(T::TAU() * r, speed)
}

/// Heading angle in `(−π, π]` drawn from the uniform turning kernel.
pub fn sample_heading<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    let r: f64 = rng.gen();
    wrap_angle(T::TAU() * T::lit(r))
}

/// Velocity on the speed-`s` circle drawn from the uniform turning kernel.
pub fn sample_uniform_direction<T: Real, R: Rng + ?Sized>(rng: &mut R, speed: T) -> Vec2<T> {
    let r: f64 = rng.gen();
    direction_from_uniform(T::lit(r), speed)
}

/// Mean reorientation time `π/(2ω)` under the uniform kernel.
pub fn mean_turn_time<T: Real>(omega: Omega<T>) -> T {
    omega.time_for(T::FRAC_PI_2())
}

/// Midpoint angular grid `θ_k = −π + (k + ½)Δθ` with an even cell count.
///
/// Both wall reflections `θ → π − θ` and `θ → −θ` permute this grid onto
/// itself, and no cell centre sits at `±π/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AngleGrid {
    n: usize,
}

impl AngleGrid {
    /// Panics if `n` is odd or zero.
    pub fn new(n: usize) -> Self {
        assert!(
            n >= 2 && n.is_multiple_of(2),
            "angular cell count must be even, got {n}"
        );
        Self { n }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dtheta<T: Real>(&self) -> T {
        T::TAU() / T::from_usize_lossy(self.n)
    }

    pub fn theta<T: Real>(&self, k: usize) -> T {
        -T::PI() + (T::from_usize_lossy(k) + T::lit(0.5)) * self.dtheta::<T>()
    }

    pub fn thetas<T: Real>(&self) -> Vec<T> {
        (0..self.n).map(|k| self.theta(k)).collect()
    }

    /// Index of `π − θ_k` (reflection off a wall with normal `±e_x`).
    pub fn reflect_x(&self, k: usize) -> usize {
        (self.n / 2 + self.n - 1 - k) % self.n
    }

    /// Index of `−θ_k` (reflection off a wall with normal `±e_y`).
    pub fn reflect_y(&self, k: usize) -> usize {
        self.n - 1 - k
    }

    /// Cell index nearest to an arbitrary heading.
    pub fn index_of<T: Real>(&self, theta: T) -> usize {
        let u = (wrap_angle(theta) + T::PI()) / self.dtheta::<T>();
        let k = u.floor().to_usize().unwrap_or(0);
        k.min(self.n - 1)
    }

    /// Angular distance between two cells, counted in cells (`0..=n/2`).
    pub fn cell_distance(&self, a: usize, b: usize) -> usize {
        let d = a.abs_diff(b) % self.n;
        d.min(self.n - d)
    }

    /// Mean of [`cell_distance`](Self::cell_distance) over a uniformly chosen target
    /// cell, as an exact rational. Equals `n/4`, so that the mean delay
    /// `(n/4)·Δθ/ω` is exactly `π/(2ω)`.
    pub fn mean_delay_cells(&self) -> Ratio<u64> {
        let total: u64 = (0..self.n).map(|k| self.cell_distance(0, k) as u64).sum();
        Ratio::new(total, self.n as u64)
    }
}
