//! Flat experiment configuration with unit-suffixed keys.
//!
//! Every key has a default, so an empty file is the experimental setup. A
//! minimal override file looks like
//!
//! ```toml
//! seed = 3
//! omega_rad_per_s = inf
//! collisions = "hard-sphere"
//! ```
//!
//! Optional grid keys (`fvm_dt_s`, `dx_m`, `d_eta_s`) fall back to the
//! standard discretisation derived from the arena and ω.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use turndelay::agents::{Collisions, ExperimentConfig, SignalMode, SimMode, Turning};
use turndelay::transport::ForwardConfig;
use turndelay::{Arena, Interval, NumericalParams, Omega, PhysicalParams, SignalField, TargetEdge};

use crate::error::CliError;

/// TOML integers are signed.
pub const MAX_SEED: u64 = i64::MAX as u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub n_runs: usize,
    pub n_agents: usize,
    /// Not part of the digest.
    pub output_dir: PathBuf,

    pub speed_m_per_s: f64,
    pub lambda0_per_s: f64,
    /// `inf` selects instant turning in the solvers.
    pub omega_rad_per_s: f64,
    pub diameter_m: f64,

    pub arena_lx_m: f64,
    pub arena_ly_m: f64,
    pub pen_edge_m: f64,
    pub pen_x_lo_m: f64,
    pub pen_x_hi_m: f64,
    pub pen_y_lo_m: f64,
    pub pen_y_hi_m: f64,
    pub target: Target,

    pub collisions: Collisions,
    pub turning: Turning,
    pub signal_mode: SignalMode,
    pub signal_alpha: f64,
    pub signal_t_a_s: f64,
    /// `S(0)`.
    pub signal_intercept: f64,
    /// `S(L_x) − S(0)`.
    pub signal_rise: f64,

    pub mc_dt_s: f64,
    pub warmup_s: f64,
    pub t_end_s: f64,
    /// Time of the position snapshot and density export used for KS comparisons.
    pub snapshot_time_s: Option<f64>,
    pub snapshot_runs: usize,
    pub histogram_bin_s: f64,

    pub fvm_dt_s: Option<f64>,
    pub dx_m: Option<f64>,
    pub n_theta: usize,
    pub d_eta_s: Option<f64>,
    pub mass_interval_s: f64,
    pub solver_tol: f64,
    pub max_iters: usize,
}

impl Default for Config {
    fn default() -> Self {
        let arena = Arena::epuck();
        let params = PhysicalParams::epuck();
        Self {
            seed: 1,
            n_runs: 50,
            n_agents: 16,
            output_dir: PathBuf::from("out"),
            speed_m_per_s: params.speed,
            lambda0_per_s: params.lambda0,
            omega_rad_per_s: params.omega.value(),
            diameter_m: params.diameter,
            arena_lx_m: arena.lx,
            arena_ly_m: arena.ly,
            pen_edge_m: arena.l0,
            pen_x_lo_m: arena.pen_x.lo,
            pen_x_hi_m: arena.pen_x.hi,
            pen_y_lo_m: arena.pen_y.lo,
            pen_y_hi_m: arena.pen_y.hi,
            target: Target::Open,
            collisions: Collisions::Point,
            turning: Turning::FiniteOmega,
            signal_mode: SignalMode::None,
            signal_alpha: 8.0,
            signal_t_a_s: 10.0,
            signal_intercept: 0.23,
            signal_rise: 0.39,
            mc_dt_s: 0.05,
            warmup_s: 20.0,
            t_end_s: 300.0,
            snapshot_time_s: None,
            snapshot_runs: 1_000,
            histogram_bin_s: 10.0,
            fvm_dt_s: None,
            dx_m: None,
            n_theta: 40,
            d_eta_s: None,
            mass_interval_s: 1.0,
            solver_tol: 1e-10,
            max_iters: 100_000,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Fails only for seeds above `i64::MAX`, which TOML cannot hold.
    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Optional keys filled in, so that spelling out a default does not change
    /// the digest.
    pub fn resolved(&self) -> Self {
        let num = self.numerics_unchecked();
        Self {
            fvm_dt_s: Some(num.dt),
            dx_m: Some(num.dx),
            d_eta_s: Some(num.d_eta),
            ..self.clone()
        }
    }

    /// SHA-256 of the resolved configuration without the output directory.
    pub fn digest(&self) -> Result<String, CliError> {
        let mut c = self.resolved();
        c.output_dir = PathBuf::new();
        let hash = Sha256::digest(c.to_toml()?.as_bytes());
        Ok(hash.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn omega(&self) -> Omega<f64> {
        Omega::from_value(self.omega_rad_per_s)
    }

    pub fn physical(&self) -> Result<PhysicalParams, CliError> {
        let p = PhysicalParams::new(self.speed_m_per_s, self.lambda0_per_s, self.omega(), self.diameter_m)?
            .with_signal(self.signal_alpha, self.signal_t_a_s);
        p.validate()?;
        Ok(p)
    }

    pub fn arena(&self) -> Result<Arena, CliError> {
        let a = Arena {
            lx: self.arena_lx_m,
            ly: self.arena_ly_m,
            l0: self.pen_edge_m,
            pen_x: Interval::new(self.pen_x_lo_m, self.pen_x_hi_m),
            pen_y: Interval::new(self.pen_y_lo_m, self.pen_y_hi_m),
            target: match self.target {
                Target::Open => TargetEdge::Open,
                Target::Closed => TargetEdge::Closed,
            },
        };
        a.validate()?;
        Ok(a)
    }

    pub fn signal_field(&self) -> SignalField {
        SignalField::new(self.signal_intercept, self.signal_rise / self.arena_lx_m)
    }

    fn numerics_unchecked(&self) -> NumericalParams {
        let arena = Arena {
            lx: self.arena_lx_m,
            ..Arena::epuck()
        };
        let mut num = NumericalParams::paper(&arena, self.omega());
        num.n_theta = self.n_theta;
        num.d_eta = self
            .d_eta_s
            .unwrap_or_else(|| NumericalParams::matching_d_eta(self.n_theta.max(1), self.omega()));
        num.dt = self
            .fvm_dt_s
            .unwrap_or(if self.omega().is_infinite() { num.dt } else { num.d_eta });
        if let Some(dx) = self.dx_m {
            num.dx = dx;
        }
        num.t_end = self.t_end_s;
        num.solver_tol = self.solver_tol;
        num.max_iters = self.max_iters;
        num
    }

    pub fn numerics(&self) -> Result<NumericalParams, CliError> {
        let num = self.numerics_unchecked();
        num.validate()?;
        Ok(num)
    }

    pub fn experiment(&self) -> Result<ExperimentConfig<f64>, CliError> {
        let mode = SimMode::new(self.collisions, self.turning, self.signal_mode);
        let mut cfg = ExperimentConfig::new(self.physical()?, self.arena()?, mode, self.mc_dt_s);
        if self.signal_mode != SignalMode::None {
            cfg.signal = Some(self.signal_field());
        }
        cfg.n_agents = self.n_agents;
        cfg.t_end = self.t_end_s;
        cfg.warmup = self.warmup_s;
        cfg.config_digest = self.digest()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Forward solver setup; the signal drift is active when a signal mode is set.
    pub fn forward(&self) -> Result<ForwardConfig<f64>, CliError> {
        let mut fc = ForwardConfig::new(self.physical()?, self.arena()?, self.numerics()?);
        if self.signal_mode != SignalMode::None {
            fc.signal = Some(self.signal_field());
        }
        fc.mass_interval = self.mass_interval_s;
        fc.snapshot_times = self.snapshot_time_s.into_iter().collect();
        Ok(fc)
    }

    /// Checks everything the subcommands rely on.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.seed > MAX_SEED {
            return Err(CliError::Config(format!("seed must not exceed {MAX_SEED}")));
        }
        if self.n_runs == 0 || self.n_agents == 0 {
            return Err(CliError::Config("n_runs and n_agents must be positive".into()));
        }
        if !(self.histogram_bin_s > 0.0 && self.mass_interval_s > 0.0) {
            return Err(CliError::Config(
                "histogram_bin_s and mass_interval_s must be positive".into(),
            ));
        }
        if let Some(t) = self.snapshot_time_s {
            if !(0.0..=self.t_end_s).contains(&t) {
                return Err(CliError::Config(format!(
                    "snapshot_time_s = {t} lies outside [0, t_end_s]"
                )));
            }
        }
        self.physical()?;
        self.arena()?;
        self.numerics()?;
        self.signal_field().validate(self.arena_lx_m)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn infinite_omega_parses() {
        let c = Config::from_toml("omega_rad_per_s = inf\nturning = \"instant\"").unwrap();
        assert!(c.omega().is_infinite());
        assert_eq!(Config::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(Config::from_toml("speed = 1.0"), Err(CliError::Config(_))));
    }

    #[test]
    fn explicit_defaults_keep_the_digest() {
        let a = Config::default();
        let b = a.resolved();
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        let c = Config {
            output_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.digest().unwrap(), c.digest().unwrap());
    }
}
