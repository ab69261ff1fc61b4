//! Two-sample 2-D Kolmogorov–Smirnov metrics, empirical mass curves and the
//! censored mean exit time.

use crate::agents::RunRecord;
use crate::error::{Error, Result};
use crate::num::Real;
use crate::params::Arena;
use crate::transport::{DensityGrid, MassCurve};

/// Default ceiling on the number of Peacock test corners.
pub const DEFAULT_CORNER_CAP: usize = 10_000;

/// Planar positions, in m.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sample2D<T> {
    pub points: Vec<(T, T)>,
}

impl<T: Real> Sample2D<T> {
    pub fn new(points: Vec<(T, T)>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn all_inside(&self, arena: &Arena<T>) -> bool {
        let tol = T::lit(1e-9);
        self.points
            .iter()
            .all(|&(x, y)| x >= -tol && x <= arena.lx + tol && y >= arena.y_min() - tol && y <= arena.y_max() + tol)
    }
}

/// Metric together with the corner bookkeeping that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsOutcome<T> {
    pub d: T,
    /// Number of test corners actually evaluated.
    pub corners: usize,
    /// `true` when the corner set was thinned to respect the cap.
    pub capped: bool,
}

/// Peacock's statistic with the default corner cap.
pub fn ks2d_peacock<T: Real>(a: &Sample2D<T>, b: &Sample2D<T>) -> Result<T> {
    Ok(ks2d_peacock_capped(a, b, DEFAULT_CORNER_CAP)?.d)
}

/// Maximum over corners `(X, Y)` and the four quadrants of `|F_a − F_b|`.
///
/// Corners are all pairs of pooled x and pooled y coordinates. When that
/// exceeds `cap`, each axis keeps `⌊√cap⌋` coordinates at evenly spaced ranks.
pub fn ks2d_peacock_capped<T: Real>(a: &Sample2D<T>, b: &Sample2D<T>, cap: usize) -> Result<KsOutcome<T>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let pooled = || a.points.iter().chain(&b.points);
    let (xs, cx) = cut_values(pooled().map(|p| p.0).collect(), cap);
    let (ys, cy) = cut_values(pooled().map(|p| p.1).collect(), cap);
    let ca = QuadrantCounts::new(&a.points, &xs, &ys);
    let cb = QuadrantCounts::new(&b.points, &xs, &ys);
    let mut d = T::zero();
    for c in 0..xs.len() {
        for r in 0..ys.len() {
            let fa = ca.fractions(c, r);
            let fb = cb.fractions(c, r);
            for q in 0..4 {
                d = d.max((fa[q] - fb[q]).abs());
            }
        }
    }
    Ok(KsOutcome {
        d,
        corners: xs.len() * ys.len(),
        capped: cx || cy,
    })
}

/// Peacock's statistic between a sample and a cell-mass distribution.
///
/// The grid CDF is piecewise constant per cell, so quadrant masses at any
/// corner follow from bilinear interpolation of the cumulative cell-mass table.
/// Corners combine sample coordinates and cell edges.
pub fn ks2d_vs_density<T: Real>(a: &Sample2D<T>, p: &DensityGrid<T>) -> Result<T> {
    Ok(ks2d_vs_density_capped(a, p, DEFAULT_CORNER_CAP)?.d)
}

pub fn ks2d_vs_density_capped<T: Real>(a: &Sample2D<T>, p: &DensityGrid<T>, cap: usize) -> Result<KsOutcome<T>> {
    if a.is_empty() {
        return Err(Error::EmptySample);
    }
    let l = p.layout;
    let masses = p.cell_masses();
    let total: T = masses.iter().copied().sum();
    if !(total > T::zero()) {
        return Err(Error::EmptySample);
    }
    // cum[(j)*(nx+1) + i] = mass with x below edge i and y below edge j
    let (nx, ny) = (l.nx, l.ny);
    let mut cum = vec![T::zero(); (nx + 1) * (ny + 1)];
    for j in 0..ny {
        let mut row = T::zero();
        for i in 0..nx {
            row += masses[j * nx + i] / total;
            cum[(j + 1) * (nx + 1) + i + 1] = cum[j * (nx + 1) + i + 1] + row;
        }
    }
    let cdf = |x: T, y: T| -> T {
        let fx = ((x / l.dx).max(T::zero())).min(T::from_usize_lossy(nx));
        let fy = (((y - l.y0) / l.dy).max(T::zero())).min(T::from_usize_lossy(ny));
        let i = fx.floor().to_usize().unwrap_or(0).min(nx - 1);
        let j = fy.floor().to_usize().unwrap_or(0).min(ny - 1);
        let (u, v) = (fx - T::from_usize_lossy(i), fy - T::from_usize_lossy(j));
        let at = |jj: usize, ii: usize| cum[jj * (nx + 1) + ii];
        let one = T::one();
        at(j, i) * (one - u) * (one - v)
            + at(j, i + 1) * u * (one - v)
            + at(j + 1, i) * (one - u) * v
            + at(j + 1, i + 1) * u * v
    };

    let edges_x = (0..=nx).map(|i| l.x_edge(i));
    let edges_y = (0..=ny).map(|j| l.y_edge(j));
    let (xs, cx) = cut_values(a.points.iter().map(|p| p.0).chain(edges_x).collect(), cap);
    let (ys, cy) = cut_values(a.points.iter().map(|p| p.1).chain(edges_y).collect(), cap);
    let ca = QuadrantCounts::new(&a.points, &xs, &ys);
    let top = l.y_edge(ny);
    let right = l.x_edge(nx);
    let col: Vec<T> = xs.iter().map(|&x| cdf(x, top)).collect();
    let row: Vec<T> = ys.iter().map(|&y| cdf(right, y)).collect();
    let mut d = T::zero();
    for (c, &x) in xs.iter().enumerate() {
        for (r, &y) in ys.iter().enumerate() {
            let fa = ca.fractions(c, r);
            let fb = quadrants(cdf(x, y), col[c], row[r]);
            for q in 0..4 {
                d = d.max((fa[q] - fb[q]).abs());
            }
        }
    }
    Ok(KsOutcome {
        d,
        corners: xs.len() * ys.len(),
        capped: cx || cy,
    })
}

/// Sorted distinct coordinates, thinned to `⌊√cap⌋` by evenly spaced ranks.
fn cut_values<T: Real>(mut v: Vec<T>, cap: usize) -> (Vec<T>, bool) {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    v.dedup();
    let k = ((cap as f64).sqrt().floor() as usize).max(1);
    if v.len() <= k {
        return (v, false);
    }
    let n = v.len();
    let picked = (0..k).map(|i| v[((2 * i + 1) * n) / (2 * k)]).collect();
    (picked, true)
}

/// `[x ≤ X ∧ y ≤ Y, x > X ∧ y ≤ Y, x ≤ X ∧ y > Y, x > X ∧ y > Y]` from the
/// lower-left fraction and the two marginals.
fn quadrants<T: Real>(ll: T, left: T, bottom: T) -> [T; 4] {
    [ll, bottom - ll, left - ll, T::one() - left - bottom + ll]
}

/// 2-D prefix counts of a sample binned against fixed cut values.
struct QuadrantCounts<T> {
    k: usize,
    n: T,
    /// `(kx+1) × (ky+1)` cumulative counts; the last index covers everything.
    cum: Vec<u32>,
    kx: usize,
    ky: usize,
}

impl<T: Real> QuadrantCounts<T> {
    fn new(points: &[(T, T)], xs: &[T], ys: &[T]) -> Self {
        let (kx, ky) = (xs.len(), ys.len());
        let w = kx + 1;
        let mut cum = vec![0u32; w * (ky + 1)];
        for &(x, y) in points {
            // x ≤ xs[c] exactly when bin ≤ c
            let bx = xs.partition_point(|&c| c < x);
            let by = ys.partition_point(|&c| c < y);
            cum[by * w + bx] += 1;
        }
        for r in 0..=ky {
            for c in 0..=kx {
                let mut v = cum[r * w + c];
                if c > 0 {
                    v += cum[r * w + c - 1];
                }
                if r > 0 {
                    v += cum[(r - 1) * w + c];
                }
                if r > 0 && c > 0 {
                    v -= cum[(r - 1) * w + c - 1];
                }
                cum[r * w + c] = v;
            }
        }
        Self {
            k: w,
            n: T::from_usize_lossy(points.len()),
            cum,
            kx,
            ky,
        }
    }

    fn fractions(&self, c: usize, r: usize) -> [T; 4] {
        let at = |r: usize, c: usize| T::from_usize_lossy(self.cum[r * self.k + c] as usize) / self.n;
        quadrants(at(r, c), at(self.ky, c), at(r, self.kx))
    }
}

/// Window of the exponential tail fit, as fractions of `t_end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitWindow {
    pub start: f64,
    pub end: f64,
    pub samples: usize,
}

impl Default for FitWindow {
    fn default() -> Self {
        Self {
            start: 0.5,
            end: 1.0,
            samples: 101,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CensoredMean<T> {
    pub mean: T,
    /// Decay rate β of the fitted tail; `None` when nothing was censored.
    pub fit_rate: Option<T>,
    pub exited: usize,
    pub censored: usize,
    /// Mean of the observed exit times.
    pub exit_mean: T,
    /// `t_end + 1/β` for censored agents.
    pub tail_mean: Option<T>,
}

/// Combined mean of observed exits and memoryless-tail estimates for the
/// agents still inside at `t_end`.
pub fn censored_mean_exit<T: Real>(records: &[RunRecord<T>], t_end: T) -> Result<CensoredMean<T>> {
    censored_mean_exit_with(records, t_end, FitWindow::default())
}

pub fn censored_mean_exit_with<T: Real>(
    records: &[RunRecord<T>],
    t_end: T,
    window: FitWindow,
) -> Result<CensoredMean<T>> {
    let exits: Vec<T> = records.iter().flat_map(|r| r.exit_times.iter().map(|e| e.1)).collect();
    let censored: usize = records.iter().map(|r| r.censored).sum();
    if exits.is_empty() {
        return Err(Error::EmptySample);
    }
    let exit_mean = exits.iter().copied().sum::<T>() / T::from_usize_lossy(exits.len());
    if censored == 0 {
        return Ok(CensoredMean {
            mean: exit_mean,
            fit_rate: None,
            exited: exits.len(),
            censored,
            exit_mean,
            tail_mean: None,
        });
    }
    if window.samples < 2 || !(window.end > window.start) {
        return Err(Error::InvalidParameter(
            "fit window needs two or more samples over a positive span".into(),
        ));
    }
    let t0 = t_end * T::lit(window.start);
    let t1 = t_end * T::lit(window.end);
    let grid: Vec<T> = (0..window.samples)
        .map(|i| t0 + (t1 - t0) * T::from_usize_lossy(i) / T::from_usize_lossy(window.samples - 1))
        .collect();
    let curve = empirical_mass_curve(records, &grid);
    let beta = tail_rate(&curve)?;
    let tail_mean = t_end + T::one() / beta;
    Ok(CensoredMean {
        mean: censored_mean_from_parts(exits.len(), exit_mean, censored, tail_mean),
        fit_rate: Some(beta),
        exited: exits.len(),
        censored,
        exit_mean,
        tail_mean: Some(tail_mean),
    })
}

/// `β = −d ln m/dt` by least squares over the samples with `m > 0`.
pub fn tail_rate<T: Real>(curve: &MassCurve<T>) -> Result<T> {
    let pts: Vec<(T, T)> = curve
        .samples
        .iter()
        .filter(|(_, m)| *m > T::zero())
        .map(|&(t, m)| (t, m.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::DegenerateFit(
            "fewer than two positive mass samples in the window".into(),
        ));
    }
    let n = T::from_usize_lossy(pts.len());
    let mt = pts.iter().map(|p| p.0).sum::<T>() / n;
    let ml = pts.iter().map(|p| p.1).sum::<T>() / n;
    let sxx: T = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    let sxy: T = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let beta = -sxy / sxx;
    if !(beta > T::zero()) || !beta.is_finite() {
        return Err(Error::DegenerateFit(format!(
            "mass does not decay over the window (rate {beta})"
        )));
    }
    Ok(beta)
}

/// `(n_exit·exit_mean + n_cens·tail_mean) / (n_exit + n_cens)`.
pub fn censored_mean_from_parts<T: Real>(n_exit: usize, exit_mean: T, n_censored: usize, tail_mean: T) -> T {
    let ne = T::from_usize_lossy(n_exit);
    let nc = T::from_usize_lossy(n_censored);
    (ne * exit_mean + nc * tail_mean) / (ne + nc)
}

/// Fraction of agents still inside at each `t`, averaged over runs.
pub fn empirical_mass_curve<T: Real>(records: &[RunRecord<T>], t_grid: &[T]) -> MassCurve<T> {
    let runs: Vec<(Vec<T>, T)> = records
        .iter()
        .filter(|r| r.agent_count() > 0)
        .map(|r| {
            let mut times: Vec<T> = r.exit_times.iter().map(|e| e.1).collect();
            times.sort_by(|a, b| a.partial_cmp(b).expect("finite exit times"));
            (times, T::from_usize_lossy(r.agent_count()))
        })
        .collect();
    let n_runs = T::from_usize_lossy(runs.len().max(1));
    let samples = t_grid
        .iter()
        .map(|&t| {
            let m: T = runs
                .iter()
                .map(|(times, n)| {
                    let gone = times.partition_point(|&e| e <= t);
                    (*n - T::from_usize_lossy(gone)) / *n
                })
                .sum();
            (t, if runs.is_empty() { T::one() } else { m / n_runs })
        })
        .collect();
    MassCurve { samples }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, x0: f64, seed: u64) -> Sample2D<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Sample2D::new((0..n).map(|_| (x0 + rng.gen::<f64>(), rng.gen::<f64>())).collect())
    }

    /// O(n³) reference straight from the definition.
    fn brute(a: &Sample2D<f64>, b: &Sample2D<f64>) -> f64 {
        let frac = |s: &Sample2D<f64>, x: f64, y: f64| {
            let mut q = [0.0; 4];
            for &(px, py) in &s.points {
                let idx = (px > x) as usize + 2 * (py > y) as usize;
                q[idx] += 1.0;
            }
            q.map(|v| v / s.len() as f64)
        };
        let mut d: f64 = 0.0;
        for &(x, _) in a.points.iter().chain(&b.points) {
            for &(_, y) in a.points.iter().chain(&b.points) {
                let (fa, fb) = (frac(a, x, y), frac(b, x, y));
                for q in 0..4 {
                    d = d.max((fa[q] - fb[q]).abs());
                }
            }
        }
        d
    }

    #[test]
    fn peacock_matches_definition() {
        let a = cloud(40, 0.0, 1);
        let b = cloud(55, 0.2, 2);
        let fast = ks2d_peacock_capped(&a, &b, usize::MAX).unwrap();
        assert!(!fast.capped);
        assert!((fast.d - brute(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn peacock_basic_cases() {
        let a = cloud(200, 0.0, 3);
        assert_eq!(ks2d_peacock(&a, &a).unwrap(), 0.0);
        let far = cloud(200, 5.0, 4);
        let exact = ks2d_peacock_capped(&a, &far, usize::MAX).unwrap();
        assert!((exact.d - 1.0).abs() < 1e-12);
        assert!(ks2d_peacock(&a, &far).unwrap() > 0.98);
        assert_eq!(ks2d_peacock(&a, &Sample2D::default()), Err(Error::EmptySample));
    }

    #[test]
    fn cap_thins_corners() {
        let a = cloud(500, 0.0, 5);
        let b = cloud(500, 0.0, 6);
        let out = ks2d_peacock_capped(&a, &b, 400).unwrap();
        assert!(out.capped);
        assert_eq!(out.corners, 400);
        let exact = ks2d_peacock_capped(&a, &b, usize::MAX).unwrap().d;
        assert!(out.d <= exact + 1e-12);
        assert!(exact - out.d < 0.05);
    }

    fn record(exits: &[f64], censored: usize) -> RunRecord<f64> {
        RunRecord {
            seed: 0,
            run_index: 0,
            exit_times: exits.iter().copied().enumerate().collect(),
            censored,
            config_digest: String::new(),
        }
    }

    #[test]
    fn censoring_without_censored_is_plain_mean() {
        let recs = vec![record(&[1.0, 2.0, 4.5], 0), record(&[0.5], 0)];
        let out = censored_mean_exit(&recs, 300.0).unwrap();
        assert_eq!(out.mean, (1.0 + 2.0 + 4.5 + 0.5) / 4.0);
        assert!(out.fit_rate.is_none());
    }

    #[test]
    fn censoring_needs_decay() {
        let recs = vec![record(&[1.0], 5)];
        assert!(matches!(censored_mean_exit(&recs, 300.0), Err(Error::DegenerateFit(_))));
        assert_eq!(censored_mean_exit(&[record(&[], 3)], 300.0), Err(Error::EmptySample));
    }

    #[test]
    fn mass_curve_edges() {
        let recs = vec![record(&[1.0, 2.0], 0), record(&[3.0], 1)];
        let c = empirical_mass_curve(&recs, &[0.0, 1.0, 2.5, 3.0, 10.0]);
        let m: Vec<f64> = c.samples.iter().map(|s| s.1).collect();
        assert_eq!(m, vec![1.0, 0.75, 0.5, 0.25, 0.25]);
        let done = empirical_mass_curve(&[record(&[1.0, 2.0], 0)], &[5.0]);
        assert_eq!(done.samples[0].1, 0.0);
    }
}
