//! Subcommand pipelines. Each one fills a [`RunSummary`] and writes its files
//! into the output directory.

use std::fmt::Write as _;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::ValueEnum;
use turndelay::agents::{run_exit_experiment, snapshot_positions, Collisions, SignalMode, Turning};
use turndelay::exit_time::{pen_average, MetSolver};
use turndelay::stats::{
    censored_mean_exit, empirical_mass_curve, ks2d_peacock_capped, ks2d_vs_density_capped, tail_rate, KsOutcome,
    DEFAULT_CORNER_CAP,
};
use turndelay::transport::{solve_classical, solve_resting_state, CellLayout, ForwardSolution};
use turndelay::{AngleGrid, DensityGrid, ExitTimeGrid, MassCurve, Omega, Sample2D, TargetEdge};

use crate::config::Config;
use crate::error::CliError;
use crate::summary::{Artifact, CensoredSummary, Delta, KsMetric, RunSummary, SolverDiagnostics, Status};
use crate::svg::{LinePlot, Series};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Classical,
    Resting,
    MetClassical,
    MetDelayed,
    MetSignal,
}

impl Which {
    pub fn name(self) -> &'static str {
        match self {
            Which::Classical => "classical",
            Which::Resting => "resting",
            Which::MetClassical => "met-classical",
            Which::MetDelayed => "met-delayed",
            Which::MetSignal => "met-signal",
        }
    }
}

/// Monte Carlo estimates are paired with the backward solver of the same model.
const MC_PDE_PAIRS: [(&str, &str); 4] = [
    ("mc-instant", "met-classical"),
    ("mc-finite", "met-delayed"),
    ("mc-signal-instant", "met-signal-instant"),
    ("mc-signal-finite", "met-signal-finite"),
];

struct Out<'a> {
    dir: &'a Path,
}

impl Out<'_> {
    fn write(&self, name: &str, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(&path, e))
    }

    fn text(&self, name: &str, text: &str) -> Result<(), CliError> {
        self.write(name, |w| w.write_all(text.as_bytes()))
    }
}

fn prepare(dir: &Path) -> Result<Out<'_>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    Ok(Out { dir })
}

fn timed<R>(summary: &mut RunSummary, stage: &str, f: impl FnOnce() -> R) -> R {
    let start = Instant::now();
    let r = f();
    summary.timings_s.insert(stage.into(), start.elapsed().as_secs_f64());
    r
}

fn mc_label(cfg: &Config) -> String {
    let turning = match cfg.turning {
        Turning::Instant => "instant",
        Turning::FiniteOmega => "finite",
    };
    match cfg.signal_mode {
        SignalMode::None => format!("mc-{turning}"),
        _ => format!("mc-signal-{turning}"),
    }
}

fn positions_label(cfg: &Config) -> String {
    let c = match cfg.collisions {
        Collisions::Point => "point",
        Collisions::HardSphere => "hard-sphere",
    };
    format!("{}-{c}", mc_label(cfg))
}

pub fn simulate(cfg: &Config, dir: &Path, summary: &mut RunSummary) -> Result<(), CliError> {
    cfg.validate()?;
    let exp = cfg.experiment()?;
    summary.config_digest = Some(exp.config_digest.clone());
    summary.seed = Some(cfg.seed);
    let out = prepare(dir)?;

    let records = timed(summary, "simulate", || run_exit_experiment(&exp, cfg.n_runs, cfg.seed))?;
    out.write("runs.jsonl", |w| {
        for r in &records {
            serde_json::to_writer(&mut *w, r)?;
            writeln!(w)?;
        }
        Ok(())
    })?;
    summary.push_artifact("runs", "runs.jsonl", &mc_label(cfg), None);

    let steps = (cfg.t_end_s / cfg.mass_interval_s).round() as usize;
    let grid: Vec<f64> = (0..=steps)
        .map(|i| (i as f64 * cfg.mass_interval_s).min(cfg.t_end_s))
        .collect();
    let curve = empirical_mass_curve(&records, &grid);
    out.write("mass_curve_mc.csv", |w| curve.write_csv(w))?;
    summary.push_artifact("mass-curve", "mass_curve_mc.csv", &mc_label(cfg), None);
    out.text(
        "mass_curve_mc.svg",
        &LinePlot::new("Robots remaining in the arena", "t (s)", "m(t)")
            .with(Series::new(&mc_label(cfg), curve.samples.clone()))
            .render(),
    )?;
    summary.push_artifact("figure", "mass_curve_mc.svg", &mc_label(cfg), None);

    let histogram = exit_histogram(&records, cfg.t_end_s, cfg.histogram_bin_s);
    out.write("exit_histogram.csv", |w| {
        writeln!(w, "bin_lo_s,bin_hi_s,exits")?;
        for (lo, hi, n) in &histogram {
            writeln!(w, "{lo},{hi},{n}")?;
        }
        Ok(())
    })?;
    summary.push_artifact("histogram", "exit_histogram.csv", &mc_label(cfg), None);

    if exp.arena.target == TargetEdge::Open {
        let cm = censored_mean_exit(&records, cfg.t_end_s)?;
        summary.push_estimate(&mc_label(cfg), cm.mean);
        summary.censored_mean = Some(CensoredSummary {
            mean_s: cm.mean,
            exited: cm.exited,
            censored: cm.censored,
            exit_mean_s: cm.exit_mean,
            tail_mean_s: cm.tail_mean,
            fit_rate_per_s: cm.fit_rate,
        });
    }

    if let Some(t) = cfg.snapshot_time_s {
        let sample = timed(summary, "snapshot", || {
            snapshot_positions(&exp, cfg.snapshot_runs, cfg.seed, t)
        })?;
        out.write("positions_mc.csv", |w| {
            writeln!(w, "x_m,y_m")?;
            for (x, y) in &sample.points {
                writeln!(w, "{x},{y}")?;
            }
            Ok(())
        })?;
        summary.push_artifact("positions", "positions_mc.csv", &positions_label(cfg), Some(t));
    }
    Ok(())
}

/// `(lo, hi, exits)` per bin of width `bin` covering `[0, t_end]`.
pub fn exit_histogram(records: &[turndelay::RunRecord], t_end: f64, bin: f64) -> Vec<(f64, f64, usize)> {
    let n = ((t_end / bin).ceil() as usize).max(1);
    let mut counts = vec![0usize; n];
    for r in records {
        for &(_, t) in &r.exit_times {
            let b = ((t / bin).floor() as usize).min(n - 1);
            counts[b] += 1;
        }
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (i as f64 * bin, ((i + 1) as f64 * bin).min(t_end), c))
        .collect()
}

pub fn solve(cfg: &Config, which: Which, dir: &Path, summary: &mut RunSummary) -> Result<(), CliError> {
    cfg.validate()?;
    summary.config_digest = Some(cfg.digest()?);
    let out = prepare(dir)?;
    match which {
        Which::Classical | Which::Resting => solve_forward(cfg, which, &out, summary),
        _ => {
            let (name, grid) = solve_met(cfg, which, cfg.omega(), summary)?;
            write_met(&name, &grid, &out, summary)?;
            out.text(
                &format!("{name}_profile.svg"),
                &profile_plot(&[(name.clone(), grid.profile())]).render(),
            )?;
            summary.push_artifact("figure", &format!("{name}_profile.svg"), &name, None);
            Ok(())
        }
    }
}

fn solve_forward(cfg: &Config, which: Which, out: &Out, summary: &mut RunSummary) -> Result<(), CliError> {
    let fc = cfg.forward()?;
    let name = format!("fvm-{}", which.name());
    let sol: ForwardSolution<f64> = timed(summary, &name, || match which {
        Which::Classical => solve_classical(&fc),
        _ => solve_resting_state(&fc),
    })?;
    summary.solvers.push(SolverDiagnostics {
        name: name.clone(),
        iterations: None,
        residual: None,
        steps: Some(sol.steps),
        dt_s: Some(sol.dt),
    });

    let file = format!("mass_curve_{}.csv", which.name());
    out.write(&file, |w| {
        writeln!(w, "t_s,mass,running_mass")?;
        for ((t, m), (_, r)) in sol.mass.samples.iter().zip(&sol.running_mass.samples) {
            writeln!(w, "{t},{m},{r}")?;
        }
        Ok(())
    })?;
    summary.push_artifact("mass-curve", &file, &name, None);
    let mut plot = LinePlot::new("Mass remaining in the arena", "t (s)", "m(t)")
        .with(Series::new(&name, sol.mass.samples.clone()));
    if which == Which::Resting {
        plot = plot.with(Series::new("running phase", sol.running_mass.samples.clone()).dashed());
    }
    let fig = format!("mass_curve_{}.svg", which.name());
    out.text(&fig, &plot.render())?;
    summary.push_artifact("figure", &fig, &name, None);

    if fc.arena.target == TargetEdge::Open {
        if let Some(mean) = mass_curve_mean(&sol.mass) {
            summary.push_estimate(&name, mean);
        }
    }
    for snap in &sol.snapshots {
        let masses = snapshot_masses(&snap.density, snap.resting.as_ref());
        let file = format!("density_{}.csv", which.name());
        out.write(&file, |w| write_density(w, &snap.density.layout, &masses))?;
        summary.push_artifact("density", &file, &name, Some(snap.t));
    }
    Ok(())
}

/// `∫ m dt` with the late-time exponential tail added past the horizon.
fn mass_curve_mean(curve: &MassCurve) -> Option<f64> {
    let s = &curve.samples;
    let body: f64 = s.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum();
    let (_, last) = curve.last()?;
    let beta = tail_rate(curve).ok()?;
    (beta > 0.0).then(|| body + last / beta)
}

/// Running plus resting mass per spatial cell.
fn snapshot_masses(density: &DensityGrid, resting: Option<&turndelay::RestingGrid>) -> Vec<f64> {
    let mut masses = density.cell_masses();
    if let Some(r) = resting {
        let l = r.layout;
        let w = l.dx * l.dy * l.angles.dtheta::<f64>() * r.d_eta;
        for chunk in r.values.chunks(l.cells()) {
            for (m, v) in masses.iter_mut().zip(chunk) {
                *m += v * w;
            }
        }
    }
    masses
}

fn write_density(w: &mut dyn Write, l: &CellLayout<f64>, masses: &[f64]) -> std::io::Result<()> {
    writeln!(w, "x_lo_m,x_hi_m,y_lo_m,y_hi_m,mass")?;
    for j in 0..l.ny {
        for i in 0..l.nx {
            writeln!(
                w,
                "{},{},{},{},{}",
                l.x_edge(i),
                l.x_edge(i + 1),
                l.y_edge(j),
                l.y_edge(j + 1),
                masses[j * l.nx + i]
            )?;
        }
    }
    Ok(())
}

fn solve_met(
    cfg: &Config,
    which: Which,
    omega: Omega<f64>,
    summary: &mut RunSummary,
) -> Result<(String, ExitTimeGrid), CliError> {
    let params = cfg.physical()?;
    let arena = cfg.arena()?;
    let solver = MetSolver::new(cfg.numerics()?);
    let name = match which {
        Which::MetClassical => "met-classical".to_string(),
        Which::MetDelayed => "met-delayed".to_string(),
        _ if omega.is_infinite() => "met-signal-instant".to_string(),
        _ => "met-signal-finite".to_string(),
    };
    let grid = timed(summary, &name, || match which {
        Which::MetClassical => solver.classical(&params, &arena),
        Which::MetDelayed => solver.delayed(&params, &arena),
        _ => solver.signal(&params, &arena, &cfg.signal_field(), omega),
    })?;
    summary.solvers.push(SolverDiagnostics {
        name: name.clone(),
        iterations: Some(grid.iterations),
        residual: Some(grid.residual),
        steps: None,
        dt_s: None,
    });
    summary.push_estimate(&name, pen_average(&grid, &arena));
    Ok((name, grid))
}

fn write_met(name: &str, grid: &ExitTimeGrid, out: &Out, summary: &mut RunSummary) -> Result<(), CliError> {
    let profile = format!("{name}_profile.csv");
    out.write(&profile, |w| grid.write_profile_csv(w))?;
    summary.push_artifact("profile", &profile, name, None);
    let full = format!("{name}_grid.csv");
    out.write(&full, |w| grid.write_csv(w))?;
    summary.push_artifact("met-grid", &full, name, None);
    Ok(())
}

fn profile_plot(profiles: &[(String, Vec<(f64, f64)>)]) -> LinePlot {
    profiles.iter().enumerate().fold(
        LinePlot::new("Direction-averaged mean exit time", "x (m)", "mean exit time (s)"),
        |p, (n, (name, pts))| {
            let s = Series::new(name, pts.clone());
            p.with(if n % 2 == 1 { s.dashed() } else { s })
        },
    )
}

/// Every backward solver: classical, delayed, and the signal problem at ω = ∞
/// and at the configured ω.
pub fn report(cfg: &Config, dir: &Path, summary: &mut RunSummary) -> Result<(), CliError> {
    cfg.validate()?;
    summary.config_digest = Some(cfg.digest()?);
    let out = prepare(dir)?;
    let mut runs = vec![
        (Which::MetClassical, cfg.omega()),
        (Which::MetDelayed, cfg.omega()),
        (Which::MetSignal, Omega::Infinite),
    ];
    if !cfg.omega().is_infinite() {
        runs.push((Which::MetSignal, cfg.omega()));
    }
    let mut profiles = Vec::new();
    for (which, omega) in runs {
        let (name, grid) = solve_met(cfg, which, omega, summary)?;
        write_met(&name, &grid, &out, summary)?;
        profiles.push((name, grid.profile()));
    }
    out.text("met_profiles.svg", &profile_plot(&profiles).render())?;
    summary.push_artifact("figure", "met_profiles.svg", "met", None);
    let own = summary.estimates.clone();
    add_gaps(summary, std::slice::from_ref(&own));
    Ok(())
}

fn add_gaps(summary: &mut RunSummary, sources: &[Vec<crate::summary::Estimate>]) {
    let find = |name: &str| sources.iter().flatten().find(|e| e.name == name).map(|e| e.seconds);
    let mut pairs = vec![
        ("classical-vs-delayed", "met-classical", "met-delayed"),
        ("signal-instant-vs-finite", "met-signal-instant", "met-signal-finite"),
    ];
    let mc: Vec<(String, &str, &str)> = MC_PDE_PAIRS
        .iter()
        .map(|(m, p)| (format!("{p}-vs-{m}"), *p, *m))
        .collect();
    pairs.extend(mc.iter().map(|(k, p, m)| (k.as_str(), *p, *m)));
    for (key, a, b) in pairs {
        if let (Some(x), Some(y)) = (find(a), find(b)) {
            summary.gaps.insert(key.into(), y - x);
        }
    }
}

struct Loaded {
    label: String,
    t: Option<f64>,
    path: PathBuf,
}

pub fn compare(paths: &[PathBuf], dir: &Path, summary: &mut RunSummary) -> Result<(), CliError> {
    if paths.is_empty() {
        return Err(CliError::Usage("compare needs at least one summary".into()));
    }
    let mut inputs = Vec::new();
    for p in paths {
        let (s, base) = RunSummary::read(p)?;
        if s.status != Status::Ok {
            return Err(CliError::Schema(format!("{} records a failed run", p.display())));
        }
        inputs.push((s, base));
    }

    for (i, (a, _)) in inputs.iter().enumerate() {
        for (j, (b, _)) in inputs.iter().enumerate().skip(i + 1) {
            for ea in &a.estimates {
                if let Some(vb) = b.estimate(&ea.name) {
                    summary.deltas.push(Delta {
                        a: format!("{i}:{}", ea.name),
                        b: format!("{j}:{}", ea.name),
                        delta_s: vb - ea.seconds,
                    });
                }
            }
        }
    }
    let estimates: Vec<_> = inputs.iter().map(|(s, _)| s.estimates.clone()).collect();
    add_gaps(summary, &estimates);

    let pick = |kind: &str| -> Vec<Loaded> {
        inputs
            .iter()
            .enumerate()
            .flat_map(|(i, (s, base))| {
                s.artifacts
                    .iter()
                    .filter(|a| a.kind == kind)
                    .map(move |a: &Artifact| Loaded {
                        label: format!("{i}:{}", a.label),
                        t: a.t_s,
                        path: base.join(&a.path),
                    })
            })
            .collect()
    };
    let samples: Vec<(Loaded, Sample2D)> = pick("positions")
        .into_iter()
        .map(|l| read_positions(&l.path).map(|s| (l, s)))
        .collect::<Result<_, _>>()?;
    let densities: Vec<(Loaded, DensityGrid)> = pick("density")
        .into_iter()
        .map(|l| read_density(&l.path).map(|d| (l, d)))
        .collect::<Result<_, _>>()?;

    let same_time = |a: &Loaded, b: &Loaded| -> Result<(), CliError> {
        match (a.t, b.t) {
            (Some(x), Some(y)) if (x - y).abs() <= 1e-9 * x.abs().max(1.0) => Ok(()),
            _ => Err(CliError::Schema(format!(
                "{} (t = {:?}) and {} (t = {:?}) are not snapshots at the same time",
                a.label, a.t, b.label, b.t
            ))),
        }
    };
    let mut push = |a: &Loaded, b: &Loaded, o: KsOutcome<f64>| {
        summary.ks.push(KsMetric {
            a: a.label.clone(),
            b: b.label.clone(),
            d: o.d,
            corners: o.corners,
            capped: o.capped,
        })
    };
    let start = Instant::now();
    for (i, (la, sa)) in samples.iter().enumerate() {
        for (lb, sb) in &samples[i + 1..] {
            same_time(la, lb)?;
            push(la, lb, ks2d_peacock_capped(sa, sb, DEFAULT_CORNER_CAP)?);
        }
        for (lb, db) in &densities {
            same_time(la, lb)?;
            push(la, lb, ks2d_vs_density_capped(sa, db, DEFAULT_CORNER_CAP)?);
        }
    }
    summary.timings_s.insert("ks".into(), start.elapsed().as_secs_f64());

    let mut table = String::from("a,b,d\n");
    for k in &summary.ks {
        let _ = writeln!(table, "{},{},{}", k.a, k.b, k.d);
    }
    let out = prepare(dir)?;
    out.text("ks.csv", &table)?;
    summary.push_artifact("ks", "ks.csv", "ks", None);
    Ok(())
}

fn csv_reader(path: &Path, header: &[&str]) -> Result<csv::Reader<std::fs::File>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
    let found = r
        .headers()
        .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
    if found.iter().ne(header.iter().copied()) {
        return Err(CliError::Schema(format!(
            "{}: expected header {}, found {}",
            path.display(),
            header.join(","),
            found.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(r)
}

fn parse_row(path: &Path, row: csv::Result<csv::StringRecord>) -> Result<Vec<f64>, CliError> {
    let bad = |m: String| CliError::Schema(format!("{}: {m}", path.display()));
    let row = row.map_err(|e| bad(e.to_string()))?;
    row.iter()
        .map(|v| v.trim().parse::<f64>().map_err(|e| bad(format!("{v:?}: {e}"))))
        .collect()
}

pub fn read_positions(path: &Path) -> Result<Sample2D, CliError> {
    let mut r = csv_reader(path, &["x_m", "y_m"])?;
    let points = r
        .records()
        .map(|row| parse_row(path, row).map(|v| (v[0], v[1])))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Sample2D::new(points))
}

/// Rebuilds a two-heading grid whose cell masses match the file.
pub fn read_density(path: &Path) -> Result<DensityGrid, CliError> {
    let mut r = csv_reader(path, &["x_lo_m", "x_hi_m", "y_lo_m", "y_hi_m", "mass"])?;
    let rows = r
        .records()
        .map(|row| parse_row(path, row))
        .collect::<Result<Vec<_>, _>>()?;
    let bad = |m: &str| CliError::Schema(format!("{}: {m}", path.display()));
    let first = rows.first().ok_or_else(|| bad("no cells"))?;
    let (dx, dy) = (first[1] - first[0], first[3] - first[2]);
    let y0 = rows.iter().map(|r| r[2]).fold(f64::INFINITY, f64::min);
    let x0 = rows.iter().map(|r| r[0]).fold(f64::INFINITY, f64::min);
    if !(dx > 0.0 && dy > 0.0) || x0.abs() > 1e-12 {
        return Err(bad("cells must form a uniform grid starting at x = 0"));
    }
    let nx = rows
        .iter()
        .map(|r| ((r[0] / dx).round() as usize) + 1)
        .max()
        .unwrap_or(0);
    let ny = rows
        .iter()
        .map(|r| (((r[2] - y0) / dy).round() as usize) + 1)
        .max()
        .unwrap_or(0);
    if nx * ny != rows.len() {
        return Err(bad("cell count does not match the grid extent"));
    }
    let layout = CellLayout {
        nx,
        ny,
        dx,
        dy,
        y0,
        angles: AngleGrid::new(2),
    };
    let mut grid = DensityGrid::zeros(layout);
    let scale = 1.0 / (dx * dy * layout.angles.dtheta::<f64>());
    for r in &rows {
        let i = (r[0] / dx).round() as usize;
        let j = ((r[2] - y0) / dy).round() as usize;
        grid.values[j * nx + i] = r[4] * scale;
    }
    Ok(grid)
}
