use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use turndelay::agents::RunRecord;
use turndelay::params::{Arena, TargetEdge};
use turndelay::stats::{censored_mean_exit, empirical_mass_curve, ks2d_peacock, ks2d_vs_density, Sample2D};
use turndelay::transport::{initial_condition, CellLayout, DensityGrid};

fn uniform(n: usize, rng: &mut ChaCha8Rng, arena: &Arena<f64>) -> Sample2D<f64> {
    Sample2D::new(
        (0..n)
            .map(|_| (rng.gen::<f64>() * arena.lx, arena.y_min() + rng.gen::<f64>() * arena.ly))
            .collect(),
    )
}

fn uniform_grid(arena: &Arena<f64>) -> DensityGrid<f64> {
    let layout = CellLayout::new(arena, arena.lx / 60.0, 2);
    let mut g = DensityGrid::zeros(layout);
    g.values.iter_mut().for_each(|v| *v = 1.0);
    g
}

#[test]
fn uniform_sample_against_uniform_grid() {
    let arena = Arena::epuck().with_target(TargetEdge::Closed);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = ks2d_vs_density(&uniform(10_000, &mut rng, &arena), &uniform_grid(&arena)).unwrap();
    assert!(d <= 0.05, "{d}");
}

#[test]
fn sample_drawn_from_the_grid_itself() {
    let arena = Arena::epuck().with_target(TargetEdge::Closed);
    let layout = CellLayout::new(&arena, arena.lx / 40.0, 2);
    let mut g = initial_condition(&arena, &layout);
    // skew the pen distribution so the check is not trivially uniform
    let c = layout.cells();
    for k in 0..2 {
        for cell in 0..c {
            let i = cell % layout.nx;
            g.values[k * c + cell] *= 1.0 + i as f64;
        }
    }
    let masses = g.cell_masses();
    let total: f64 = masses.iter().sum();
    let mut cdf = Vec::with_capacity(masses.len());
    let mut acc = 0.0;
    for m in &masses {
        acc += m / total;
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts = (0..10_000)
        .map(|_| {
            let u: f64 = rng.gen();
            let cell = cdf.partition_point(|&c| c < u).min(masses.len() - 1);
            let (j, i) = (cell / layout.nx, cell % layout.nx);
            (
                layout.x_edge(i) + rng.gen::<f64>() * layout.dx,
                layout.y_edge(j) + rng.gen::<f64>() * layout.dy,
            )
        })
        .collect();
    let d = ks2d_vs_density(&Sample2D::new(pts), &g).unwrap();
    assert!(d <= 0.05, "{d}");
}

#[test]
fn metric_shrinks_with_sample_size() {
    let arena = Arena::epuck();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let median = |n: usize, rng: &mut ChaCha8Rng| {
        let mut d: Vec<f64> = (0..20)
            .map(|_| ks2d_peacock(&uniform(n, rng, &arena), &uniform(n, rng, &arena)).unwrap())
            .collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        0.5 * (d[9] + d[10])
    };
    let small = median(4_000, &mut rng);
    let large = median(40_000, &mut rng);
    assert!(large < small, "{large} vs {small}");
}

#[test]
fn recovers_exponential_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let t_end = 300.0;
    let records: Vec<RunRecord<f64>> = (0..625)
        .map(|run| {
            let times: Vec<f64> = (0..16).map(|_| -100.0 * (1.0 - rng.gen::<f64>()).ln()).collect();
            let mut exit_times: Vec<(usize, f64)> =
                times.iter().copied().enumerate().filter(|e| e.1 <= t_end).collect();
            exit_times.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
            RunRecord {
                seed: 4,
                run_index: run,
                censored: 16 - exit_times.len(),
                exit_times,
                config_digest: String::new(),
            }
        })
        .collect();
    let out = censored_mean_exit(&records, t_end).unwrap();
    assert!(out.censored > 0);
    assert!((out.mean - 100.0).abs() / 100.0 < 0.03, "{}", out.mean);
    let beta = out.fit_rate.unwrap();
    assert!((beta - 0.01).abs() < 0.002, "{beta}");
}

fn record(times: Vec<f64>, censored: usize) -> RunRecord<f64> {
    RunRecord {
        seed: 0,
        run_index: 0,
        exit_times: times.into_iter().enumerate().collect(),
        censored,
        config_digest: String::new(),
    }
}

proptest! {
    #[test]
    fn peacock_is_symmetric_and_permutation_invariant(
        a in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..40),
        b in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..40),
        rot in 0usize..40,
    ) {
        let sa = Sample2D::new(a.clone());
        let sb = Sample2D::new(b);
        let d = ks2d_peacock(&sa, &sb).unwrap();
        prop_assert_eq!(d, ks2d_peacock(&sb, &sa).unwrap());
        prop_assert!((0.0..=1.0).contains(&d));
        let mut shuffled = a;
        let r = rot % shuffled.len();
        shuffled.rotate_left(r);
        shuffled.reverse();
        prop_assert_eq!(d, ks2d_peacock(&Sample2D::new(shuffled), &sb).unwrap());
    }

    #[test]
    fn plain_mean_without_censoring(times in prop::collection::vec(0.1f64..300.0, 1..50)) {
        let expected = times.iter().sum::<f64>() / times.len() as f64;
        let out = censored_mean_exit(&[record(times, 0)], 300.0).unwrap();
        prop_assert!((out.mean - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn mass_curve_is_monotone_step_function(
        runs in prop::collection::vec((prop::collection::vec(0.0f64..300.0, 0..16), 0usize..4), 1..6),
    ) {
        let records: Vec<_> = runs.into_iter().map(|(t, c)| record(t, c)).collect();
        let grid: Vec<f64> = (0..=600).map(|i| i as f64 * 0.5).collect();
        let curve = empirical_mass_curve(&records, &grid);
        prop_assert!(curve.is_non_increasing(0.0));
        prop_assert!(curve.samples.iter().all(|s| (0.0..=1.0).contains(&s.1)));
        // constant between consecutive event times
        let mut events: Vec<f64> = records.iter().flat_map(|r| r.exit_times.iter().map(|e| e.1)).collect();
        events.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in curve.samples.windows(2) {
            let jump = events.iter().any(|&e| e > w[0].0 && e <= w[1].0);
            if !jump {
                prop_assert_eq!(w[0].1, w[1].1);
            }
        }
    }
}
