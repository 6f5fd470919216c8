//! Neighbor-gathering timings under different point orderings.

use std::fmt::Write as _;
use std::time::Instant;

use crate::cloud::{FeatureMap, PointCloud};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::pointconv::{conv_forward, ConvParams, Geometry, KernelSpec};
use crate::rng::XorShift64;
use crate::spatial::{build_grid, mean_neighbor_rank_distance, order_points, query_ball_bruteforce, OrderStrategy};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub radii: Vec<f64>,
    pub orderings: Vec<OrderStrategy>,
    pub repetitions: usize,
    pub seed: u64,
    pub workers: usize,
    /// Also time the linear-scan sweep (quadratic in N).
    pub brute_force: bool,
    pub ordering_bits: u32,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![4096, 16384],
            radii: vec![0.075],
            orderings: vec![
                OrderStrategy::Identity,
                OrderStrategy::Random(7),
                OrderStrategy::Morton,
                OrderStrategy::XyzGrid,
            ],
            repetitions: 5,
            seed: 1,
            workers: 1,
            brute_force: true,
            ordering_bits: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchOp {
    /// Grid build plus a radius query at every point.
    GridSweep,
    /// Linear-scan query at every point.
    BruteSweep,
    /// Neighborhood binning plus one conv forward (4 -> 8 channels, R = 3).
    ConvGather,
}

impl BenchOp {
    pub fn name(self) -> &'static str {
        match self {
            BenchOp::GridSweep => "grid_sweep",
            BenchOp::BruteSweep => "brute_sweep",
            BenchOp::ConvGather => "conv_gather",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub radius: f64,
    pub ordering: OrderStrategy,
    pub op: BenchOp,
    pub times: Vec<f64>,
    pub median: f64,
    pub mean_rank_distance: f64,
    /// This ordering's mean rank distance over the random baseline's.
    pub locality_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub repetitions: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,radius,ordering,op");
        for r in 1..=self.repetitions {
            let _ = write!(s, ",rep_{r}");
        }
        s.push_str(",median_s,mean_rank_dist,locality_ratio_vs_random\n");
        for row in &self.rows {
            let _ = write!(s, "{},{},{},{}", row.n, row.radius, row.ordering.name(), row.op.name());
            for t in &row.times {
                let _ = write!(s, ",{t:.6e}");
            }
            let _ = writeln!(
                s,
                ",{:.6e},{},{}",
                row.median, row.mean_rank_distance, row.locality_ratio
            );
        }
        s
    }

    pub fn find(&self, n: usize, ordering: &str, op: BenchOp) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.n == n && r.ordering.name() == ordering && r.op == op)
    }
}

pub fn median(times: &[f64]) -> f64 {
    let mut t = times.to_vec();
    t.sort_by(f64::total_cmp);
    let m = t.len() / 2;
    if t.len() % 2 == 1 {
        t[m]
    } else {
        0.5 * (t[m - 1] + t[m])
    }
}

/// One warm-up run, then `reps` timed runs.
fn time_it(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<Vec<f64>> {
    f()?;
    (0..reps)
        .map(|_| {
            let t = Instant::now();
            f()?;
            Ok(t.elapsed().as_secs_f64())
        })
        .collect()
}

pub fn uniform_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = XorShift64::new(seed);
    PointCloud::new(
        (0..n)
            .map(|_| [rng.next_f64(), rng.next_f64(), rng.next_f64()])
            .collect(),
    )
    .expect("finite points")
}

pub fn bench_neighbors(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.repetitions == 0 || cfg.sizes.is_empty() || cfg.radii.is_empty() || cfg.orderings.is_empty() {
        return Err(Error::Config("bench needs sizes, radii, orderings and repetitions >= 1".into()));
    }
    if let Some(r) = cfg.radii.iter().find(|r| !(**r > 0.0)) {
        return Err(Error::Config(format!("bench radius {r} must be > 0")));
    }
    if let Some(n) = cfg.sizes.iter().find(|n| **n == 0) {
        return Err(Error::Config(format!("bench size {n} must be >= 1")));
    }
    let exec = Exec::with_workers(cfg.workers);
    let reps = cfg.repetitions;
    let mut rows = Vec::new();
    for &n in &cfg.sizes {
        let base = uniform_cloud(n, cfg.seed);
        for &radius in &cfg.radii {
            let random = cfg
                .orderings
                .iter()
                .copied()
                .find(|o| matches!(o, OrderStrategy::Random(_)))
                .unwrap_or(OrderStrategy::Random(cfg.seed ^ 0xA5A5));
            let baseline = order_points(&base, random, cfg.ordering_bits)?;
            let baseline_dist = mean_neighbor_rank_distance(&base, &baseline, radius)?.unwrap_or(0.0);
            let kernel = KernelSpec::new(radius, 3, Geometry::Ball)?;
            let mut params = ConvParams::<f32>::zeros(4, 8, kernel.cells());
            let mut rng = XorShift64::new(cfg.seed);
            params.weights.iter_mut().for_each(|w| *w = rng.uniform(-0.1, 0.1) as f32);
            for &ordering in &cfg.orderings {
                let order = order_points(&base, ordering, cfg.ordering_bits)?;
                let cloud = base.permuted(&order.permutation)?;
                let dist = mean_neighbor_rank_distance(&base, &order, radius)?.unwrap_or(0.0);
                let ratio = if baseline_dist > 0.0 { dist / baseline_dist } else { f64::NAN };
                let feats = FeatureMap::<f32>::from_fn(n, 4, |i, c| if c == 0 { 1.0 } else { cloud.position(i)[c - 1] as f32 });
                let mut push = |op: BenchOp, times: Vec<f64>| {
                    rows.push(BenchRow {
                        n,
                        radius,
                        ordering,
                        op,
                        median: median(&times),
                        times,
                        mean_rank_distance: dist,
                        locality_ratio: ratio,
                    })
                };
                let grid_times = time_it(reps, || {
                    let grid = build_grid(&cloud, radius)?;
                    let parts = exec.map_chunks(n, |range| -> Result<usize> {
                        let mut buf = Vec::new();
                        let mut total = 0;
                        for i in range {
                            buf.clear();
                            grid.query_ball_into(&cloud, cloud.position(i), radius, &mut buf)?;
                            total += buf.len();
                        }
                        Ok(total)
                    });
                    let total: usize = parts.into_iter().sum::<Result<usize>>()?;
                    std::hint::black_box(total);
                    Ok(())
                })?;
                push(BenchOp::GridSweep, grid_times);
                if cfg.brute_force {
                    let brute_times = time_it(reps, || {
                        let parts = exec.map_chunks(n, |range| {
                            range
                                .map(|i| query_ball_bruteforce(&cloud, cloud.position(i), radius).len())
                                .sum::<usize>()
                        });
                        std::hint::black_box(parts);
                        Ok(())
                    })?;
                    push(BenchOp::BruteSweep, brute_times);
                }
                let conv_times = time_it(reps, || {
                    let grid = build_grid(&cloud, radius)?;
                    let (out, _) = conv_forward(&cloud, &feats, &params, &kernel, &grid, &exec)?;
                    std::hint::black_box(out);
                    Ok(())
                })?;
                push(BenchOp::ConvGather, conv_times);
            }
        }
    }
    Ok(BenchReport { repetitions: reps, rows })
}
