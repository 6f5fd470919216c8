//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion and exits
//! nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

mod common;

use common::brute_forward;
use pwconv::cloud::{FeatureMap, PointCloud};
use pwconv::config::Config;
use pwconv::dataset::{DatasetSpec, Task};
use pwconv::error::{CheckpointError, Error};
use pwconv::exec::Exec;
use pwconv::harness::{
    bench_neighbors, compute_metrics, decode_checkpoint, encode_checkpoint, run_training, uniform_cloud,
    BenchConfig, BenchOp, DataSource,
};
use pwconv::net::{
    featurize, init_model, jitter_biases, net_grad_check, InputMode, LayerSpec, NetworkSpec, PreparedCloud,
};
use pwconv::pointconv::{
    conv_forward, finite_diff_check, ConvInstance, ConvParams, Geometry, KernelSpec, Neighborhoods,
};
use pwconv::rng::XorShift64;
use pwconv::spatial::{
    build_grid, mean_neighbor_rank_distance, order_points, query_ball_bruteforce, OrderStrategy,
};

const GRAD_INSTANCES: usize = 20;
const GRAD_MAX_N: usize = 32;
const GRAD_MAX_CHANNELS: usize = 4;
const GRAD_TOL: f64 = 1e-5;
const NET_GRAD_TOL: f64 = 1e-4;
const GRAD_TIME: Duration = Duration::from_secs(60);

const ORACLE_POINTS: usize = 10_000;
const ORACLE_QUERIES: usize = 1000;

const FORWARD_INSTANCES: usize = 50;
const FORWARD_MAX_N: usize = 512;
const FORWARD_TOL: f64 = 1e-9;

const SYMMETRY_TOL: f64 = 1e-5;

const RECOGNITION_ACC: f64 = 0.95;
const RECOGNITION_EPOCHS: usize = 50;
const RECOGNITION_TIME: Duration = Duration::from_secs(5 * 60);

const SEGMENTATION_MIOU: f64 = 0.85;
const SEGMENTATION_EPOCHS: usize = 50;
const SEGMENTATION_TIME: Duration = Duration::from_secs(10 * 60);

const LOCALITY_POINTS: usize = 4096;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Box<dyn Fn() -> Outcome>);

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn random_cloud(rng: &mut XorShift64, n: usize, extent: f64) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| [rng.uniform(0.0, extent), rng.uniform(0.0, extent), rng.uniform(0.0, extent)])
            .collect(),
    )
    .unwrap()
}

fn random_params(rng: &mut XorShift64, c_in: usize, c_out: usize, cells: usize) -> ConvParams<f64> {
    let mut p = ConvParams::zeros(c_in, c_out, cells);
    p.weights.iter_mut().for_each(|w| *w = rng.uniform(-1.0, 1.0));
    p.bias.iter_mut().for_each(|b| *b = rng.uniform(-1.0, 1.0));
    p
}

fn grid_forward(
    cloud: &PointCloud,
    feats: &FeatureMap<f64>,
    params: &ConvParams<f64>,
    kernel: &KernelSpec,
) -> FeatureMap<f64> {
    let grid = build_grid(cloud, kernel.radius()).unwrap();
    conv_forward(cloud, feats, params, kernel, &grid, &Exec::sequential()).unwrap().0
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..GRAD_INSTANCES {
        let n = 4 + (i * 7) % (GRAD_MAX_N - 3);
        let c_in = 1 + i % GRAD_MAX_CHANNELS;
        let c_out = 1 + (i / GRAD_MAX_CHANNELS) % GRAD_MAX_CHANNELS;
        let inst = ConvInstance::random(1000 + i as u64, n, c_in, c_out, 3).map_err(|e| e.to_string())?;
        worst = worst.max(finite_diff_check(&inst, 1e-5).map_err(|e| e.to_string())?.max_rel_err());
    }

    let mut net_worst = 0.0f64;
    let nets = [
        (
            vec![
                LayerSpec::conv(0.5, 3, 4),
                LayerSpec::Relu,
                LayerSpec::conv(0.9, 3, 4),
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { c_out: 3 },
            ],
            3usize,
        ),
        (
            vec![
                LayerSpec::conv(0.4, 3, 4),
                LayerSpec::Relu,
                LayerSpec::conv(0.8, 3, 4),
                LayerSpec::Relu,
                LayerSpec::Dense { c_out: 2 },
            ],
            2usize,
        ),
    ];
    for (s, (layers, classes)) in nets.into_iter().enumerate() {
        let spec = NetworkSpec::new(layers, 4, classes).map_err(|e| e.to_string())?;
        let mut rng = XorShift64::new(77 + s as u64);
        let cloud = random_cloud(&mut rng, 24, 1.0);
        let mut st = init_model::<f64>(&spec, s as u64).map_err(|e| e.to_string())?;
        jitter_biases(&mut st.params, 5 + s as u64, 0.1);
        let input = PreparedCloud::new(&spec, cloud.clone(), &Exec::sequential()).map_err(|e| e.to_string())?;
        let x = featurize::<f64>(&cloud, InputMode::ConstXyz).map_err(|e| e.to_string())?;
        let targets: Vec<u32> = if spec.task() == Task::Classification {
            vec![1]
        } else {
            (0..24).map(|i| (i % 2) as u32).collect()
        };
        let r = net_grad_check(&spec, &st, &input, &x, &targets, 1e-6).map_err(|e| e.to_string())?;
        net_worst = net_worst.max(r.max_rel_err());
    }
    let elapsed = start.elapsed();
    let msg = format!(
        "operator max rel err {worst:.3e} (< {GRAD_TOL:e}), network {net_worst:.3e} (< {NET_GRAD_TOL:e}), {:.2}s (< {}s)",
        elapsed.as_secs_f64(),
        GRAD_TIME.as_secs()
    );
    if worst < GRAD_TOL && net_worst < NET_GRAD_TOL && elapsed < GRAD_TIME {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn spatial_oracle() -> Outcome {
    let cloud = uniform_cloud(ORACLE_POINTS, 2024);
    let grid = build_grid(&cloud, 0.05).map_err(|e| e.to_string())?;
    let mut rng = XorShift64::new(5);
    let mut mismatches = 0;
    let mut found = 0usize;
    for q in 0..ORACLE_QUERIES {
        let center = if q % 2 == 0 {
            cloud.position(rng.below(ORACLE_POINTS))
        } else {
            [rng.uniform(-0.1, 1.1), rng.uniform(-0.1, 1.1), rng.uniform(-0.1, 1.1)]
        };
        let radius = match q % 10 {
            0 => 0.0,
            9 => rng.uniform(0.3, 0.8),
            _ => rng.uniform(0.005, 0.15),
        };
        let a = grid.query_ball(&cloud, center, radius).map_err(|e| e.to_string())?;
        let b = query_ball_bruteforce(&cloud, center, radius);
        found += b.len();
        if a != b {
            mismatches += 1;
        }
    }
    let msg = format!("{ORACLE_QUERIES} queries on {ORACLE_POINTS} points, {found} hits, {mismatches} mismatches");
    if mismatches == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn forward_oracle() -> Outcome {
    let mut rng = XorShift64::new(31);
    let mut worst = 0.0f64;
    for i in 0..FORWARD_INSTANCES {
        let n = 1 + rng.below(FORWARD_MAX_N);
        let res = [1usize, 3, 5][i % 3];
        let geometry = if i % 2 == 0 { Geometry::Ball } else { Geometry::Cube };
        let radius = rng.uniform(0.05, 0.4);
        let kernel = KernelSpec::new(radius, res, geometry).map_err(|e| e.to_string())?;
        let c_in = 1 + rng.below(4);
        let c_out = 1 + rng.below(4);
        let cloud = random_cloud(&mut rng, n, 1.0);
        let feats = FeatureMap::from_fn(n, c_in, |_, _| rng.uniform(-1.0, 1.0));
        let params = random_params(&mut rng, c_in, c_out, kernel.cells());
        let a = grid_forward(&cloud, &feats, &params, &kernel);
        let b = brute_forward(&cloud, &feats, &params, radius, res, geometry);
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            worst = worst.max(rel(*x, *y));
        }
    }
    let msg = format!("{FORWARD_INSTANCES} instances, max rel diff {worst:.3e} (< {FORWARD_TOL:e})");
    if worst < FORWARD_TOL {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn symmetries() -> Outcome {
    let mut rng = XorShift64::new(404);
    let mut perm_worst = 0.0f64;
    let mut trans_worst = 0.0f64;
    let mut far_changed = 0usize;
    for i in 0..20 {
        let n = 50 + rng.below(300);
        let geometry = if i % 2 == 0 { Geometry::Ball } else { Geometry::Cube };
        let kernel = KernelSpec::new(rng.uniform(0.1, 0.3), 3, geometry).map_err(|e| e.to_string())?;
        let (c_in, c_out) = (3, 4);
        let cloud = random_cloud(&mut rng, n, 1.0);
        let feats = FeatureMap::from_fn(n, c_in, |_, _| rng.uniform(-1.0, 1.0));
        let params = random_params(&mut rng, c_in, c_out, kernel.cells());
        let base = grid_forward(&cloud, &feats, &params, &kernel);

        let perm = rng.permutation(n);
        let pc = cloud.permuted(&perm).map_err(|e| e.to_string())?;
        let pf = feats.permuted_rows(&perm);
        let out = grid_forward(&pc, &pf, &params, &kernel);
        for (r, &src) in perm.iter().enumerate() {
            for o in 0..c_out {
                perm_worst = perm_worst.max(rel(out.get(r, o), base.get(src, o)));
            }
        }

        let t = [rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0)];
        let tc = cloud.translated(t).map_err(|e| e.to_string())?;
        let out = grid_forward(&tc, &feats, &params, &kernel);
        for (x, y) in out.as_slice().iter().zip(base.as_slice()) {
            trans_worst = trans_worst.max(rel(*x, *y));
        }

        let mut pts = cloud.positions().to_vec();
        pts.push([100.0, -100.0, 50.0]);
        let far = PointCloud::new(pts).map_err(|e| e.to_string())?;
        let mut ff = feats.as_slice().to_vec();
        ff.extend([5.0, -5.0, 5.0]);
        let ff = FeatureMap::from_vec(n + 1, c_in, ff).map_err(|e| e.to_string())?;
        let exec = Exec::sequential();
        let nb0 = Neighborhoods::build_with_grid(&cloud, &kernel, &exec).map_err(|e| e.to_string())?;
        let nb1 = Neighborhoods::build_with_grid(&far, &kernel, &exec).map_err(|e| e.to_string())?;
        let out = grid_forward(&far, &ff, &params, &kernel);
        for r in 0..n {
            let same_sets = (0..kernel.cells()).all(|k| nb0.cell(r, k) == nb1.cell(r, k));
            let same_out = (0..c_out).all(|o| out.get(r, o).to_bits() == base.get(r, o).to_bits());
            if !same_sets || !same_out {
                far_changed += 1;
            }
        }
        if (0..kernel.cells()).map(|k| nb1.cell(n, k).len()).sum::<usize>() != 1 {
            far_changed += 1;
        }
    }
    let msg = format!(
        "permutation {perm_worst:.3e}, translation {trans_worst:.3e} (< {SYMMETRY_TOL:e}), far point changed {far_changed} rows"
    );
    if perm_worst < SYMMETRY_TOL && trans_worst < SYMMETRY_TOL && far_changed == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn desk_training(task: Task, epochs: usize, limit: Duration, min: f64) -> Outcome {
    let mut cfg = Config::defaults(task);
    cfg.set("workers", &Exec::available().workers().to_string()).map_err(|e| e.to_string())?;
    let mut tc = cfg.train_config().map_err(|e| e.to_string())?;
    tc.out_dir = None;
    if tc.epochs > epochs {
        return Err(format!("default config trains {} epochs, limit is {epochs}", tc.epochs));
    }
    if let DataSource::Generate(d) = &tc.data {
        if task == Task::Classification && (d.points_per_cloud != 256 || d.class_count() != 3) {
            return Err("default recognition data is not 3 classes x 256 points".into());
        }
    }
    let start = Instant::now();
    let summary = run_training(&tc).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let (score, name) = match task {
        Task::Classification => (summary.history.iter().map(|r| r.test.accuracy).fold(0.0, f64::max), "test accuracy"),
        Task::Segmentation => (summary.history.iter().map(|r| r.test.mean_iou).fold(0.0, f64::max), "test mIoU"),
    };
    let first = summary
        .history
        .iter()
        .find(|r| match task {
            Task::Classification => r.test.accuracy >= min,
            Task::Segmentation => r.test.mean_iou >= min,
        })
        .map_or("never".to_string(), |r| format!("epoch {}", r.epoch));
    let msg = format!(
        "best {name} {score:.4} (>= {min}) over {} epochs, first reached {first}, {:.1}s (< {}s)",
        summary.history.len(),
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    if score >= min && elapsed < limit {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn locality() -> Outcome {
    let cloud = uniform_cloud(LOCALITY_POINTS, 11);
    let radius = 0.075;
    let morton = order_points(&cloud, OrderStrategy::Morton, 10).map_err(|e| e.to_string())?;
    let random = order_points(&cloud, OrderStrategy::Random(7), 10).map_err(|e| e.to_string())?;
    let m = mean_neighbor_rank_distance(&cloud, &morton, radius).map_err(|e| e.to_string())?;
    let r = mean_neighbor_rank_distance(&cloud, &random, radius).map_err(|e| e.to_string())?;
    let (Some(m), Some(r)) = (m, r) else {
        return Err("no neighbor pairs".into());
    };

    let report = bench_neighbors(&BenchConfig {
        sizes: vec![LOCALITY_POINTS],
        radii: vec![radius],
        orderings: vec![OrderStrategy::Random(7), OrderStrategy::Morton],
        repetitions: 5,
        seed: 11,
        workers: 1,
        brute_force: false,
        ordering_bits: 10,
    })
    .map_err(|e| e.to_string())?;
    let csv = report.to_csv();
    let header = csv.lines().next().unwrap_or_default();
    let row = report.find(LOCALITY_POINTS, "morton", BenchOp::GridSweep);
    let base = report.find(LOCALITY_POINTS, "random", BenchOp::GridSweep);
    let (Some(row), Some(base)) = (row, base) else {
        return Err("bench report lacks morton or random rows".into());
    };
    let recorded = row.locality_ratio;
    let consistent = (recorded - row.mean_rank_distance / base.mean_rank_distance).abs() < 1e-12;
    let msg = format!(
        "morton {m:.1} vs random {r:.1} mean rank distance (ratio {:.4}); bench csv ratio {recorded:.4}",
        m / r
    );
    let csv_ok = header.ends_with("locality_ratio_vs_random") && consistent && recorded < 1.0;
    if m < r && csv_ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = Config::defaults(Task::Classification);
    for (k, v) in [
        ("workers", "1"),
        ("data.shapes", "sphere:12,cube:12,disk:12"),
        ("data.points", "96"),
        ("train.epochs", "3"),
        ("train.log_seconds", "off"),
    ] {
        cfg.set(k, v).map_err(|e| e.to_string())?;
    }
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let mut tc = cfg.train_config().map_err(|e| e.to_string())?;
        tc.out_dir = Some(dir.path().join(name));
        run_training(&tc).map_err(|e| e.to_string())?;
        let csv = std::fs::read(dir.path().join(name).join("metrics.csv")).map_err(|e| e.to_string())?;
        let ckpt = std::fs::read(dir.path().join(name).join("best.pwc")).map_err(|e| e.to_string())?;
        runs.push((csv, ckpt));
    }
    let csv_same = runs[0].0 == runs[1].0;
    let ckpt_same = runs[0].1 == runs[1].1;

    let bytes = &runs[0].1;
    let (state, spec) = decode_checkpoint::<f32>(bytes).map_err(|e| e.to_string())?;
    let again = encode_checkpoint(&state, &spec).map_err(|e| e.to_string())?;
    let (state2, _) = decode_checkpoint::<f32>(&again).map_err(|e| e.to_string())?;
    let bitwise = again == *bytes
        && state
            .params
            .tensors()
            .iter()
            .flat_map(|t| t.iter())
            .zip(state2.params.tensors().iter().flat_map(|t| t.iter()))
            .all(|(a, b)| a.to_bits() == b.to_bits());

    let mut corrupt: Vec<(&str, Vec<u8>)> = Vec::new();
    let mut m = bytes.clone();
    m[..4].copy_from_slice(b"XXXX");
    corrupt.push(("magic", m));
    let mut v = bytes.clone();
    v[4] = 9;
    corrupt.push(("version", v));
    corrupt.push(("truncated", bytes[..bytes.len() - 4].to_vec()));
    let mut f = bytes.clone();
    let mid = f.len() / 2;
    f[mid] ^= 0x10;
    corrupt.push(("bit flip", f));
    let mut accepted = Vec::new();
    for (what, b) in &corrupt {
        match decode_checkpoint::<f32>(b) {
            Err(Error::Checkpoint(
                CheckpointError::BadMagic(_)
                | CheckpointError::Version(_)
                | CheckpointError::Truncated
                | CheckpointError::Checksum { .. }
                | CheckpointError::Malformed(_),
            )) => {}
            _ => accepted.push(*what),
        }
    }
    let msg = format!(
        "csv identical {csv_same}, checkpoint identical {ckpt_same}, roundtrip bitwise {bitwise}, corrupted accepted {accepted:?}"
    );
    if csv_same && ckpt_same && bitwise && accepted.is_empty() {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn metric_identities() -> Outcome {
    let m = compute_metrics(&[0, 0, 1, 1], &[0, 1, 0, 1], 2).map_err(|e| e.to_string())?;
    let example = m.accuracy == 0.5 && m.mean_iou == 1.0 / 3.0;
    let mut rng = XorShift64::new(3);
    let mut trace_ok = true;
    for _ in 0..200 {
        let classes = 2 + rng.below(5);
        let n = 1 + rng.below(300);
        let truth: Vec<u32> = (0..n).map(|_| rng.below(classes) as u32).collect();
        let pred: Vec<u32> = (0..n).map(|_| rng.below(classes) as u32).collect();
        let r = compute_metrics(&pred, &truth, classes).map_err(|e| e.to_string())?;
        let ious_ok = r.iou.iter().flatten().all(|v| (0.0..=1.0).contains(v));
        trace_ok &= r.accuracy == r.trace() as f64 / r.total() as f64 && ious_ok && (0.0..=1.0).contains(&r.mean_iou);
    }
    // The same identity on a real evaluation.
    let mut spec = DatasetSpec::classification(4, 64, 9);
    spec.train_fraction = 0.5;
    spec.test_fraction = 0.5;
    let ds = pwconv::dataset::gen_dataset(&spec).map_err(|e| e.to_string())?;
    let net = Config::defaults(Task::Classification).network().map_err(|e| e.to_string())?;
    let st = init_model::<f32>(&net, 1).map_err(|e| e.to_string())?;
    let pre = Config::defaults(Task::Classification).preprocess().map_err(|e| e.to_string())?;
    let r = pwconv::harness::evaluate(&net, &st, &ds.test, &pre, &Exec::sequential()).map_err(|e| e.to_string())?;
    trace_ok &= r.accuracy == r.trace() as f64 / r.total() as f64;
    let msg = format!(
        "example accuracy {} mIoU {} (0.5, 1/3), trace identity {trace_ok}",
        m.accuracy, m.mean_iou
    );
    if example && trace_ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() -> ExitCode {
    let criteria: Vec<Criterion> = vec![
        ("gradient suite", Box::new(gradient_suite)),
        ("spatial oracle", Box::new(spatial_oracle)),
        ("forward oracle", Box::new(forward_oracle)),
        ("equivariance and invariance", Box::new(symmetries)),
        (
            "desk-scale recognition",
            Box::new(|| desk_training(Task::Classification, RECOGNITION_EPOCHS, RECOGNITION_TIME, RECOGNITION_ACC)),
        ),
        (
            "desk-scale segmentation",
            Box::new(|| desk_training(Task::Segmentation, SEGMENTATION_EPOCHS, SEGMENTATION_TIME, SEGMENTATION_MIOU)),
        ),
        ("ordering locality", Box::new(locality)),
        ("reproducibility", Box::new(reproducibility)),
        ("metric identities", Box::new(metric_identities)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(msg) => println!("[PASS] {}. {name}: {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("[FAIL] {}. {name}: {msg}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
