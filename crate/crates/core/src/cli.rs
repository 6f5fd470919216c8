//! `pwconv` command line: gen-data, train, eval, gradcheck and bench.
//!
//! Every invocation ends with one `status=... key=value ...` line on stdout.
//! Exit code 0 is success, 1 a validation error, 2 a runtime failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::harness::{
    bench_neighbors, evaluate, load_checkpoint, run_training, write_dataset, BenchOp, MetricsReport,
};
use crate::net::{init_model, jitter_biases, net_grad_check, LayerSpec, NetworkSpec, PreparedCloud};
use crate::pointconv::{finite_diff_check, ConvInstance};
use crate::real::{Precision, Real};
use crate::rng::XorShift64;
use crate::spatial::OrderStrategy;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Operator check bound, 64-bit.
pub const GRADCHECK_TOL: f64 = 1e-5;
/// End-to-end network check bound.
pub const NET_GRADCHECK_TOL: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "pwconv", version, about = "Pointwise convolution for point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset to the `out` directory.
    GenData(Common),
    /// Train a network; writes metrics.csv and best.pwc to `out`.
    Train(Common),
    /// Evaluate a checkpoint on the configured test split.
    Eval(Common),
    /// Finite-difference check of the analytic gradients (64-bit).
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Points per random instance.
        #[arg(long)]
        n: Option<usize>,
        /// Number of random instances.
        #[arg(long)]
        instances: Option<usize>,
    },
    /// Time neighbor queries and record ordering locality.
    Bench(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_name = "f32|f64")]
    precision: Option<String>,
    /// Print the resolved config (or write it to PATH) and exit.
    #[arg(long, value_name = "PATH", num_args = 0..=1)]
    dump_config: Option<Option<PathBuf>>,
    /// `key=value` overrides applied after the config file.
    overrides: Vec<String>,
}

/// Summary line builder.
struct Status(Vec<(String, String)>);

impl Status {
    fn ok() -> Self {
        Self(vec![("status".into(), "ok".into())])
    }

    fn with(mut self, key: &str, value: impl ToString) -> Self {
        let v = value.to_string();
        let v = if v.is_empty() || v.contains(char::is_whitespace) || v.contains('"') {
            format!("{v:?}")
        } else {
            v
        };
        self.0.push((key.into(), v));
        self
    }

    fn line(&self) -> String {
        self.0
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

enum Failure {
    Validation(Error),
    Runtime(Error),
}

fn classify(e: Error) -> Failure {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => Failure::Validation(e),
        other => Failure::Runtime(other),
    }
}

fn resolve(common: &Common, extra: &[(String, String)]) -> Result<Config> {
    let mut overrides = Vec::new();
    for o in &common.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(s) = common.seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    if let Some(w) = common.workers {
        overrides.push(("workers".into(), w.to_string()));
    }
    if let Some(p) = &common.precision {
        overrides.push(("precision".into(), p.clone()));
    }
    overrides.extend_from_slice(extra);
    match &common.config {
        Some(path) => Config::load(path, &overrides),
        None => Config::resolve(&[], &overrides),
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let mut out = std::io::stdout().lock();
    let mut err = std::io::stderr().lock();
    run_with(argv, &mut out, &mut err)
}

/// [`run`] with explicit output streams.
pub fn run_with<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                let _ = writeln!(out, "{}", Status::ok().line());
                return EXIT_OK;
            }
            let _ = write!(err, "{}", e.render());
            let _ = writeln!(out, "{}", Status(vec![("status".into(), "error".into())]).with("kind", "usage").line());
            return EXIT_VALIDATION;
        }
    };

    let (common, extra) = match &cli.command {
        Command::GenData(c) | Command::Train(c) | Command::Eval(c) | Command::Bench(c) => (c, Vec::new()),
        Command::Gradcheck { common, n, instances } => {
            let mut extra = Vec::new();
            if let Some(n) = n {
                extra.push(("gradcheck.n".to_string(), n.to_string()));
            }
            if let Some(i) = instances {
                extra.push(("gradcheck.instances".to_string(), i.to_string()));
            }
            (common, extra)
        }
    };

    let config = match resolve(common, &extra) {
        Ok(c) => c,
        Err(e) => return report(out, err, Failure::Validation(e)),
    };

    if let Some(target) = &common.dump_config {
        let text = config.dump();
        return match target {
            None => {
                let _ = write!(out, "{text}");
                let _ = writeln!(out, "{}", Status::ok().with("keys", config.keys().count()).line());
                EXIT_OK
            }
            Some(path) => match std::fs::write(path, &text) {
                Ok(()) => {
                    let _ = writeln!(
                        out,
                        "{}",
                        Status::ok().with("config", path.display()).with("keys", config.keys().count()).line()
                    );
                    EXIT_OK
                }
                Err(e) => report(out, err, Failure::Runtime(Error::io(path, e))),
            },
        };
    }

    let result = match &cli.command {
        Command::GenData(_) => gen_data(&config),
        Command::Train(_) => train(&config),
        Command::Eval(_) => eval(&config),
        Command::Bench(_) => bench(&config),
        Command::Gradcheck { .. } => gradcheck(&config, err),
    };
    match result {
        Ok((status, code)) => {
            let _ = writeln!(out, "{}", status.line());
            code
        }
        Err(e) => report(out, err, classify(e)),
    }
}

fn report(out: &mut dyn Write, err: &mut dyn Write, f: Failure) -> i32 {
    let (kind, code, e) = match f {
        Failure::Validation(e) => ("validation", EXIT_VALIDATION, e),
        Failure::Runtime(e) => ("runtime", EXIT_RUNTIME, e),
    };
    let _ = writeln!(err, "error: {e}");
    let _ = writeln!(
        out,
        "{}",
        Status(vec![("status".into(), "error".into())])
            .with("kind", kind)
            .with("msg", e.to_string())
            .line()
    );
    code
}

fn gen_data(config: &Config) -> Result<(Status, i32)> {
    let spec = config.dataset_spec()?;
    let ds = crate::dataset::gen_dataset(&spec)?;
    let dir = config.out_dir();
    write_dataset(&ds, &dir)?;
    Ok((
        Status::ok()
            .with("dir", dir.display())
            .with("task", ds.task.as_str())
            .with("classes", ds.classes)
            .with("train", ds.train.len())
            .with("test", ds.test.len()),
        EXIT_OK,
    ))
}

fn train(config: &Config) -> Result<(Status, i32)> {
    let tc = config.train_config()?;
    tc.validate()?;
    let summary = run_training(&tc)?;
    let best = summary.best();
    let last = summary.last();
    let mut s = Status::ok()
        .with("epochs", summary.history.len())
        .with("best_epoch", summary.best_epoch)
        .with("test_acc", best.test.accuracy)
        .with("test_miou", best.test.mean_iou)
        .with("final_loss", last.train_loss);
    if let Some(p) = &summary.best_checkpoint {
        s = s.with("checkpoint", p.display());
    }
    Ok((s, EXIT_OK))
}

fn eval_as<T: Real>(config: &Config) -> Result<(MetricsReport, NetworkSpec)> {
    let path = config.checkpoint_path();
    let (state, spec) = load_checkpoint::<T>(&path)?;
    let ds = config.data_source()?.load()?;
    let pre = config.preprocess()?;
    let exec = Exec::with_workers(config.workers()?);
    let m = exec.install(|| evaluate(&spec, &state, &ds.test, &pre, &exec))?;
    Ok((m, spec))
}

fn eval(config: &Config) -> Result<(Status, i32)> {
    let (m, spec) = match config.precision()? {
        Precision::F32 => eval_as::<f32>(config)?,
        Precision::F64 => eval_as::<f64>(config)?,
    };
    Ok((
        Status::ok()
            .with("checkpoint", config.checkpoint_path().display())
            .with("task", spec.task().as_str())
            .with("points", m.total())
            .with("accuracy", m.accuracy)
            .with("miou", m.mean_iou),
        EXIT_OK,
    ))
}

fn bench(config: &Config) -> Result<(Status, i32)> {
    let bc = config.bench_config()?;
    let report = bench_neighbors(&bc)?;
    let path = config.bench_out();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(&path, report.to_csv()).map_err(|e| Error::io(&path, e))?;
    let mut s = Status::ok().with("csv", path.display()).with("rows", report.rows.len());
    let morton = OrderStrategy::Morton.to_string();
    let ratio = bc
        .sizes
        .first()
        .and_then(|&n| report.find(n, &morton, BenchOp::GridSweep))
        .map(|r| r.locality_ratio);
    if let Some(ratio) = ratio {
        s = s.with("morton_locality_ratio", ratio);
    }
    Ok((s, EXIT_OK))
}

/// Small classification network used for the end-to-end check.
fn gradcheck_network() -> Result<NetworkSpec> {
    NetworkSpec::new(
        vec![
            LayerSpec::conv(0.5, 3, 3),
            LayerSpec::Relu,
            LayerSpec::conv(0.7, 3, 3),
            LayerSpec::Relu,
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { c_out: 3 },
        ],
        4,
        3,
    )
}

/// Runs the operator suite and the end-to-end check; returns the two maxima.
pub fn run_gradcheck(seed: u64, instances: usize, n: usize, step: f64) -> Result<(f64, f64)> {
    if n == 0 || n > 32 {
        return Err(Error::InvalidArgument(format!("gradcheck n = {n} must be in 1..=32")));
    }
    let mut worst = 0.0f64;
    for i in 0..instances {
        let s = XorShift64::derive(seed, i as u64).next_u64();
        let c_in = 1 + (s % 4) as usize;
        let c_out = 1 + ((s >> 8) % 4) as usize;
        let inst = ConvInstance::random(s, n, c_in, c_out, 3)?;
        worst = worst.max(finite_diff_check(&inst, step)?.max_rel_err());
    }

    let spec = gradcheck_network()?;
    let mut state = init_model::<f64>(&spec, seed)?;
    jitter_biases(&mut state.params, seed, 0.1);
    let inst = ConvInstance::random(seed ^ 0x9E37_79B9_7F4A_7C15, n, 1, 1, 3)?;
    let prepared = PreparedCloud::new(&spec, inst.cloud.clone(), &Exec::sequential())?;
    let feats = crate::net::featurize::<f64>(&inst.cloud, crate::net::InputMode::ConstXyz)?;
    let target = [(seed % 3) as u32];
    let net = net_grad_check(&spec, &state, &prepared, &feats, &target, 1e-6)?;
    Ok((worst, net.max_rel_err()))
}

fn gradcheck(config: &Config, err: &mut dyn Write) -> Result<(Status, i32)> {
    let (instances, n, step) = config.gradcheck()?;
    let (op, net) = run_gradcheck(config.seed()?, instances, n, step)?;
    let pass = op < GRADCHECK_TOL && net < NET_GRADCHECK_TOL;
    let status = if pass { "ok" } else { "fail" };
    if !pass {
        let _ = writeln!(err, "gradient check failed: operator {op:e}, network {net:e}");
    }
    Ok((
        Status(vec![("status".into(), status.into())])
            .with("max_rel_err", format!("{op:e}"))
            .with("net_max_rel_err", format!("{net:e}"))
            .with("instances", instances)
            .with("n", n),
        if pass { EXIT_OK } else { EXIT_RUNTIME },
    ))
}
