use std::path::{Path, PathBuf};
use std::time::Instant;

use super::checkpoint::save_checkpoint;
use super::data::{prepare_all, read_dataset, PreparedSample, Preprocess};
use super::metrics::{compute_metrics, MetricsReport};
use crate::dataset::{gen_dataset, Dataset, DatasetSpec};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::net::{init_model, loss_and_grads, net_forward, predict, ModelState, NetworkSpec, Optimizer, Params};
use crate::real::{Precision, Real};
use crate::rng::XorShift64;

pub const CSV_HEADER: &str = "epoch,train_loss,test_acc,test_miou,seconds";
pub const CSV_FILE: &str = "metrics.csv";
pub const BEST_CHECKPOINT: &str = "best.pwc";

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Generate(DatasetSpec),
    Directory(PathBuf),
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Generate(spec) => gen_dataset(spec),
            DataSource::Directory(dir) => read_dataset(dir),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub data: DataSource,
    pub network: NetworkSpec,
    pub preprocess: Preprocess,
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub workers: usize,
    pub precision: Precision,
    /// Where `metrics.csv` and `best.pwc` go; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Record wall-clock seconds in the CSV. Off makes the file a pure
    /// function of the config.
    pub log_seconds: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        self.network.validate()?;
        if let Some(c) = self.preprocess.input.channels() {
            if c != self.network.input_channels {
                return Err(Error::Config(format!(
                    "input mode {} gives {c} channels, network expects {}",
                    self.preprocess.input.as_str(),
                    self.network.input_channels
                )));
            }
        }
        if let DataSource::Generate(spec) = &self.data {
            spec.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test: MetricsReport,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub state: ModelState<T>,
    pub initial: ModelState<T>,
    pub history: Vec<EpochRecord>,
    pub csv: String,
    pub best_epoch: usize,
    pub best_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub history: Vec<EpochRecord>,
    pub csv: String,
    pub best_epoch: usize,
    pub best_checkpoint: Option<PathBuf>,
}

impl TrainSummary {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch - 1]
    }

    pub fn last(&self) -> &EpochRecord {
        self.history.last().expect("at least one epoch")
    }
}

fn check_compatible(ds: &Dataset, spec: &NetworkSpec) -> Result<()> {
    if ds.task != spec.task() {
        return Err(Error::Config(format!(
            "dataset task {} but network is built for {}",
            ds.task.as_str(),
            spec.task().as_str()
        )));
    }
    if ds.classes != spec.classes {
        return Err(Error::Shape(format!(
            "dataset has {} classes, network emits {}",
            ds.classes, spec.classes
        )));
    }
    Ok(())
}

/// Evaluates prepared samples. Predictions are collected in sample order.
pub fn evaluate_prepared<T: Real>(
    spec: &NetworkSpec,
    state: &ModelState<T>,
    samples: &[PreparedSample<T>],
    exec: &Exec,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let start = Instant::now();
    let inner = Exec::sequential();
    let parts = exec.map_chunks(samples.len(), |range| -> Result<(Vec<u32>, Vec<u32>)> {
        let mut pred = Vec::new();
        let mut truth = Vec::new();
        for s in &samples[range] {
            let (logits, _) = net_forward(spec, state, &s.input, &s.feats, &inner)?;
            pred.extend(predict(&logits));
            truth.extend_from_slice(&s.targets);
        }
        Ok((pred, truth))
    });
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for p in parts {
        let (a, b) = p?;
        pred.extend(a);
        truth.extend(b);
    }
    let mut m = compute_metrics(&pred, &truth, spec.classes)?;
    m.seconds = start.elapsed().as_secs_f64();
    Ok(m)
}

/// Evaluates `state` on raw samples after the given preprocessing.
pub fn evaluate<T: Real>(
    spec: &NetworkSpec,
    state: &ModelState<T>,
    samples: &[crate::dataset::Sample],
    pre: &Preprocess,
    exec: &Exec,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let prepared = prepare_all(samples, spec, pre, exec)?;
    evaluate_prepared(spec, state, &prepared, exec)
}

/// Mean loss and mean gradient over one batch. Clouds are split across
/// workers and partial sums are combined in batch order.
fn batch_gradient<T: Real>(
    spec: &NetworkSpec,
    state: &ModelState<T>,
    batch: &[&PreparedSample<T>],
    exec: &Exec,
) -> Result<(f64, Params<T>)> {
    let inner = Exec::sequential();
    let parts = exec.map_chunks(batch.len(), |range| -> Result<(f64, Params<T>)> {
        let mut g = state.params.zeros_like();
        let mut loss = 0.0;
        for s in &batch[range] {
            let (l, gs, _) = loss_and_grads(spec, state, &s.input, &s.feats, &s.targets, &inner)?;
            loss += l.as_f64();
            g.add_assign(&gs)?;
        }
        Ok((loss, g))
    });
    let mut total = state.params.zeros_like();
    let mut loss = 0.0;
    for p in parts {
        let (l, g) = p?;
        loss += l;
        total.add_assign(&g)?;
    }
    total.scale(T::one() / T::from_usize(batch.len()));
    Ok((loss, total))
}

fn csv_row(r: &EpochRecord, log_seconds: bool) -> String {
    let secs = if log_seconds { r.seconds } else { 0.0 };
    format!(
        "{},{},{},{},{:.3}\n",
        r.epoch, r.train_loss, r.test.accuracy, r.test.mean_iou, secs
    )
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn train<T: Real>(config: &TrainConfig) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let exec = Exec::with_workers(config.workers);
    exec.install(|| train_inner(config, &exec))
}

fn train_inner<T: Real>(config: &TrainConfig, exec: &Exec) -> Result<TrainOutcome<T>> {
    let spec = &config.network;
    let ds = config.data.load()?;
    if ds.train.is_empty() || ds.test.is_empty() {
        return Err(Error::Dataset(format!(
            "need non-empty splits, got {} train / {} test",
            ds.train.len(),
            ds.test.len()
        )));
    }
    check_compatible(&ds, spec)?;
    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let train_set = prepare_all::<T>(&ds.train, spec, &config.preprocess, exec)?;
    let test_set = prepare_all::<T>(&ds.test, spec, &config.preprocess, exec)?;

    let initial = init_model::<T>(spec, config.seed)?;
    let mut state = initial.clone();
    let mut shuffle = XorShift64::derive(config.seed, 0x5348_5546);
    let mut csv = format!("{CSV_HEADER}\n");
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64)> = None;
    let mut best_checkpoint = None;

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        shuffle.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for ids in order.chunks(config.batch_size) {
            let batch: Vec<&PreparedSample<T>> = ids.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads) = batch_gradient(spec, &state, &batch, exec)?;
            loss_sum += loss;
            config.optimizer.step(&mut state, &grads)?;
        }
        let test = evaluate_prepared(spec, &state, &test_set, exec)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            test,
            seconds: start.elapsed().as_secs_f64(),
        };
        csv.push_str(&csv_row(&record, config.log_seconds));
        if best.is_none_or(|(_, acc)| record.test.accuracy > acc) {
            best = Some((epoch, record.test.accuracy));
            if let Some(dir) = &config.out_dir {
                let path = dir.join(BEST_CHECKPOINT);
                save_checkpoint(&state, spec, &path)?;
                best_checkpoint = Some(path);
            }
        }
        if let Some(dir) = &config.out_dir {
            write_file(&dir.join(CSV_FILE), csv.as_bytes())?;
        }
        history.push(record);
    }
    Ok(TrainOutcome {
        state,
        initial,
        history,
        csv,
        best_epoch: best.map_or(1, |b| b.0),
        best_checkpoint,
    })
}

/// Trains in the configured precision and drops the typed model state.
pub fn run_training(config: &TrainConfig) -> Result<TrainSummary> {
    let summarize = |history, csv, best_epoch, best_checkpoint| TrainSummary {
        history,
        csv,
        best_epoch,
        best_checkpoint,
    };
    Ok(match config.precision {
        Precision::F32 => {
            let o = train::<f32>(config)?;
            summarize(o.history, o.csv, o.best_epoch, o.best_checkpoint)
        }
        Precision::F64 => {
            let o = train::<f64>(config)?;
            summarize(o.history, o.csv, o.best_epoch, o.best_checkpoint)
        }
    })
}
