//! Flat `key = value` run configuration.
//!
//! One entry per line, `#` starts a comment line, sections are dotted key
//! prefixes and network layers are `net.layer.<index> = <descriptor>`. Unknown
//! keys are rejected. Values not given fall back to the defaults of the
//! config's `task`; a file that lists any `net.layer.*` entry replaces the
//! default layer list as a whole.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::dataset::{DatasetSpec, ShapeKind, Task};
use crate::error::{Error, Result};
use crate::harness::{BenchConfig, DataSource, Preprocess, TrainConfig};
use crate::net::{AdamConfig, InputMode, LayerSpec, NetworkSpec, Optimizer};
use crate::real::Precision;
use crate::spatial::OrderStrategy;

const LAYER_PREFIX: &str = "net.layer.";

const KEYS: &[&str] = &[
    "task",
    "seed",
    "workers",
    "precision",
    "out",
    "data.path",
    "data.shapes",
    "data.points",
    "data.noise",
    "data.train_fraction",
    "data.test_fraction",
    "data.blobs",
    "data.blob_radius",
    "data.normalize",
    "net.input",
    "net.bias",
    "train.optimizer",
    "train.lr",
    "train.momentum",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.epochs",
    "train.batch",
    "train.ordering",
    "train.ordering_bits",
    "train.log_seconds",
    "eval.checkpoint",
    "gradcheck.instances",
    "gradcheck.n",
    "gradcheck.step",
    "bench.sizes",
    "bench.radii",
    "bench.orderings",
    "bench.reps",
    "bench.brute",
    "bench.out",
];

fn defaults(task: Task) -> Vec<(&'static str, &'static str)> {
    let mut d = vec![
        ("seed", "1"),
        ("workers", "1"),
        ("precision", "f32"),
        ("data.path", ""),
        ("data.blobs", "3"),
        ("data.blob_radius", "0.2"),
        ("data.normalize", "on"),
        ("net.input", "const+xyz"),
        ("net.bias", "on"),
        ("train.optimizer", "adam"),
        ("train.momentum", "0.9"),
        ("train.beta1", "0.9"),
        ("train.beta2", "0.999"),
        ("train.eps", "1e-8"),
        ("train.batch", "8"),
        ("train.ordering", "morton"),
        ("train.ordering_bits", "10"),
        ("train.log_seconds", "on"),
        ("eval.checkpoint", ""),
        ("gradcheck.instances", "20"),
        ("gradcheck.n", "32"),
        ("gradcheck.step", "1e-5"),
        ("bench.sizes", "4096,16384"),
        ("bench.radii", "0.075"),
        ("bench.orderings", "identity,random:7,morton,xyz"),
        ("bench.reps", "5"),
        ("bench.brute", "on"),
        ("bench.out", ""),
    ];
    match task {
        Task::Classification => d.extend([
            ("task", "classification"),
            ("out", "runs/classification"),
            ("data.shapes", "sphere:120,cube:120,disk:120"),
            ("data.points", "256"),
            ("data.noise", "0.01"),
            ("data.train_fraction", "0.8333333333333334"),
            ("data.test_fraction", "0.16666666666666666"),
            ("train.lr", "0.005"),
            ("train.epochs", "20"),
            ("net.layer.0", "pointconv r=0.3 R=3 cout=16 geom=ball"),
            ("net.layer.1", "relu"),
            ("net.layer.2", "pointconv r=0.6 R=3 cout=32 geom=ball"),
            ("net.layer.3", "relu"),
            ("net.layer.4", "pool"),
            ("net.layer.5", "dense cout=3"),
        ]),
        Task::Segmentation => d.extend([
            ("task", "segmentation"),
            ("out", "runs/segmentation"),
            ("data.shapes", "scene:100"),
            ("data.points", "512"),
            ("data.noise", "0.005"),
            ("data.train_fraction", "0.8"),
            ("data.test_fraction", "0.2"),
            ("train.lr", "0.005"),
            ("train.epochs", "20"),
            ("net.layer.0", "pointconv r=0.15 R=3 cout=16 geom=ball"),
            ("net.layer.1", "relu"),
            ("net.layer.2", "pointconv r=0.3 R=3 cout=16 geom=ball"),
            ("net.layer.3", "relu"),
            ("net.layer.4", "dense cout=2"),
        ]),
    }
    d
}

fn known_key(key: &str) -> bool {
    KEYS.contains(&key)
        || key
            .strip_prefix(LAYER_PREFIX)
            .is_some_and(|i| !i.is_empty() && i.bytes().all(|b| b.is_ascii_digit()))
}

/// Parses `key = value` lines without applying defaults.
pub fn parse_entries(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: idx + 1,
            msg: format!("expected `key = value`, got {line:?}"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if !known_key(k) {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("unknown key {k:?}"),
            });
        }
        if out.iter().any(|(e, _)| e == k) {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("duplicate key {k:?}"),
            });
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Fully resolved configuration: every key has a value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn defaults(task: Task) -> Self {
        let values = defaults(task)
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Self { values }
    }

    /// Builds a config from file entries and command-line overrides (which win).
    pub fn resolve(file: &[(String, String)], overrides: &[(String, String)]) -> Result<Self> {
        for (k, _) in overrides {
            if !known_key(k) {
                return Err(Error::Config(format!("unknown key {k:?}")));
            }
        }
        let task_str = overrides
            .iter()
            .rev()
            .chain(file)
            .find(|(k, _)| k == "task")
            .map_or("classification", |(_, v)| v.as_str());
        let task: Task = task_str.parse().map_err(Error::Config)?;
        let mut cfg = Self::defaults(task);
        if file.iter().any(|(k, _)| k.starts_with(LAYER_PREFIX)) {
            cfg.values.retain(|k, _| !k.starts_with(LAYER_PREFIX));
        }
        for (k, v) in file.iter().chain(overrides) {
            cfg.values.insert(k.clone(), v.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        Self::resolve(&parse_entries(text)?, overrides)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[(String, String)]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::Config(format!("config not found: {}", path.display())))?;
        Self::parse(&text, overrides)
    }

    /// Every key, one per line, sorted; layers in index order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut layers: Vec<(usize, &String)> = Vec::new();
        for (k, v) in &self.values {
            if let Some(i) = k.strip_prefix(LAYER_PREFIX) {
                layers.push((i.parse().unwrap_or(usize::MAX), v));
                continue;
            }
            out.push_str(&format!("{k} = {v}\n"));
        }
        layers.sort();
        for (i, v) in layers {
            out.push_str(&format!("{LAYER_PREFIX}{i} = {v}\n"));
        }
        out
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map_or("", |v| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(|k| k.as_str())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !known_key(key) {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        self.validate()
    }

    fn typed<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.get(key);
        v.parse()
            .map_err(|e| Error::Config(format!("{key} = {v:?}: {e}")))
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "on" | "true" | "1" => Ok(true),
            "off" | "false" | "0" => Ok(false),
            v => Err(Error::Config(format!("{key} = {v:?}: expected on or off"))),
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| Error::Config(format!("{key}: {s:?}: {e}"))))
            .collect()
    }

    pub fn task(&self) -> Result<Task> {
        self.get("task").parse().map_err(Error::Config)
    }

    pub fn seed(&self) -> Result<u64> {
        self.typed("seed")
    }

    pub fn workers(&self) -> Result<usize> {
        let w: usize = self.typed("workers")?;
        if w == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        Ok(w)
    }

    pub fn precision(&self) -> Result<Precision> {
        self.get("precision").parse().map_err(Error::Config)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.path("out").unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.path("eval.checkpoint")
            .unwrap_or_else(|| self.out_dir().join(crate::harness::BEST_CHECKPOINT))
    }

    pub fn bench_out(&self) -> PathBuf {
        self.path("bench.out")
            .unwrap_or_else(|| self.out_dir().join("bench.csv"))
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        let mut shapes = Vec::new();
        for item in self.get("data.shapes").split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (kind, count) = item
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("data.shapes entry {item:?} is not kind:count")))?;
            let kind: ShapeKind = kind.trim().parse()?;
            let count: usize = count
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("data.shapes: bad count in {item:?}")))?;
            shapes.push((kind, count));
        }
        let spec = DatasetSpec {
            task: self.task()?,
            shapes,
            points_per_cloud: self.typed("data.points")?,
            noise: self.typed("data.noise")?,
            seed: self.seed()?,
            train_fraction: self.typed("data.train_fraction")?,
            test_fraction: self.typed("data.test_fraction")?,
            blobs: self.typed("data.blobs")?,
            blob_radius: self.typed("data.blob_radius")?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn data_source(&self) -> Result<DataSource> {
        Ok(match self.path("data.path") {
            Some(dir) => DataSource::Directory(dir),
            None => DataSource::Generate(self.dataset_spec()?),
        })
    }

    pub fn network(&self) -> Result<NetworkSpec> {
        let mut layers: Vec<(usize, LayerSpec)> = Vec::new();
        for (k, v) in &self.values {
            if let Some(i) = k.strip_prefix(LAYER_PREFIX) {
                let i: usize = i.parse().map_err(|_| Error::Config(format!("bad layer key {k:?}")))?;
                let l: LayerSpec = v.parse().map_err(|e| Error::Config(format!("{k}: {e}")))?;
                layers.push((i, l));
            }
        }
        layers.sort_by_key(|(i, _)| *i);
        if let Some((pos, _)) = layers.iter().enumerate().find(|(pos, (i, _))| pos != i) {
            return Err(Error::Config(format!("layer indices must be 0..n without gaps (missing {pos})")));
        }
        let input: InputMode = self.typed("net.input")?;
        let input_channels = input.channels().ok_or_else(|| {
            Error::Config("net.input = attributes is not available for synthetic data".into())
        })?;
        let classes = match self.task()? {
            Task::Classification => self.dataset_spec().map_or(3, |d| d.class_count()),
            Task::Segmentation => 2,
        };
        let mut spec = NetworkSpec {
            layers: layers.into_iter().map(|(_, l)| l).collect(),
            input_channels,
            classes,
            bias: self.flag("net.bias")?,
        };
        // A directory dataset decides its class count; take it from the head.
        if self.path("data.path").is_some() {
            if let Ok(chain) = spec.channel_chain() {
                spec.classes = chain.last().map_or(classes, |c| c.1);
            }
        }
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        if spec.task() != self.task()? {
            return Err(Error::Config(format!(
                "layers describe a {} network but task = {}",
                spec.task().as_str(),
                self.get("task")
            )));
        }
        Ok(spec)
    }

    pub fn optimizer(&self) -> Result<Optimizer> {
        let lr = self.typed("train.lr")?;
        Ok(match self.get("train.optimizer") {
            "sgd" => Optimizer::Sgd {
                lr,
                momentum: self.typed("train.momentum")?,
            },
            "adam" => Optimizer::Adam(AdamConfig {
                lr,
                beta1: self.typed("train.beta1")?,
                beta2: self.typed("train.beta2")?,
                eps: self.typed("train.eps")?,
            }),
            other => return Err(Error::Config(format!("train.optimizer = {other:?}: expected sgd or adam"))),
        })
    }

    pub fn preprocess(&self) -> Result<Preprocess> {
        Ok(Preprocess {
            normalize: self.flag("data.normalize")?,
            ordering: self.typed("train.ordering")?,
            ordering_bits: self.typed("train.ordering_bits")?,
            input: self.typed("net.input")?,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            data: self.data_source()?,
            network: self.network()?,
            preprocess: self.preprocess()?,
            optimizer: self.optimizer()?,
            epochs: self.typed("train.epochs")?,
            batch_size: self.typed("train.batch")?,
            seed: self.seed()?,
            workers: self.workers()?,
            precision: self.precision()?,
            out_dir: Some(self.out_dir()),
            log_seconds: self.flag("train.log_seconds")?,
        })
    }

    pub fn bench_config(&self) -> Result<BenchConfig> {
        Ok(BenchConfig {
            sizes: self.list("bench.sizes")?,
            radii: self.list("bench.radii")?,
            orderings: self.list::<OrderStrategy>("bench.orderings")?,
            repetitions: self.typed("bench.reps")?,
            seed: self.seed()?,
            workers: self.workers()?,
            brute_force: self.flag("bench.brute")?,
            ordering_bits: self.typed("train.ordering_bits")?,
        })
    }

    pub fn gradcheck(&self) -> Result<(usize, usize, f64)> {
        let instances: usize = self.typed("gradcheck.instances")?;
        let n: usize = self.typed("gradcheck.n")?;
        let step: f64 = self.typed("gradcheck.step")?;
        if instances == 0 || n == 0 || !(step > 0.0) {
            return Err(Error::Config("gradcheck needs instances >= 1, n >= 1, step > 0".into()));
        }
        Ok((instances, n, step))
    }

    /// Type-checks every value.
    pub fn validate(&self) -> Result<()> {
        let tc = self.train_config()?;
        if tc.epochs == 0 || tc.batch_size == 0 {
            return Err(Error::Config("train.epochs and train.batch must be >= 1".into()));
        }
        if tc.preprocess.ordering_bits == 0 || tc.preprocess.ordering_bits > crate::spatial::MAX_MORTON_BITS {
            return Err(Error::Config("train.ordering_bits must be in 1..=21".into()));
        }
        self.bench_config()?;
        self.gradcheck()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(k: &str, v: &str) -> (String, String) {
        (k.to_string(), v.to_string())
    }

    #[test]
    fn defaults_are_valid_for_both_tasks() {
        for t in [Task::Classification, Task::Segmentation] {
            let c = Config::defaults(t);
            c.validate().unwrap();
            assert_eq!(c.network().unwrap().task(), t);
        }
        let spec = Config::defaults(Task::Classification).dataset_spec().unwrap();
        let ds = crate::dataset::gen_dataset(&DatasetSpec { points_per_cloud: 8, ..spec }).unwrap();
        assert_eq!((ds.train.len(), ds.test.len()), (300, 60));
    }

    #[test]
    fn file_values_and_comments() {
        let text = "# run\ntask = segmentation\n\nseed=9\nnet.layer.0 = pointconv r=0.2 R=3 cout=4\nnet.layer.1 = relu\nnet.layer.2 = dense cout=2\n";
        let c = Config::parse(text, &[]).unwrap();
        assert_eq!(c.seed().unwrap(), 9);
        let net = c.network().unwrap();
        assert_eq!(net.layers.len(), 3);
        assert_eq!(net.layers[0], LayerSpec::conv(0.2, 3, 4));
        assert_eq!(c.get("data.shapes"), "scene:100");
    }

    #[test]
    fn overrides_win() {
        let c = Config::parse("seed = 3\ntrain.lr = 0.1\n", &[kv("seed", "5"), kv("net.layer.2", "pointconv r=0.5 R=3 cout=32")]).unwrap();
        assert_eq!(c.seed().unwrap(), 5);
        assert_eq!(c.get("train.lr"), "0.1");
        assert_eq!(c.network().unwrap().layers[2], LayerSpec::conv(0.5, 3, 32));
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(Config::parse("bogus = 1", &[]), Err(Error::Parse { line: 1, .. })));
        assert!(Config::parse("", &[kv("bogus", "1")]).is_err());
        assert!(Config::parse("seed = 1\nseed = 2", &[]).is_err());
        assert!(Config::parse("just words", &[]).is_err());
        assert!(Config::parse("seed = -1", &[]).is_err());
        assert!(Config::parse("precision = f16", &[]).is_err());
        assert!(Config::parse("train.optimizer = rmsprop", &[]).is_err());
        assert!(Config::parse("net.layer.0 = relu\nnet.layer.2 = dense cout=3", &[]).is_err());
        assert!(Config::parse("task = segmentation\nnet.layer.0 = pointconv r=0.2 cout=3\nnet.layer.1 = pool\nnet.layer.2 = dense cout=2", &[]).is_err());
        assert!(Config::parse("data.shapes = sphere:10,torus:3", &[]).is_err());
        assert!(Config::parse("workers = 0", &[]).is_err());
        assert!(Config::parse("net.layer.x = relu", &[]).is_err());
    }

    #[test]
    fn missing_file_reports_not_found() {
        let e = Config::load("/nonexistent/missing.cfg", &[]).unwrap_err();
        assert!(e.to_string().contains("config not found"));
    }

    #[test]
    fn dump_round_trips() {
        let c = Config::parse("task = segmentation\nseed = 4\ntrain.optimizer = sgd\nnet.layer.0 = dense cout=5\nnet.layer.1 = relu\nnet.layer.2 = pointconv r=0.25 R=5 cout=2 geom=cube\n", &[kv("workers", "2")]).unwrap();
        let dumped = c.dump();
        let back = Config::parse(&dumped, &[]).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.dump(), dumped);
        assert_eq!(back.keys().count(), c.keys().count());
    }

    #[test]
    fn many_layers_dump_in_index_order() {
        let mut text = String::from("task = segmentation\n");
        for i in 0..11 {
            text.push_str(&format!("net.layer.{i} = dense cout={}\n", if i == 10 { 2 } else { 4 }));
        }
        let c = Config::parse(&text, &[]).unwrap();
        let d = c.dump();
        let p9 = d.find("net.layer.9 ").unwrap();
        let p10 = d.find("net.layer.10 ").unwrap();
        assert!(p9 < p10);
        assert_eq!(Config::parse(&d, &[]).unwrap(), c);
    }
}
