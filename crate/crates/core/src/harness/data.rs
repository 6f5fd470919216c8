use std::fmt::Write as _;
use std::path::Path;

use crate::cloud::{load_cloud, normalize_cloud, save_cloud, FeatureMap};
use crate::dataset::{Dataset, Sample, Target, Task};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::net::{featurize, InputMode, NetworkSpec, PreparedCloud};
use crate::real::Real;
use crate::spatial::{order_points, OrderStrategy};

/// How raw clouds become network inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preprocess {
    pub normalize: bool,
    pub ordering: OrderStrategy,
    pub ordering_bits: u32,
    pub input: InputMode,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            normalize: true,
            ordering: OrderStrategy::Morton,
            ordering_bits: 10,
            input: InputMode::ConstXyz,
        }
    }
}

/// A cloud ready for the network: normalized, reordered once, featurized,
/// with neighborhoods for every conv layer and targets in the new order.
#[derive(Debug, Clone)]
pub struct PreparedSample<T> {
    pub input: PreparedCloud,
    pub feats: FeatureMap<T>,
    pub targets: Vec<u32>,
}

pub fn prepare_sample<T: Real>(
    sample: &Sample,
    spec: &NetworkSpec,
    pre: &Preprocess,
    exec: &Exec,
) -> Result<PreparedSample<T>> {
    let cloud = if pre.normalize {
        normalize_cloud(&sample.cloud)?
    } else {
        sample.cloud.clone()
    };
    let order = order_points(&cloud, pre.ordering, pre.ordering_bits)?;
    let cloud = cloud.permuted(&order.permutation)?;
    let targets = match &sample.target {
        Target::Class(c) => vec![*c],
        Target::Points(l) => {
            if l.len() != sample.cloud.len() {
                return Err(Error::Shape(format!(
                    "{} point labels for {} points",
                    l.len(),
                    sample.cloud.len()
                )));
            }
            order.permutation.iter().map(|&j| l[j]).collect()
        }
    };
    let feats = featurize(&cloud, pre.input)?;
    let input = PreparedCloud::new(spec, cloud, exec)?;
    Ok(PreparedSample {
        input,
        feats,
        targets,
    })
}

/// Prepares every sample, spreading clouds over the workers.
pub fn prepare_all<T: Real>(
    samples: &[Sample],
    spec: &NetworkSpec,
    pre: &Preprocess,
    exec: &Exec,
) -> Result<Vec<PreparedSample<T>>> {
    let inner = Exec::sequential();
    let parts = exec.map_chunks(samples.len(), |range| {
        samples[range]
            .iter()
            .map(|s| prepare_sample(s, spec, pre, &inner))
            .collect::<Result<Vec<_>>>()
    });
    let mut out = Vec::with_capacity(samples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

const MANIFEST: &str = "manifest.csv";

/// Writes one `xyz` file per cloud plus `manifest.csv`
/// (`split,file,label`; label is -1 for per-point targets).
pub fn write_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!("# task={} classes={}\nsplit,file,label\n", ds.task.as_str(), ds.classes);
    for (split, samples) in [("train", &ds.train), ("test", &ds.test)] {
        for (i, s) in samples.iter().enumerate() {
            let file = format!("{split}_{i:05}.xyz");
            let (cloud, label) = match &s.target {
                Target::Class(c) => (s.cloud.with_new_labels(None)?, *c as i64),
                Target::Points(l) => (s.cloud.with_new_labels(Some(l.clone()))?, -1),
            };
            save_cloud(&cloud, dir.join(&file))?;
            let _ = writeln!(manifest, "{split},{file},{label}");
        }
    }
    let path = dir.join(MANIFEST);
    std::fs::write(&path, manifest).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let bad = |line: usize, msg: String| Error::Parse { line, msg: format!("{MANIFEST}: {msg}") };
    let mut lines = text.lines().enumerate();
    let (_, head) = lines.next().ok_or_else(|| bad(1, "empty manifest".into()))?;
    let mut task = None;
    let mut classes = None;
    for kv in head.trim_start_matches('#').split_whitespace() {
        match kv.split_once('=') {
            Some(("task", v)) => task = Some(v.parse::<Task>().map_err(|e| bad(1, e))?),
            Some(("classes", v)) => classes = Some(v.parse::<usize>().map_err(|e| bad(1, e.to_string()))?),
            _ => return Err(bad(1, format!("unexpected header field {kv:?}"))),
        }
    }
    let task = task.ok_or_else(|| bad(1, "missing task".into()))?;
    let classes = classes.ok_or_else(|| bad(1, "missing classes".into()))?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() || line.starts_with("split,") {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let [split, file, label] = f[..] else {
            return Err(bad(line_no, format!("expected 3 fields in {line:?}")));
        };
        let label: i64 = label.parse().map_err(|_| bad(line_no, format!("bad label {label:?}")))?;
        let cloud = load_cloud(dir.join(file))?;
        let target = match task {
            Task::Classification => {
                if label < 0 || label as usize >= classes {
                    return Err(bad(line_no, format!("label {label} out of range")));
                }
                Target::Class(label as u32)
            }
            Task::Segmentation => Target::Points(
                cloud
                    .labels()
                    .ok_or_else(|| bad(line_no, format!("{file} has no point labels")))?
                    .to_vec(),
            ),
        };
        let sample = Sample {
            cloud: cloud.with_new_labels(None)?,
            target,
        };
        match split {
            "train" => train.push(sample),
            "test" => test.push(sample),
            other => return Err(bad(line_no, format!("unknown split {other:?}"))),
        }
    }
    Ok(Dataset {
        task,
        classes,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_dataset, DatasetSpec};
    use crate::net::LayerSpec;

    #[test]
    fn dataset_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for spec in [DatasetSpec::classification(3, 16, 1), DatasetSpec::segmentation(4, 32, 2)] {
            let ds = gen_dataset(&spec).unwrap();
            let sub = dir.path().join(ds.task.as_str());
            write_dataset(&ds, &sub).unwrap();
            let back = read_dataset(&sub).unwrap();
            assert_eq!(back.task, ds.task);
            assert_eq!(back.classes, ds.classes);
            assert_eq!(back.train.len(), ds.train.len());
            for (a, b) in back.train.iter().chain(&back.test).zip(ds.train.iter().chain(&ds.test)) {
                assert_eq!(a.cloud.positions(), b.cloud.positions());
                assert_eq!(a.target, b.target);
            }
        }
    }

    #[test]
    fn targets_follow_the_ordering() {
        let ds = gen_dataset(&DatasetSpec::segmentation(1, 64, 3)).unwrap();
        let spec = NetworkSpec::new(vec![LayerSpec::conv(0.3, 3, 2)], 4, 2).unwrap();
        let s = &ds.train[0];
        let p: PreparedSample<f64> = prepare_sample(s, &spec, &Preprocess::default(), &Exec::sequential()).unwrap();
        let normalized = normalize_cloud(&s.cloud).unwrap();
        let Target::Points(labels) = &s.target else { panic!() };
        for (i, pos) in p.input.cloud.positions().iter().enumerate() {
            let j = normalized.positions().iter().position(|q| q == pos).unwrap();
            assert_eq!(p.targets[i], labels[j]);
            assert_eq!(p.feats.get(i, 1), pos[0]);
        }
    }
}
