//! Synthetic classification and segmentation datasets.

use std::f64::consts::TAU;

use crate::cloud::{PointCloud, Vec3};
use crate::error::{Error, Result};
use crate::rng::XorShift64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classification,
    Segmentation,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Classification => "classification",
            Task::Segmentation => "segmentation",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "classification" => Ok(Task::Classification),
            "segmentation" => Ok(Task::Segmentation),
            _ => Err(format!("unknown task {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    /// Unit sphere surface.
    Sphere,
    /// Surface of the cube `[-1, 1]^3`.
    Cube,
    /// Filled unit disk in the z = 0 plane.
    Disk,
    /// Segmentation scene: square floor with spherical blobs resting on it.
    Scene,
}

impl ShapeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Disk => "disk",
            ShapeKind::Scene => "scene",
        }
    }
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(ShapeKind::Sphere),
            "cube" => Ok(ShapeKind::Cube),
            "disk" => Ok(ShapeKind::Disk),
            "scene" => Ok(ShapeKind::Scene),
            other => Err(Error::Dataset(format!("unknown shape kind {other:?}"))),
        }
    }
}

pub const FLOOR: u32 = 0;
pub const BLOB: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub task: Task,
    /// Classification: one entry per class, in class-id order, with the number
    /// of clouds to draw. Segmentation: a single `Scene` entry with the number
    /// of scenes.
    pub shapes: Vec<(ShapeKind, usize)>,
    pub points_per_cloud: usize,
    /// Gaussian positional noise, meters.
    pub noise: f64,
    pub seed: u64,
    pub train_fraction: f64,
    pub test_fraction: f64,
    /// Blobs per segmentation scene.
    pub blobs: usize,
    pub blob_radius: f64,
}

impl DatasetSpec {
    pub fn classification(per_class: usize, points_per_cloud: usize, seed: u64) -> Self {
        Self {
            task: Task::Classification,
            shapes: vec![
                (ShapeKind::Sphere, per_class),
                (ShapeKind::Cube, per_class),
                (ShapeKind::Disk, per_class),
            ],
            points_per_cloud,
            noise: 0.01,
            seed,
            train_fraction: 5.0 / 6.0,
            test_fraction: 1.0 / 6.0,
            blobs: 3,
            blob_radius: 0.2,
        }
    }

    pub fn segmentation(scenes: usize, points_per_cloud: usize, seed: u64) -> Self {
        Self {
            task: Task::Segmentation,
            shapes: vec![(ShapeKind::Scene, scenes)],
            points_per_cloud,
            noise: 0.005,
            seed,
            train_fraction: 0.8,
            test_fraction: 0.2,
            blobs: 3,
            blob_radius: 0.2,
        }
    }

    pub fn class_count(&self) -> usize {
        match self.task {
            Task::Classification => self.shapes.len(),
            Task::Segmentation => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Dataset(m));
        if self.points_per_cloud < 8 {
            return bad(format!("points_per_cloud {} < 8", self.points_per_cloud));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise {} must be finite and >= 0", self.noise));
        }
        let fr_ok = |f: f64| (0.0..=1.0).contains(&f);
        if !fr_ok(self.train_fraction)
            || !fr_ok(self.test_fraction)
            || (self.train_fraction + self.test_fraction - 1.0).abs() > 1e-9
        {
            return bad(format!(
                "split fractions {} + {} must be in [0,1] and sum to 1",
                self.train_fraction, self.test_fraction
            ));
        }
        if self.shapes.is_empty() {
            return bad("no shapes".into());
        }
        if let Some((k, _)) = self.shapes.iter().find(|(_, n)| *n == 0) {
            return bad(format!("zero count for shape {}", k.as_str()));
        }
        match self.task {
            Task::Classification => {
                if self.shapes.len() < 2 {
                    return bad("classification needs at least two shape classes".into());
                }
                if self.shapes.iter().any(|(k, _)| *k == ShapeKind::Scene) {
                    return bad("scene is not a classification shape".into());
                }
            }
            Task::Segmentation => {
                if self.shapes.len() != 1 || self.shapes[0].0 != ShapeKind::Scene {
                    return bad("segmentation takes exactly one `scene` entry".into());
                }
                if self.blobs == 0 {
                    return bad("zero blobs per scene".into());
                }
                if !(self.blob_radius > 0.0 && self.blob_radius < 0.5) {
                    return bad(format!("blob_radius {} must be in (0, 0.5)", self.blob_radius));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(u32),
    /// Per-point labels, aligned with the cloud.
    Points(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub cloud: PointCloud,
    pub target: Target,
}

impl Sample {
    /// Targets as one label per output row.
    pub fn target_rows(&self) -> Vec<u32> {
        match &self.target {
            Target::Class(c) => vec![*c],
            Target::Points(l) => l.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub classes: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Generates the full dataset described by `spec`. The result depends only on
/// `spec`; every cloud is drawn from its own RNG stream.
pub fn gen_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut stream = 0u64;
    for (class, &(kind, count)) in spec.shapes.iter().enumerate() {
        let n_train = ((count as f64) * spec.train_fraction).round() as usize;
        for i in 0..count {
            let mut rng = XorShift64::derive(spec.seed, stream);
            stream += 1;
            let sample = match spec.task {
                Task::Classification => {
                    let cloud = PointCloud::new(sample_shape(kind, spec, &mut rng))?;
                    Sample {
                        cloud,
                        target: Target::Class(class as u32),
                    }
                }
                Task::Segmentation => {
                    let (pts, labels) = sample_scene(spec, &mut rng);
                    let cloud = PointCloud::with_labels(pts, labels.clone())?;
                    Sample {
                        cloud,
                        target: Target::Points(labels),
                    }
                }
            };
            if i < n_train {
                train.push(sample);
            } else {
                test.push(sample);
            }
        }
    }
    Ok(Dataset {
        task: spec.task,
        classes: spec.class_count(),
        train,
        test,
    })
}

fn add_noise(p: Vec3, sigma: f64, rng: &mut XorShift64) -> Vec3 {
    if sigma == 0.0 {
        return p;
    }
    [
        p[0] + sigma * rng.normal(),
        p[1] + sigma * rng.normal(),
        p[2] + sigma * rng.normal(),
    ]
}

fn unit_sphere_point(rng: &mut XorShift64) -> Vec3 {
    let z = rng.uniform(-1.0, 1.0);
    let phi = TAU * rng.next_f64();
    let r = libm::sqrt((1.0 - z * z).max(0.0));
    [r * libm::cos(phi), r * libm::sin(phi), z]
}

fn sample_shape(kind: ShapeKind, spec: &DatasetSpec, rng: &mut XorShift64) -> Vec<Vec3> {
    (0..spec.points_per_cloud)
        .map(|_| {
            let p = match kind {
                ShapeKind::Sphere => unit_sphere_point(rng),
                ShapeKind::Cube => {
                    let face = rng.below(6);
                    let u = rng.uniform(-1.0, 1.0);
                    let v = rng.uniform(-1.0, 1.0);
                    let s = if face.is_multiple_of(2) { 1.0 } else { -1.0 };
                    match face / 2 {
                        0 => [s, u, v],
                        1 => [u, s, v],
                        _ => [u, v, s],
                    }
                }
                ShapeKind::Disk => {
                    let r = libm::sqrt(rng.next_f64());
                    let phi = TAU * rng.next_f64();
                    [r * libm::cos(phi), r * libm::sin(phi), 0.0]
                }
                ShapeKind::Scene => unreachable!("validated"),
            };
            add_noise(p, spec.noise, rng)
        })
        .collect()
}

/// Floor `[-1,1]^2` at z = 0 plus `spec.blobs` sphere surfaces of radius
/// `spec.blob_radius` resting on it. Points are split between floor and blobs
/// in proportion to surface area.
fn sample_scene(spec: &DatasetSpec, rng: &mut XorShift64) -> (Vec<Vec3>, Vec<u32>) {
    let r = spec.blob_radius;
    let floor_area = 4.0;
    let blob_area = 2.0 * TAU * r * r;
    let total_area = floor_area + spec.blobs as f64 * blob_area;
    let n = spec.points_per_cloud;
    let per_blob = ((n as f64 * blob_area / total_area).floor() as usize).max(1);
    let n_blob = (per_blob * spec.blobs).min(n - 1);
    let n_floor = n - n_blob;

    let lim = 1.0 - r;
    let centers: Vec<Vec3> = (0..spec.blobs)
        .map(|_| [rng.uniform(-lim, lim), rng.uniform(-lim, lim), r])
        .collect();

    let mut pts = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n_floor {
        let p = [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), 0.0];
        pts.push(add_noise(p, spec.noise, rng));
        labels.push(FLOOR);
    }
    for i in 0..n_blob {
        let c = centers[(i / per_blob).min(spec.blobs - 1)];
        let s = unit_sphere_point(rng);
        let p = [c[0] + r * s[0], c[1] + r * s[1], c[2] + r * s[2]];
        pts.push(add_noise(p, spec.noise, rng));
        labels.push(BLOB);
    }
    (pts, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::norm;

    #[test]
    fn noiseless_sphere_points_lie_on_the_surface() {
        let mut spec = DatasetSpec::classification(4, 200, 9);
        spec.noise = 0.0;
        let ds = gen_dataset(&spec).unwrap();
        for s in ds.train.iter().chain(&ds.test) {
            if s.target == Target::Class(0) {
                for p in s.cloud.positions() {
                    assert!((norm(*p) - 1.0).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn cube_and_disk_geometry() {
        let mut spec = DatasetSpec::classification(2, 100, 3);
        spec.noise = 0.0;
        let ds = gen_dataset(&spec).unwrap();
        for s in ds.train.iter().chain(&ds.test) {
            for p in s.cloud.positions() {
                match s.target {
                    Target::Class(1) => {
                        let m = p.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                        assert_eq!(m, 1.0);
                    }
                    Target::Class(2) => {
                        assert_eq!(p[2], 0.0);
                        assert!(norm(*p) <= 1.0);
                    }
                    _ => {}
                }
            }
        }
    }

    #[test]
    fn seed_determines_dataset() {
        let spec = DatasetSpec::classification(5, 64, 42);
        assert_eq!(gen_dataset(&spec).unwrap(), gen_dataset(&spec).unwrap());
        let seg = DatasetSpec::segmentation(4, 64, 42);
        assert_eq!(gen_dataset(&seg).unwrap(), gen_dataset(&seg).unwrap());
        let other = DatasetSpec { seed: 43, ..spec.clone() };
        assert_ne!(gen_dataset(&spec).unwrap(), gen_dataset(&other).unwrap());
    }

    #[test]
    fn split_sizes_follow_fractions() {
        let ds = gen_dataset(&DatasetSpec::classification(120, 16, 1)).unwrap();
        assert_eq!(ds.train.len(), 300);
        assert_eq!(ds.test.len(), 60);
        assert_eq!(ds.classes, 3);
    }

    #[test]
    fn raised_points_belong_to_blobs() {
        let mut spec = DatasetSpec::segmentation(10, 512, 8);
        spec.noise = 0.0;
        spec.blobs = 1;
        spec.blob_radius = 0.2;
        let ds = gen_dataset(&spec).unwrap();
        for s in ds.train.iter().chain(&ds.test) {
            let Target::Points(labels) = &s.target else { panic!() };
            assert_eq!(s.cloud.labels(), Some(&labels[..]));
            let mut blob = 0;
            for (p, &l) in s.cloud.positions().iter().zip(labels) {
                if p[2] > 0.05 {
                    assert_eq!(l, BLOB);
                }
                if l == FLOOR {
                    assert_eq!(p[2], 0.0);
                } else {
                    blob += 1;
                    assert!(p[2] >= -1e-12 && p[2] <= 0.4 + 1e-12);
                }
            }
            assert!(blob > 0);
        }
    }

    #[test]
    fn rejects_invalid_specs() {
        let ok = DatasetSpec::classification(3, 16, 0);
        let mut s = ok.clone();
        s.shapes[1].1 = 0;
        assert!(gen_dataset(&s).is_err());
        let mut s = ok.clone();
        s.points_per_cloud = 7;
        assert!(gen_dataset(&s).is_err());
        let mut s = ok.clone();
        s.train_fraction = 0.9;
        assert!(gen_dataset(&s).is_err());
        let mut s = DatasetSpec::segmentation(3, 16, 0);
        s.blobs = 0;
        assert!(gen_dataset(&s).is_err());
        assert!("torus".parse::<ShapeKind>().is_err());
    }
}
