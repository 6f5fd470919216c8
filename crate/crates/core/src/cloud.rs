//! Point clouds, per-point feature maps and the `xyz` text format.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::real::Real;

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: Vec3,
    pub max: Vec3,
}

impl Bounds {
    pub fn of(points: &[Vec3]) -> Option<Self> {
        let first = *points.first()?;
        let mut b = Bounds {
            min: first,
            max: first,
        };
        for p in &points[1..] {
            for a in 0..3 {
                b.min[a] = b.min[a].min(p[a]);
                b.max[a] = b.max[a].max(p[a]);
            }
        }
        Some(b)
    }

    pub fn extent(&self) -> Vec3 {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }
}

/// Extra per-point channels stored row-major, `channels` values per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Attributes {
    pub channels: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<Vec3>,
    labels: Option<Vec<u32>>,
    attributes: Option<Attributes>,
    bounds: Option<Bounds>,
}

impl PointCloud {
    pub fn new(positions: Vec<Vec3>) -> Result<Self> {
        Self::with_parts(positions, None, None)
    }

    pub fn with_labels(positions: Vec<Vec3>, labels: Vec<u32>) -> Result<Self> {
        Self::with_parts(positions, Some(labels), None)
    }

    pub fn with_parts(
        positions: Vec<Vec3>,
        labels: Option<Vec<u32>>,
        attributes: Option<Attributes>,
    ) -> Result<Self> {
        if let Some(i) = positions
            .iter()
            .position(|p| p.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::InvalidCloud(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(l) = &labels {
            if l.len() != positions.len() {
                return Err(Error::InvalidCloud(format!(
                    "{} labels for {} points",
                    l.len(),
                    positions.len()
                )));
            }
        }
        if let Some(a) = &attributes {
            if a.channels == 0 || a.values.len() != a.channels * positions.len() {
                return Err(Error::InvalidCloud(format!(
                    "attribute block of {} values does not hold {} rows of {} channels",
                    a.values.len(),
                    positions.len(),
                    a.channels
                )));
            }
        }
        let bounds = Bounds::of(&positions);
        Ok(Self {
            positions,
            labels,
            attributes,
            bounds,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn position(&self, i: usize) -> Vec3 {
        self.positions[i]
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn attributes(&self) -> Option<&Attributes> {
        self.attributes.as_ref()
    }

    /// `None` for an empty cloud.
    pub fn bounds(&self) -> Option<Bounds> {
        self.bounds
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.len().max(1) as f64;
        let mut c = [0.0; 3];
        for p in &self.positions {
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        c.map(|v| v / n)
    }

    /// New cloud whose point `i` is this cloud's point `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.len())?;
        let positions = perm.iter().map(|&j| self.positions[j]).collect();
        let labels = self
            .labels
            .as_ref()
            .map(|l| perm.iter().map(|&j| l[j]).collect());
        let attributes = self.attributes.as_ref().map(|a| Attributes {
            channels: a.channels,
            values: perm
                .iter()
                .flat_map(|&j| a.values[j * a.channels..(j + 1) * a.channels].iter().copied())
                .collect(),
        });
        Self::with_parts(positions, labels, attributes)
    }

    pub fn translated(&self, by: Vec3) -> Result<Self> {
        let positions = self
            .positions
            .iter()
            .map(|p| [p[0] + by[0], p[1] + by[1], p[2] + by[2]])
            .collect();
        Self::with_parts(positions, self.labels.clone(), self.attributes.clone())
    }

    pub fn with_new_labels(&self, labels: Option<Vec<u32>>) -> Result<Self> {
        Self::with_parts(self.positions.clone(), labels, self.attributes.clone())
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::InvalidArgument(format!(
            "permutation of length {} for {n} points",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &j in perm {
        if j >= n || std::mem::replace(&mut seen[j], true) {
            return Err(Error::InvalidArgument("not a permutation".into()));
        }
    }
    Ok(())
}

/// Row-major N x C matrix of per-point values aligned with a cloud's storage order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    rows: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn zeros(rows: usize, channels: usize) -> Self {
        Self {
            rows,
            channels,
            data: vec![T::zero(); rows * channels],
        }
    }

    pub fn from_vec(rows: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Shape("feature map needs at least one channel".into()));
        }
        if data.len() != rows * channels {
            return Err(Error::Shape(format!(
                "{} values cannot form {rows} x {channels}",
                data.len()
            )));
        }
        Ok(Self {
            rows,
            channels,
            data,
        })
    }

    pub fn from_fn(rows: usize, channels: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * channels);
        for r in 0..rows {
            for c in 0..channels {
                data.push(f(r, c));
            }
        }
        Self {
            rows,
            channels,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.channels..(r + 1) * self.channels]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.channels..(r + 1) * self.channels]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.channels + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.channels + c] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn permuted_rows(&self, perm: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for &j in perm {
            data.extend_from_slice(self.row(j));
        }
        Self {
            rows: perm.len(),
            channels: self.channels,
            data,
        }
    }

    pub fn cast<U: Real>(&self) -> FeatureMap<U> {
        FeatureMap {
            rows: self.rows,
            channels: self.channels,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Reads `x y z [label]` lines; blank lines and lines starting with `#` are skipped.
pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut positions = Vec::new();
    let mut labels = Vec::new();
    let mut arity: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse_err = |msg: String| Error::Parse { line: line_no, msg };
        if fields.len() != 3 && fields.len() != 4 {
            return Err(parse_err(format!("expected 3 or 4 fields, found {}", fields.len())));
        }
        match arity {
            None => arity = Some(fields.len()),
            Some(a) if a != fields.len() => {
                return Err(parse_err(format!(
                    "mixed line arity: {} fields after lines with {a}",
                    fields.len()
                )))
            }
            _ => {}
        }
        let mut p = [0.0; 3];
        for (a, f) in fields[..3].iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(format!("invalid number {f:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite value {f:?}")));
            }
            p[a] = v;
        }
        positions.push(p);
        if let Some(f) = fields.get(3) {
            let l: u32 = f
                .parse()
                .map_err(|_| parse_err(format!("invalid label {f:?}")))?;
            labels.push(l);
        }
    }
    if positions.is_empty() {
        return Err(Error::EmptyFile);
    }
    let labels = (arity == Some(4)).then_some(labels);
    PointCloud::with_parts(positions, labels, None)
}

pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 32);
    for (i, p) in cloud.positions().iter().enumerate() {
        // `Display` for f64 is the shortest string that parses back exactly.
        let _ = write!(out, "{} {} {}", p[0], p[1], p[2]);
        if let Some(l) = cloud.labels() {
            let _ = write!(out, " {}", l[i]);
        }
        out.push('\n');
    }
    out
}

pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xyz(&text)
}

pub fn save_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_xyz(cloud)).map_err(|e| Error::io(path, e))
}

/// Centers the cloud on its centroid and scales it so the farthest point sits
/// at distance 1. A cloud whose points all coincide maps onto the origin.
pub fn normalize_cloud(cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::InvalidCloud("cannot normalize an empty cloud".into()));
    }
    let c = cloud.centroid();
    let centered: Vec<Vec3> = cloud
        .positions()
        .iter()
        .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect();
    let max_r = centered.iter().map(|p| norm(*p)).fold(0.0, f64::max);
    let scale = if max_r > 0.0 { 1.0 / max_r } else { 1.0 };
    let positions = centered
        .into_iter()
        .map(|p| p.map(|v| v * scale))
        .collect();
    PointCloud::with_parts(positions, cloud.labels.clone(), cloud.attributes.clone())
}

pub fn norm(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::XorShift64;
    use proptest::prelude::*;

    #[test]
    fn reads_plain_points() {
        let c = parse_xyz("0 0 0\n1 2 3\n").unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.labels().is_none());
        let b = c.bounds().unwrap();
        assert_eq!(b.min, [0.0, 0.0, 0.0]);
        assert_eq!(b.max, [1.0, 2.0, 3.0]);
    }

    #[test]
    fn reads_labels_and_comments() {
        let c = parse_xyz("# header\n\n0 0 0 1\n").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.labels(), Some(&[1u32][..]));
        let c = parse_xyz("1\t2   3 0\n4 5 6\t2\n").unwrap();
        assert_eq!(c.labels(), Some(&[0u32, 2][..]));
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(parse_xyz("0 0"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse_xyz("0 0 0\n0 0 0 1"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_xyz("# c\n0 0 nan"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(parse_xyz("0 0 inf"), Err(Error::Parse { .. })));
        assert!(matches!(parse_xyz("0 0 x"), Err(Error::Parse { .. })));
        assert!(matches!(parse_xyz("0 0 0 -1"), Err(Error::Parse { .. })));
        assert!(matches!(parse_xyz(""), Err(Error::EmptyFile)));
        assert!(matches!(parse_xyz("# only\n\n"), Err(Error::EmptyFile)));
    }

    #[test]
    fn empty_cloud_saves_nothing_and_reload_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.xyz");
        save_cloud(&PointCloud::new(vec![]).unwrap(), &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
        assert!(matches!(load_cloud(&path), Err(Error::EmptyFile)));
    }

    #[test]
    fn labeled_lines_have_four_fields() {
        let c = PointCloud::with_labels(vec![[0.5, 1.0, -2.0], [3.0, 4.0, 5.0]], vec![0, 7]).unwrap();
        for line in format_xyz(&c).lines() {
            assert_eq!(line.split_whitespace().count(), 4);
        }
    }

    #[test]
    fn random_cloud_round_trips_through_file() {
        let mut rng = XorShift64::new(5);
        let pts: Vec<Vec3> = (0..100)
            .map(|_| [rng.uniform(-10.0, 10.0), rng.normal() * 1e-7, rng.uniform(0.0, 1e6)])
            .collect();
        let labels: Vec<u32> = (0..100).map(|_| rng.below(4) as u32).collect();
        let c = PointCloud::with_labels(pts, labels).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        save_cloud(&c, &path).unwrap();
        assert_eq!(load_cloud(&path).unwrap(), c);
    }

    #[test]
    fn invalid_clouds_rejected() {
        assert!(PointCloud::new(vec![[0.0, f64::NAN, 0.0]]).is_err());
        assert!(PointCloud::with_labels(vec![[0.0; 3]], vec![]).is_err());
        let attrs = Attributes {
            channels: 2,
            values: vec![1.0; 3],
        };
        assert!(PointCloud::with_parts(vec![[0.0; 3]], None, Some(attrs)).is_err());
    }

    #[test]
    fn normalize_two_points() {
        let c = PointCloud::new(vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
        let n = normalize_cloud(&c).unwrap();
        assert_eq!(n.positions(), &[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    }

    #[test]
    fn normalize_coincident_points_to_origin() {
        let c = PointCloud::new(vec![[3.0, -1.0, 2.0]; 5]).unwrap();
        let n = normalize_cloud(&c).unwrap();
        assert!(n.positions().iter().all(|p| *p == [0.0; 3]));
        assert!(normalize_cloud(&PointCloud::new(vec![]).unwrap()).is_err());
    }

    fn check_normalized(n: &PointCloud) {
        assert!(norm(n.centroid()) <= 1e-6);
        let r = n.positions().iter().map(|p| norm(*p)).fold(0.0, f64::max);
        assert!((1.0 - 1e-6..=1.0 + 1e-12).contains(&r), "max radius {r}");
    }

    #[test]
    fn normalize_uniform_box() {
        let mut rng = XorShift64::new(1);
        let pts = (0..1000)
            .map(|_| [rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0)])
            .collect();
        let n = normalize_cloud(&PointCloud::new(pts).unwrap()).unwrap();
        check_normalized(&n);
    }

    #[test]
    fn permuted_moves_labels_with_points() {
        let c = PointCloud::with_labels(vec![[0.0; 3], [1.0; 3], [2.0; 3]], vec![0, 1, 2]).unwrap();
        let p = c.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(p.position(0), [2.0; 3]);
        assert_eq!(p.labels(), Some(&[2u32, 0, 1][..]));
        assert!(c.permuted(&[0, 0, 1]).is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(pts in prop::collection::vec(prop::array::uniform3(-100.0f64..100.0), 2..64)) {
            let c = PointCloud::new(pts).unwrap();
            let once = normalize_cloud(&c).unwrap();
            check_normalized(&once);
            let twice = normalize_cloud(&once).unwrap();
            for (a, b) in once.positions().iter().zip(twice.positions()) {
                for k in 0..3 {
                    prop_assert!((a[k] - b[k]).abs() <= 1e-6);
                }
            }
        }

        #[test]
        fn text_round_trip_is_exact(pts in prop::collection::vec(prop::array::uniform3(any::<f64>().prop_filter("finite", |v| v.is_finite())), 1..32)) {
            let c = PointCloud::new(pts).unwrap();
            prop_assert_eq!(parse_xyz(&format_xyz(&c)).unwrap(), c);
        }
    }
}
