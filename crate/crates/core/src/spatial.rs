//! Uniform-grid radius search and point orderings.

use std::collections::HashMap;

use crate::cloud::{PointCloud, Vec3};
use crate::error::{Error, Result};
use crate::rng::XorShift64;

pub type CellKey = [i64; 3];

/// Uniform spatial hash over a cloud. Immutable once built.
#[derive(Debug, Clone)]
pub struct GridIndex {
    cell_size: f64,
    origin: Vec3,
    cells: HashMap<CellKey, Vec<u32>>,
    len: usize,
}

pub fn build_grid(cloud: &PointCloud, cell_size: f64) -> Result<GridIndex> {
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "cell size must be positive and finite, got {cell_size}"
        )));
    }
    let origin = cloud.bounds().map_or([0.0; 3], |b| b.min);
    let mut cells: HashMap<CellKey, Vec<u32>> = HashMap::new();
    for (i, p) in cloud.positions().iter().enumerate() {
        cells
            .entry(cell_of(*p, origin, cell_size))
            .or_default()
            .push(i as u32);
    }
    Ok(GridIndex {
        cell_size,
        origin,
        cells,
        len: cloud.len(),
    })
}

fn cell_of(p: Vec3, origin: Vec3, cell_size: f64) -> CellKey {
    [
        ((p[0] - origin[0]) / cell_size).floor() as i64,
        ((p[1] - origin[1]) / cell_size).floor() as i64,
        ((p[2] - origin[2]) / cell_size).floor() as i64,
    ]
}

#[inline]
pub(crate) fn dist2(a: Vec3, b: Vec3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

impl GridIndex {
    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_of(&self, p: Vec3) -> CellKey {
        cell_of(p, self.origin, self.cell_size)
    }

    pub fn cell(&self, key: CellKey) -> &[u32] {
        self.cells.get(&key).map_or(&[], |v| v.as_slice())
    }

    pub fn cells(&self) -> impl Iterator<Item = (&CellKey, &Vec<u32>)> {
        self.cells.iter()
    }

    fn check(&self, cloud: &PointCloud) -> Result<()> {
        if cloud.len() != self.len {
            return Err(Error::Shape(format!(
                "grid built over {} points queried with a cloud of {}",
                self.len,
                cloud.len()
            )));
        }
        Ok(())
    }

    /// Appends `{ j : |p_j - center| <= radius }` to `out` in an order that
    /// depends only on the index and the query.
    pub fn query_ball_into(
        &self,
        cloud: &PointCloud,
        center: Vec3,
        radius: f64,
        out: &mut Vec<u32>,
    ) -> Result<()> {
        self.check(cloud)?;
        if !(radius >= 0.0) {
            return Err(Error::InvalidArgument(format!("negative radius {radius}")));
        }
        let lo = self.cell_of([center[0] - radius, center[1] - radius, center[2] - radius]);
        let hi = self.cell_of([center[0] + radius, center[1] + radius, center[2] + radius]);
        let r2 = radius * radius;
        let positions = cloud.positions();
        let span = (0..3).fold(1u128, |acc, a| acc * (hi[a] - lo[a] + 1) as u128);
        if span > self.cells.len() as u128 {
            // Ball covers more lattice cells than are occupied: walk the occupied ones.
            let start = out.len();
            for (key, ids) in &self.cells {
                if (0..3).all(|a| key[a] >= lo[a] && key[a] <= hi[a]) {
                    out.extend(
                        ids.iter()
                            .copied()
                            .filter(|&j| dist2(positions[j as usize], center) <= r2),
                    );
                }
            }
            out[start..].sort_unstable();
            return Ok(());
        }
        for cx in lo[0]..=hi[0] {
            for cy in lo[1]..=hi[1] {
                for cz in lo[2]..=hi[2] {
                    if let Some(ids) = self.cells.get(&[cx, cy, cz]) {
                        out.extend(
                            ids.iter()
                                .copied()
                                .filter(|&j| dist2(positions[j as usize], center) <= r2),
                        );
                    }
                }
            }
        }
        Ok(())
    }

    /// Sorted ids of all points in the closed ball.
    pub fn query_ball(&self, cloud: &PointCloud, center: Vec3, radius: f64) -> Result<Vec<u32>> {
        let mut out = Vec::new();
        self.query_ball_into(cloud, center, radius, &mut out)?;
        out.sort_unstable();
        Ok(out)
    }
}

/// Linear-scan reference for [`GridIndex::query_ball`]; ids ascending.
pub fn query_ball_bruteforce(cloud: &PointCloud, center: Vec3, radius: f64) -> Vec<u32> {
    let r2 = radius * radius;
    cloud
        .positions()
        .iter()
        .enumerate()
        .filter(|(_, p)| dist2(**p, center) <= r2)
        .map(|(i, _)| i as u32)
        .collect()
}

pub const MAX_MORTON_BITS: u32 = 21;

/// Spreads the low 21 bits of `v` so bit `i` lands at bit `3i`.
fn spread3(v: u64) -> u64 {
    let mut x = v & 0x1f_ffff;
    x = (x | x << 32) & 0x001f_0000_0000_ffff;
    x = (x | x << 16) & 0x001f_0000_ff00_00ff;
    x = (x | x << 8) & 0x100f_00f0_0f00_f00f;
    x = (x | x << 4) & 0x10c3_0c30_c30c_30c3;
    x = (x | x << 2) & 0x1249_2492_4924_9249;
    x
}

/// Interleaves `q` with x in bits 0, 3, 6, ..., y in 1, 4, 7, ... and z in 2, 5, 8, ...
pub fn morton_code(q: [u32; 3], bits: u32) -> Result<u64> {
    if bits == 0 || bits > MAX_MORTON_BITS {
        return Err(Error::InvalidArgument(format!("morton bits {bits} not in 1..=21")));
    }
    if let Some(c) = q.iter().find(|&&c| (c as u64) >> bits != 0) {
        return Err(Error::InvalidArgument(format!(
            "coordinate {c} out of range for {bits} bits"
        )));
    }
    Ok(spread3(q[0] as u64) | spread3(q[1] as u64) << 1 | spread3(q[2] as u64) << 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderStrategy {
    Identity,
    XyzGrid,
    Morton,
    /// Seeded shuffle; the baseline for locality comparisons.
    Random(u64),
}

impl OrderStrategy {
    pub fn name(self) -> &'static str {
        match self {
            OrderStrategy::Identity => "identity",
            OrderStrategy::XyzGrid => "xyz",
            OrderStrategy::Morton => "morton",
            OrderStrategy::Random(_) => "random",
        }
    }
}

impl std::str::FromStr for OrderStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "identity" => Ok(OrderStrategy::Identity),
            "xyz" | "xyz-grid" => Ok(OrderStrategy::XyzGrid),
            "morton" => Ok(OrderStrategy::Morton),
            _ => match s.strip_prefix("random:") {
                Some(seed) => seed
                    .parse()
                    .map(OrderStrategy::Random)
                    .map_err(|_| format!("bad random seed in {s:?}")),
                None => Err(format!("unknown ordering {s:?}")),
            },
        }
    }
}

impl std::fmt::Display for OrderStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OrderStrategy::Random(seed) => write!(f, "random:{seed}"),
            other => f.write_str(other.name()),
        }
    }
}

/// `permutation[rank]` is the original id stored at `rank`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ordering {
    pub strategy: OrderStrategy,
    pub bits: u32,
    pub permutation: Vec<usize>,
}

impl Ordering {
    /// `rank[id]`, the inverse permutation.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![0; self.permutation.len()];
        for (rank, &id) in self.permutation.iter().enumerate() {
            r[id] = rank;
        }
        r
    }
}

/// Quantizes positions onto a `2^bits` lattice spanning the cloud bounds; the
/// max corner clamps into the last cell.
pub fn quantize(cloud: &PointCloud, bits: u32) -> Result<Vec<[u32; 3]>> {
    if bits == 0 || bits > MAX_MORTON_BITS {
        return Err(Error::InvalidArgument(format!("ordering bits {bits} not in 1..=21")));
    }
    let Some(b) = cloud.bounds() else {
        return Ok(Vec::new());
    };
    let ext = b.extent();
    let cells = (1u64 << bits) as f64;
    let top = (1u32 << bits) - 1;
    Ok(cloud
        .positions()
        .iter()
        .map(|p| {
            let mut q = [0u32; 3];
            for a in 0..3 {
                if ext[a] > 0.0 {
                    let t = ((p[a] - b.min[a]) / ext[a] * cells).floor();
                    q[a] = (t.max(0.0) as u32).min(top);
                }
            }
            q
        })
        .collect())
}

pub fn order_points(cloud: &PointCloud, strategy: OrderStrategy, bits: u32) -> Result<Ordering> {
    if cloud.is_empty() {
        return Err(Error::InvalidArgument("cannot order an empty cloud".into()));
    }
    let n = cloud.len();
    let permutation = match strategy {
        OrderStrategy::Identity => (0..n).collect(),
        OrderStrategy::Random(seed) => XorShift64::new(seed).permutation(n),
        OrderStrategy::Morton => {
            let q = quantize(cloud, bits)?;
            let codes = q
                .iter()
                .map(|&c| morton_code(c, bits))
                .collect::<Result<Vec<_>>>()?;
            let mut ids: Vec<usize> = (0..n).collect();
            ids.sort_by_key(|&i| (codes[i], i));
            ids
        }
        OrderStrategy::XyzGrid => {
            let q = quantize(cloud, bits)?;
            let mut ids: Vec<usize> = (0..n).collect();
            ids.sort_by_key(|&i| (q[i], i));
            ids
        }
    };
    Ok(Ordering {
        strategy,
        bits,
        permutation,
    })
}

/// Mean `|rank(i) - rank(j)|` over unordered neighbor pairs `i != j` within
/// `radius`. Returns `None` when there are no such pairs.
pub fn mean_neighbor_rank_distance(
    cloud: &PointCloud,
    ordering: &Ordering,
    radius: f64,
) -> Result<Option<f64>> {
    let grid = build_grid(cloud, radius.max(f64::MIN_POSITIVE))?;
    let ranks = ordering.ranks();
    let mut total = 0.0f64;
    let mut pairs = 0u64;
    let mut buf = Vec::new();
    for (i, p) in cloud.positions().iter().enumerate() {
        buf.clear();
        grid.query_ball_into(cloud, *p, radius, &mut buf)?;
        for &j in &buf {
            let j = j as usize;
            if j > i {
                total += ranks[i].abs_diff(ranks[j]) as f64;
                pairs += 1;
            }
        }
    }
    Ok((pairs > 0).then(|| total / pairs as f64))
}
