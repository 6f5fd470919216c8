//! Pointwise convolution: a kernel centered on every point whose support is
//! split into `R^3` cells. Each cell contributes its weight times the mean
//! feature of the neighbors that fall inside it; empty cells contribute
//! nothing. Output has one row per input point.

use std::sync::Arc;

use crate::cloud::{FeatureMap, PointCloud, Vec3};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::real::Real;
use crate::rng::XorShift64;
use crate::spatial::{build_grid, GridIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Geometry {
    #[default]
    Ball,
    Cube,
}

impl Geometry {
    pub fn as_str(self) -> &'static str {
        match self {
            Geometry::Ball => "ball",
            Geometry::Cube => "cube",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Geometry::Ball => 0,
            Geometry::Cube => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Geometry::Ball),
            1 => Some(Geometry::Cube),
            _ => None,
        }
    }
}

impl std::str::FromStr for Geometry {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "ball" => Ok(Geometry::Ball),
            "cube" => Ok(Geometry::Cube),
            _ => Err(format!("unknown kernel geometry {s:?}")),
        }
    }
}

/// Kernel support: radius `r`, `R` cells per axis (odd), cell width `2r/R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    radius: f64,
    resolution: usize,
    geometry: Geometry,
}

impl KernelSpec {
    pub fn new(radius: f64, resolution: usize, geometry: Geometry) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!("kernel radius {radius} must be > 0")));
        }
        if resolution == 0 || resolution.is_multiple_of(2) || resolution > 255 {
            return Err(Error::InvalidArgument(format!(
                "kernel resolution {resolution} must be odd and in 1..=255"
            )));
        }
        Ok(Self {
            radius,
            resolution,
            geometry,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    /// K = R^3.
    pub fn cells(&self) -> usize {
        self.resolution.pow(3)
    }

    pub fn cell_width(&self) -> f64 {
        2.0 * self.radius / self.resolution as f64
    }

    pub fn linear(&self, c: [usize; 3]) -> usize {
        (c[0] * self.resolution + c[1]) * self.resolution + c[2]
    }

    /// Radius of the ball that encloses the whole support.
    pub fn gather_radius(&self) -> f64 {
        match self.geometry {
            Geometry::Ball => self.radius,
            // Corners of the cube; the slack absorbs rounding in the distance test.
            Geometry::Cube => self.radius * 3f64.sqrt() * (1.0 + 1e-12),
        }
    }
}

/// Cell of the kernel centered at `p_i` that contains `p_j`, given the offset
/// `p_j - p_i`. Points on the support boundary clamp into the edge cell.
pub fn assign_cell(offset: Vec3, kernel: &KernelSpec) -> Option<usize> {
    let r = kernel.radius;
    let inside = match kernel.geometry {
        Geometry::Ball => offset[0] * offset[0] + offset[1] * offset[1] + offset[2] * offset[2] <= r * r,
        Geometry::Cube => offset.iter().all(|v| v.abs() <= r),
    };
    if !inside {
        return None;
    }
    let w = kernel.cell_width();
    let top = kernel.resolution - 1;
    let axis = |v: f64| (((v + r) / w).floor().max(0.0) as usize).min(top);
    Some(kernel.linear([axis(offset[0]), axis(offset[1]), axis(offset[2])]))
}

/// Neighbor ids of every (point, cell) pair in compressed rows: the members
/// of cell `k` around point `i` are `ids[starts[i*K + k]..starts[i*K + k + 1]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhoods {
    kernel: KernelSpec,
    points: usize,
    starts: Vec<u32>,
    ids: Vec<u32>,
}

impl Neighborhoods {
    /// Gathers each point's support through `index` and bins it by cell.
    pub fn build(
        cloud: &PointCloud,
        kernel: &KernelSpec,
        index: &GridIndex,
        exec: &Exec,
    ) -> Result<Self> {
        if index.len() != cloud.len() {
            return Err(Error::Shape(format!(
                "index over {} points, cloud has {}",
                index.len(),
                cloud.len()
            )));
        }
        let k_cells = kernel.cells();
        let gather = kernel.gather_radius();
        let n = cloud.len();
        let parts = exec.map_chunks(n, |range| -> Result<(Vec<u32>, Vec<u32>)> {
            let mut counts = Vec::with_capacity(range.len() * k_cells);
            let mut ids = Vec::new();
            let mut found = Vec::new();
            let mut binned: Vec<(u32, u32)> = Vec::new();
            for i in range {
                let pi = cloud.position(i);
                found.clear();
                index.query_ball_into(cloud, pi, gather, &mut found)?;
                binned.clear();
                for &j in &found {
                    let pj = cloud.position(j as usize);
                    let off = [pj[0] - pi[0], pj[1] - pi[1], pj[2] - pi[2]];
                    if let Some(k) = assign_cell(off, kernel) {
                        binned.push((k as u32, j));
                    }
                }
                binned.sort_unstable();
                let mut next = 0;
                for k in 0..k_cells as u32 {
                    let begin = next;
                    while next < binned.len() && binned[next].0 == k {
                        next += 1;
                    }
                    counts.push((next - begin) as u32);
                }
                ids.extend(binned.iter().map(|&(_, j)| j));
            }
            Ok((counts, ids))
        });
        let mut starts = Vec::with_capacity(n * k_cells + 1);
        let mut ids = Vec::new();
        starts.push(0u32);
        for part in parts {
            let (counts, part_ids) = part?;
            let mut acc = *starts.last().unwrap();
            for c in counts {
                acc += c;
                starts.push(acc);
            }
            ids.extend(part_ids);
        }
        Ok(Self {
            kernel: *kernel,
            points: n,
            starts,
            ids,
        })
    }

    /// Builds a grid with the default cell size (the kernel radius) first.
    pub fn build_with_grid(cloud: &PointCloud, kernel: &KernelSpec, exec: &Exec) -> Result<Self> {
        let grid = build_grid(cloud, kernel.radius())?;
        Self::build(cloud, kernel, &grid, exec)
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn cell(&self, i: usize, k: usize) -> &[u32] {
        let at = i * self.kernel.cells() + k;
        &self.ids[self.starts[at] as usize..self.starts[at + 1] as usize]
    }

    pub fn total_members(&self) -> usize {
        self.ids.len()
    }
}

/// Weights in `[C_out][C_in][K]` order plus one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub c_in: usize,
    pub c_out: usize,
    pub cells: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvParams<T> {
    pub fn zeros(c_in: usize, c_out: usize, cells: usize) -> Self {
        Self {
            c_in,
            c_out,
            cells,
            weights: vec![T::zero(); c_out * c_in * cells],
            bias: vec![T::zero(); c_out],
        }
    }

    pub fn weight_index(&self, o: usize, c: usize, k: usize) -> usize {
        (o * self.c_in + c) * self.cells + k
    }

    pub fn weight(&self, o: usize, c: usize, k: usize) -> T {
        self.weights[self.weight_index(o, c, k)]
    }

    fn check(&self) -> Result<()> {
        if self.weights.len() != self.c_out * self.c_in * self.cells || self.bias.len() != self.c_out {
            return Err(Error::Shape(format!(
                "conv params hold {} weights / {} biases for {}x{}x{}",
                self.weights.len(),
                self.bias.len(),
                self.c_out,
                self.c_in,
                self.cells
            )));
        }
        Ok(())
    }

    /// Weights rearranged as `[K][C_out][C_in]` for the inner loops.
    fn cell_major(&self) -> Vec<T> {
        let mut t = vec![T::zero(); self.weights.len()];
        for o in 0..self.c_out {
            for c in 0..self.c_in {
                for k in 0..self.cells {
                    t[(k * self.c_out + o) * self.c_in + c] = self.weight(o, c, k);
                }
            }
        }
        t
    }
}

/// State kept from a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    pub neighborhoods: Arc<Neighborhoods>,
    /// Cell means `[N][K][C_in]`; zero for empty cells.
    pub cell_means: Vec<T>,
    pub c_in: usize,
}

impl<T> ConvCache<T> {
    pub fn count(&self, i: usize, k: usize) -> usize {
        self.neighborhoods.cell(i, k).len()
    }
}

pub fn conv_forward<T: Real>(
    cloud: &PointCloud,
    feats: &FeatureMap<T>,
    params: &ConvParams<T>,
    kernel: &KernelSpec,
    index: &GridIndex,
    exec: &Exec,
) -> Result<(FeatureMap<T>, ConvCache<T>)> {
    if feats.rows() != cloud.len() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} points",
            feats.rows(),
            cloud.len()
        )));
    }
    let nb = Arc::new(Neighborhoods::build(cloud, kernel, index, exec)?);
    conv_forward_binned(&nb, feats, params, exec)
}

/// Forward pass over precomputed neighborhoods.
pub fn conv_forward_binned<T: Real>(
    nb: &Arc<Neighborhoods>,
    feats: &FeatureMap<T>,
    params: &ConvParams<T>,
    exec: &Exec,
) -> Result<(FeatureMap<T>, ConvCache<T>)> {
    params.check()?;
    let k_cells = nb.kernel.cells();
    if params.cells != k_cells {
        return Err(Error::Shape(format!(
            "params have {} cells, kernel has {k_cells}",
            params.cells
        )));
    }
    if feats.rows() != nb.points || feats.channels() != params.c_in {
        return Err(Error::Shape(format!(
            "features {}x{} incompatible with {} points and C_in {}",
            feats.rows(),
            feats.channels(),
            nb.points,
            params.c_in
        )));
    }
    let (n, c_in, c_out) = (nb.points, params.c_in, params.c_out);
    let wt = params.cell_major();
    let mut means = vec![T::zero(); n * k_cells * c_in];
    exec.fill_rows(&mut means, k_cells * c_in, |i, row| {
        for k in 0..k_cells {
            let members = nb.cell(i, k);
            if members.is_empty() {
                continue;
            }
            let m = &mut row[k * c_in..(k + 1) * c_in];
            for &j in members {
                for (acc, &v) in m.iter_mut().zip(feats.row(j as usize)) {
                    *acc += v;
                }
            }
            let inv = T::one() / T::from_usize(members.len());
            m.iter_mut().for_each(|v| *v *= inv);
        }
    });
    let mut out = FeatureMap::zeros(n, c_out);
    exec.fill_rows(out.as_mut_slice(), c_out, |i, row| {
        row.copy_from_slice(&params.bias);
        for k in 0..k_cells {
            if nb.cell(i, k).is_empty() {
                continue;
            }
            let m = &means[(i * k_cells + k) * c_in..(i * k_cells + k + 1) * c_in];
            let wk = &wt[k * c_out * c_in..(k + 1) * c_out * c_in];
            for (o, acc) in row.iter_mut().enumerate() {
                let w = &wk[o * c_in..(o + 1) * c_in];
                *acc += w.iter().zip(m).map(|(&a, &b)| a * b).sum::<T>();
            }
        }
    });
    Ok((
        out,
        ConvCache {
            neighborhoods: Arc::clone(nb),
            cell_means: means,
            c_in,
        },
    ))
}

/// Gradients of a scalar loss with respect to weights, bias and input features,
/// given its gradient with respect to the forward output.
pub fn conv_backward<T: Real>(
    cache: &ConvCache<T>,
    params: &ConvParams<T>,
    grad_out: &FeatureMap<T>,
    exec: &Exec,
) -> Result<(ConvParams<T>, FeatureMap<T>)> {
    params.check()?;
    let nb = &cache.neighborhoods;
    let k_cells = nb.kernel.cells();
    let (n, c_in, c_out) = (nb.points, params.c_in, params.c_out);
    if cache.c_in != c_in || params.cells != k_cells || cache.cell_means.len() != n * k_cells * c_in {
        return Err(Error::Shape("conv cache does not match params".into()));
    }
    if grad_out.rows() != n || grad_out.channels() != c_out {
        return Err(Error::Shape(format!(
            "grad_out {}x{} for output {n}x{c_out}",
            grad_out.rows(),
            grad_out.channels()
        )));
    }
    let wt = params.cell_major();
    // Each chunk of output points accumulates its own weight/bias/input
    // gradients; partials are summed in chunk order.
    let partials = exec.map_chunks(n, |range| {
        let mut gw = vec![T::zero(); k_cells * c_out * c_in];
        let mut gb = vec![T::zero(); c_out];
        let mut gin = vec![T::zero(); n * c_in];
        let mut gmean = vec![T::zero(); c_in];
        for i in range {
            let g = grad_out.row(i);
            for (b, &v) in gb.iter_mut().zip(g) {
                *b += v;
            }
            for k in 0..k_cells {
                let members = nb.cell(i, k);
                if members.is_empty() {
                    continue;
                }
                let m = &cache.cell_means[(i * k_cells + k) * c_in..(i * k_cells + k + 1) * c_in];
                let wk = &wt[k * c_out * c_in..(k + 1) * c_out * c_in];
                let gwk = &mut gw[k * c_out * c_in..(k + 1) * c_out * c_in];
                gmean.iter_mut().for_each(|v| *v = T::zero());
                for (o, &go) in g.iter().enumerate() {
                    if go == T::zero() {
                        continue;
                    }
                    let row = o * c_in..(o + 1) * c_in;
                    for ((dw, &mv), (dm, &w)) in gwk[row.clone()]
                        .iter_mut()
                        .zip(m)
                        .zip(gmean.iter_mut().zip(&wk[row]))
                    {
                        *dw += go * mv;
                        *dm += go * w;
                    }
                }
                let inv = T::one() / T::from_usize(members.len());
                for &j in members {
                    let dst = &mut gin[j as usize * c_in..(j as usize + 1) * c_in];
                    for (d, &v) in dst.iter_mut().zip(&gmean) {
                        *d += v * inv;
                    }
                }
            }
        }
        (gw, gb, gin)
    });
    let mut gw = vec![T::zero(); k_cells * c_out * c_in];
    let mut gb = vec![T::zero(); c_out];
    let mut gin = vec![T::zero(); n * c_in];
    for (pw, pb, pin) in partials {
        add_into(&mut gw, &pw);
        add_into(&mut gb, &pb);
        add_into(&mut gin, &pin);
    }
    let mut grads = ConvParams::zeros(c_in, c_out, k_cells);
    for k in 0..k_cells {
        for o in 0..c_out {
            for c in 0..c_in {
                let at = grads.weight_index(o, c, k);
                grads.weights[at] = gw[(k * c_out + o) * c_in + c];
            }
        }
    }
    grads.bias = gb;
    Ok((grads, FeatureMap::from_vec(n, c_in, gin)?))
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// A self-contained operator instance for gradient checking.
#[derive(Debug, Clone)]
pub struct ConvInstance {
    pub cloud: PointCloud,
    pub feats: FeatureMap<f64>,
    pub params: ConvParams<f64>,
    pub kernel: KernelSpec,
}

impl ConvInstance {
    /// Points uniform in the unit cube with a kernel radius of 0.5, so most
    /// supports hold several occupied cells.
    pub fn random(seed: u64, n: usize, c_in: usize, c_out: usize, resolution: usize) -> Result<Self> {
        let mut rng = XorShift64::new(seed);
        let cloud = PointCloud::new(
            (0..n)
                .map(|_| [rng.next_f64(), rng.next_f64(), rng.next_f64()])
                .collect(),
        )?;
        let kernel = KernelSpec::new(0.5, resolution, Geometry::Ball)?;
        let feats = FeatureMap::from_fn(n, c_in, |_, _| rng.uniform(-1.0, 1.0));
        let mut params = ConvParams::zeros(c_in, c_out, kernel.cells());
        params.weights.iter_mut().for_each(|w| *w = rng.uniform(-1.0, 1.0));
        params.bias.iter_mut().for_each(|b| *b = rng.uniform(-1.0, 1.0));
        Ok(Self {
            cloud,
            feats,
            params,
            kernel,
        })
    }

    pub fn coordinates(&self) -> usize {
        self.params.weights.len() + self.params.bias.len() + self.feats.as_slice().len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub weights: f64,
    pub bias: f64,
    pub inputs: f64,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.weights.max(self.bias).max(self.inputs)
    }
}

/// `|a - b| / max(1, |b|)`, with `b` the numeric reference.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Compares [`conv_backward`] against central differences of
/// `L = sum_{i,o} out[i][o]^2` over every weight, bias and input coordinate.
pub fn finite_diff_check(instance: &ConvInstance, step: f64) -> Result<GradCheckReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step {step} must be > 0")));
    }
    let exec = Exec::sequential();
    let nb = Arc::new(Neighborhoods::build_with_grid(&instance.cloud, &instance.kernel, &exec)?);
    let loss = |feats: &FeatureMap<f64>, params: &ConvParams<f64>| -> Result<f64> {
        let (out, _) = conv_forward_binned(&nb, feats, params, &exec)?;
        Ok(out.as_slice().iter().map(|v| v * v).sum())
    };
    let (out, cache) = conv_forward_binned(&nb, &instance.feats, &instance.params, &exec)?;
    let seed = FeatureMap::from_vec(
        out.rows(),
        out.channels(),
        out.as_slice().iter().map(|v| 2.0 * v).collect(),
    )?;
    let (grads, grad_in) = conv_backward(&cache, &instance.params, &seed, &exec)?;

    let mut params = instance.params.clone();
    let mut weights = 0.0f64;
    for at in 0..params.weights.len() {
        let orig = params.weights[at];
        params.weights[at] = orig + step;
        let plus = loss(&instance.feats, &params)?;
        params.weights[at] = orig - step;
        let minus = loss(&instance.feats, &params)?;
        params.weights[at] = orig;
        weights = weights.max(relative_error(grads.weights[at], (plus - minus) / (2.0 * step)));
    }
    let mut bias = 0.0f64;
    for at in 0..params.bias.len() {
        let orig = params.bias[at];
        params.bias[at] = orig + step;
        let plus = loss(&instance.feats, &params)?;
        params.bias[at] = orig - step;
        let minus = loss(&instance.feats, &params)?;
        params.bias[at] = orig;
        bias = bias.max(relative_error(grads.bias[at], (plus - minus) / (2.0 * step)));
    }
    let mut feats = instance.feats.clone();
    let mut inputs = 0.0f64;
    for at in 0..feats.as_slice().len() {
        let orig = feats.as_slice()[at];
        feats.as_mut_slice()[at] = orig + step;
        let plus = loss(&feats, &params)?;
        feats.as_mut_slice()[at] = orig - step;
        let minus = loss(&feats, &params)?;
        feats.as_mut_slice()[at] = orig;
        inputs = inputs.max(relative_error(grad_in.as_slice()[at], (plus - minus) / (2.0 * step)));
    }
    Ok(GradCheckReport {
        weights,
        bias,
        inputs,
        coordinates: instance.coordinates(),
    })
}
