use std::sync::Arc;

use super::spec::{LayerSpec, NetworkSpec};
use crate::cloud::{FeatureMap, PointCloud};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::pointconv::{conv_backward, conv_forward_binned, ConvCache, ConvParams, KernelSpec, Neighborhoods};
use crate::real::Real;
use crate::rng::XorShift64;
use crate::spatial::build_grid;

/// Row-wise affine map, weights `[C_out][C_in]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T> {
    pub c_in: usize,
    pub c_out: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> DenseParams<T> {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            c_in,
            c_out,
            weights: vec![T::zero(); c_in * c_out],
            bias: vec![T::zero(); c_out],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<T> {
    Conv(ConvParams<T>),
    Dense(DenseParams<T>),
    None,
}

impl<T: Real> LayerParams<T> {
    fn zeros_like(&self) -> Self {
        match self {
            LayerParams::Conv(p) => LayerParams::Conv(ConvParams::zeros(p.c_in, p.c_out, p.cells)),
            LayerParams::Dense(p) => LayerParams::Dense(DenseParams::zeros(p.c_in, p.c_out)),
            LayerParams::None => LayerParams::None,
        }
    }

    /// Weight then bias tensor, if any.
    pub fn tensors(&self) -> Vec<&[T]> {
        match self {
            LayerParams::Conv(p) => vec![&p.weights, &p.bias],
            LayerParams::Dense(p) => vec![&p.weights, &p.bias],
            LayerParams::None => vec![],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        match self {
            LayerParams::Conv(p) => vec![&mut p.weights, &mut p.bias],
            LayerParams::Dense(p) => vec![&mut p.weights, &mut p.bias],
            LayerParams::None => vec![],
        }
    }

    fn bias_mut(&mut self) -> Option<&mut Vec<T>> {
        match self {
            LayerParams::Conv(p) => Some(&mut p.bias),
            LayerParams::Dense(p) => Some(&mut p.bias),
            LayerParams::None => None,
        }
    }

    fn cast<U: Real>(&self) -> LayerParams<U> {
        let c = |v: &[T]| v.iter().map(|x| U::from_f64(x.as_f64())).collect::<Vec<U>>();
        match self {
            LayerParams::Conv(p) => LayerParams::Conv(ConvParams {
                c_in: p.c_in,
                c_out: p.c_out,
                cells: p.cells,
                weights: c(&p.weights),
                bias: c(&p.bias),
            }),
            LayerParams::Dense(p) => LayerParams::Dense(DenseParams {
                c_in: p.c_in,
                c_out: p.c_out,
                weights: c(&p.weights),
                bias: c(&p.bias),
            }),
            LayerParams::None => LayerParams::None,
        }
    }
}

/// Parameter blocks aligned with a network's layers. Also used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Real> Params<T> {
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(LayerParams::zeros_like).collect(),
        }
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }

    pub fn shapes(&self) -> Vec<usize> {
        self.tensors().iter().map(|t| t.len()).collect()
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shapes() != other.shapes() {
            return Err(Error::Shape("gradient blocks differ in shape".into()));
        }
        for (d, s) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (a, &b) in d.iter_mut().zip(s) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, by: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= by);
        }
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            layers: self.layers.iter().map(LayerParams::cast).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| *v == T::zero()))
    }
}

/// Parameters, optimizer moments aligned to them, and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub params: Params<T>,
    /// SGD velocity or Adam first moment.
    pub moment1: Params<T>,
    /// Adam second moment.
    pub moment2: Params<T>,
    pub step: u64,
}

impl<T: Real> ModelState<T> {
    pub fn from_params(params: Params<T>) -> Self {
        Self {
            moment1: params.zeros_like(),
            moment2: params.zeros_like(),
            params,
            step: 0,
        }
    }
}

/// Fan-based uniform init: weights ~ U(-s, s), `s = sqrt(6 / (fan_in + fan_out))`
/// with `fan_in = C_in * K` and `fan_out = C_out * K` for point convolutions.
/// Biases start at zero. Every layer draws from its own seeded stream.
pub fn init_model<T: Real>(spec: &NetworkSpec, seed: u64) -> Result<ModelState<T>> {
    spec.validate()?;
    let chain = spec.channel_chain()?;
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (i, (l, &(c_in, c_out))) in spec.layers.iter().zip(&chain).enumerate() {
        let mut rng = XorShift64::derive(seed, i as u64);
        let mut draw = |n: usize, fan_in: usize, fan_out: usize| -> Vec<T> {
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| T::from_f64(rng.uniform(-s, s))).collect()
        };
        layers.push(match l {
            LayerSpec::PointConv { .. } => {
                let k = l.kernel().unwrap()?.cells();
                let mut p = ConvParams::zeros(c_in, c_out, k);
                p.weights = draw(p.weights.len(), c_in * k, c_out * k);
                LayerParams::Conv(p)
            }
            LayerSpec::Dense { .. } => {
                let mut p = DenseParams::zeros(c_in, c_out);
                p.weights = draw(p.weights.len(), c_in, c_out);
                LayerParams::Dense(p)
            }
            LayerSpec::Relu | LayerSpec::GlobalAvgPool => LayerParams::None,
        });
    }
    Ok(ModelState::from_params(Params { layers }))
}

/// Checks that `params` fit `spec` layer by layer.
pub fn check_params<T: Real>(spec: &NetworkSpec, params: &Params<T>) -> Result<()> {
    let chain = spec.channel_chain()?;
    if params.layers.len() != spec.layers.len() {
        return Err(Error::Shape(format!(
            "{} parameter blocks for {} layers",
            params.layers.len(),
            spec.layers.len()
        )));
    }
    for (i, ((l, &(c_in, c_out)), p)) in spec.layers.iter().zip(&chain).zip(&params.layers).enumerate() {
        let ok = match (l, p) {
            (LayerSpec::PointConv { .. }, LayerParams::Conv(p)) => {
                let k = l.kernel().unwrap()?.cells();
                p.c_in == c_in
                    && p.c_out == c_out
                    && p.cells == k
                    && p.weights.len() == c_in * c_out * k
                    && p.bias.len() == c_out
            }
            (LayerSpec::Dense { .. }, LayerParams::Dense(p)) => {
                p.c_in == c_in && p.c_out == c_out && p.weights.len() == c_in * c_out && p.bias.len() == c_out
            }
            (LayerSpec::Relu | LayerSpec::GlobalAvgPool, LayerParams::None) => true,
            _ => false,
        };
        if !ok {
            return Err(Error::Shape(format!("parameter block {i} does not fit {l}")));
        }
    }
    Ok(())
}

/// A cloud with the binned neighborhoods every conv layer of a network needs.
/// Layers with the same kernel share one set of neighborhoods.
#[derive(Debug, Clone)]
pub struct PreparedCloud {
    pub cloud: PointCloud,
    pub neighborhoods: Vec<Option<Arc<Neighborhoods>>>,
}

impl PreparedCloud {
    pub fn new(spec: &NetworkSpec, cloud: PointCloud, exec: &Exec) -> Result<Self> {
        let mut built: Vec<(KernelSpec, Arc<Neighborhoods>)> = Vec::new();
        let mut neighborhoods = Vec::with_capacity(spec.layers.len());
        for l in &spec.layers {
            let Some(kernel) = l.kernel() else {
                neighborhoods.push(None);
                continue;
            };
            let kernel = kernel?;
            let nb = match built.iter().find(|(k, _)| *k == kernel) {
                Some((_, nb)) => Arc::clone(nb),
                None => {
                    let grid = build_grid(&cloud, kernel.radius())?;
                    let nb = Arc::new(Neighborhoods::build(&cloud, &kernel, &grid, exec)?);
                    built.push((kernel, Arc::clone(&nb)));
                    nb
                }
            };
            neighborhoods.push(Some(nb));
        }
        Ok(Self { cloud, neighborhoods })
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }
}

#[derive(Debug, Clone)]
pub enum LayerCache<T> {
    Conv(ConvCache<T>),
    Relu { active: Vec<bool> },
    Pool { rows: usize },
    Dense { input: FeatureMap<T> },
}

fn dense_forward<T: Real>(p: &DenseParams<T>, x: &FeatureMap<T>, exec: &Exec) -> Result<FeatureMap<T>> {
    if x.channels() != p.c_in {
        return Err(Error::Shape(format!("dense expects {} channels, got {}", p.c_in, x.channels())));
    }
    let mut out = FeatureMap::zeros(x.rows(), p.c_out);
    exec.fill_rows(out.as_mut_slice(), p.c_out, |r, row| {
        let xr = x.row(r);
        for (o, v) in row.iter_mut().enumerate() {
            let w = &p.weights[o * p.c_in..(o + 1) * p.c_in];
            *v = p.bias[o] + w.iter().zip(xr).map(|(&a, &b)| a * b).sum::<T>();
        }
    });
    Ok(out)
}

fn dense_backward<T: Real>(
    p: &DenseParams<T>,
    x: &FeatureMap<T>,
    g: &FeatureMap<T>,
) -> (DenseParams<T>, FeatureMap<T>) {
    let mut grads = DenseParams::zeros(p.c_in, p.c_out);
    let mut gx = FeatureMap::zeros(x.rows(), p.c_in);
    for r in 0..x.rows() {
        let (xr, gr) = (x.row(r), g.row(r));
        for (o, &go) in gr.iter().enumerate() {
            grads.bias[o] += go;
            let w = &p.weights[o * p.c_in..(o + 1) * p.c_in];
            let gw = &mut grads.weights[o * p.c_in..(o + 1) * p.c_in];
            for ((d, &xv), (dx, &wv)) in gw.iter_mut().zip(xr).zip(gx.row_mut(r).iter_mut().zip(w)) {
                *d += go * xv;
                *dx += go * wv;
            }
        }
    }
    (grads, gx)
}

/// Runs every layer in order and keeps what the backward pass needs.
pub fn net_forward<T: Real>(
    spec: &NetworkSpec,
    state: &ModelState<T>,
    input: &PreparedCloud,
    feats: &FeatureMap<T>,
    exec: &Exec,
) -> Result<(FeatureMap<T>, Vec<LayerCache<T>>)> {
    if feats.channels() != spec.input_channels || feats.rows() != input.len() {
        return Err(Error::Shape(format!(
            "input features {}x{} for {} points and {} input channels",
            feats.rows(),
            feats.channels(),
            input.len(),
            spec.input_channels
        )));
    }
    if state.params.layers.len() != spec.layers.len() || input.neighborhoods.len() != spec.layers.len() {
        return Err(Error::Shape("model state or prepared cloud does not match the network".into()));
    }
    let mut x = feats.clone();
    let mut caches = Vec::with_capacity(spec.layers.len());
    for (i, (layer, params)) in spec.layers.iter().zip(&state.params.layers).enumerate() {
        let (y, cache) = match (layer, params) {
            (LayerSpec::PointConv { .. }, LayerParams::Conv(p)) => {
                let nb = input.neighborhoods[i]
                    .as_ref()
                    .ok_or_else(|| Error::Shape(format!("no neighborhoods for layer {i}")))?;
                let (y, c) = conv_forward_binned(nb, &x, p, exec)?;
                (y, LayerCache::Conv(c))
            }
            (LayerSpec::Dense { .. }, LayerParams::Dense(p)) => {
                let y = dense_forward(p, &x, exec)?;
                (y, LayerCache::Dense { input: x })
            }
            (LayerSpec::Relu, LayerParams::None) => {
                let active: Vec<bool> = x.as_slice().iter().map(|&v| v > T::zero()).collect();
                x.as_mut_slice().iter_mut().for_each(|v| *v = v.max(T::zero()));
                (x, LayerCache::Relu { active })
            }
            (LayerSpec::GlobalAvgPool, LayerParams::None) => {
                let rows = x.rows();
                if rows == 0 {
                    return Err(Error::Shape("pooling over zero points".into()));
                }
                let inv = T::one() / T::from_usize(rows);
                let mut y = FeatureMap::zeros(1, x.channels());
                for r in 0..rows {
                    for (a, &v) in y.row_mut(0).iter_mut().zip(x.row(r)) {
                        *a += v;
                    }
                }
                y.as_mut_slice().iter_mut().for_each(|v| *v *= inv);
                (y, LayerCache::Pool { rows })
            }
            _ => return Err(Error::Shape(format!("parameter block {i} does not fit {layer}"))),
        };
        x = y;
        caches.push(cache);
    }
    Ok((x, caches))
}

/// Chain rule through the cached forward pass. Returns parameter gradients and
/// the gradient with respect to the network input.
pub fn net_backward<T: Real>(
    spec: &NetworkSpec,
    state: &ModelState<T>,
    caches: &[LayerCache<T>],
    grad_out: &FeatureMap<T>,
    exec: &Exec,
) -> Result<(Params<T>, FeatureMap<T>)> {
    if caches.len() != spec.layers.len() {
        return Err(Error::Shape(format!(
            "{} caches for {} layers",
            caches.len(),
            spec.layers.len()
        )));
    }
    let mut grads = state.params.zeros_like();
    let mut g = grad_out.clone();
    for i in (0..spec.layers.len()).rev() {
        g = match (&caches[i], &state.params.layers[i]) {
            (LayerCache::Conv(c), LayerParams::Conv(p)) => {
                let (gp, gi) = conv_backward(c, p, &g, exec)?;
                grads.layers[i] = LayerParams::Conv(gp);
                gi
            }
            (LayerCache::Dense { input }, LayerParams::Dense(p)) => {
                if g.rows() != input.rows() || g.channels() != p.c_out {
                    return Err(Error::Shape(format!("dense gradient shape mismatch at layer {i}")));
                }
                let (gp, gi) = dense_backward(p, input, &g);
                grads.layers[i] = LayerParams::Dense(gp);
                gi
            }
            (LayerCache::Relu { active }, LayerParams::None) => {
                if active.len() != g.as_slice().len() {
                    return Err(Error::Shape(format!("relu gradient shape mismatch at layer {i}")));
                }
                for (v, &a) in g.as_mut_slice().iter_mut().zip(active) {
                    if !a {
                        *v = T::zero();
                    }
                }
                g
            }
            (LayerCache::Pool { rows }, LayerParams::None) => {
                if g.rows() != 1 {
                    return Err(Error::Shape("pool gradient must have one row".into()));
                }
                let inv = T::one() / T::from_usize(*rows);
                let row: Vec<T> = g.row(0).iter().map(|&v| v * inv).collect();
                FeatureMap::from_fn(*rows, row.len(), |_, c| row[c])
            }
            _ => return Err(Error::Shape(format!("cache {i} does not match the network"))),
        };
    }
    if !spec.bias {
        for l in &mut grads.layers {
            if let Some(b) = l.bias_mut() {
                b.iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }
    Ok((grads, g))
}
