use crate::cloud::{FeatureMap, PointCloud};
use crate::dataset::Task;
use crate::error::{Error, Result};
use crate::pointconv::{Geometry, KernelSpec};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    /// Radius is kept in single precision so it survives a checkpoint exactly.
    PointConv {
        radius: f32,
        resolution: u8,
        geometry: Geometry,
        c_out: usize,
    },
    Relu,
    GlobalAvgPool,
    /// Applied to every row independently; after pooling there is one row.
    Dense { c_out: usize },
}

impl LayerSpec {
    pub fn conv(radius: f32, resolution: u8, c_out: usize) -> Self {
        LayerSpec::PointConv {
            radius,
            resolution,
            geometry: Geometry::Ball,
            c_out,
        }
    }

    pub fn kernel(&self) -> Option<Result<KernelSpec>> {
        match *self {
            LayerSpec::PointConv {
                radius,
                resolution,
                geometry,
                ..
            } => Some(KernelSpec::new(radius as f64, resolution as usize, geometry)),
            _ => None,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::PointConv { .. } | LayerSpec::Dense { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::PointConv { .. } => "pointconv",
            LayerSpec::Relu => "relu",
            LayerSpec::GlobalAvgPool => "pool",
            LayerSpec::Dense { .. } => "dense",
        }
    }
}

impl std::fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LayerSpec::PointConv {
                radius,
                resolution,
                geometry,
                c_out,
            } => write!(
                f,
                "pointconv r={radius} R={resolution} cout={c_out} geom={}",
                geometry.as_str()
            ),
            LayerSpec::Dense { c_out } => write!(f, "dense cout={c_out}"),
            other => f.write_str(other.name()),
        }
    }
}

impl std::str::FromStr for LayerSpec {
    type Err = Error;

    /// `pointconv r=0.3 R=3 cout=16 [geom=ball|cube]`, `relu`, `pool`, `dense cout=3`.
    fn from_str(s: &str) -> Result<Self> {
        let mut words = s.split_whitespace();
        let kind = words
            .next()
            .ok_or_else(|| Error::Network("empty layer descriptor".into()))?;
        let mut radius = None;
        let mut resolution = None;
        let mut c_out = None;
        let mut geometry = Geometry::Ball;
        for w in words {
            let (k, v) = w
                .split_once('=')
                .ok_or_else(|| Error::Network(format!("expected key=value, got {w:?}")))?;
            let bad = |e: String| Error::Network(format!("{kind} {k}={v}: {e}"));
            match k {
                "r" => radius = Some(v.parse::<f32>().map_err(|e| bad(e.to_string()))?),
                "R" => resolution = Some(v.parse::<u8>().map_err(|e| bad(e.to_string()))?),
                "cout" => c_out = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "geom" => geometry = v.parse().map_err(bad)?,
                _ => return Err(Error::Network(format!("unknown layer option {k:?} in {s:?}"))),
            }
        }
        let need = |o: Option<usize>, what: &str| {
            o.ok_or_else(|| Error::Network(format!("{kind} needs {what}")))
        };
        let layer = match kind {
            "pointconv" => LayerSpec::PointConv {
                radius: radius.ok_or_else(|| Error::Network("pointconv needs r".into()))?,
                resolution: resolution.unwrap_or(3),
                geometry,
                c_out: need(c_out, "cout")?,
            },
            "dense" => LayerSpec::Dense {
                c_out: need(c_out, "cout")?,
            },
            "relu" => LayerSpec::Relu,
            "pool" => LayerSpec::GlobalAvgPool,
            other => return Err(Error::Network(format!("unknown layer type {other:?}"))),
        };
        if !matches!(layer, LayerSpec::PointConv { .. })
            && (radius.is_some() || resolution.is_some())
            || matches!(layer, LayerSpec::Relu | LayerSpec::GlobalAvgPool) && c_out.is_some()
        {
            return Err(Error::Network(format!("unexpected options for {kind}")));
        }
        Ok(layer)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub input_channels: usize,
    pub classes: usize,
    /// When false every bias is zero and never updated.
    pub bias: bool,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>, input_channels: usize, classes: usize) -> Result<Self> {
        let spec = Self {
            layers,
            input_channels,
            classes,
            bias: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn task(&self) -> Task {
        if self.layers.contains(&LayerSpec::GlobalAvgPool) {
            Task::Classification
        } else {
            Task::Segmentation
        }
    }

    /// `(C_in, C_out)` of every layer.
    pub fn channel_chain(&self) -> Result<Vec<(usize, usize)>> {
        let mut c = self.input_channels;
        if c == 0 {
            return Err(Error::Network("input channel count is zero".into()));
        }
        let mut chain = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let next = match *l {
                LayerSpec::PointConv { c_out, .. } | LayerSpec::Dense { c_out } => c_out,
                LayerSpec::Relu | LayerSpec::GlobalAvgPool => c,
            };
            if next == 0 {
                return Err(Error::Network(format!("layer {i} has zero output channels")));
            }
            if let Some(k) = l.kernel() {
                k.map_err(|e| Error::Network(format!("layer {i}: {e}")))?;
            }
            chain.push((c, next));
            c = next;
        }
        Ok(chain)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Network("no layers".into()));
        }
        if self.classes < 2 {
            return Err(Error::Network(format!("{} classes, need at least 2", self.classes)));
        }
        let chain = self.channel_chain()?;
        let out = chain.last().unwrap().1;
        if out != self.classes {
            return Err(Error::Network(format!(
                "network emits {out} channels for {} classes",
                self.classes
            )));
        }
        let pools: Vec<usize> = self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == LayerSpec::GlobalAvgPool)
            .map(|(i, _)| i)
            .collect();
        match pools.as_slice() {
            [] => {}
            [p] => {
                if let Some(l) = self.layers[p + 1..]
                    .iter()
                    .find(|l| !matches!(l, LayerSpec::Dense { .. } | LayerSpec::Relu))
                {
                    return Err(Error::Network(format!("{} after global pooling", l.name())));
                }
            }
            _ => return Err(Error::Network("more than one global pooling layer".into())),
        }
        Ok(())
    }
}

/// First-layer features computed from a cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputMode {
    /// A constant 1 followed by x, y, z.
    #[default]
    ConstXyz,
    Xyz,
    Const,
    /// The cloud's attribute channels.
    Attributes,
}

impl InputMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InputMode::ConstXyz => "const+xyz",
            InputMode::Xyz => "xyz",
            InputMode::Const => "const",
            InputMode::Attributes => "attributes",
        }
    }

    /// Channel count, or `None` when it depends on the data.
    pub fn channels(self) -> Option<usize> {
        match self {
            InputMode::ConstXyz => Some(4),
            InputMode::Xyz => Some(3),
            InputMode::Const => Some(1),
            InputMode::Attributes => None,
        }
    }
}

impl std::str::FromStr for InputMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "const+xyz" => Ok(InputMode::ConstXyz),
            "xyz" => Ok(InputMode::Xyz),
            "const" => Ok(InputMode::Const),
            "attributes" => Ok(InputMode::Attributes),
            _ => Err(format!("unknown input mode {s:?}")),
        }
    }
}

pub fn featurize<T: Real>(cloud: &PointCloud, mode: InputMode) -> Result<FeatureMap<T>> {
    let n = cloud.len();
    let p = cloud.positions();
    Ok(match mode {
        InputMode::ConstXyz => FeatureMap::from_fn(n, 4, |i, c| {
            if c == 0 {
                T::one()
            } else {
                T::from_f64(p[i][c - 1])
            }
        }),
        InputMode::Xyz => FeatureMap::from_fn(n, 3, |i, c| T::from_f64(p[i][c])),
        InputMode::Const => FeatureMap::from_fn(n, 1, |_, _| T::one()),
        InputMode::Attributes => {
            let a = cloud
                .attributes()
                .ok_or_else(|| Error::InvalidCloud("cloud has no attribute channels".into()))?;
            FeatureMap::from_fn(n, a.channels, |i, c| T::from_f64(a.values[i * a.channels + c]))
        }
    })
}
