use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::None => "none",
        })
    }
}

/// One sparse convolution layer: kernel size, filter count, activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kernel: usize,
    pub filters: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub const fn relu(kernel: usize, filters: usize) -> Self {
        LayerSpec {
            kernel,
            filters,
            activation: Activation::Relu,
        }
    }

    pub const fn linear(kernel: usize, filters: usize) -> Self {
        LayerSpec {
            kernel,
            filters,
            activation: Activation::None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel size {} must be odd", self.kernel)));
        }
        if self.filters == 0 {
            return Err(Error::Config("filter count must be >= 1".into()));
        }
        Ok(())
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}:{}", self.kernel, self.filters, self.activation)
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    /// Parses `<kernel>x<filters>:<relu|none>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("layer `{s}` is not <kernel>x<filters>:<relu|none>"));
        let (dims, act) = s.trim().split_once(':').ok_or_else(bad)?;
        let (k, f) = dims.split_once('x').ok_or_else(bad)?;
        let activation = match act {
            "relu" => Activation::Relu,
            "none" => Activation::None,
            _ => return Err(bad()),
        };
        Ok(LayerSpec {
            kernel: k.parse().map_err(|_| bad())?,
            filters: f.parse().map_err(|_| bad())?,
            activation,
        })
    }
}

pub fn format_layers(layers: &[LayerSpec]) -> String {
    layers
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

pub fn parse_layers(s: &str) -> Result<Vec<LayerSpec>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(str::parse).collect()
}

/// The three task branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    Fw,
    Bscan,
    Pm25,
}

impl Head {
    pub const ALL: [Head; 3] = [Head::Fw, Head::Bscan, Head::Pm25];

    pub fn name(self) -> &'static str {
        match self {
            Head::Fw => "fw",
            Head::Bscan => "bscan",
            Head::Pm25 => "pm25",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Shared backbone plus three single-output branches.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub backbone: Vec<LayerSpec>,
    /// Indexed by [`Head::index`].
    pub heads: [Vec<LayerSpec>; 3],
    /// Stabilizer of the mask normalization.
    pub mask_eps: f64,
}

/// A layer together with its position and input width.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSlot {
    pub name: String,
    pub in_channels: usize,
    pub spec: LayerSpec,
}

impl NetworkSpec {
    /// Backbone kernels (11, 7, 5, 3, 3) with 16 filters each; every head is
    /// `3x16:relu, 3x1:none`.
    pub fn default_for(input_channels: usize) -> Self {
        let head = vec![LayerSpec::relu(3, 16), LayerSpec::linear(3, 1)];
        NetworkSpec {
            input_channels,
            backbone: [11, 7, 5, 3, 3].iter().map(|&k| LayerSpec::relu(k, 16)).collect(),
            heads: [head.clone(), head.clone(), head],
            mask_eps: crate::tensor::DEFAULT_MASK_EPS,
        }
    }

    pub fn head(&self, head: Head) -> &[LayerSpec] {
        &self.heads[head.index()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(Error::Config("input channel count must be >= 1".into()));
        }
        if !(self.mask_eps > 0.0 && self.mask_eps.is_finite()) {
            return Err(Error::Config(format!("mask_eps must be > 0, got {}", self.mask_eps)));
        }
        for layer in &self.backbone {
            layer.validate()?;
            if layer.activation != Activation::Relu {
                return Err(Error::Config("backbone layers must use relu".into()));
            }
        }
        for head in Head::ALL {
            let layers = self.head(head);
            let Some((last, rest)) = layers.split_last() else {
                return Err(Error::Config(format!("head {} has no layers", head.name())));
            };
            for layer in layers {
                layer.validate()?;
            }
            if last.filters != 1 || last.activation != Activation::None {
                return Err(Error::Config(format!(
                    "head {} must end in a 1-filter layer without activation",
                    head.name()
                )));
            }
            if rest.iter().any(|l| l.activation != Activation::Relu) {
                return Err(Error::Config(format!(
                    "non-final layers of head {} must use relu",
                    head.name()
                )));
            }
        }
        Ok(())
    }

    /// Every layer in parameter order: backbone, then fw, bscan, pm25.
    pub fn layer_slots(&self) -> Vec<LayerSlot> {
        let mut slots = Vec::new();
        let mut width = self.input_channels;
        for (i, spec) in self.backbone.iter().enumerate() {
            slots.push(LayerSlot {
                name: format!("backbone.{i}"),
                in_channels: width,
                spec: *spec,
            });
            width = spec.filters;
        }
        for head in Head::ALL {
            let mut w = width;
            for (i, spec) in self.head(head).iter().enumerate() {
                slots.push(LayerSlot {
                    name: format!("{}.{i}", head.name()),
                    in_channels: w,
                    spec: *spec,
                });
                w = spec.filters;
            }
        }
        slots
    }

    pub fn to_kv_lines(&self) -> Vec<String> {
        let mut lines = vec![
            format!("input_channels = {}", self.input_channels),
            format!("mask_eps = {:e}", self.mask_eps),
            format!("backbone = {}", format_layers(&self.backbone)),
        ];
        for head in Head::ALL {
            lines.push(format!("head.{} = {}", head.name(), format_layers(self.head(head))));
        }
        lines
    }

    /// Builds a spec from `key = value` pairs produced by [`to_kv_lines`](Self::to_kv_lines).
    pub fn from_kv<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let (mut input_channels, mut mask_eps, mut backbone) = (None, None, None);
        let mut heads: [Option<Vec<LayerSpec>>; 3] = [None, None, None];
        for (key, value) in pairs {
            match key {
                "input_channels" => {
                    input_channels = Some(value.parse().map_err(|_| {
                        Error::Config(format!("input_channels `{value}` is not an integer"))
                    })?)
                }
                "mask_eps" => {
                    mask_eps = Some(value.parse().map_err(|_| {
                        Error::Config(format!("mask_eps `{value}` is not a number"))
                    })?)
                }
                "backbone" => backbone = Some(parse_layers(value)?),
                "head.fw" => heads[0] = Some(parse_layers(value)?),
                "head.bscan" => heads[1] = Some(parse_layers(value)?),
                "head.pm25" => heads[2] = Some(parse_layers(value)?),
                _ => {}
            }
        }
        let missing = |k: &str| Error::Config(format!("network spec is missing `{k}`"));
        let [fw, bscan, pm25] = heads;
        let spec = NetworkSpec {
            input_channels: input_channels.ok_or_else(|| missing("input_channels"))?,
            mask_eps: mask_eps.ok_or_else(|| missing("mask_eps"))?,
            backbone: backbone.ok_or_else(|| missing("backbone"))?,
            heads: [
                fw.ok_or_else(|| missing("head.fw"))?,
                bscan.ok_or_else(|| missing("head.bscan"))?,
                pm25.ok_or_else(|| missing("head.pm25"))?,
            ],
        };
        spec.validate()?;
        Ok(spec)
    }
}
