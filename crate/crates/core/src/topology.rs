//! Layer descriptors for the fixed CNN topologies the search runs over.
//!
//! The textual form is a comma-separated list such as
//! `conv (3,64), conv (64,64), M, FC`: `conv (a,b)` is a 3×3, stride 1,
//! pad 1 convolution followed by ReLU; `M` is 2×2 max-pooling with stride 2;
//! `FC` is the final fully connected classifier.

use serde::{Deserialize, Serialize};

use crate::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayerSpec {
    /// 3×3, stride 1, pad 1.
    pub fn same3(in_channels: usize, out_channels: usize) -> Self {
        ConvLayerSpec {
            in_channels,
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel == 0 || self.stride == 0 {
            return invalid(format!("conv layer fields must be positive: {self:?}"));
        }
        Ok(())
    }

    /// Rows of the unrolled weight matrix: k·k·C_in.
    pub fn unrolled_rows(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.unrolled_rows()
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kernel || pw < self.kernel {
            return invalid(format!(
                "{h}x{w} input too small for a {k}x{k} kernel",
                k = self.kernel
            ));
        }
        Ok(((ph - self.kernel) / self.stride + 1, (pw - self.kernel) / self.stride + 1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerDesc {
    Conv(ConvLayerSpec),
    MaxPool,
    Fc,
}

/// Per-layer shapes resolved against an input size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub spec: ConvLayerSpec,
    pub in_hw: (usize, usize),
    pub out_hw: (usize, usize),
}

impl ConvGeometry {
    /// Crossbar reads per image (one per output position).
    pub fn positions(&self) -> usize {
        self.out_hw.0 * self.out_hw.1
    }

    pub fn macs(&self) -> u64 {
        (self.positions() * self.spec.out_channels * self.spec.unrolled_rows()) as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub layers: Vec<LayerDesc>,
    /// Input image (channels, height, width).
    pub input: (usize, usize, usize),
    pub classes: usize,
}

impl Topology {
    pub fn new(layers: Vec<LayerDesc>, input: (usize, usize, usize), classes: usize) -> Result<Self> {
        let t = Topology {
            layers,
            input,
            classes,
        };
        t.validate()?;
        Ok(t)
    }

    /// Parse the comma-separated layer grammar; see the module docs.
    pub fn parse(text: &str, input: (usize, usize, usize), classes: usize) -> Result<Self> {
        Topology::new(parse_layers(text)?, input, classes)
    }

    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 || self.classes == 0 {
            return invalid("input shape and class count must be positive");
        }
        let convs = self.conv_specs();
        if convs.is_empty() {
            return invalid("topology needs at least one conv layer");
        }
        if convs[0].in_channels != c {
            return invalid(format!(
                "first conv expects {} input channels, images have {c}",
                convs[0].in_channels
            ));
        }
        check_chain(&self.layers)?;
        match self.layers.iter().position(|l| *l == LayerDesc::Fc) {
            Some(i) if i + 1 == self.layers.len() => {}
            Some(_) => return invalid("FC must be the last layer"),
            None => return invalid("topology must end with FC"),
        }
        self.geometry().map(|_| ())
    }

    pub fn conv_specs(&self) -> Vec<ConvLayerSpec> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerDesc::Conv(s) => Some(*s),
                _ => None,
            })
            .collect()
    }

    pub fn conv_count(&self) -> usize {
        self.conv_specs().len()
    }

    /// Conv geometries in order plus the classifier's input feature count.
    pub fn geometry(&self) -> Result<(Vec<ConvGeometry>, usize)> {
        let (mut c, mut h, mut w) = self.input;
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerDesc::Conv(s) => {
                    s.validate()?;
                    let (oh, ow) = s.output_hw(h, w)?;
                    out.push(ConvGeometry {
                        spec: *s,
                        in_hw: (h, w),
                        out_hw: (oh, ow),
                    });
                    (c, h, w) = (s.out_channels, oh, ow);
                }
                LayerDesc::MaxPool => {
                    if h < 2 || w < 2 {
                        return invalid(format!("cannot pool a {h}x{w} feature map"));
                    }
                    (h, w) = (h / 2, w / 2);
                }
                LayerDesc::Fc => {}
            }
        }
        Ok((out, c * h * w))
    }

    pub fn fc_inputs(&self) -> usize {
        self.geometry().map(|g| g.1).unwrap_or(0)
    }

    /// Multiply-accumulates per image, conv layers then the classifier.
    pub fn macs(&self) -> u64 {
        let (convs, fc_in) = self.geometry().unwrap_or_default();
        convs.iter().map(ConvGeometry::macs).sum::<u64>() + (fc_in * self.classes) as u64
    }

    /// Canonical text form, parseable by [`Topology::parse`].
    pub fn describe(&self) -> String {
        self.layers
            .iter()
            .map(|l| match l {
                LayerDesc::Conv(s) if s.kernel == 3 && s.stride == 1 && s.padding == 1 => {
                    format!("conv ({},{})", s.in_channels, s.out_channels)
                }
                LayerDesc::Conv(s) => format!(
                    "conv ({},{},k={},s={},p={})",
                    s.in_channels, s.out_channels, s.kernel, s.stride, s.padding
                ),
                LayerDesc::MaxPool => "M".into(),
                LayerDesc::Fc => "FC".into(),
            })
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// The 12-conv VGG16 variant used for the cost tables.
    pub fn vgg16(input_hw: usize, classes: usize) -> Self {
        Topology::parse(VGG16, (3, input_hw, input_hw), classes).expect("built-in topology parses")
    }

    /// Six-conv VGG-style net sized for CPU-scale experiments.
    pub fn desk_vgg(input_hw: usize, classes: usize) -> Self {
        Topology::parse(DESK_VGG, (3, input_hw, input_hw), classes).expect("built-in topology parses")
    }
}

pub const VGG16: &str = "conv (3,64), conv (64,64), M, conv (64,128), conv (128,128), M, \
     conv (128,256), conv (256,256), conv (256,256), conv (256,256), M, \
     conv (256,512), conv (512,512), conv (512,512), conv (512,512), M, FC";

pub const DESK_VGG: &str =
    "conv (3,16), conv (16,16), M, conv (16,32), conv (32,32), M, conv (32,64), conv (64,64), M, FC";

fn check_chain(layers: &[LayerDesc]) -> Result<()> {
    let mut prev: Option<usize> = None;
    for (i, l) in layers.iter().enumerate() {
        if let LayerDesc::Conv(s) = l {
            if let Some(p) = prev {
                if p != s.in_channels {
                    return invalid(format!(
                        "layer {}: conv expects {} input channels but the previous conv produces {p}",
                        i + 1,
                        s.in_channels
                    ));
                }
            }
            prev = Some(s.out_channels);
        }
    }
    Ok(())
}

/// Parse the layer list only; channel chaining is checked, input shape is not.
pub fn parse_layers(text: &str) -> Result<Vec<LayerDesc>> {
    let mut layers = Vec::new();
    let mut offset = 0;
    for raw in split_top_level(text) {
        let item = raw.trim();
        let pos = offset + (raw.len() - raw.trim_start().len());
        offset += raw.len() + 1;
        if item.is_empty() {
            return Err(syntax(pos, "empty layer entry"));
        }
        let layer = match item {
            "M" | "m" => LayerDesc::MaxPool,
            "FC" | "fc" => LayerDesc::Fc,
            _ => LayerDesc::Conv(parse_conv(item).map_err(|m| syntax(pos, &m))?),
        };
        layers.push(layer);
    }
    check_chain(&layers)?;
    Ok(layers)
}

fn syntax(pos: usize, msg: &str) -> Error {
    Error::Format(format!("topology syntax error at offset {pos}: {msg}"))
}

fn split_top_level(text: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in text.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(&text[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&text[start..]);
    parts
}

fn parse_conv(item: &str) -> std::result::Result<ConvLayerSpec, String> {
    let rest = item
        .strip_prefix("conv")
        .ok_or_else(|| format!("expected `conv (a,b)`, `M` or `FC`, found `{item}`"))?
        .trim_start();
    let inner = rest
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| format!("expected parenthesised channels in `{item}`"))?;
    let fields: Vec<&str> = inner.split(',').map(str::trim).collect();
    if fields.len() < 2 {
        return Err(format!("conv needs input and output channels in `{item}`"));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| format!("`{s}` is not a non-negative integer"))
    };
    let mut spec = ConvLayerSpec::same3(num(fields[0])?, num(fields[1])?);
    for f in &fields[2..] {
        let (key, val) = f
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, found `{f}`"))?;
        let v = num(val.trim())?;
        match key.trim() {
            "k" => spec.kernel = v,
            "s" => spec.stride = v,
            "p" => spec.padding = v,
            k => return Err(format!("unknown conv option `{k}`")),
        }
    }
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}
