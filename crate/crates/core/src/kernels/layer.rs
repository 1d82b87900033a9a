use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fixq::Dims;

/// Convolution types, one per processing element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv33,
    Conv11,
    Dw33,
    Head11,
}

impl LayerKind {
    pub const fn kernel_size(self) -> usize {
        match self {
            LayerKind::Conv33 | LayerKind::Dw33 => 3,
            LayerKind::Conv11 | LayerKind::Head11 => 1,
        }
    }

    pub const fn pe(self) -> PeConfig {
        match self {
            LayerKind::Conv33 => PeConfig::PE_33,
            LayerKind::Conv11 => PeConfig::PE_11,
            LayerKind::Dw33 => PeConfig::PE_DW,
            LayerKind::Head11 => PeConfig::PE_HEAD,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            LayerKind::Conv33 => "conv33",
            LayerKind::Conv11 => "conv11",
            LayerKind::Dw33 => "dw33",
            LayerKind::Head11 => "head11",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv33" => Ok(LayerKind::Conv33),
            "conv11" => Ok(LayerKind::Conv11),
            "dw33" => Ok(LayerKind::Dw33),
            "head11" => Ok(LayerKind::Head11),
            _ => Err(Error::arg(format!("unknown layer kind `{s}`"))),
        }
    }
}

/// Whether a layer streams its output straight into the following PE_DW.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Fusion {
    #[default]
    None,
    IntoDw,
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fusion::None => "none",
            Fusion::IntoDw => "into_dw",
        })
    }
}

impl FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Fusion::None),
            "into_dw" => Ok(Fusion::IntoDw),
            _ => Err(Error::arg(format!("unknown fusion `{s}`"))),
        }
    }
}

/// Activation-in / weight / output bit widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Precision {
    pub act_in: u8,
    pub weight: u8,
    pub act_out: u8,
}

impl Precision {
    pub const fn new(act_in: u8, weight: u8, act_out: u8) -> Self {
        Precision {
            act_in,
            weight,
            act_out,
        }
    }
}

/// Parallelism of one PE type: `k_t` output channels by `c_t` input channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PeConfig {
    pub name: &'static str,
    pub k_t: usize,
    pub c_t: usize,
}

impl PeConfig {
    pub const PE_33: PeConfig = PeConfig { name: "PE_33", k_t: 8, c_t: 3 };
    pub const PE_11: PeConfig = PeConfig { name: "PE_11", k_t: 16, c_t: 32 };
    pub const PE_DW: PeConfig = PeConfig { name: "PE_DW", k_t: 16, c_t: 16 };
    pub const PE_HEAD: PeConfig = PeConfig { name: "PE_Head", k_t: 2, c_t: 32 };

    pub const ALL: [PeConfig; 4] = [Self::PE_33, Self::PE_11, Self::PE_DW, Self::PE_HEAD];

    /// `ceil(n / k_t) * ceil(c / c_t)` kernel/channel groups.
    pub const fn groups(&self, n: usize, c: usize) -> usize {
        n.div_ceil(self.k_t) * c.div_ceil(self.c_t)
    }
}

/// Clock of the accelerator fabric.
pub const ACCEL_FREQ_MHZ: f64 = 215.0;

/// Geometry and precision of one convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub stride: usize,
    pub input: Dims,
    pub kernels: usize,
    pub fusion: Fusion,
    pub precision: Precision,
}

/// Output extent of a `k`x`k` window with padding `(k - 1) / 2` and `stride`.
pub const fn conv_out(len: usize, stride: usize) -> usize {
    if len == 0 {
        0
    } else {
        (len - 1) / stride + 1
    }
}

impl LayerSpec {
    /// Defaults for the kind: 8/3/4 for conv33, 4/3/4 for conv11 and dw33,
    /// 4/8/16 for head11.
    pub fn new(kind: LayerKind, stride: usize, input: Dims, kernels: usize) -> Self {
        let precision = match kind {
            LayerKind::Conv33 => Precision::new(8, 3, 4),
            LayerKind::Conv11 | LayerKind::Dw33 => Precision::new(4, 3, 4),
            LayerKind::Head11 => Precision::new(4, 8, 16),
        };
        LayerSpec {
            kind,
            stride,
            input,
            kernels,
            fusion: Fusion::None,
            precision,
        }
    }

    pub fn fused(mut self) -> Self {
        self.fusion = Fusion::IntoDw;
        self
    }

    pub fn with_precision(mut self, p: Precision) -> Self {
        self.precision = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::arg(format!("{} layer: {m}", self.kind)));
        if self.input.is_empty() || self.kernels == 0 {
            return fail("empty input or no kernels".into());
        }
        if !matches!(self.stride, 1 | 2) {
            return fail(format!("stride {} not in {{1, 2}}", self.stride));
        }
        if self.kind.kernel_size() == 1 && self.stride != 1 {
            return fail("1x1 layers run at stride 1".into());
        }
        if self.kind == LayerKind::Dw33 && self.kernels != self.input.c {
            return fail(format!(
                "depthwise needs one kernel per channel ({} != {})",
                self.kernels, self.input.c
            ));
        }
        if self.fusion == Fusion::IntoDw && !matches!(self.kind, LayerKind::Conv33 | LayerKind::Conv11) {
            return fail("only conv33 and conv11 fuse into PE_DW".into());
        }
        let p = self.precision;
        if !(1..=8).contains(&p.act_in) {
            return fail(format!("input width {} outside 1..=8", p.act_in));
        }
        if self.kind == LayerKind::Head11 {
            if p.weight != 8 || p.act_out != 16 {
                return fail("head layers use 8-bit weights and 16-bit outputs".into());
            }
        } else {
            if !(2..=7).contains(&p.weight) {
                return fail(format!("weight width {} outside 2..=7", p.weight));
            }
            if !(1..=8).contains(&p.act_out) {
                return fail(format!("output width {} outside 1..=8", p.act_out));
            }
        }
        Ok(())
    }

    pub fn output(&self) -> Dims {
        Dims::new(
            self.kernels,
            conv_out(self.input.h, self.stride),
            conv_out(self.input.w, self.stride),
        )
    }

    /// `(kh, kw, c)` of one kernel.
    pub fn kernel_shape(&self) -> (usize, usize, usize) {
        let k = self.kind.kernel_size();
        let c = if self.kind == LayerKind::Dw33 { 1 } else { self.input.c };
        (k, k, c)
    }

    pub fn kernel_len(&self) -> usize {
        let (kh, kw, c) = self.kernel_shape();
        kh * kw * c
    }

    pub fn macs(&self) -> u64 {
        let o = self.output();
        (o.len() * self.kernel_len()) as u64
    }
}

/// Check that a layer list forms a backbone followed by at most one head
/// group. Backbone layers chain output to input; every head layer reads the
/// last backbone output. A fused layer must be followed by a dw33 layer.
pub fn check_chain(input: Dims, layers: &[LayerSpec]) -> Result<()> {
    let mut cur = input;
    let mut cur_bits = None;
    let mut in_heads = false;
    for (i, l) in layers.iter().enumerate() {
        l.validate().map_err(|e| e.in_layer(i))?;
        if l.input != cur {
            return Err(Error::dim(format!("expects input {}, previous output is {}", l.input, cur)).in_layer(i));
        }
        if let Some(b) = cur_bits {
            if l.precision.act_in != b {
                return Err(Error::dim(format!(
                    "reads {}-bit activations, previous layer writes {b}-bit",
                    l.precision.act_in
                ))
                .in_layer(i));
            }
        }
        if l.kind == LayerKind::Head11 {
            if l.fusion != Fusion::None {
                return Err(Error::arg("head layers do not fuse").in_layer(i));
            }
            in_heads = true;
            continue;
        }
        if in_heads {
            return Err(Error::arg("backbone layer after the head group").in_layer(i));
        }
        if l.fusion == Fusion::IntoDw {
            match layers.get(i + 1) {
                Some(next) if next.kind == LayerKind::Dw33 => {}
                _ => return Err(Error::arg("fused layer must be followed by dw33").in_layer(i)),
            }
        }
        cur = l.output();
        cur_bits = Some(l.precision.act_out);
    }
    Ok(())
}
