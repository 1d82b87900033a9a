use std::ops::Range;

use super::conv::{check_weights, conv11_region, conv33_cycles, conv33_region, conv11_cycles};
use super::fused::{fused_region, Upstream};
use super::linebuffer::{dw33_stream, StreamGeom};
use super::{BankedFeature, ColumnWindow, CycleCount, Fusion, LayerKind, LayerSpec};
use crate::error::{Error, Result};
use crate::fixq::{Dims, Pow2Weights, QTensor};
use crate::quantizer::MergedLayerParams;

/// A power-of-two layer with its merged scales.
#[derive(Debug, Clone, Copy)]
pub struct ShiftLayer<'a> {
    pub spec: &'a LayerSpec,
    pub weights: &'a Pow2Weights,
    pub params: &'a MergedLayerParams,
}

impl<'a> ShiftLayer<'a> {
    pub fn new(spec: &'a LayerSpec, weights: &'a Pow2Weights, params: &'a MergedLayerParams) -> Result<Self> {
        spec.validate()?;
        if spec.kind == LayerKind::Head11 {
            return Err(Error::arg("head layers use int8 weights"));
        }
        check_weights(weights, params, spec.kernel_shape())?;
        if weights.kernels() != spec.kernels {
            return Err(Error::dim(format!("{} kernels, layer declares {}", weights.kernels(), spec.kernels)));
        }
        if weights.bits() != spec.precision.weight {
            return Err(Error::dim(format!(
                "{}-bit weights, layer declares {}",
                weights.bits(),
                spec.precision.weight
            )));
        }
        Ok(ShiftLayer { spec, weights, params })
    }

    pub(crate) fn out_bits(&self) -> u8 {
        self.spec.precision.act_out
    }

    pub(crate) fn check_input(&self, slab: Dims, bits: u8, window: ColumnWindow) -> Result<()> {
        let d = self.spec.input;
        if slab.c != d.c || slab.h != d.h || window.full_w != d.w {
            return Err(Error::dim(format!(
                "{} layer expects {d}, got {}x{}x{} slab of width {}",
                self.spec.kind, slab.c, slab.h, slab.w, window.full_w
            )));
        }
        if bits > self.spec.precision.act_in {
            return Err(Error::dim(format!(
                "{bits}-bit input for a {}-bit layer",
                self.spec.precision.act_in
            )));
        }
        Ok(())
    }
}

/// What one pass over the accelerator executes: a single layer, or an
/// upstream layer whose output streams straight into PE_DW.
#[derive(Debug, Clone, Copy)]
pub enum LayerGroup<'a> {
    Single(ShiftLayer<'a>),
    Fused(ShiftLayer<'a>, ShiftLayer<'a>),
}

/// Output of a group over a column region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionRun {
    pub output: QTensor,
    pub cycles: CycleCount,
    /// Peak intermediate values held between the fused stages (0 unfused).
    pub peak_intermediate: usize,
    /// Line-buffer registers used by a dw stage (0 without one).
    pub line_buffer_registers: usize,
}

impl<'a> LayerGroup<'a> {
    pub fn fused(first: ShiftLayer<'a>, dw: ShiftLayer<'a>) -> Result<Self> {
        if first.spec.fusion != Fusion::IntoDw || dw.spec.kind != LayerKind::Dw33 {
            return Err(Error::arg("a fused group is a layer marked into_dw followed by dw33"));
        }
        if first.spec.output() != dw.spec.input {
            return Err(Error::dim(format!(
                "fused stages do not chain: {} then {}",
                first.spec.output(),
                dw.spec.input
            )));
        }
        Ok(LayerGroup::Fused(first, dw))
    }

    pub fn first(&self) -> &ShiftLayer<'a> {
        match self {
            LayerGroup::Single(l) | LayerGroup::Fused(l, _) => l,
        }
    }

    pub fn last(&self) -> &ShiftLayer<'a> {
        match self {
            LayerGroup::Single(l) | LayerGroup::Fused(_, l) => l,
        }
    }

    pub fn input(&self) -> Dims {
        self.first().spec.input
    }

    pub fn output(&self) -> Dims {
        self.last().spec.output()
    }

    /// `(kernel size, stride)` per stage, input side first.
    pub fn stages(&self) -> Vec<(usize, usize)> {
        let geom = |l: &ShiftLayer| (l.spec.kind.kernel_size(), l.spec.stride);
        match self {
            LayerGroup::Single(l) => vec![geom(l)],
            LayerGroup::Fused(a, b) => vec![geom(a), geom(b)],
        }
    }

    pub fn run(&self, input: &QTensor) -> Result<RegionRun> {
        let w = self.output().w;
        self.run_region(input, ColumnWindow::whole(input.dims().w), 0..w)
    }

    /// Produce global output columns `out_cols` from a slab placed at
    /// `window`. The slab must hold every input column those outputs read.
    pub fn run_region(&self, slab: &QTensor, window: ColumnWindow, out_cols: Range<usize>) -> Result<RegionRun> {
        let d = slab.dims();
        self.first().check_input(d, slab.bits(), window)?;
        if out_cols.end > self.output().w || out_cols.is_empty() {
            return Err(Error::dim(format!(
                "output columns [{}, {}) outside [0, {})",
                out_cols.start,
                out_cols.end,
                self.output().w
            )));
        }
        match *self {
            LayerGroup::Single(l) => {
                let s = l.spec;
                match s.kind {
                    LayerKind::Conv33 => {
                        let banked = BankedFeature::from_window(slab, window);
                        let output = conv33_region(&banked, l.weights, l.params, s.stride, l.out_bits(), out_cols)?;
                        let od = output.dims();
                        Ok(RegionRun {
                            cycles: conv33_cycles(d.c, od.c, od.h, od.w, s.stride),
                            output,
                            peak_intermediate: 0,
                            line_buffer_registers: 0,
                        })
                    }
                    LayerKind::Conv11 => {
                        if out_cols.start < window.col0 || out_cols.end > window.col0 + d.w {
                            return Err(Error::dim("slab does not cover the requested columns"));
                        }
                        let part = slab.columns(out_cols.start - window.col0, out_cols.end - window.col0)?;
                        let output = conv11_region(&part, l.weights, l.params, l.out_bits())?;
                        Ok(RegionRun {
                            cycles: conv11_cycles(d.c, s.kernels, d.h, out_cols.len()),
                            output,
                            peak_intermediate: 0,
                            line_buffer_registers: 0,
                        })
                    }
                    LayerKind::Dw33 => {
                        let g = StreamGeom {
                            c: d.c,
                            h: d.h,
                            ws: d.w,
                            window,
                            stride: s.stride,
                            out_cols,
                        };
                        let (output, st) =
                            dw33_stream(&g, l.weights, l.params, l.out_bits(), |ch, y, x| Ok(slab.get(ch, y, x)))?;
                        Ok(RegionRun {
                            output,
                            cycles: st.cycles,
                            peak_intermediate: 0,
                            line_buffer_registers: st.registers,
                        })
                    }
                    LayerKind::Head11 => unreachable!("rejected by ShiftLayer::new"),
                }
            }
            LayerGroup::Fused(a, dw) => {
                let up = match a.spec.kind {
                    LayerKind::Conv11 => Upstream::Conv11 { input: slab, window },
                    _ => Upstream::Conv33(BankedFeature::from_window(slab, window)),
                };
                let (output, st) = fused_region(&up, a, dw, out_cols)?;
                Ok(RegionRun {
                    output,
                    cycles: st.cycles,
                    peak_intermediate: st.peak_intermediate,
                    line_buffer_registers: st.registers,
                })
            }
        }
    }
}
