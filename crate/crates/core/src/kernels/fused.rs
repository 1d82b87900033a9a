use std::ops::Range;

use super::conv::{conv11_cycles, conv11_pixel, conv33_cycles, conv33_pixel};
use super::linebuffer::{dw33_stream, StreamGeom};
use super::{BankedFeature, ColumnWindow, CycleCount, LayerKind, LayerGroup, ShiftLayer};
use crate::error::{Error, Result};
use crate::fixq::QTensor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FusedStats {
    /// Most intermediate values alive at once in one channel's line buffer.
    /// The intermediate map itself is never stored.
    pub peak_intermediate: usize,
    pub registers: usize,
    pub cycles: CycleCount,
}

pub(crate) enum Upstream<'s> {
    Conv11 { input: &'s QTensor, window: ColumnWindow },
    Conv33(BankedFeature),
}

/// Stream upstream outputs into the depthwise line buffer one value at a
/// time, computing each intermediate pixel only when PE_DW asks for it.
pub(crate) fn fused_region(
    up: &Upstream,
    first: ShiftLayer,
    dw: ShiftLayer,
    out_cols: Range<usize>,
) -> Result<(QTensor, FusedStats)> {
    let mid = dw.spec.input;
    let s2 = dw.spec.stride;
    let mid_start = (out_cols.start * s2).saturating_sub(1);
    let mid_end = ((out_cols.end - 1) * s2 + 2).min(mid.w);
    let ws = mid_end - mid_start;
    let g = StreamGeom {
        c: mid.c,
        h: mid.h,
        ws,
        window: ColumnWindow { col0: mid_start, full_w: mid.w },
        stride: s2,
        out_cols,
    };
    let bits = first.out_bits();
    let (w, p) = (first.weights, first.params);
    let (out, st) = match up {
        Upstream::Conv11 { input, window } => {
            let d = input.dims();
            if mid_start < window.col0 || mid_end > window.col0 + d.w {
                return Err(Error::dim(format!(
                    "1x1 stage needs columns [{mid_start}, {mid_end}), slab holds [{}, {})",
                    window.col0,
                    window.col0 + d.w
                )));
            }
            let off = mid_start - window.col0;
            dw33_stream(&g, dw.weights, dw.params, dw.out_bits(), |k, y, x| {
                conv11_pixel(input, w, p, bits, k, y, off + x)
            })?
        }
        Upstream::Conv33(banked) => {
            let s1 = first.spec.stride;
            dw33_stream(&g, dw.weights, dw.params, dw.out_bits(), |k, y, x| {
                conv33_pixel(banked, w, p, s1, bits, k, y, mid_start + x)
            })?
        }
    };
    let c_in = first.spec.input.c;
    let up_cycles = match first.spec.kind {
        LayerKind::Conv11 => conv11_cycles(c_in, mid.c, mid.h, ws),
        _ => conv33_cycles(c_in, mid.c, mid.h, ws, first.spec.stride),
    };
    let cycles = CycleCount::new(
        up_cycles.compute.max(st.cycles.compute),
        up_cycles.fill + st.cycles.fill,
    );
    Ok((
        out,
        FusedStats {
            peak_intermediate: st.peak_entries,
            registers: st.registers,
            cycles,
        },
    ))
}

/// 1x1 convolution streamed into a depthwise 3x3 without storing the
/// intermediate map.
pub fn fused_11_dw(input: &QTensor, pw: ShiftLayer, dw: ShiftLayer) -> Result<(QTensor, FusedStats)> {
    if pw.spec.kind != LayerKind::Conv11 {
        return Err(Error::arg("fused_11_dw needs a conv11 first stage"));
    }
    LayerGroup::fused(pw, dw)?;
    let window = ColumnWindow::whole(input.dims().w);
    pw.check_input(input.dims(), input.bits(), window)?;
    let w = dw.spec.output().w;
    fused_region(&Upstream::Conv11 { input, window }, pw, dw, 0..w)
}

/// 3x3 convolution streamed into a depthwise 3x3.
pub fn fused_33_dw(input: &BankedFeature, conv: ShiftLayer, dw: ShiftLayer) -> Result<(QTensor, FusedStats)> {
    if conv.spec.kind != LayerKind::Conv33 {
        return Err(Error::arg("fused_33_dw needs a conv33 first stage"));
    }
    LayerGroup::fused(conv, dw)?;
    conv.check_input(input.dims(), input.bits(), input.window())?;
    let w = dw.spec.output().w;
    fused_region(&Upstream::Conv33(input.clone()), conv, dw, 0..w)
}
