use std::ops::Range;

use super::conv::check_weights;
use super::{ColumnWindow, CycleCount, PeConfig};
use crate::error::{Error, Result};
use crate::fixq::{requantize, shift_mac, Dims, Pow2Weights, QTensor};
use crate::quantizer::MergedLayerParams;

/// Registers a 3x3 line buffer needs for a stream `w` columns wide: two
/// full rows plus three values.
pub const fn line_buffer_registers(w: usize) -> usize {
    2 * w + 3
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LineBufferStats {
    /// Registers per channel line buffer, `2 * W_T + 3`.
    pub registers: usize,
    /// Most values held at once by one channel's line buffer.
    pub peak_entries: usize,
    pub cycles: CycleCount,
}

/// Ring of `2W + 3` registers. A value is readable only while it is still
/// inside the ring, so the model cannot cheat by looking further back.
struct LineBuffer {
    regs: Vec<u8>,
    pushed: usize,
    peak: usize,
}

impl LineBuffer {
    fn new(len: usize) -> Self {
        LineBuffer {
            regs: vec![0; len],
            pushed: 0,
            peak: 0,
        }
    }

    fn push(&mut self, v: u8) {
        let len = self.regs.len();
        self.regs[self.pushed % len] = v;
        self.pushed += 1;
        self.peak = self.peak.max(self.pushed.min(len));
    }

    fn get(&self, seq: usize) -> Result<u8> {
        let len = self.regs.len();
        if seq >= self.pushed || self.pushed - seq > len {
            return Err(Error::dim(format!(
                "stream value {seq} not held by the line buffer ({} pushed, {len} registers)",
                self.pushed
            )));
        }
        Ok(self.regs[seq % len])
    }
}

/// Geometry of one streamed slab.
#[derive(Debug, Clone)]
pub(crate) struct StreamGeom {
    pub c: usize,
    pub h: usize,
    /// Slab width; the stream runs row by row across it.
    pub ws: usize,
    pub window: ColumnWindow,
    pub stride: usize,
    /// Global output columns to produce.
    pub out_cols: Range<usize>,
}

/// Depthwise 3x3 over a raster stream pulled from `source(ch, y, local_x)`.
/// Each window is evaluated as soon as its last pixel arrives.
pub(crate) fn dw33_stream(
    g: &StreamGeom,
    weights: &Pow2Weights,
    params: &MergedLayerParams,
    out_bits: u8,
    mut source: impl FnMut(usize, usize, usize) -> Result<u8>,
) -> Result<(QTensor, LineBufferStats)> {
    check_weights(weights, params, (3, 3, 1))?;
    if weights.kernels() != g.c {
        return Err(Error::dim(format!("{} depthwise kernels for {} channels", weights.kernels(), g.c)));
    }
    let (col0, full_w) = (g.window.col0, g.window.full_w);
    let s = g.stride;
    for ox in [g.out_cols.start, g.out_cols.end.saturating_sub(1)] {
        if g.out_cols.is_empty() {
            break;
        }
        let cx = ox * s;
        let lo = cx.saturating_sub(1);
        let hi = (cx + 1).min(full_w - 1);
        if lo < col0 || hi >= col0 + g.ws {
            return Err(Error::dim(format!(
                "output column {ox} needs input columns [{lo}, {hi}], slab holds [{col0}, {})",
                col0 + g.ws
            )));
        }
    }
    let h_out = super::conv_out(g.h, s);
    let od = Dims::new(g.c, h_out, g.out_cols.len());
    let mut out = vec![0u8; od.len()];
    let regs = line_buffer_registers(g.ws);
    let mut peak = 0;
    for ch in 0..g.c {
        let mut lb = LineBuffer::new(regs);
        let (a, b) = (params.a()[ch], params.b()[ch]);
        for y in 0..g.h {
            for lx in 0..g.ws {
                lb.push(source(ch, y, lx)?);
                let gx = col0 + lx;
                let rows = [y.checked_sub(1), (y + 1 == g.h).then_some(y)];
                let cols = [gx.checked_sub(1), (gx + 1 == full_w).then_some(gx)];
                for cy in rows.into_iter().flatten() {
                    if cy % s != 0 {
                        continue;
                    }
                    for cx in cols.into_iter().flatten() {
                        let ox = cx / s;
                        if cx % s != 0 || !g.out_cols.contains(&ox) {
                            continue;
                        }
                        let mut acc = 0i32;
                        for ky in 0..3 {
                            let r = cy as isize + ky as isize - 1;
                            if r < 0 || r >= g.h as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let c = cx as isize + kx as isize - 1;
                                if c < 0 || c >= full_w as isize {
                                    continue;
                                }
                                let seq = r as usize * g.ws + (c as usize - col0);
                                acc = shift_mac(u32::from(lb.get(seq)?), weights.code(ch, 0, ky, kx), acc)?;
                            }
                        }
                        out[od.index(ch, cy / s, ox - g.out_cols.start)] = requantize(acc, a, b, out_bits) as u8;
                    }
                }
            }
        }
        peak = peak.max(lb.peak);
    }
    let groups = g.c.div_ceil(PeConfig::PE_DW.k_t) as u64;
    let stats = LineBufferStats {
        registers: regs,
        peak_entries: peak,
        cycles: CycleCount::new(groups * (g.h * g.ws) as u64, groups * regs as u64),
    };
    Ok((QTensor::new(od, out_bits, out)?, stats))
}

/// Depthwise 3x3 convolution on PE_DW, fed by a raster stream `W_T` columns
/// wide (the whole of `stream`).
pub fn dw33_linebuffer(
    stream: &QTensor,
    weights: &Pow2Weights,
    params: &MergedLayerParams,
    stride: usize,
    out_bits: u8,
) -> Result<(QTensor, LineBufferStats)> {
    let d = stream.dims();
    if d.w < 3 {
        return Err(Error::arg(format!("line buffer width {} below 3", d.w)));
    }
    if !matches!(stride, 1 | 2) {
        return Err(Error::arg(format!("stride {stride} not in {{1, 2}}")));
    }
    let g = StreamGeom {
        c: d.c,
        h: d.h,
        ws: d.w,
        window: ColumnWindow::whole(d.w),
        stride,
        out_cols: 0..super::conv_out(d.w, stride),
    };
    dw33_stream(&g, weights, params, out_bits, |ch, y, x| Ok(stream.get(ch, y, x)))
}
