use std::ops::Range;

use super::{BankedFeature, CycleCount, PeConfig};
use crate::error::{Error, Result};
use crate::fixq::{requantize, shift_mac, Dims, Pow2Weights, QTensor};
use crate::quantizer::MergedLayerParams;

pub(crate) fn check_weights(
    weights: &Pow2Weights,
    params: &MergedLayerParams,
    shape: (usize, usize, usize),
) -> Result<()> {
    if weights.kernel_shape() != shape {
        return Err(Error::dim(format!(
            "kernel shape {:?}, expected {:?}",
            weights.kernel_shape(),
            shape
        )));
    }
    if params.len() != weights.kernels() {
        return Err(Error::dim(format!(
            "{} scale pairs for {} kernels",
            params.len(),
            weights.kernels()
        )));
    }
    Ok(())
}

fn check_stride(stride: usize) -> Result<()> {
    if matches!(stride, 1 | 2) {
        Ok(())
    } else {
        Err(Error::arg(format!("stride {stride} not in {{1, 2}}")))
    }
}

/// 3x3 convolution over a banked slab, producing global output columns
/// `out_cols`. Only output pixels that exist at `stride` are computed.
pub(crate) fn conv33_region(
    input: &BankedFeature,
    weights: &Pow2Weights,
    params: &MergedLayerParams,
    stride: usize,
    out_bits: u8,
    out_cols: Range<usize>,
) -> Result<QTensor> {
    check_stride(stride)?;
    let d = input.dims();
    check_weights(weights, params, (3, 3, d.c))?;
    let n = weights.kernels();
    let h_out = super::conv_out(d.h, stride);
    let od = Dims::new(n, h_out, out_cols.len());
    let mut out = vec![0u8; od.len()];
    let mut window = vec![0u32; 9 * d.c];
    for oy in 0..h_out {
        let cy = oy * stride;
        for (lx, ox) in out_cols.clone().enumerate() {
            let cx = (ox * stride) as isize;
            for ch in 0..d.c {
                for kx in 0..3 {
                    let col = input.fetch_column(ch, cy, cx + kx as isize - 1)?;
                    for (ky, v) in col.iter().enumerate() {
                        window[(ch * 3 + ky) * 3 + kx] = u32::from(*v);
                    }
                }
            }
            for k in 0..n {
                let mut acc = 0i32;
                for (&code, &act) in weights.kernel(k).iter().zip(&window) {
                    acc = shift_mac(act, code, acc)?;
                }
                out[od.index(k, oy, lx)] = requantize(acc, params.a()[k], params.b()[k], out_bits) as u8;
            }
        }
    }
    QTensor::new(od, out_bits, out)
}

/// One output pixel of a 3x3 convolution, used when a downstream PE pulls
/// values on demand.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv33_pixel(
    input: &BankedFeature,
    weights: &Pow2Weights,
    params: &MergedLayerParams,
    stride: usize,
    out_bits: u8,
    k: usize,
    oy: usize,
    ox: usize,
) -> Result<u8> {
    let c = input.dims().c;
    let kernel = weights.kernel(k);
    let (cy, cx) = (oy * stride, (ox * stride) as isize);
    let mut acc = 0i32;
    for ch in 0..c {
        for kx in 0..3 {
            let col = input.fetch_column(ch, cy, cx + kx as isize - 1)?;
            for (ky, v) in col.iter().enumerate() {
                acc = shift_mac(u32::from(*v), kernel[(ch * 3 + ky) * 3 + kx], acc)?;
            }
        }
    }
    Ok(requantize(acc, params.a()[k], params.b()[k], out_bits) as u8)
}

/// 3x3 convolution with zero padding 1 and stride 1 or 2, on PE_33.
pub fn conv33(
    input: &BankedFeature,
    weights: &Pow2Weights,
    params: &MergedLayerParams,
    stride: usize,
    out_bits: u8,
) -> Result<(QTensor, CycleCount)> {
    let d = input.dims();
    if d.h < 3 || input.window().full_w < 3 {
        return Err(Error::dim(format!("3x3 convolution needs at least 3x3 input, got {d}")));
    }
    check_stride(stride)?;
    let w_out = super::conv_out(input.window().full_w, stride);
    let out = conv33_region(input, weights, params, stride, out_bits, 0..w_out)?;
    let od = out.dims();
    Ok((out, conv33_cycles(d.c, od.c, od.h, od.w, stride)))
}

/// PE_33 cycles. The jump connection feeds only the windows centred on
/// surviving pixels, so compute scales with the output size; each output
/// row primes `3 - stride` columns before its first window is complete.
pub fn conv33_cycles(c: usize, n: usize, h_out: usize, w_out: usize, stride: usize) -> CycleCount {
    let g = PeConfig::PE_33.groups(n, c) as u64;
    let prime = if stride == 1 { 2 } else { 1 };
    CycleCount::new(g * (h_out * w_out) as u64, g * (h_out * prime) as u64)
}

/// A classic line-buffer 3x3 engine: it visits every input position at
/// stride 1 whatever the layer stride and primes `2W + 3` registers.
pub fn linebuffer_baseline_cycles(c: usize, n: usize, h: usize, w: usize) -> CycleCount {
    let g = PeConfig::PE_33.groups(n, c) as u64;
    CycleCount::new(g * (h * w) as u64, g * (2 * w + 3) as u64)
}

pub(crate) fn conv11_region(
    input: &QTensor,
    weights: &Pow2Weights,
    params: &MergedLayerParams,
    out_bits: u8,
) -> Result<QTensor> {
    let d = input.dims();
    check_weights(weights, params, (1, 1, d.c))?;
    let n = weights.kernels();
    let od = Dims::new(n, d.h, d.w);
    let plane = d.h * d.w;
    let mut out = vec![0u8; od.len()];
    let mut acts = vec![0u32; d.c];
    for p in 0..plane {
        for (ch, a) in acts.iter_mut().enumerate() {
            *a = u32::from(input.data()[ch * plane + p]);
        }
        for k in 0..n {
            let mut acc = 0i32;
            for (&code, &act) in weights.kernel(k).iter().zip(&acts) {
                acc = shift_mac(act, code, acc)?;
            }
            out[k * plane + p] = requantize(acc, params.a()[k], params.b()[k], out_bits) as u8;
        }
    }
    QTensor::new(od, out_bits, out)
}

/// One output pixel of a 1x1 convolution.
pub(crate) fn conv11_pixel(
    input: &QTensor,
    weights: &Pow2Weights,
    params: &MergedLayerParams,
    out_bits: u8,
    k: usize,
    y: usize,
    x: usize,
) -> Result<u8> {
    let mut acc = 0i32;
    for (ch, &code) in weights.kernel(k).iter().enumerate() {
        acc = shift_mac(u32::from(input.get(ch, y, x)), code, acc)?;
    }
    Ok(requantize(acc, params.a()[k], params.b()[k], out_bits) as u8)
}

/// Pointwise convolution: a shift-MAC dot product over channels per pixel.
pub fn conv11(
    input: &QTensor,
    weights: &Pow2Weights,
    params: &MergedLayerParams,
    out_bits: u8,
) -> Result<QTensor> {
    conv11_region(input, weights, params, out_bits)
}

/// PE_11 cycles for an `h`x`w` map.
pub fn conv11_cycles(c: usize, n: usize, h: usize, w: usize) -> CycleCount {
    let g = PeConfig::PE_11.groups(n, c) as u64;
    CycleCount::new(g * (h * w) as u64, 0)
}
