use super::{CycleCount, PeConfig};
use crate::error::{Error, Result};
use crate::fixq::{Dims, I16Tensor, Int8Weights, QTensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HeadStats {
    /// Outputs clamped to the 16-bit range.
    pub saturations: u64,
    pub cycles: CycleCount,
}

/// 1x1 convolution on PE_Head: int8 weights, widening multiply-accumulate,
/// bias added, result saturated to i16. No requantization.
pub fn head11(input: &QTensor, weights: &Int8Weights, bias: &[i16]) -> Result<(I16Tensor, HeadStats)> {
    let d = input.dims();
    if weights.channels() != d.c {
        return Err(Error::dim(format!("head weights expect {} channels, input has {}", weights.channels(), d.c)));
    }
    let n = weights.kernels();
    if bias.len() != n {
        return Err(Error::dim(format!("{} biases for {n} kernels", bias.len())));
    }
    let plane = d.h * d.w;
    let mut out = vec![0i16; n * plane];
    let mut saturations = 0;
    for k in 0..n {
        let wk = &weights.data()[k * d.c..(k + 1) * d.c];
        for p in 0..plane {
            let mut acc = i64::from(bias[k]);
            for (ch, &w) in wk.iter().enumerate() {
                acc += i64::from(input.data()[ch * plane + p]) * i64::from(w);
            }
            let clamped = acc.clamp(i64::from(i16::MIN), i64::from(i16::MAX));
            saturations += u64::from(clamped != acc);
            out[k * plane + p] = clamped as i16;
        }
    }
    let g = PeConfig::PE_HEAD.groups(n, d.c) as u64;
    let stats = HeadStats {
        saturations,
        cycles: CycleCount::new(g * plane as u64, 0),
    };
    Ok((I16Tensor::new(Dims::new(n, d.h, d.w), out)?, stats))
}
