use crate::error::{Error, Result};
use crate::fixq::{audit, FixedScalar};

/// Real-valued provenance of a layer's merged constants, kept for auditing
/// and float comparison. Never read by the integer path.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeSource {
    pub gamma: Vec<f64>,
    pub bn_bias: Vec<f64>,
    pub alpha_in: f64,
    pub alpha_out: f64,
    pub beta: Vec<f64>,
    /// Unquantized a′ per kernel.
    pub a_real: Vec<f64>,
    /// Unquantized b′ per kernel.
    pub b_real: Vec<f64>,
}

/// Per-kernel fixed-point multipliers a′ and offsets b′ of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedLayerParams {
    a: Vec<FixedScalar>,
    b: Vec<FixedScalar>,
    source: Option<MergeSource>,
}

impl MergedLayerParams {
    pub fn new(a: Vec<FixedScalar>, b: Vec<FixedScalar>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::dim(format!("{} a′ values but {} b′ values", a.len(), b.len())));
        }
        Ok(MergedLayerParams { a, b, source: None })
    }

    /// a′ = 1, b′ = 0 for `n` kernels.
    pub fn identity(n: usize, bits: u8) -> Self {
        let one = FixedScalar::new(1, 0, bits).expect("1 fits any width");
        let zero = FixedScalar::new(0, 0, bits).expect("0 fits any width");
        MergedLayerParams {
            a: vec![one; n],
            b: vec![zero; n],
            source: None,
        }
    }

    pub fn with_source(mut self, source: MergeSource) -> Self {
        self.source = Some(source);
        self
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn a(&self) -> &[FixedScalar] {
        &self.a
    }

    pub fn b(&self) -> &[FixedScalar] {
        &self.b
    }

    /// Real provenance. Counted as a real-valued read.
    pub fn source(&self) -> Option<&MergeSource> {
        audit::note_real_read();
        self.source.as_ref()
    }
}

/// Fold batch norm and the three scaling factors into one multiplier and one
/// offset: a′ = γ·α_in·β / α_out, b′ = b / α_out.
pub fn merge_scales(
    gamma: f64,
    bn_bias: f64,
    alpha_in: f64,
    beta: f64,
    alpha_out: f64,
) -> Result<(f64, f64)> {
    if !(alpha_out.is_finite() && alpha_out > 0.0) {
        return Err(Error::arg(format!("output scale {alpha_out} must be positive")));
    }
    Ok((gamma * alpha_in * beta / alpha_out, bn_bias / alpha_out))
}

fn candidates(values: &[f64], d: i8, bits: u8) -> (f64, Vec<i32>) {
    let lim = FixedScalar::mantissa_limit(bits);
    let step = 2f64.powi(i32::from(d));
    let mut err = 0.0;
    let ms = values
        .iter()
        .map(|&v| {
            let m = (v / step).round().clamp(-f64::from(lim), f64::from(lim)) as i32;
            let e = v - f64::from(m) * step;
            err += e * e;
            m
        })
        .collect();
    (err, ms)
}

/// Quantize a vector to `{0, ±1, .., ±(2^(K-1) - 1)}·2^d` with one shared d.
///
/// Every d in 0, -1, .., -15 is tried; the lowest total squared error wins and
/// ties go to the larger d.
pub fn quantize_scale_vec(values: &[f64], bits: u8) -> Result<Vec<FixedScalar>> {
    if !(2..=16).contains(&bits) {
        return Err(Error::arg(format!("scale width {bits} outside 2..=16")));
    }
    let mut best: Option<(f64, i8, Vec<i32>)> = None;
    for d in (FixedScalar::MIN_DEXP..=0).rev() {
        let (err, ms) = candidates(values, d, bits);
        if best.as_ref().is_none_or(|b| err < b.0) {
            best = Some((err, d, ms));
        }
    }
    let (_, d, ms) = best.expect("non-empty search range");
    ms.into_iter()
        .map(|m| FixedScalar::new(m, d, bits))
        .collect()
}

/// Scalar form of [`quantize_scale_vec`].
pub fn quantize_scale(v: f64, bits: u8) -> Result<FixedScalar> {
    Ok(quantize_scale_vec(&[v], bits)?[0])
}

/// Merge and quantize the constants of a whole layer, one d per vector.
pub fn merge_layer(
    gamma: &[f64],
    bn_bias: &[f64],
    alpha_in: f64,
    beta: &[f64],
    alpha_out: f64,
    bits: u8,
) -> Result<MergedLayerParams> {
    if gamma.len() != bn_bias.len() || gamma.len() != beta.len() {
        return Err(Error::dim("γ, b and β lengths differ"));
    }
    let mut a_real = Vec::with_capacity(gamma.len());
    let mut b_real = Vec::with_capacity(gamma.len());
    for ((&g, &b), &bt) in gamma.iter().zip(bn_bias).zip(beta) {
        let (a, b) = merge_scales(g, b, alpha_in, bt, alpha_out)?;
        a_real.push(a);
        b_real.push(b);
    }
    let a = quantize_scale_vec(&a_real, bits)?;
    let b = quantize_scale_vec(&b_real, bits)?;
    Ok(MergedLayerParams::new(a, b)?.with_source(MergeSource {
        gamma: gamma.to_vec(),
        bn_bias: bn_bias.to_vec(),
        alpha_in,
        alpha_out,
        beta: beta.to_vec(),
        a_real,
        b_real,
    }))
}
