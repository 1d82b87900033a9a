use super::{lloyd_activation_fit, merge_layer, pow2_weight_fit, quantize_activation, MergedLayerParams};
use crate::error::{Error, Result};
use crate::fixq::{audit, Dims, Int8Weights, Pow2Weights, QTensor};
use crate::kernels::{check_chain, LayerKind, LayerSpec, Precision};

/// A real-valued feature map, row-major `c x h x w`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealTensor {
    dims: Dims,
    data: Vec<f64>,
}

impl RealTensor {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::dim(format!("{} values for {dims}", data.len())));
        }
        Ok(RealTensor { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        RealTensor {
            dims,
            data: vec![0.0; dims.len()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, ch: usize, y: usize, x: usize) -> f64 {
        self.data[self.dims.index(ch, y, x)]
    }

    /// Quantize every value with `alpha` to `bits`-bit levels.
    pub fn quantize(&self, alpha: f64, bits: u8) -> Result<QTensor> {
        let data = self.data.iter().map(|&x| quantize_activation(x, alpha, bits) as u8).collect();
        Ok(QTensor::new(self.dims, bits, data)?.with_scale(alpha))
    }
}

/// One float layer: `y = γ · conv(x, w) + b`, then ReLU except for heads.
/// Weights are laid out like [`Pow2Weights`]: kernel, channel, row, column.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatLayer {
    pub spec: LayerSpec,
    pub weights: Vec<f64>,
    pub gamma: Vec<f64>,
    pub bias: Vec<f64>,
}

impl FloatLayer {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let n = self.spec.kernels;
        if self.weights.len() != n * self.spec.kernel_len() {
            return Err(Error::dim(format!(
                "{} weights, expected {}",
                self.weights.len(),
                n * self.spec.kernel_len()
            )));
        }
        if self.gamma.len() != n || self.bias.len() != n {
            return Err(Error::dim(format!("γ and b need {n} values")));
        }
        Ok(())
    }

    pub fn kernel(&self, k: usize) -> &[f64] {
        let l = self.spec.kernel_len();
        &self.weights[k * l..(k + 1) * l]
    }
}

/// A backbone followed by an optional group of head layers, all of which
/// read the last backbone output.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatNetwork {
    pub input: Dims,
    pub layers: Vec<FloatLayer>,
}

impl FloatNetwork {
    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            l.validate().map_err(|e| e.in_layer(i))?;
        }
        check_chain(self.input, &self.specs())
    }

    /// Index of the tensor each layer reads: `None` for the network input.
    pub fn sources(&self) -> Vec<Option<usize>> {
        layer_sources(&self.specs())
    }
}

/// Which earlier layer output each layer reads (`None` = network input).
pub(crate) fn layer_sources(specs: &[LayerSpec]) -> Vec<Option<usize>> {
    let mut last_backbone = None;
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if s.kind == LayerKind::Head11 {
                last_backbone
            } else {
                let src = i.checked_sub(1);
                last_backbone = Some(i);
                src
            }
        })
        .collect()
}

/// Float reference of one layer, zero padding 1 for 3x3 windows.
pub fn float_layer_forward(layer: &FloatLayer, x: &RealTensor) -> Result<RealTensor> {
    let s = &layer.spec;
    if x.dims() != s.input {
        return Err(Error::dim(format!("layer expects {}, got {}", s.input, x.dims())));
    }
    let od = s.output();
    let d = s.input;
    let mut out = vec![0.0; od.len()];
    let k = s.kind.kernel_size();
    let pad = (k / 2) as isize;
    for n in 0..od.c {
        let w = layer.kernel(n);
        let chans: Vec<usize> = if s.kind == LayerKind::Dw33 { vec![n] } else { (0..d.c).collect() };
        for oy in 0..od.h {
            for ox in 0..od.w {
                let mut acc = 0.0;
                for (wc, &ch) in chans.iter().enumerate() {
                    for ky in 0..k {
                        let y = (oy * s.stride) as isize + ky as isize - pad;
                        if y < 0 || y >= d.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let xx = (ox * s.stride) as isize + kx as isize - pad;
                            if xx < 0 || xx >= d.w as isize {
                                continue;
                            }
                            acc += w[(wc * k + ky) * k + kx] * x.get(ch, y as usize, xx as usize);
                        }
                    }
                }
                let v = layer.gamma[n] * acc + layer.bias[n];
                out[od.index(n, oy, ox)] = if s.kind == LayerKind::Head11 { v } else { v.max(0.0) };
            }
        }
    }
    RealTensor::new(od, out)
}

/// Outputs of every layer for one input.
pub fn float_forward(net: &FloatNetwork, input: &RealTensor) -> Result<Vec<RealTensor>> {
    let mut outs: Vec<RealTensor> = Vec::with_capacity(net.layers.len());
    for (i, (l, src)) in net.layers.iter().zip(net.sources()).enumerate() {
        let x = src.map_or(input, |j| &outs[j]);
        let y = float_layer_forward(l, x).map_err(|e| e.in_layer(i))?;
        outs.push(y);
    }
    Ok(outs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantizeOptions {
    /// K, the width of merged scale mantissas.
    pub scale_bits: u8,
    /// Replace M for every activation after the network input.
    pub act_bits: Option<u8>,
}

impl Default for QuantizeOptions {
    fn default() -> Self {
        QuantizeOptions {
            scale_bits: 8,
            act_bits: None,
        }
    }
}

/// Integer payload of a quantized layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerBody {
    Shift {
        weights: Pow2Weights,
        params: MergedLayerParams,
    },
    Head {
        weights: Int8Weights,
        bias: Vec<i16>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantLayer {
    pub spec: LayerSpec,
    pub body: LayerBody,
    alpha_out: f64,
}

impl QuantLayer {
    pub fn new(spec: LayerSpec, body: LayerBody, alpha_out: f64) -> Self {
        QuantLayer { spec, body, alpha_out }
    }

    /// Real value of one output step. Counted as a real-valued read.
    pub fn alpha_out(&self) -> f64 {
        audit::note_real_read();
        self.alpha_out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantModel {
    pub input: Dims,
    pub input_bits: u8,
    input_alpha: f64,
    pub layers: Vec<QuantLayer>,
}

impl QuantModel {
    pub fn new(input: Dims, input_bits: u8, input_alpha: f64, layers: Vec<QuantLayer>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        check_chain(input, &specs)?;
        if let Some(first) = specs.first() {
            if first.precision.act_in != input_bits {
                return Err(Error::dim(format!(
                    "input is {input_bits}-bit, first layer reads {}-bit",
                    first.precision.act_in
                )));
            }
        }
        Ok(QuantModel {
            input,
            input_bits,
            input_alpha,
            layers,
        })
    }

    /// Real value of one input step. Counted as a real-valued read.
    pub fn input_alpha(&self) -> f64 {
        audit::note_real_read();
        self.input_alpha
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn sources(&self) -> Vec<Option<usize>> {
        layer_sources(&self.specs())
    }

    /// Quantize a real input with the calibrated input scale.
    pub fn quantize_input(&self, x: &RealTensor) -> Result<QTensor> {
        if x.dims() != self.input {
            return Err(Error::dim(format!("model input is {}, got {}", self.input, x.dims())));
        }
        x.quantize(self.input_alpha(), self.input_bits)
    }
}

/// Calibration uses at most this many samples per tensor, taken at a fixed
/// stride so results are deterministic.
const MAX_CALIB_SAMPLES: usize = 1 << 16;

fn calib_samples<'a>(ts: impl Iterator<Item = &'a RealTensor>) -> Vec<f64> {
    let all: Vec<&RealTensor> = ts.collect();
    let total: usize = all.iter().map(|t| t.data().len()).sum();
    let step = total.div_ceil(MAX_CALIB_SAMPLES).max(1);
    all.iter().flat_map(|t| t.data().iter().copied()).step_by(step).collect()
}

fn fit_alpha(samples: &[f64], bits: u8) -> Result<f64> {
    match lloyd_activation_fit(samples, bits) {
        Ok(r) => Ok(r.alpha),
        // nothing positive to represent: every scale quantizes to zero
        Err(Error::NoPositiveMass) => Ok(1.0),
        Err(e) => Err(e),
    }
}

fn apply_act_bits(specs: &mut [LayerSpec], bits: u8) {
    for (i, s) in specs.iter_mut().enumerate() {
        let act_in = if i == 0 { s.precision.act_in } else { bits };
        let act_out = if s.kind == LayerKind::Head11 { s.precision.act_out } else { bits };
        s.precision = Precision::new(act_in, s.precision.weight, act_out);
    }
}

/// Post-training quantization of a float network, calibrated layer by layer
/// on the float activations of `calib`.
pub fn quantize_network(net: &FloatNetwork, calib: &[RealTensor], opts: QuantizeOptions) -> Result<QuantModel> {
    net.validate()?;
    if calib.is_empty() {
        return Err(Error::MissingCalibration(0));
    }
    let mut specs = net.specs();
    if let Some(m) = opts.act_bits {
        apply_act_bits(&mut specs, m);
    }
    check_chain(net.input, &specs)?;
    let acts: Vec<Vec<RealTensor>> = calib.iter().map(|x| float_forward(net, x)).collect::<Result<_>>()?;
    let input_bits = specs.first().map_or(8, |s| s.precision.act_in);
    let input_alpha = fit_alpha(&calib_samples(calib.iter()), input_bits)?;
    let sources = net.sources();
    let mut alphas: Vec<f64> = Vec::with_capacity(specs.len());
    let mut layers = Vec::with_capacity(specs.len());
    for (i, (fl, spec)) in net.layers.iter().zip(&specs).enumerate() {
        let alpha_in = sources[i].map_or(input_alpha, |j| alphas[j]);
        let layer = quantize_layer(fl, *spec, alpha_in, &acts, i, opts).map_err(|e| e.in_layer(i))?;
        alphas.push(layer.alpha_out);
        layers.push(layer);
    }
    QuantModel::new(net.input, input_bits, input_alpha, layers)
}

fn quantize_layer(
    fl: &FloatLayer,
    spec: LayerSpec,
    alpha_in: f64,
    acts: &[Vec<RealTensor>],
    i: usize,
    opts: QuantizeOptions,
) -> Result<QuantLayer> {
    let n = spec.kernels;
    if spec.kind == LayerKind::Head11 {
        let folded: Vec<f64> = (0..n)
            .flat_map(|k| fl.kernel(k).iter().map(move |&w| fl.gamma[k] * w))
            .collect();
        let max = folded.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        let beta = if max > 0.0 { max / 127.0 } else { 1.0 };
        let data = folded.iter().map(|w| (w / beta).round() as i8).collect();
        let lim = (f64::from(i16::MIN), f64::from(i16::MAX));
        let bias = fl
            .bias
            .iter()
            .map(|b| (b / (alpha_in * beta)).round().clamp(lim.0, lim.1) as i16)
            .collect();
        let weights = Int8Weights::new(n, spec.input.c, beta, data)?;
        return Ok(QuantLayer::new(spec, LayerBody::Head { weights, bias }, alpha_in * beta));
    }
    let samples = calib_samples(acts.iter().map(|a| &a[i]));
    let alpha_out = fit_alpha(&samples, spec.precision.act_out)?;
    let bits = spec.precision.weight;
    let mut codes = Vec::with_capacity(fl.weights.len());
    let mut betas = Vec::with_capacity(n);
    for k in 0..n {
        let fit = pow2_weight_fit(fl.kernel(k), bits)?;
        codes.extend(fit.codes);
        betas.push(fit.beta);
    }
    let weights = Pow2Weights::new(n, spec.kernel_shape(), bits, codes, betas.clone())?;
    let params = merge_layer(&fl.gamma, &fl.bias, alpha_in, &betas, alpha_out, opts.scale_bits)?;
    Ok(QuantLayer::new(spec, LayerBody::Shift { weights, params }, alpha_out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_conv_pads_with_zero() {
        let spec = LayerSpec::new(LayerKind::Conv33, 1, Dims::new(1, 3, 3), 1);
        let l = FloatLayer {
            spec,
            weights: vec![1.0; 9],
            gamma: vec![1.0],
            bias: vec![0.0],
        };
        let y = float_layer_forward(&l, &RealTensor::new(Dims::new(1, 3, 3), vec![1.0; 9]).unwrap()).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn heads_read_last_backbone_output() {
        let d = Dims::new(4, 2, 2);
        let specs = [
            LayerSpec::new(LayerKind::Conv11, 1, d, 4),
            LayerSpec::new(LayerKind::Conv11, 1, d, 4),
            LayerSpec::new(LayerKind::Head11, 1, d, 2),
            LayerSpec::new(LayerKind::Head11, 1, d, 3),
        ];
        assert_eq!(layer_sources(&specs), vec![None, Some(0), Some(1), Some(1)]);
    }
}
