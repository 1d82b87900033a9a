use std::fmt;

use super::infer::{run_inference, InferenceOptions, Output};
use crate::error::{Error, Result};
use crate::kernels::LayerKind;
use crate::quantizer::{float_forward, FloatNetwork, QuantModel, RealTensor};

/// Signal and noise energy of one comparison.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Sqnr {
    pub signal: f64,
    pub noise: f64,
}

impl Sqnr {
    /// `10·log10(signal / noise)`; infinite when the noise is zero.
    pub fn db(&self) -> f64 {
        if self.noise == 0.0 {
            f64::INFINITY
        } else {
            10.0 * (self.signal / self.noise).log10()
        }
    }

    pub fn is_exact(&self) -> bool {
        self.noise == 0.0
    }

    fn add(&mut self, y: &[f64], yq: impl Iterator<Item = f64>) {
        for (&a, b) in y.iter().zip(yq) {
            self.signal += a * a;
            self.noise += (a - b) * (a - b);
        }
    }
}

impl fmt::Display for Sqnr {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        if self.is_exact() {
            write!(f, "exact")
        } else {
            write!(f, "{:.2} dB", self.db())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqnrReport {
    /// `(layer index, kind, SQNR)` for every layer.
    pub layers: Vec<(usize, LayerKind, Sqnr)>,
    pub end_to_end: Sqnr,
}

impl fmt::Display for SqnrReport {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        for (i, kind, s) in &self.layers {
            writeln!(f, "layer {i:>2} {:<7} {s}", kind.to_string())?;
        }
        writeln!(f, "end-to-end {}", self.end_to_end)
    }
}

fn dequantize(o: &Output) -> Vec<f64> {
    match o {
        Output::Act(t) => {
            let a = t.scale().unwrap_or(1.0);
            t.data().iter().map(|&q| f64::from(q) * a).collect()
        }
        Output::Head(t) => {
            let a = t.scale().unwrap_or(1.0);
            t.data().iter().map(|&q| f64::from(q) * a).collect()
        }
    }
}

/// SQNR of the quantized model against its float source, per layer and over
/// the network outputs, accumulated over `inputs`.
pub fn compare_float(model: &QuantModel, float: &FloatNetwork, inputs: &[RealTensor]) -> Result<SqnrReport> {
    if model.specs().len() != float.layers.len() || model.input != float.input {
        return Err(Error::dim("quantized and float models differ in shape"));
    }
    let kinds: Vec<LayerKind> = model.layers.iter().map(|l| l.spec.kind).collect();
    let has_heads = kinds.contains(&LayerKind::Head11);
    let mut per = vec![Sqnr::default(); kinds.len()];
    let mut e2e = Sqnr::default();
    let opts = InferenceOptions {
        unfused: true,
        ..InferenceOptions::default()
    };
    for x in inputs {
        let y = float_forward(float, x)?;
        let q = run_inference(model, &model.quantize_input(x)?, &opts)?;
        for (i, o) in &q.outputs {
            let yq = dequantize(o);
            per[*i].add(y[*i].data(), yq.iter().copied());
            let terminal = if has_heads { kinds[*i] == LayerKind::Head11 } else { *i + 1 == kinds.len() };
            if terminal {
                e2e.add(y[*i].data(), yq.into_iter());
            }
        }
    }
    Ok(SqnrReport {
        layers: per.into_iter().enumerate().map(|(i, s)| (i, kinds[i], s)).collect(),
        end_to_end: e2e,
    })
}
