//! Naive oracles and random generators shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

use shiftflow::fixq::{Dims, FixedScalar, I16Tensor, Int8Weights, Pow2Code, Pow2Weights, QTensor};
use shiftflow::kernels::{LayerGroup, LayerKind, LayerSpec, Precision, ShiftLayer};
use shiftflow::quantizer::{LayerBody, MergedLayerParams, QuantModel};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_qtensor(rng: &mut impl Rng, dims: Dims, bits: u8) -> QTensor {
    let max = (1u32 << bits) - 1;
    let data = (0..dims.len()).map(|_| rng.random_range(0..=max) as u8).collect();
    QTensor::new(dims, bits, data).unwrap()
}

pub fn random_weights(rng: &mut impl Rng, n: usize, shape: (usize, usize, usize), bits: u8) -> Pow2Weights {
    let all = Pow2Code::all(bits);
    let len = n * shape.0 * shape.1 * shape.2;
    let codes = (0..len).map(|_| all[rng.random_range(0..all.len())]).collect();
    Pow2Weights::new(n, shape, bits, codes, vec![1.0; n]).unwrap()
}

/// Scales small enough that a layer's outputs spread over the code range.
pub fn random_params(rng: &mut impl Rng, n: usize, fan_in: usize) -> MergedLayerParams {
    let da = -(rng.random_range(0..4) + (fan_in as f64).log2().ceil() as i8).min(15);
    let db = -rng.random_range(0..4);
    let a = (0..n).map(|_| FixedScalar::new(rng.random_range(1..=127), da.max(-15), 8).unwrap()).collect();
    let b = (0..n).map(|_| FixedScalar::new(rng.random_range(-20..=40), db, 8).unwrap()).collect();
    MergedLayerParams::new(a, b).unwrap()
}

/// `round(clip(acc·a + b))` evaluated in f64, which is exact for these
/// magnitudes; `f64::round` rounds half away from zero.
pub fn requant_oracle(acc: i64, a: FixedScalar, b: FixedScalar, bits: u8) -> u8 {
    let v = acc as f64 * f64::from(a.mantissa()) * 2f64.powi(a.dexp().into())
        + f64::from(b.mantissa()) * 2f64.powi(b.dexp().into());
    v.round().clamp(0.0, f64::from((1u32 << bits) - 1)) as u8
}

/// Direct convolution with plain integer multiplies and zero padding.
pub fn conv_oracle(
    kind: LayerKind,
    stride: usize,
    x: &QTensor,
    w: &Pow2Weights,
    p: &MergedLayerParams,
    out_bits: u8,
) -> QTensor {
    let d = x.dims();
    let k = kind.kernel_size();
    let pad = (k / 2) as isize;
    let n = w.kernels();
    let (ho, wo) = ((d.h - 1) / stride + 1, (d.w - 1) / stride + 1);
    let od = Dims::new(n, ho, wo);
    let mut out = vec![0u8; od.len()];
    for kk in 0..n {
        let chans: Vec<usize> = if kind == LayerKind::Dw33 { vec![kk] } else { (0..d.c).collect() };
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc: i64 = 0;
                for (wc, &ch) in chans.iter().enumerate() {
                    for ky in 0..k {
                        for kx in 0..k {
                            let y = (oy * stride) as isize + ky as isize - pad;
                            let xx = (ox * stride) as isize + kx as isize - pad;
                            if y < 0 || xx < 0 || y >= d.h as isize || xx >= d.w as isize {
                                continue;
                            }
                            let v = i64::from(x.get(ch, y as usize, xx as usize));
                            acc += v * w.code(kk, wc, ky, kx).value();
                        }
                    }
                }
                out[od.index(kk, oy, ox)] = requant_oracle(acc, p.a()[kk], p.b()[kk], out_bits);
            }
        }
    }
    QTensor::new(od, out_bits, out).unwrap()
}

pub fn head_oracle(x: &QTensor, w: &Int8Weights, bias: &[i16]) -> I16Tensor {
    let d = x.dims();
    let mut out = Vec::new();
    for (k, &b) in bias.iter().enumerate().take(w.kernels()) {
        for y in 0..d.h {
            for xx in 0..d.w {
                let mut acc = i64::from(b);
                for ch in 0..d.c {
                    acc += i64::from(x.get(ch, y, xx)) * i64::from(w.get(k, ch));
                }
                out.push(acc.clamp(-32768, 32767) as i16);
            }
        }
    }
    I16Tensor::new(Dims::new(w.kernels(), d.h, d.w), out).unwrap()
}

/// Layer-by-layer oracle of a whole quantized model; returns every layer
/// output (heads as i16).
pub enum OracleOut {
    Act(QTensor),
    Head(I16Tensor),
}

pub fn model_oracle(model: &QuantModel, input: &QTensor) -> Vec<OracleOut> {
    let mut outs: Vec<OracleOut> = Vec::new();
    let sources = model.sources();
    for (i, l) in model.layers.iter().enumerate() {
        let x = match sources[i] {
            None => input,
            Some(j) => match &outs[j] {
                OracleOut::Act(t) => t,
                OracleOut::Head(_) => unreachable!(),
            },
        };
        let s: &LayerSpec = &l.spec;
        outs.push(match &l.body {
            LayerBody::Shift { weights, params } => {
                OracleOut::Act(conv_oracle(s.kind, s.stride, x, weights, params, s.precision.act_out))
            }
            LayerBody::Head { weights, bias } => OracleOut::Head(head_oracle(x, weights, bias)),
        });
    }
    outs
}

/// Read a fixture of whitespace-separated numbers with `# key value` headers.
pub fn read_samples(name: &str) -> (Vec<f64>, Vec<(String, f64)>) {
    let text = std::fs::read_to_string(fixture(name)).unwrap();
    let mut vals = Vec::new();
    let mut meta = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            let f: Vec<&str> = rest.split_whitespace().collect();
            if let [k, v] = f[..] {
                if let Ok(v) = v.parse() {
                    meta.push((k.to_string(), v));
                }
            }
            continue;
        }
        vals.extend(line.split_whitespace().map(|t| t.parse::<f64>().unwrap()));
    }
    (vals, meta)
}

pub fn meta(m: &[(String, f64)], key: &str) -> f64 {
    m.iter().find(|(k, _)| k == key).unwrap().1
}

pub struct Owned {
    pub specs: Vec<LayerSpec>,
    pub weights: Vec<Pow2Weights>,
    pub params: Vec<MergedLayerParams>,
}

impl Owned {
    pub fn group(&self) -> LayerGroup<'_> {
        let l = |i: usize| ShiftLayer::new(&self.specs[i], &self.weights[i], &self.params[i]).unwrap();
        if self.specs.len() == 1 {
            LayerGroup::Single(l(0))
        } else {
            LayerGroup::fused(l(0), l(1)).unwrap()
        }
    }
}

/// `variant`: 0 conv33, 1 conv11, 2 dw33, 3 conv33+dw, 4 conv11+dw.
pub fn build(variant: u8, d: Dims, n: usize, s1: usize, s2: usize, seed: u64) -> (Owned, QTensor) {
    let mut r = rng(seed);
    let p4 = Precision::new(4, 3, 4);
    let mk = |kind: LayerKind, stride: usize, input: Dims, n: usize| {
        LayerSpec::new(kind, stride, input, n).with_precision(p4)
    };
    let mut specs = match variant {
        0 => vec![mk(LayerKind::Conv33, s1, d, n)],
        1 => vec![mk(LayerKind::Conv11, 1, d, n)],
        2 => vec![mk(LayerKind::Dw33, s1, d, d.c)],
        3 => vec![mk(LayerKind::Conv33, s1, d, n).fused()],
        _ => vec![mk(LayerKind::Conv11, 1, d, n).fused()],
    };
    if variant >= 3 {
        let mid = specs[0].output();
        specs.push(mk(LayerKind::Dw33, s2, mid, mid.c));
    }
    let weights: Vec<Pow2Weights> =
        specs.iter().map(|s| random_weights(&mut r, s.kernels, s.kernel_shape(), 3)).collect();
    let params = specs
        .iter()
        .map(|s| random_params(&mut r, s.kernels, s.kernel_len() * 16))
        .collect();
    let x = random_qtensor(&mut r, d, 4);
    (Owned { specs, weights, params }, x)
}

pub const GRID: usize = 10_000;

/// Nearest uniform level, with threshold ties going down.
pub fn act_level(x: f64, alpha: f64, bits: u8) -> f64 {
    let top = f64::from((1u32 << bits) - 1);
    (x / alpha - 0.5).ceil().clamp(0.0, top)
}

pub fn act_error(xs: &[f64], alpha: f64, bits: u8) -> f64 {
    xs.iter().map(|&x| (x - alpha * act_level(x, alpha, bits)).powi(2)).sum()
}

/// Nearest of {0, ±1, ±2, .., ±2^E}·β by brute force; ties pick the larger magnitude.
pub fn pow2_value(w: f64, beta: f64, bits: u8) -> f64 {
    let top = (1u32 << (bits - 1)) - 2;
    let mut best = (w.abs(), 0.0);
    for e in 0..=top {
        let m = f64::from(1u32 << e);
        let d = (w.abs() - m * beta).abs();
        if d <= best.0 {
            best = (d, m);
        }
    }
    best.1 * w.signum()
}

pub fn pow2_error(ws: &[f64], beta: f64, bits: u8) -> f64 {
    ws.iter().map(|&w| (w - beta * pow2_value(w, beta, bits)).powi(2)).sum()
}

/// Best error over `max·j/GRID`, j = 1..=GRID.
pub fn grid_search(max: f64, err: impl Fn(f64) -> f64) -> (f64, f64) {
    (1..=GRID)
        .map(|j| max * j as f64 / GRID as f64)
        .map(|s| (s, err(s)))
        .fold((0.0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
}

pub fn non_increasing(h: &[f64]) -> bool {
    h.windows(2).all(|p| p[1] <= p[0] * (1.0 + 1e-12) + 1e-15)
}

/// Exhaustive search over d written independently of the library: for each
/// d the mantissas are rounded and clipped, and the first strictly better
/// total error from d = 0 downwards wins.
pub fn scale_oracle(vs: &[f64], bits: u8) -> (i8, Vec<i32>) {
    let lim = (1i64 << (bits - 1)) - 1;
    let mut best: Option<(f64, i8, Vec<i32>)> = None;
    for d in (-15i8..=0).rev() {
        let step = 2f64.powi(d.into());
        let ms: Vec<i64> = vs.iter().map(|v| ((v / step).round() as i64).clamp(-lim, lim)).collect();
        let err: f64 = vs.iter().zip(&ms).map(|(v, &m)| (v - m as f64 * step).powi(2)).sum();
        if best.as_ref().is_none_or(|b| err < b.0) {
            best = Some((err, d, ms.iter().map(|&m| m as i32).collect()));
        }
    }
    let (_, d, ms) = best.unwrap();
    (d, ms)
}
