//! Illustrative models. The topology below is a MobileNet-style stand-in
//! built for testing and benchmarking, not a reproduction of any published
//! detector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::fixq::{Dims, FixedScalar, Pow2Code, Pow2Weights};
use crate::kernels::{LayerKind, LayerSpec};
use crate::quantizer::{FloatLayer, FloatNetwork, LayerBody, MergedLayerParams, QuantLayer, QuantModel, RealTensor};

/// `(dw stride, pointwise outputs)` of the ten depthwise/pointwise pairs.
const PAIRS: [(usize, usize); 10] = [
    (1, 64),
    (2, 128),
    (1, 128),
    (2, 256),
    (1, 256),
    (2, 512),
    (1, 512),
    (1, 512),
    (2, 1024),
    (1, 1024),
];

/// 22 convolutions: a stride-2 3x3 stem fused into the first depthwise
/// layer, ten depthwise/pointwise pairs with each pointwise layer fused into
/// the next depthwise one, a final 1x1 layer, then two head layers.
/// Channel counts are divided by `width_div`.
pub fn example_specs(input: Dims, width_div: usize) -> Vec<LayerSpec> {
    let ch = |c: usize| (c / width_div.max(1)).max(1);
    let mut specs = Vec::new();
    let stem = LayerSpec::new(LayerKind::Conv33, 2, input, ch(32)).fused();
    let mut cur = stem.output();
    specs.push(stem);
    for (i, &(s, n)) in PAIRS.iter().enumerate() {
        let dw = LayerSpec::new(LayerKind::Dw33, s, cur, cur.c);
        cur = dw.output();
        specs.push(dw);
        let mut pw = LayerSpec::new(LayerKind::Conv11, 1, cur, ch(n));
        if i + 1 < PAIRS.len() {
            pw = pw.fused();
        }
        cur = pw.output();
        specs.push(pw);
    }
    let last = LayerSpec::new(LayerKind::Conv11, 1, cur, ch(256));
    cur = last.output();
    specs.push(last);
    // per-position class scores and box offsets for 6 anchors
    specs.push(LayerSpec::new(LayerKind::Head11, 1, cur, 6 * 21));
    specs.push(LayerSpec::new(LayerKind::Head11, 1, cur, 6 * 4));
    specs
}

/// Three layers: 3x3 stem fused into a depthwise layer, then a 1x1 layer.
pub fn toy_specs() -> (Dims, Vec<LayerSpec>) {
    let input = Dims::new(3, 16, 16);
    let stem = LayerSpec::new(LayerKind::Conv33, 1, input, 8).fused();
    let dw = LayerSpec::new(LayerKind::Dw33, 1, stem.output(), 8);
    let pw = LayerSpec::new(LayerKind::Conv11, 1, dw.output(), 16);
    (input, vec![stem, dw, pw])
}

/// Random float weights: He-scaled normal kernels, γ in [0.5, 1.5) and a
/// slightly positive bias so ReLU layers stay alive.
pub fn random_float_network(input: Dims, specs: &[LayerSpec], seed: u64) -> FloatNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = specs
        .iter()
        .map(|s| {
            let fan_in = s.kernel_len() as f64;
            let w = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            let b = Normal::new(0.05, 0.05).expect("positive std");
            FloatLayer {
                spec: *s,
                weights: (0..s.kernels * s.kernel_len()).map(|_| w.sample(&mut rng)).collect(),
                gamma: (0..s.kernels).map(|_| rng.random_range(0.5..1.5)).collect(),
                bias: (0..s.kernels).map(|_| b.sample(&mut rng)).collect(),
            }
        })
        .collect();
    FloatNetwork { input, layers }
}

/// Uniform values in `[0, 1)`.
pub fn random_input(dims: Dims, seed: u64) -> RealTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..dims.len()).map(|_| rng.random::<f64>()).collect();
    RealTensor::new(dims, data).expect("length matches dims")
}

/// One 1x1 layer that copies its input: weight +2^0 on the diagonal,
/// a′ = 1, b′ = 0.
pub fn identity_model(dims: Dims, bits: u8) -> Result<QuantModel> {
    let c = dims.c;
    let one = Pow2Code::new(1, 0, 3)?;
    let codes = (0..c * c).map(|i| if i / c == i % c { one } else { Pow2Code::ZERO }).collect();
    let weights = Pow2Weights::new(c, (1, 1, c), 3, codes, vec![1.0; c])?;
    let unit = FixedScalar::new(1, 0, 8)?;
    let zero = FixedScalar::new(0, 0, 8)?;
    let params = MergedLayerParams::new(vec![unit; c], vec![zero; c])?;
    let spec = LayerSpec::new(LayerKind::Conv11, 1, dims, c).with_precision(crate::kernels::Precision::new(bits, 3, bits));
    QuantModel::new(dims, bits, 1.0, vec![QuantLayer::new(spec, LayerBody::Shift { weights, params }, 1.0)])
}
