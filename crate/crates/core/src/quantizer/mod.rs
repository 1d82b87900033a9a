//! Three-step quantization: uniform activations, power-of-two weights, and
//! scale merge + scale quantization into K-bit fixed-point constants.

mod activation;
mod network;
mod scale;
mod weight;

pub use activation::{lloyd_activation_fit, quantize_activation, thresholds, ActQuantResult};
pub use network::{
    float_forward, float_layer_forward, quantize_network, FloatLayer, FloatNetwork, LayerBody,
    QuantLayer, QuantModel, QuantizeOptions, RealTensor,
};
pub use scale::{
    merge_layer, merge_scales, quantize_scale, quantize_scale_vec, MergeSource, MergedLayerParams,
};
pub use weight::{assign_pow2, pow2_weight_fit, Pow2Fit};

/// Lloyd iterations stop after this many updates.
pub const MAX_LLOYD_ITERS: usize = 100;
/// Lloyd iterations stop once the relative scale change drops below this.
pub const LLOYD_REL_TOL: f64 = 1e-6;
/// Extra Lloyd starting points spread uniformly over `(0, max]`, tried after
/// the default start. The best fit wins; ties keep the earlier start.
pub const LLOYD_EXTRA_STARTS: usize = 64;

/// Sorted samples with prefix sums, so an assignment step costs
/// O(levels · log n) instead of O(n).
pub(crate) struct SortedSamples {
    pub xs: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl SortedSamples {
    pub fn new(mut xs: Vec<f64>) -> Self {
        xs.sort_by(f64::total_cmp);
        let mut s1 = Vec::with_capacity(xs.len() + 1);
        let mut s2 = Vec::with_capacity(xs.len() + 1);
        let (mut a, mut b) = (0.0, 0.0);
        s1.push(0.0);
        s2.push(0.0);
        for &x in &xs {
            a += x;
            b += x * x;
            s1.push(a);
            s2.push(b);
        }
        SortedSamples { xs, s1, s2 }
    }

    pub fn sum(&self, lo: usize, hi: usize) -> f64 {
        self.s1[hi] - self.s1[lo]
    }

    pub fn total_sq(&self) -> f64 {
        self.s2[self.xs.len()]
    }
}

/// Sufficient statistics of one assignment: Σ x·q and Σ q².
#[derive(Debug, Clone, Copy)]
pub(crate) struct AssignStats {
    pub sxq: f64,
    pub sqq: f64,
}

impl AssignStats {
    /// Σ (x - s·q)² expanded; clamped since cancellation can dip below zero.
    pub fn error(&self, total_sq: f64, scale: f64) -> f64 {
        (total_sq - 2.0 * scale * self.sxq + scale * scale * self.sqq).max(0.0)
    }
}

/// One Lloyd run from `start`. Returns (scale, error history).
pub(crate) fn lloyd_run(
    start: f64,
    total_sq: f64,
    assign: impl Fn(f64) -> AssignStats,
) -> (f64, Vec<f64>) {
    let mut scale = start;
    let mut stats = assign(scale);
    let mut err = stats.error(total_sq, scale);
    let mut history = vec![err];
    for _ in 0..MAX_LLOYD_ITERS {
        if stats.sqq == 0.0 {
            break;
        }
        let next = stats.sxq / stats.sqq;
        if !(next > 0.0 && next.is_finite()) {
            break;
        }
        let next_stats = assign(next);
        let next_err = next_stats.error(total_sq, next);
        // Exact arithmetic never increases the error; rounding noise can.
        if next_err > err {
            break;
        }
        let rel = (next - scale).abs() / scale;
        scale = next;
        stats = next_stats;
        err = next_err;
        history.push(err);
        if rel < LLOYD_REL_TOL {
            break;
        }
    }
    (scale, history)
}

/// Default start followed by the extra starts over `(0, max]`.
pub(crate) fn lloyd_starts(default: f64, max: f64) -> impl Iterator<Item = f64> {
    std::iter::once(default).chain(
        (1..=LLOYD_EXTRA_STARTS).map(move |j| max * j as f64 / LLOYD_EXTRA_STARTS as f64),
    )
}
