mod common;

use common::*;
use proptest::prelude::*;
use shiftflow::fixq::{Dims, Int8Weights, QTensor};
use shiftflow::kernels::*;
use shiftflow::quantizer::MergedLayerParams;

fn layer(kind: LayerKind, stride: usize, input: Dims, n: usize) -> LayerSpec {
    LayerSpec::new(kind, stride, input, n).with_precision(Precision::new(4, 3, 4))
}

#[test]
fn conv33_fixture_matches_oracle() {
    let mut r = rng(33);
    let x = random_qtensor(&mut r, Dims::new(3, 16, 16), 8);
    let w = random_weights(&mut r, 8, (3, 3, 3), 3);
    let p = random_params(&mut r, 8, 27 * 64);
    for stride in [1, 2] {
        let (out, cyc) = conv33(&BankedFeature::new(&x), &w, &p, stride, 4).unwrap();
        assert_eq!(out, conv_oracle(LayerKind::Conv33, stride, &x, &w, &p, 4));
        assert_eq!(cyc.total(), cyc.compute + cyc.fill);
    }
}

#[test]
fn conv11_fixture_matches_oracle() {
    let mut r = rng(11);
    let x = random_qtensor(&mut r, Dims::new(16, 8, 8), 4);
    let w = random_weights(&mut r, 32, (1, 1, 16), 3);
    let p = random_params(&mut r, 32, 16 * 16);
    assert_eq!(conv11(&x, &w, &p, 4).unwrap(), conv_oracle(LayerKind::Conv11, 1, &x, &w, &p, 4));
}

#[test]
fn dw33_stream_matches_oracle() {
    let mut r = rng(9);
    let x = random_qtensor(&mut r, Dims::new(5, 11, 13), 4);
    let w = random_weights(&mut r, 5, (3, 3, 1), 3);
    let p = random_params(&mut r, 5, 9 * 16);
    for stride in [1, 2] {
        let (out, st) = dw33_linebuffer(&x, &w, &p, stride, 4).unwrap();
        assert_eq!(out, conv_oracle(LayerKind::Dw33, stride, &x, &w, &p, 4));
        assert_eq!(st.registers, 2 * 13 + 3);
        assert_eq!(st.cycles.fill, 29);
    }
}

#[test]
fn head_matches_widening_oracle() {
    let mut r = rng(5);
    let x = random_qtensor(&mut r, Dims::new(40, 3, 4), 4);
    let data = (0..6 * 40).map(|_| rand::Rng::random_range(&mut r, -128..=127) as i8).collect();
    let w = Int8Weights::new(6, 40, 1.0, data).unwrap();
    let bias = [0, 100, -100, 32000, -32000, 7];
    let (out, st) = head11(&x, &w, &bias).unwrap();
    let want = head_oracle(&x, &w, &bias);
    assert_eq!(out, want);
    let clamped = want.data().iter().filter(|&&v| v == i16::MAX || v == i16::MIN).count() as u64;
    assert!(st.saturations <= clamped);
}

#[test]
fn fused_equals_composition() {
    let mut r = rng(21);
    let d = Dims::new(6, 10, 12);
    let x = random_qtensor(&mut r, d, 4);
    let pw_spec = layer(LayerKind::Conv11, 1, d, 7).fused();
    let dw_spec = layer(LayerKind::Dw33, 1, pw_spec.output(), 7);
    let (w1, p1) = (random_weights(&mut r, 7, (1, 1, 6), 3), random_params(&mut r, 7, 6 * 16));
    let (w2, p2) = (random_weights(&mut r, 7, (3, 3, 1), 3), random_params(&mut r, 7, 9 * 16));
    let pw = ShiftLayer::new(&pw_spec, &w1, &p1).unwrap();
    let dw = ShiftLayer::new(&dw_spec, &w2, &p2).unwrap();
    let (fused, st) = fused_11_dw(&x, pw, dw).unwrap();
    let mid = conv11(&x, &w1, &p1, 4).unwrap();
    let (two_step, _) = dw33_linebuffer(&mid, &w2, &p2, 1, 4).unwrap();
    assert_eq!(fused, two_step);
    assert!(st.peak_intermediate <= line_buffer_registers(12));

    let c_spec = LayerSpec::new(LayerKind::Conv33, 2, Dims::new(3, 16, 18), 5).fused();
    let d_spec = layer(LayerKind::Dw33, 1, c_spec.output(), 5);
    let x8 = random_qtensor(&mut r, c_spec.input, 8);
    let (w1, p1) = (random_weights(&mut r, 5, (3, 3, 3), 3), random_params(&mut r, 5, 27 * 256));
    let (w2, p2) = (random_weights(&mut r, 5, (3, 3, 1), 3), random_params(&mut r, 5, 9 * 16));
    let a = ShiftLayer::new(&c_spec, &w1, &p1).unwrap();
    let b = ShiftLayer::new(&d_spec, &w2, &p2).unwrap();
    let banked = BankedFeature::new(&x8);
    let (fused, _) = fused_33_dw(&banked, a, b).unwrap();
    let (mid, _) = conv33(&banked, &w1, &p1, 2, 4).unwrap();
    let (two_step, _) = dw33_linebuffer(&mid, &w2, &p2, 1, 4).unwrap();
    assert_eq!(fused, two_step);
}

#[test]
fn fused_11_dw_peak_for_width_64() {
    let mut r = rng(64);
    let d = Dims::new(2, 8, 64);
    let x = random_qtensor(&mut r, d, 4);
    let pw_spec = layer(LayerKind::Conv11, 1, d, 2).fused();
    let dw_spec = layer(LayerKind::Dw33, 1, pw_spec.output(), 2);
    let (w1, p1) = (random_weights(&mut r, 2, (1, 1, 2), 3), MergedLayerParams::identity(2, 8));
    let (w2, p2) = (random_weights(&mut r, 2, (3, 3, 1), 3), MergedLayerParams::identity(2, 8));
    let (_, st) = fused_11_dw(
        &x,
        ShiftLayer::new(&pw_spec, &w1, &p1).unwrap(),
        ShiftLayer::new(&dw_spec, &w2, &p2).unwrap(),
    )
    .unwrap();
    assert_eq!(st.peak_intermediate, 131);
    assert_eq!(st.registers, 131);
}

#[test]
fn register_counts_for_tile_widths() {
    assert_eq!(line_buffer_registers(128), 259);
    assert_eq!(line_buffer_registers(256), 515);
}

#[test]
fn stride_two_speedup_on_256() {
    let base = linebuffer_baseline_cycles(3, 8, 256, 256);
    let jump = conv33_cycles(3, 8, 128, 128, 2);
    let ratio = base.compute as f64 / jump.compute as f64;
    assert!((3.8..=4.0).contains(&ratio), "{ratio}");
}

#[test]
fn errors_on_bad_shapes() {
    let x = QTensor::zeros(Dims::new(4, 5, 5), 4).unwrap();
    let w = random_weights(&mut rng(1), 3, (1, 1, 3), 3);
    let p = MergedLayerParams::identity(3, 8);
    assert!(conv11(&x, &w, &p, 4).is_err());
    let narrow = QTensor::zeros(Dims::new(1, 5, 2), 4).unwrap();
    let dw = random_weights(&mut rng(1), 1, (3, 3, 1), 3);
    assert!(dw33_linebuffer(&narrow, &dw, &MergedLayerParams::identity(1, 8), 1, 4).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_kernel_matches_oracle(
        c in 1usize..6, n in 1usize..6, h in 3usize..12, w in 3usize..12,
        stride in 1usize..=2, wbits in 2u8..=5, seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let x = random_qtensor(&mut r, Dims::new(c, h, w), 4);
        let w33 = random_weights(&mut r, n, (3, 3, c), wbits);
        let p = random_params(&mut r, n, 9 * c * 16);
        let (o, _) = conv33(&BankedFeature::new(&x), &w33, &p, stride, 4).unwrap();
        prop_assert_eq!(o, conv_oracle(LayerKind::Conv33, stride, &x, &w33, &p, 4));

        let w11 = random_weights(&mut r, n, (1, 1, c), wbits);
        prop_assert_eq!(conv11(&x, &w11, &p, 4).unwrap(), conv_oracle(LayerKind::Conv11, 1, &x, &w11, &p, 4));

        let wdw = random_weights(&mut r, c, (3, 3, 1), wbits);
        let pdw = random_params(&mut r, c, 9 * 16);
        let (o, _) = dw33_linebuffer(&x, &wdw, &pdw, stride, 4).unwrap();
        prop_assert_eq!(o, conv_oracle(LayerKind::Dw33, stride, &x, &wdw, &pdw, 4));
    }

    #[test]
    fn stride_two_ratio_near_four(h in 64usize..200, w in 64usize..200, c in 1usize..8, n in 1usize..16) {
        let base = linebuffer_baseline_cycles(c, n, h, w);
        let jump = conv33_cycles(c, n, conv_out(h, 2), conv_out(w, 2), 2);
        let ratio = base.compute as f64 / jump.compute as f64;
        prop_assert!((3.8..=4.0).contains(&ratio), "ratio {}", ratio);
    }

    #[test]
    fn head_outputs_stay_in_i16(c in 1usize..300, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random_qtensor(&mut r, Dims::new(c, 2, 2), 4);
        let data = (0..2 * c).map(|_| rand::Rng::random_range(&mut r, -128..=127) as i8).collect();
        let w = Int8Weights::new(2, c, 1.0, data).unwrap();
        let (o, _) = head11(&x, &w, &[i16::MAX, i16::MIN]).unwrap();
        prop_assert_eq!(o, head_oracle(&x, &w, &[i16::MAX, i16::MIN]));
    }
}
