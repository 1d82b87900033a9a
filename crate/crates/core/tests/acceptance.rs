//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero on any FAIL.

mod common;

use std::time::{Duration, Instant};

use common::*;
use rand::Rng;
use shiftflow::dataflow::{run_schedule, DataflowKind, Schedule};
use shiftflow::fixq::{audit, io as fio, shift_mac, Dims, Pow2Code, QTensor};
use shiftflow::harness::{
    compare_float, peak_report, peak_throughput, read_float_model, read_model, read_rtensor, run_inference,
    InferenceOptions, REFERENCE_ACHIEVED_GOPS,
};
use shiftflow::kernels::{
    conv33, conv33_cycles, line_buffer_registers, linebuffer_baseline_cycles, BankedFeature, LayerKind, PeConfig,
};
use shiftflow::quantizer::{
    lloyd_activation_fit, pow2_weight_fit, quantize_network, quantize_scale_vec, QuantizeOptions, RealTensor,
};
use shiftflow::sysmodel::{assign_threads, parse_stage_table, pipeline_throughput, StageSpec};
use shiftflow::tiling::{execute_tiled, plan_group, plan_tiles, register_cost_compare};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(t: Instant, limit: Duration) -> Result<(), String> {
    let el = t.elapsed();
    ensure(el < limit, format!("took {el:.2?}, limit {limit:?}"))
}

fn load_q(rel: &str) -> QTensor {
    fio::load(&fixture(rel), fio::read_qtensor).unwrap()
}

fn load_r(rel: &str) -> RealTensor {
    fio::load(&fixture(rel), read_rtensor).unwrap()
}

fn shift_mac_exact() -> Check {
    let t = Instant::now();
    let codes = Pow2Code::all(3);
    let mut cases = 0u64;
    for act in 0..=255u32 {
        for &code in &codes {
            for acc in [0i32, 1, -1, 12_345, -98_765, 1 << 20, -(1 << 20)] {
                let got = shift_mac(act, code, acc).map_err(|e| e.to_string())?;
                let want = i64::from(acc) + i64::from(act) * code.value();
                ensure(i64::from(got) == want, format!("act {act} code {code:?} acc {acc}"))?;
                cases += 1;
            }
        }
    }
    within(t, Duration::from_secs(1))?;
    Ok(format!("{cases} cases over {} codes in {:.1?}", codes.len(), t.elapsed()))
}

fn register_cost() -> Check {
    let (r256, r128) = (line_buffer_registers(256), line_buffer_registers(128));
    ensure(r256 == 515 && r128 == 259, format!("{r256} / {r128}"))?;
    ensure(register_cost_compare(256, 2) == (515, 259), "row-prior vs column-prior")?;
    let plan = plan_tiles(&[(1, 1)], 256, 256, 128).map_err(|e| e.to_string())?;
    ensure(plan.tiles.len() == 2 && plan.register_cost() == 259, format!("{plan}"))?;
    Ok(format!("W_T=256 -> {r256}, W_T=128 -> {r128}"))
}

fn halo() -> Check {
    let plan = plan_tiles(&[(1, 1), (3, 1)], 15, 4, 7).map_err(|e| e.to_string())?;
    let mid = &plan.tiles[1];
    ensure(mid.valid_cols == 5, format!("{plan}"))?;
    ensure(mid.fetched_cols() == 7, format!("{plan}"))?;
    ensure(plan_tiles(&[(1, 1), (3, 1)], 15, 4, 6).map_or(true, |p| p.max_valid() < 5), "5 valid fit in 6")?;
    // the same plan executes exactly
    let (o, x) = build(4, Dims::new(3, 4, 15), 4, 1, 1, 7);
    let g = o.group();
    let run = execute_tiled(&plan, &g, &x).map_err(|e| e.to_string())?;
    ensure(run.output == g.run(&x).map_err(|e| e.to_string())?.output, "tiled output differs")?;
    Ok(format!("5 valid columns fetch {} ({})", mid.fetched_cols(), plan.to_string().trim_end().replace('\n', "; ")))
}

fn stride2_speedup() -> Check {
    let t = Instant::now();
    let (c, n, h, w) = (3, 8, 256, 256);
    let base = linebuffer_baseline_cycles(c, n, h, w);
    let jump = conv33_cycles(c, n, h / 2, w / 2, 2);
    let ratio = base.compute as f64 / jump.compute as f64;
    ensure((3.8..=4.0).contains(&ratio), format!("ratio {ratio}"))?;
    let mut r = rng(4);
    let x = random_qtensor(&mut r, Dims::new(c, h, w), 8);
    let wt = random_weights(&mut r, n, (3, 3, c), 3);
    let p = random_params(&mut r, n, 27 * 64);
    let (out, cyc) = conv33(&BankedFeature::new(&x), &wt, &p, 2, 4).map_err(|e| e.to_string())?;
    ensure(cyc == jump, "kernel cycle count differs from the model")?;
    ensure(out == conv_oracle(LayerKind::Conv33, 2, &x, &wt, &p, 4), "stride-2 output differs from oracle")?;
    within(t, Duration::from_secs(10))?;
    Ok(format!(
        "compute {} / {} = {ratio:.4} (total incl. fill {:.4})",
        base.compute,
        jump.compute,
        base.total() as f64 / jump.total() as f64
    ))
}

fn dataflow_equivalence() -> Check {
    let t = Instant::now();
    let mut r = rng(5);
    let layers = 100;
    for i in 0..layers {
        let (c, n) = (r.random_range(1..=128), r.random_range(1..=128));
        let (h, w) = (r.random_range(1..=32), r.random_range(1..=32));
        let cap = [0, 64, 512, 4096, 1 << 20][r.random_range(0..5)];
        let x = random_qtensor(&mut r, Dims::new(c, h, w), 4);
        let wt = random_weights(&mut r, n, (1, 1, c), 3);
        let p = random_params(&mut r, n, c * 16);
        let want = conv_oracle(LayerKind::Conv11, 1, &x, &wt, &p, 4);
        for kind in DataflowKind::ALL {
            let sch = Schedule::new(kind, n, c, PeConfig::PE_11, cap);
            let (out, _) = run_schedule(&sch, &x, &wt, &p, 4).map_err(|e| e.to_string())?;
            ensure(out == want, format!("layer {i} ({c}->{n}, {h}x{w}) {kind}"))?;
        }
    }
    within(t, Duration::from_secs(60))?;
    Ok(format!("{layers} layers, OS = WS = oracle, {:.1?}", t.elapsed()))
}

fn tiling_equivalence() -> Check {
    let mut r = rng(6);
    let (mut feasible, mut fused, mut strided) = (0, 0, 0);
    let mut tried = 0;
    while feasible < 150 {
        tried += 1;
        ensure(tried < 10_000, "too few feasible pairs")?;
        let variant = r.random_range(0..5u8);
        let s1 = if variant == 1 || variant == 4 { 1 } else { r.random_range(1..=2) };
        let s2 = r.random_range(1..=2);
        let d = Dims::new(r.random_range(1..4), r.random_range(3..10), r.random_range(3..80));
        let limit = r.random_range(3..48);
        let (o, x) = build(variant, d, r.random_range(1..5), s1, s2, r.random());
        let g = o.group();
        let Ok(plan) = plan_group(&g, limit) else { continue };
        let tiled = execute_tiled(&plan, &g, &x).map_err(|e| e.to_string())?;
        let full = g.run(&x).map_err(|e| e.to_string())?;
        ensure(tiled.output == full.output, format!("variant {variant} {d} limit {limit}"))?;
        feasible += 1;
        fused += usize::from(variant >= 3);
        strided += usize::from(s1 == 2 || (variant >= 3 && s2 == 2));
    }
    ensure(fused > 0 && strided > 0, "coverage")?;
    Ok(format!("{feasible} pairs ({fused} fused, {strided} with stride 2)"))
}

fn quantizer_optimality() -> Check {
    let (xs, _) = read_samples("act_samples.txt");
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (_, ga) = grid_search(max, |a| act_error(&xs, a, 4));
    let act = lloyd_activation_fit(&xs, 4).map_err(|e| e.to_string())?;
    ensure(act.error <= ga * 1.001, format!("activation {} vs grid {ga}", act.error))?;
    ensure(non_increasing(&act.history), "activation history increases")?;

    let (ws, _) = read_samples("weight_kernel.txt");
    let wmax = ws.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let (_, gw) = grid_search(wmax, |b| pow2_error(&ws, b, 3));
    let wt = pow2_weight_fit(&ws, 3).map_err(|e| e.to_string())?;
    ensure(wt.error <= gw * 1.001, format!("weight {} vs grid {gw}", wt.error))?;
    ensure(non_increasing(&wt.history), "weight history increases")?;

    let mut r = rng(7);
    for _ in 0..500 {
        let vs: Vec<f64> = (0..r.random_range(1..10)).map(|_| r.random_range(-50.0..50.0)).collect();
        let bits = r.random_range(2..=12);
        let got = quantize_scale_vec(&vs, bits).map_err(|e| e.to_string())?;
        let (d, ms) = scale_oracle(&vs, bits);
        ensure(
            got.iter().all(|s| s.dexp() == d) && got.iter().map(|s| s.mantissa()).collect::<Vec<_>>() == ms,
            format!("scale search differs on {vs:?}"),
        )?;
    }
    Ok(format!(
        "act {:.4} vs grid {ga:.4}, weight {:.5} vs grid {gw:.5}, 500 scale vectors",
        act.error, wt.error
    ))
}

fn integer_only() -> Check {
    let model = read_model(&fixture("mini/model")).map_err(|e| e.to_string())?;
    let x = load_q("mini/input.qtensor");
    // the audit counts reads of real-valued fields
    let probe = audit::Scope::begin();
    let _ = model.input_alpha();
    ensure(probe.finish() == 1, "audit counter does not move")?;
    let opts = InferenceOptions {
        tile_limit: Some(16),
        ..Default::default()
    };
    let res = run_inference(&model, &x, &opts).map_err(|e| e.to_string())?;
    ensure(res.real_reads == 0, format!("{} real-valued reads", res.real_reads))?;
    let untiled = run_inference(&model, &x, &InferenceOptions::default()).map_err(|e| e.to_string())?;
    ensure(untiled.real_reads == 0, "untiled run reads real values")?;
    Ok(format!("{} layers, 0 real-valued reads", model.layers.len()))
}

fn throughput_model() -> Check {
    let peak = peak_throughput(PeConfig::PE_11, 215.0);
    ensure((peak - 220.16).abs() < 1e-9, format!("peak {peak}"))?;
    ensure(peak >= REFERENCE_ACHIEVED_GOPS, "reference exceeds peak")?;
    ensure(peak_report(215.0).contains("220.16"), "report")?;
    Ok(format!("PE_11 {peak:.2} GOP/s >= {REFERENCE_ACHIEVED_GOPS}"))
}

fn pipeline_model() -> Check {
    let text = std::fs::read_to_string(fixture("stages.txt")).map_err(|e| e.to_string())?;
    let stages = parse_stage_table(&text, "stages.txt").map_err(|e| e.to_string())?;
    let st = assign_threads(&stages, 12).map_err(|e| e.to_string())?;
    let fpga = st.iter().find(|s| !s.name.is_cpu()).unwrap().latency_ms;
    ensure(fpga == 37.0, "fpga stage")?;
    ensure(st.iter().filter(|s| s.name.is_cpu()).all(|s| s.effective_ms() < fpga), "cpu stage above fpga")?;
    let rep = pipeline_throughput(&st).map_err(|e| e.to_string())?;
    ensure((rep.fps - 27.0).abs() < 0.1, format!("fps {}", rep.fps))?;

    let mut r = rng(10);
    for _ in 0..500 {
        let n = r.random_range(1..8);
        let st: Vec<StageSpec> = (0..n)
            .map(|i| StageSpec::new(stages[i].name, r.random_range(0.5..100.0), r.random_range(1..5)))
            .collect();
        let a = pipeline_throughput(&st).map_err(|e| e.to_string())?;
        ensure(a.fps >= a.sequential_fps * (1.0 - 1e-12), "pipelined below sequential")?;
        let mut more = st.clone();
        more[a.bottleneck].threads += 1;
        let b = pipeline_throughput(&more).map_err(|e| e.to_string())?;
        ensure(b.fps >= a.fps, "extra bottleneck thread lowered fps")?;
    }
    Ok(format!("fps {:.2}, 500 random pipelines", rep.fps))
}

fn substituted_properties() -> Check {
    let float = read_float_model(&fixture("toy/float")).map_err(|e| e.to_string())?;
    let calib = [load_r("toy/calib0.rtensor"), load_r("toy/calib1.rtensor")];
    let input = load_r("toy/input.rtensor");
    let mut db = Vec::new();
    for m in [2, 3, 4, 8] {
        let opts = QuantizeOptions {
            act_bits: Some(m),
            ..Default::default()
        };
        let model = quantize_network(&float, &calib, opts).map_err(|e| e.to_string())?;
        db.push(compare_float(&model, &float, std::slice::from_ref(&input)).map_err(|e| e.to_string())?.end_to_end.db());
    }
    ensure(db.windows(2).all(|w| w[1] > w[0]), format!("SQNR {db:?}"))?;

    let (xs, _) = read_samples("act_samples.txt");
    let errs: Vec<f64> = (1..=8).map(|m| lloyd_activation_fit(&xs, m).unwrap().error).collect();
    ensure(non_increasing(&errs), format!("activation error {errs:?}"))?;
    let (ws, _) = read_samples("weight_kernel.txt");
    let werrs: Vec<f64> = (2..=7).map(|n| pow2_weight_fit(&ws, n).unwrap().error).collect();
    ensure(non_increasing(&werrs), format!("weight error {werrs:?}"))?;

    let model = read_model(&fixture("mini/model")).map_err(|e| e.to_string())?;
    let x = load_q("mini/input.qtensor");
    let fused = run_inference(&model, &x, &InferenceOptions::default()).map_err(|e| e.to_string())?;
    let unfused_opts = InferenceOptions {
        unfused: true,
        ..Default::default()
    };
    let unfused = run_inference(&model, &x, &unfused_opts).map_err(|e| e.to_string())?;
    ensure(fused.final_outputs() == unfused.final_outputs(), "fused and unfused differ")?;
    let again = run_inference(&model, &x, &InferenceOptions::default()).map_err(|e| e.to_string())?;
    ensure(again.output_hash() == fused.output_hash() && again.outputs == fused.outputs, "runs differ")?;
    let db: Vec<String> = db.iter().map(|d| format!("{d:.1}")).collect();
    Ok(format!("SQNR dB at M=2,3,4,8: {}; fused = unfused; deterministic", db.join(", ")))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("shift-MAC exactness", shift_mac_exact),
        ("register cost", register_cost),
        ("halo columns", halo),
        ("stride-2 speedup", stride2_speedup),
        ("dataflow equivalence", dataflow_equivalence),
        ("tiling equivalence", tiling_equivalence),
        ("quantizer optimality", quantizer_optimality),
        ("integer-only inference", integer_only),
        ("throughput model", throughput_model),
        ("pipeline model", pipeline_model),
        ("substituted accuracy properties", substituted_properties),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Ok(Err(why)) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
            Err(_) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: panicked", i + 1);
            }
        }
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
