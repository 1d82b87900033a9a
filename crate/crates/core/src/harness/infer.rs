use std::fmt::{self, Write as _};

use sha2::{Digest, Sha256};

use crate::dataflow::{choose_dataflow, run_schedule, CostReport, DataflowKind, Schedule};
use crate::error::{Error, Result};
use crate::fixq::{audit, I16Tensor, QTensor};
use crate::kernels::{
    head11, CycleCount, Fusion, LayerGroup, LayerKind, PeConfig, RegionRun, ShiftLayer, ACCEL_FREQ_MHZ,
};
use crate::quantizer::{LayerBody, QuantModel};
use crate::sysmodel::fpga_latency_ms;
use crate::tiling::{execute_tiled_with, plan_tiles};

/// Weight-buffer entries assumed when none is given.
pub const DEFAULT_WEIGHT_BUFFER: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InferenceOptions {
    /// Column buffer limit for tiling; `None` runs every layer as one tile.
    pub tile_limit: Option<usize>,
    pub weight_buffer_capacity: usize,
    /// Force one dataflow for every 1x1 layer instead of the hybrid policy.
    pub dataflow: Option<DataflowKind>,
    /// Run fused pairs as two separate layers.
    pub unfused: bool,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        InferenceOptions {
            tile_limit: None,
            weight_buffer_capacity: DEFAULT_WEIGHT_BUFFER,
            dataflow: None,
            unfused: false,
        }
    }
}

/// A materialised layer output.
#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Act(QTensor),
    Head(I16Tensor),
}

impl Output {
    fn hash_into(&self, h: &mut Sha256) {
        match self {
            Output::Act(t) => {
                let d = t.dims();
                h.update(format!("act {} {} {} {}\n", d.c, d.h, d.w, t.bits()));
                h.update(t.data());
            }
            Output::Head(t) => {
                let d = t.dims();
                h.update(format!("head {} {} {}\n", d.c, d.h, d.w));
                for v in t.data() {
                    h.update(v.to_le_bytes());
                }
            }
        }
    }
}

/// Execution record of one accelerator pass (a layer or a fused pair).
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub first: usize,
    pub last: usize,
    pub label: String,
    pub cycles: CycleCount,
    pub dataflow: Option<DataflowKind>,
    pub cost: Option<CostReport>,
    pub tiles: usize,
    pub ddr_columns: usize,
    pub peak_intermediate: usize,
    pub saturations: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub steps: Vec<StepReport>,
    /// `(layer index, output)` for every materialised output, in order.
    pub outputs: Vec<(usize, Output)>,
    pub cycles: CycleCount,
    /// Summed 1x1 dataflow costs.
    pub cost: CostReport,
    /// Real-valued reads observed while the integer path ran.
    pub real_reads: u64,
}

impl InferenceResult {
    pub fn output(&self, layer: usize) -> Option<&Output> {
        self.outputs.iter().find(|(i, _)| *i == layer).map(|(_, o)| o)
    }

    /// Network outputs: every head, or the last layer when there are none.
    pub fn final_outputs(&self) -> Vec<&Output> {
        let heads: Vec<&Output> = self
            .outputs
            .iter()
            .filter(|(_, o)| matches!(o, Output::Head(_)))
            .map(|(_, o)| o)
            .collect();
        if heads.is_empty() {
            self.outputs.last().map(|(_, o)| o).into_iter().collect()
        } else {
            heads
        }
    }

    /// SHA-256 over the final outputs' dims and integer payloads.
    pub fn output_hash(&self) -> String {
        let mut h = Sha256::new();
        for o in self.final_outputs() {
            o.hash_into(&mut h);
        }
        hex::encode(h.finalize())
    }

    pub fn latency_ms(&self) -> f64 {
        fpga_latency_ms(self.cycles.total(), ACCEL_FREQ_MHZ)
    }
}

enum Step<'a> {
    Group { first: usize, last: usize, group: LayerGroup<'a> },
    Head(usize),
}

fn shift_layer(model: &QuantModel, i: usize) -> Result<ShiftLayer<'_>> {
    let l = &model.layers[i];
    match &l.body {
        LayerBody::Shift { weights, params } => ShiftLayer::new(&l.spec, weights, params).map_err(|e| e.in_layer(i)),
        LayerBody::Head { .. } => Err(Error::arg("head layer inside the backbone").in_layer(i)),
    }
}

fn steps(model: &QuantModel, unfused: bool) -> Result<Vec<Step<'_>>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < model.layers.len() {
        let spec = &model.layers[i].spec;
        if spec.kind == LayerKind::Head11 {
            out.push(Step::Head(i));
            i += 1;
        } else if spec.fusion == Fusion::IntoDw && !unfused {
            if i + 1 >= model.layers.len() {
                return Err(Error::arg("fused layer has no depthwise successor").in_layer(i));
            }
            let group = LayerGroup::fused(shift_layer(model, i)?, shift_layer(model, i + 1)?).map_err(|e| e.in_layer(i))?;
            out.push(Step::Group { first: i, last: i + 1, group });
            i += 2;
        } else {
            out.push(Step::Group {
                first: i,
                last: i,
                group: LayerGroup::Single(shift_layer(model, i)?),
            });
            i += 1;
        }
    }
    Ok(out)
}

fn run_group(group: &LayerGroup, input: &QTensor, opts: &InferenceOptions, label: String, first: usize, last: usize) -> Result<(QTensor, StepReport)> {
    let d = group.input();
    let plan = plan_tiles(&group.stages(), d.w, d.h, opts.tile_limit.unwrap_or(usize::MAX))?;
    let mut cost: Option<CostReport> = None;
    let mut dataflow = None;
    let run = match group {
        LayerGroup::Single(l) if l.spec.kind == LayerKind::Conv11 => {
            let kind = opts
                .dataflow
                .unwrap_or_else(|| choose_dataflow(d.c, PeConfig::PE_11, opts.weight_buffer_capacity));
            dataflow = Some(kind);
            let sch = Schedule::new(kind, l.spec.kernels, d.c, PeConfig::PE_11, opts.weight_buffer_capacity);
            let total = cost.get_or_insert_with(CostReport::default);
            execute_tiled_with(&plan, input, |slab, window, cols| {
                let part = slab.columns(cols.start - window.col0, cols.end - window.col0)?;
                let (output, c) = run_schedule(&sch, &part, l.weights, l.params, l.out_bits())?;
                *total += c;
                Ok(RegionRun {
                    output,
                    cycles: CycleCount::new(c.compute_cycles, 0),
                    peak_intermediate: 0,
                    line_buffer_registers: 0,
                })
            })?
        }
        _ => execute_tiled_with(&plan, input, |slab, window, cols| group.run_region(slab, window, cols))?,
    };
    let report = StepReport {
        first,
        last,
        label,
        cycles: run.cycles,
        dataflow,
        cost,
        tiles: plan.tiles.len(),
        ddr_columns: run.ddr_columns(),
        peak_intermediate: run.peak_intermediate,
        saturations: 0,
    };
    Ok((run.output, report))
}

/// Run every layer of `model` on the integer path: tiling, dataflow
/// schedules for 1x1 layers, and the PE models.
///
/// Nothing on this path reads a real-valued field; the audit counter is
/// checked around it and reported in [`InferenceResult::real_reads`]. Output
/// scales are attached afterwards.
pub fn run_inference(model: &QuantModel, input: &QTensor, opts: &InferenceOptions) -> Result<InferenceResult> {
    if input.dims() != model.input || input.bits() > model.input_bits {
        return Err(Error::dim(format!(
            "model takes {}-bit {}, got {}-bit {}",
            model.input_bits,
            model.input,
            input.bits(),
            input.dims()
        )));
    }
    let steps = steps(model, opts.unfused)?;
    let sources = model.sources();
    let scope = audit::Scope::begin();
    let mut outputs: Vec<(usize, Output)> = Vec::new();
    let mut reports = Vec::with_capacity(steps.len());
    let mut last_act: Option<usize> = None;
    for step in &steps {
        match step {
            Step::Group { first, last, group } => {
                let x = match sources[*first] {
                    None => input,
                    Some(j) => match outputs.iter().rev().find(|(i, _)| *i == j) {
                        Some((_, Output::Act(t))) => t,
                        _ => return Err(Error::arg("layer input was not materialised").in_layer(*first)),
                    },
                };
                let label = match group {
                    LayerGroup::Single(l) => l.spec.kind.to_string(),
                    LayerGroup::Fused(a, b) => format!("{}+{}", a.spec.kind, b.spec.kind),
                };
                let (out, rep) = run_group(group, x, opts, label, *first, *last).map_err(|e| e.in_layer(*first))?;
                outputs.push((*last, Output::Act(out)));
                last_act = Some(outputs.len() - 1);
                reports.push(rep);
            }
            Step::Head(i) => {
                let LayerBody::Head { weights, bias } = &model.layers[*i].body else {
                    return Err(Error::arg("head11 layer without int8 weights").in_layer(*i));
                };
                let x = match last_act {
                    None => input,
                    Some(j) => match &outputs[j].1 {
                        Output::Act(t) => t,
                        Output::Head(_) => unreachable!(),
                    },
                };
                let (out, st) = head11(x, weights, bias).map_err(|e| e.in_layer(*i))?;
                outputs.push((*i, Output::Head(out)));
                reports.push(StepReport {
                    first: *i,
                    last: *i,
                    label: LayerKind::Head11.to_string(),
                    cycles: st.cycles,
                    dataflow: None,
                    cost: None,
                    tiles: 1,
                    ddr_columns: model.layers[*i].spec.input.w,
                    peak_intermediate: 0,
                    saturations: st.saturations,
                });
            }
        }
    }
    let real_reads = scope.finish();
    let outputs = outputs
        .into_iter()
        .map(|(i, o)| {
            let alpha = model.layers[i].alpha_out();
            let o = match o {
                Output::Act(t) => Output::Act(t.with_scale(alpha)),
                Output::Head(t) => Output::Head(t.with_scale(alpha)),
            };
            (i, o)
        })
        .collect();
    let mut cycles = CycleCount::default();
    let mut cost = CostReport::default();
    for r in &reports {
        cycles += r.cycles;
        if let Some(c) = r.cost {
            cost += c;
        }
    }
    Ok(InferenceResult {
        steps: reports,
        outputs,
        cycles,
        cost,
        real_reads,
    })
}

impl fmt::Display for InferenceResult {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        writeln!(
            f,
            "{:<8} {:<12} {:>5} {:>6} {:>12} {:>10} {:>8} {:>5}",
            "layers", "pe", "tiles", "ddr", "cycles", "dataflow", "peak_mid", "sat"
        )?;
        for s in &self.steps {
            let layers = if s.first == s.last { s.first.to_string() } else { format!("{}-{}", s.first, s.last) };
            let df = s.dataflow.map_or("-", DataflowKind::short);
            writeln!(
                f,
                "{layers:<8} {:<12} {:>5} {:>6} {:>12} {df:>10} {:>8} {:>5}",
                s.label,
                s.tiles,
                s.ddr_columns,
                s.cycles.total(),
                s.peak_intermediate,
                s.saturations
            )?;
        }
        let mut tail = String::new();
        let _ = writeln!(
            tail,
            "cycles {} (compute {}, fill {}), {:.3} ms at {} MHz",
            self.cycles.total(),
            self.cycles.compute,
            self.cycles.fill,
            self.latency_ms(),
            ACCEL_FREQ_MHZ
        );
        let c = &self.cost;
        let _ = writeln!(
            tail,
            "1x1 traffic: wram {} iaram {} oaram {} inter r/w {}/{}",
            c.wram_weight_reads, c.iaram_act_reads, c.oaram_writes, c.inter_ram_reads, c.inter_ram_writes
        );
        let _ = writeln!(tail, "real-valued reads on the integer path: {}", self.real_reads);
        let _ = writeln!(tail, "output sha256 {}", self.output_hash());
        f.write_str(&tail)
    }
}
