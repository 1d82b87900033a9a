use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use shiftflow::dataflow::{layer_cost_sweep, sweep_csv, sweep_text, DataflowKind};
use shiftflow::fixq::io::{load, read_qtensor, save, write_i16_tensor, write_qtensor};
use shiftflow::fixq::{Dims, QTensor};
use shiftflow::harness::{
    compare_float, example_specs, parse_dims, peak_report, random_float_network, random_input, read_float_model,
    read_model, read_ppm, read_rtensor, run_inference, toy_specs, write_float_model, write_model, write_rtensor,
    InferenceOptions, Output, DEFAULT_WEIGHT_BUFFER,
};
use shiftflow::kernels::{ACCEL_FREQ_MHZ, LayerSpec};
use shiftflow::quantizer::{quantize_network, QuantModel, QuantizeOptions, RealTensor};
use shiftflow::sysmodel::{assign_threads, fpga_latency_ms, parse_stage_table, pipeline_throughput, StageName};
use shiftflow::tiling::{plan_tiles, register_cost_compare};

#[derive(Parser)]
#[command(name = "shiftflow", version, about = "Shift-based CNN accelerator model")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Quantize a float model with calibration inputs.
    Quantize(QuantizeArgs),
    /// Run a quantized model on the integer path.
    Run(RunArgs),
    /// Print a column-prior tile plan.
    TilePlan(TilePlanArgs),
    /// Memory-access costs of both 1x1 dataflows per layer.
    DataflowSweep(SweepArgs),
    /// Pipelined system throughput from a stage table.
    Pipeline(PipelineArgs),
    /// SQNR of a quantized model against its float source.
    Compare(CompareArgs),
    /// Write a random float model, inputs and its quantized form.
    Example(ExampleArgs),
    /// Peak GOP/s of each PE type.
    Peak(PeakArgs),
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long = "float")]
    float: PathBuf,
    /// Calibration tensors (rtensor or PPM).
    #[arg(long, required = true, num_args = 1..)]
    calib: Vec<PathBuf>,
    /// Activation width for every layer after the input.
    #[arg(long)]
    act_bits: Option<u8>,
    #[arg(long, default_value_t = 8)]
    scale_bits: u8,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    model: PathBuf,
    /// qtensor, rtensor or P6 PPM.
    #[arg(long)]
    input: PathBuf,
    /// Column buffer limit; omit to run untiled.
    #[arg(long)]
    tile_limit: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_WEIGHT_BUFFER)]
    capacity: usize,
    /// Force `os` or `ws` for every 1x1 layer.
    #[arg(long)]
    dataflow: Option<DataflowKind>,
    #[arg(long)]
    unfused: bool,
    /// Write the network outputs here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TilePlanArgs {
    /// Buffer limit in columns.
    #[arg(long)]
    limit: usize,
    #[arg(long, conflicts_with = "model")]
    width: Option<usize>,
    /// `kernel:stride` per stage, input side first.
    #[arg(long, default_value = "3:1")]
    stages: String,
    #[arg(long, requires = "layer")]
    model: Option<PathBuf>,
    /// Layer index in the model; a fused layer plans with its successor.
    #[arg(long)]
    layer: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    /// Quantized or float model; defaults to the illustrative topology.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "512,4096,65536")]
    capacities: Vec<usize>,
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct PipelineArgs {
    /// `name latency_ms threads` per line.
    #[arg(long)]
    stages: PathBuf,
    /// Reassign CPU threads greedily within this many cores.
    #[arg(long)]
    budget: Option<usize>,
    /// Replace the fpga latency with this many accelerator cycles.
    #[arg(long)]
    fpga_cycles: Option<u64>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "float")]
    float: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
}

#[derive(Args)]
struct ExampleArgs {
    #[arg(long)]
    out: PathBuf,
    /// The three-layer toy model instead of the 22-convolution topology.
    #[arg(long)]
    toy: bool,
    /// Input as CxHxW.
    #[arg(long, default_value = "3x512x512")]
    input: String,
    /// Divide every channel count by this.
    #[arg(long, default_value_t = 1)]
    width_div: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    calib: usize,
    #[arg(long)]
    act_bits: Option<u8>,
}

#[derive(Args)]
struct PeakArgs {
    #[arg(long, default_value_t = ACCEL_FREQ_MHZ)]
    freq: f64,
}

fn read_real(path: &Path) -> Result<RealTensor> {
    if path.extension().is_some_and(|e| e == "ppm") {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(read_ppm(&bytes, &path.display().to_string())?)
    } else {
        Ok(load(path, read_rtensor)?)
    }
}

fn read_input(path: &Path, model: &QuantModel) -> Result<QTensor> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm" | "rtensor") => Ok(model.quantize_input(&read_real(path)?)?),
        _ => Ok(load(path, read_qtensor)?),
    }
}

fn model_specs(path: &Path) -> Result<Vec<LayerSpec>> {
    match read_model(path) {
        Ok(m) => Ok(m.specs()),
        Err(_) => Ok(read_float_model(path)
            .with_context(|| format!("{} is neither a quantized nor a float model", path.display()))?
            .specs()),
    }
}

fn quantize(a: QuantizeArgs) -> Result<()> {
    let net = read_float_model(&a.float)?;
    let calib: Vec<RealTensor> = a.calib.iter().map(|p| read_real(p)).collect::<Result<_>>()?;
    let opts = QuantizeOptions {
        scale_bits: a.scale_bits,
        act_bits: a.act_bits,
    };
    let model = quantize_network(&net, &calib, opts)?;
    let path = write_model(&a.out, &model)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let input = read_input(&a.input, &model)?;
    let opts = InferenceOptions {
        tile_limit: a.tile_limit,
        weight_buffer_capacity: a.capacity,
        dataflow: a.dataflow,
        unfused: a.unfused,
    };
    let res = run_inference(&model, &input, &opts)?;
    print!("{res}");
    if res.real_reads != 0 {
        bail!("integer path read {} real-valued fields", res.real_reads);
    }
    if let Some(dir) = a.out {
        fs::create_dir_all(&dir)?;
        let finals = res.final_outputs();
        for (i, o) in res.outputs.iter().filter(|(_, o)| finals.contains(&o)) {
            match o {
                Output::Act(t) => save(&dir.join(format!("out{i:02}.qtensor")), |w| write_qtensor(w, t))?,
                Output::Head(t) => save(&dir.join(format!("out{i:02}.htensor")), |w| write_i16_tensor(w, t))?,
            }
        }
    }
    Ok(())
}

fn parse_stages(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|p| {
            let (k, st) = p.split_once(':').with_context(|| format!("stage {p:?} is not kernel:stride"))?;
            Ok((k.trim().parse()?, st.trim().parse()?))
        })
        .collect()
}

fn tile_plan(a: TilePlanArgs) -> Result<()> {
    let (stages, width, rows) = match (&a.model, a.layer) {
        (Some(m), Some(i)) => {
            let specs = model_specs(m)?;
            let s = specs.get(i).with_context(|| format!("model has {} layers", specs.len()))?;
            let mut st = vec![(s.kind.kernel_size(), s.stride)];
            if s.fusion == shiftflow::kernels::Fusion::IntoDw {
                let d = specs.get(i + 1).context("fused layer has no successor")?;
                st.push((d.kind.kernel_size(), d.stride));
            }
            (st, s.input.w, s.input.h)
        }
        _ => (parse_stages(&a.stages)?, a.width.context("give --width or --model/--layer")?, 1),
    };
    let plan = plan_tiles(&stages, width, rows, a.limit)?;
    print!("{plan}");
    let (row_prior, _) = register_cost_compare(width, 1);
    println!(
        "register cost {} (row-prior {}), ddr columns {}",
        plan.register_cost(),
        row_prior,
        plan.ddr_columns()
    );
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let specs = match &a.model {
        Some(p) => model_specs(p)?,
        None => example_specs(Dims::new(3, 512, 512), 1),
    };
    let rows = layer_cost_sweep(&specs, &a.capacities);
    print!("{}", if a.csv { sweep_csv(&rows) } else { sweep_text(&rows) });
    Ok(())
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let text = fs::read_to_string(&a.stages).with_context(|| format!("reading {}", a.stages.display()))?;
    let mut stages = parse_stage_table(&text, &a.stages.display().to_string())?;
    if let Some(c) = a.fpga_cycles {
        for s in stages.iter_mut().filter(|s| s.name == StageName::Fpga) {
            s.latency_ms = fpga_latency_ms(c, ACCEL_FREQ_MHZ);
        }
    }
    if let Some(b) = a.budget {
        stages = assign_threads(&stages, b)?;
    }
    print!("{}", pipeline_throughput(&stages)?);
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let net = read_float_model(&a.float)?;
    let inputs: Vec<RealTensor> = a.input.iter().map(|p| read_real(p)).collect::<Result<_>>()?;
    print!("{}", compare_float(&model, &net, &inputs)?);
    Ok(())
}

fn example(a: ExampleArgs) -> Result<()> {
    let (input, specs) = if a.toy {
        toy_specs()
    } else {
        let d = parse_dims(&a.input).with_context(|| format!("bad --input {:?}", a.input))?;
        (d, example_specs(d, a.width_div))
    };
    let net = random_float_network(input, &specs, a.seed);
    fs::create_dir_all(&a.out)?;
    write_float_model(&a.out.join("float"), &net)?;
    let calib: Vec<RealTensor> = (0..a.calib.max(1))
        .map(|k| random_input(input, a.seed.wrapping_add(1000 + k as u64)))
        .collect();
    for (k, t) in calib.iter().enumerate() {
        save(&a.out.join(format!("calib{k}.rtensor")), |w| write_rtensor(w, t))?;
    }
    let x = random_input(input, a.seed.wrapping_add(1));
    save(&a.out.join("input.rtensor"), |w| write_rtensor(w, &x))?;
    let opts = QuantizeOptions {
        act_bits: a.act_bits,
        ..QuantizeOptions::default()
    };
    let model = quantize_network(&net, &calib, opts)?;
    write_model(&a.out.join("model"), &model)?;
    let q = model.quantize_input(&x)?;
    save(&a.out.join("input.qtensor"), |w| write_qtensor(w, &q))?;
    println!("wrote {} ({} layers)", a.out.display(), specs.len());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Quantize(a) => quantize(a),
        Cmd::Run(a) => run(a),
        Cmd::TilePlan(a) => tile_plan(a),
        Cmd::DataflowSweep(a) => sweep(a),
        Cmd::Pipeline(a) => pipeline(a),
        Cmd::Compare(a) => compare(a),
        Cmd::Example(a) => example(a),
        Cmd::Peak(a) => {
            print!("{}", peak_report(a.freq));
            Ok(())
        }
    }
}
