//! Output-stationary and weight-stationary schedules for 1x1 layers, with
//! instrumented memory-access counts.
//!
//! Buffer levels: WRAM holds all weights of a layer; the weight buffer
//! holds weights next to the PE array; IARAM/OARAM hold input and output
//! activations; Inter RAM holds 32-bit partial sums that leave the PEs.

use std::fmt::{self, Write as _};
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fixq::{requantize, shift_mac, Dims, Pow2Weights, QTensor};
use crate::kernels::{LayerKind, LayerSpec, PeConfig};
use crate::quantizer::MergedLayerParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DataflowKind {
    OutputStationary,
    WeightStationary,
}

impl DataflowKind {
    pub const ALL: [DataflowKind; 2] = [DataflowKind::OutputStationary, DataflowKind::WeightStationary];

    pub const fn short(self) -> &'static str {
        match self {
            DataflowKind::OutputStationary => "os",
            DataflowKind::WeightStationary => "ws",
        }
    }
}

impl fmt::Display for DataflowKind {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(match self {
            DataflowKind::OutputStationary => "output_stationary",
            DataflowKind::WeightStationary => "weight_stationary",
        })
    }
}

impl FromStr for DataflowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "os" | "output_stationary" => Ok(DataflowKind::OutputStationary),
            "ws" | "weight_stationary" => Ok(DataflowKind::WeightStationary),
            _ => Err(Error::arg(format!("unknown dataflow {s:?}"))),
        }
    }
}

/// Sequential loop variables; the `K_T x C_T` parallel loops sit inside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LoopVar {
    H,
    W,
    Nk,
    Nc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub kind: DataflowKind,
    /// Outer to inner.
    pub order: [LoopVar; 4],
    pub k_t: usize,
    pub c_t: usize,
    pub n_k: usize,
    pub n_c: usize,
    /// Weight-buffer entries available to the schedule.
    pub weight_buffer_capacity: usize,
}

impl Schedule {
    pub fn new(kind: DataflowKind, n: usize, c: usize, pe: PeConfig, weight_buffer_capacity: usize) -> Self {
        let order = match kind {
            DataflowKind::OutputStationary => [LoopVar::H, LoopVar::W, LoopVar::Nk, LoopVar::Nc],
            DataflowKind::WeightStationary => [LoopVar::Nk, LoopVar::Nc, LoopVar::H, LoopVar::W],
        };
        Schedule {
            kind,
            order,
            k_t: pe.k_t,
            c_t: pe.c_t,
            n_k: n.div_ceil(pe.k_t),
            n_c: c.div_ceil(pe.c_t),
            weight_buffer_capacity,
        }
    }
}

/// Access counts of one layer execution, in elements.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CostReport {
    pub wram_weight_reads: u64,
    pub weight_buffer_reads: u64,
    pub iaram_act_reads: u64,
    pub oaram_writes: u64,
    pub inter_ram_reads: u64,
    pub inter_ram_writes: u64,
    pub inter_ram_peak_entries: u64,
    pub weight_buffer_required_entries: u64,
    pub compute_cycles: u64,
    /// Activation operands consumed by MACs.
    pub mac_act_operands: u64,
    /// Weight operands consumed by MACs.
    pub mac_weight_operands: u64,
}

impl CostReport {
    /// WRAM, IARAM, OARAM and Inter RAM accesses.
    pub fn on_chip_traffic(&self) -> u64 {
        self.wram_weight_reads + self.iaram_act_reads + self.oaram_writes + self.inter_ram_reads + self.inter_ram_writes
    }
}

impl Add for CostReport {
    type Output = CostReport;

    /// Counts add up; peaks and buffer requirements take the maximum.
    fn add(self, o: CostReport) -> CostReport {
        CostReport {
            wram_weight_reads: self.wram_weight_reads + o.wram_weight_reads,
            weight_buffer_reads: self.weight_buffer_reads + o.weight_buffer_reads,
            iaram_act_reads: self.iaram_act_reads + o.iaram_act_reads,
            oaram_writes: self.oaram_writes + o.oaram_writes,
            inter_ram_reads: self.inter_ram_reads + o.inter_ram_reads,
            inter_ram_writes: self.inter_ram_writes + o.inter_ram_writes,
            inter_ram_peak_entries: self.inter_ram_peak_entries.max(o.inter_ram_peak_entries),
            weight_buffer_required_entries: self
                .weight_buffer_required_entries
                .max(o.weight_buffer_required_entries),
            compute_cycles: self.compute_cycles + o.compute_cycles,
            mac_act_operands: self.mac_act_operands + o.mac_act_operands,
            mac_weight_operands: self.mac_weight_operands + o.mac_weight_operands,
        }
    }
}

impl AddAssign for CostReport {
    fn add_assign(&mut self, o: CostReport) {
        *self = *self + o;
    }
}

fn group(g: usize, t: usize, total: usize) -> std::ops::Range<usize> {
    g * t..((g + 1) * t).min(total)
}

/// Execute a 1x1 layer under `sch`, counting every buffer access.
///
/// Output stationary keeps the first `min(capacity, n·c)` weights resident
/// after one WRAM fetch and streams the rest from WRAM for every pixel.
/// Weight stationary fetches each `K_T x C_T` weight block once and parks
/// every partial sum in Inter RAM until the last channel group is done.
pub fn run_schedule(
    sch: &Schedule,
    input: &QTensor,
    weights: &Pow2Weights,
    params: &MergedLayerParams,
    out_bits: u8,
) -> Result<(QTensor, CostReport)> {
    let d = input.dims();
    let (n, c) = (weights.kernels(), d.c);
    if weights.kernel_shape() != (1, 1, c) || params.len() != n {
        return Err(Error::dim(format!(
            "1x1 schedule needs {n} kernels of 1x1x{c}, got {:?} and {} scale pairs",
            weights.kernel_shape(),
            params.len()
        )));
    }
    if sch.n_k != n.div_ceil(sch.k_t) || sch.n_c != c.div_ceil(sch.c_t) {
        return Err(Error::dim("schedule tile counts do not match the layer"));
    }
    let plane = d.h * d.w;
    let act = |ch: usize, p: usize| u32::from(input.data()[ch * plane + p]);
    let mut out = vec![0u8; n * plane];
    let mut r = CostReport {
        compute_cycles: (plane * sch.n_k * sch.n_c) as u64,
        ..CostReport::default()
    };
    match sch.kind {
        DataflowKind::OutputStationary => {
            let resident = sch.weight_buffer_capacity.min(n * c);
            r.wram_weight_reads = resident as u64;
            r.weight_buffer_required_entries = (n * c) as u64;
            let mut psum = vec![0i32; sch.k_t];
            for p in 0..plane {
                for kg in 0..sch.n_k {
                    let ks = group(kg, sch.k_t, n);
                    psum.iter_mut().for_each(|s| *s = 0);
                    for cg in 0..sch.n_c {
                        for ch in group(cg, sch.c_t, c) {
                            let a = act(ch, p);
                            r.iaram_act_reads += 1;
                            for (j, k) in ks.clone().enumerate() {
                                if k * c + ch >= resident {
                                    r.wram_weight_reads += 1;
                                }
                                r.weight_buffer_reads += 1;
                                r.mac_act_operands += 1;
                                r.mac_weight_operands += 1;
                                psum[j] = shift_mac(a, weights.code(k, ch, 0, 0), psum[j])?;
                            }
                        }
                    }
                    for (j, k) in ks.enumerate() {
                        out[k * plane + p] = requantize(psum[j], params.a()[k], params.b()[k], out_bits) as u8;
                        r.oaram_writes += 1;
                    }
                }
            }
        }
        DataflowKind::WeightStationary => {
            r.weight_buffer_required_entries = (sch.k_t * sch.c_t) as u64;
            for kg in 0..sch.n_k {
                let ks = group(kg, sch.k_t, n);
                let kn = ks.len();
                let mut inter = vec![0i32; plane * kn];
                r.inter_ram_peak_entries = r.inter_ram_peak_entries.max(inter.len() as u64);
                for cg in 0..sch.n_c {
                    let cs = group(cg, sch.c_t, c);
                    r.wram_weight_reads += (kn * cs.len()) as u64;
                    for p in 0..plane {
                        let mut psum = vec![0i32; kn];
                        if cg > 0 {
                            psum.copy_from_slice(&inter[p * kn..(p + 1) * kn]);
                            r.inter_ram_reads += kn as u64;
                        }
                        for ch in cs.clone() {
                            let a = act(ch, p);
                            r.iaram_act_reads += 1;
                            for (j, k) in ks.clone().enumerate() {
                                r.weight_buffer_reads += 1;
                                r.mac_act_operands += 1;
                                r.mac_weight_operands += 1;
                                psum[j] = shift_mac(a, weights.code(k, ch, 0, 0), psum[j])?;
                            }
                        }
                        inter[p * kn..(p + 1) * kn].copy_from_slice(&psum);
                        r.inter_ram_writes += kn as u64;
                    }
                }
                for p in 0..plane {
                    for (j, k) in ks.clone().enumerate() {
                        let s = inter[p * kn + j];
                        r.inter_ram_reads += 1;
                        out[k * plane + p] = requantize(s, params.a()[k], params.b()[k], out_bits) as u8;
                        r.oaram_writes += 1;
                    }
                }
            }
        }
    }
    Ok((QTensor::new(Dims::new(n, d.h, d.w), out_bits, out)?, r))
}

/// The counts [`run_schedule`] would report, computed in closed form.
pub fn trace_schedule(sch: &Schedule, h: usize, w: usize, n: usize, c: usize) -> CostReport {
    let hw = (h * w) as u64;
    let (n64, c64) = (n as u64, c as u64);
    let nc = n64 * c64;
    let (nk, ncg) = (sch.n_k as u64, sch.n_c as u64);
    let mut r = CostReport {
        weight_buffer_reads: hw * nc,
        iaram_act_reads: hw * nk * c64,
        oaram_writes: hw * n64,
        compute_cycles: hw * nk * ncg,
        mac_act_operands: hw * nc,
        mac_weight_operands: hw * nc,
        ..CostReport::default()
    };
    match sch.kind {
        DataflowKind::OutputStationary => {
            let resident = (sch.weight_buffer_capacity as u64).min(nc);
            r.wram_weight_reads = resident + (nc - resident) * hw;
            r.weight_buffer_required_entries = nc;
        }
        DataflowKind::WeightStationary => {
            r.wram_weight_reads = nc;
            r.inter_ram_writes = hw * n64 * ncg;
            r.inter_ram_reads = hw * n64 * ncg;
            r.inter_ram_peak_entries = hw * (sch.k_t.min(n) as u64);
            r.weight_buffer_required_entries = (sch.k_t * sch.c_t) as u64;
        }
    }
    r
}

/// Output stationary when one kernel group's weights (`K_T · c` codes) fit
/// the weight buffer, boundary inclusive; weight stationary otherwise.
pub fn choose_dataflow(c: usize, pe: PeConfig, capacity: usize) -> DataflowKind {
    if pe.k_t * c <= capacity {
        DataflowKind::OutputStationary
    } else {
        DataflowKind::WeightStationary
    }
}

/// One row of a cost sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub layer: usize,
    pub spec: LayerSpec,
    pub capacity: usize,
    pub kind: DataflowKind,
    /// Whether [`choose_dataflow`] picks this kind.
    pub chosen: bool,
    pub report: CostReport,
}

/// Cost of both schedules for every 1x1 backbone layer at every capacity.
pub fn layer_cost_sweep(specs: &[LayerSpec], capacities: &[usize]) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for (i, s) in specs.iter().enumerate() {
        if s.kind != LayerKind::Conv11 {
            continue;
        }
        let d = s.input;
        for &cap in capacities {
            let chosen = choose_dataflow(d.c, PeConfig::PE_11, cap);
            for kind in DataflowKind::ALL {
                let sch = Schedule::new(kind, s.kernels, d.c, PeConfig::PE_11, cap);
                rows.push(SweepRow {
                    layer: i,
                    spec: *s,
                    capacity: cap,
                    kind,
                    chosen: kind == chosen,
                    report: trace_schedule(&sch, d.h, d.w, s.kernels, d.c),
                });
            }
        }
    }
    rows
}

const COLUMNS: [&str; 14] = [
    "layer", "dims", "n", "capacity", "dataflow", "chosen", "wram", "wbuf", "iaram", "oaram", "inter_r", "inter_w",
    "inter_peak", "cycles",
];

fn fields(r: &SweepRow) -> [String; 14] {
    let c = &r.report;
    [
        r.layer.to_string(),
        r.spec.input.to_string(),
        r.spec.kernels.to_string(),
        r.capacity.to_string(),
        r.kind.short().to_string(),
        if r.chosen { "*".into() } else { String::new() },
        c.wram_weight_reads.to_string(),
        c.weight_buffer_reads.to_string(),
        c.iaram_act_reads.to_string(),
        c.oaram_writes.to_string(),
        c.inter_ram_reads.to_string(),
        c.inter_ram_writes.to_string(),
        c.inter_ram_peak_entries.to_string(),
        c.compute_cycles.to_string(),
    ]
}

/// Aligned-column text table.
pub fn sweep_text(rows: &[SweepRow]) -> String {
    let cells: Vec<[String; 14]> = rows.iter().map(fields).collect();
    let mut width = COLUMNS.map(str::len);
    for row in &cells {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |items: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = items.zip(width).map(|(s, w)| format!("{s:>w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut COLUMNS.iter().copied());
    for row in &cells {
        line(&mut row.iter().map(String::as_str));
    }
    out
}

/// Comma-separated rows with a header line.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let mut f = fields(r);
        f[5] = u8::from(r.chosen).to_string();
        out.push_str(&f.join(","));
        out.push('\n');
    }
    out
}
