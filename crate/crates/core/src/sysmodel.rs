//! Throughput model of the pipelined CPU/FPGA detection system.
//!
//! Each stage processes one frame in `latency_ms` on one thread; a stage
//! with `t` threads sustains `t / latency` frames per millisecond. In a
//! pipeline the slowest stage sets the frame rate.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};

/// The functional layers of the system, in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageName {
    DataForward,
    Encode,
    Fpga,
    Decode,
    MboxConfReshape,
    MboxConfSoftmax,
    MboxConfFlatten,
    DetectionVisualize,
}

impl StageName {
    pub const ALL: [StageName; 8] = [
        StageName::DataForward,
        StageName::Encode,
        StageName::Fpga,
        StageName::Decode,
        StageName::MboxConfReshape,
        StageName::MboxConfSoftmax,
        StageName::MboxConfFlatten,
        StageName::DetectionVisualize,
    ];

    pub const fn as_str(self) -> &'static str {
        match self {
            StageName::DataForward => "data-forward",
            StageName::Encode => "encode",
            StageName::Fpga => "fpga",
            StageName::Decode => "decode",
            StageName::MboxConfReshape => "mbox-conf-reshape",
            StageName::MboxConfSoftmax => "mbox-conf-softmax",
            StageName::MboxConfFlatten => "mbox-conf-flatten",
            StageName::DetectionVisualize => "detection-visualize",
        }
    }

    pub const fn is_cpu(self) -> bool {
        !matches!(self, StageName::Fpga)
    }

    /// "pre-processing", "accelerator" or "post-processing".
    pub const fn phase(self) -> &'static str {
        match self {
            StageName::DataForward | StageName::Encode => "pre-processing",
            StageName::Fpga => "accelerator",
            _ => "post-processing",
        }
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StageName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::arg(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageSpec {
    pub name: StageName,
    /// Single-thread latency per frame.
    pub latency_ms: f64,
    pub threads: usize,
}

impl StageSpec {
    pub fn new(name: StageName, latency_ms: f64, threads: usize) -> Self {
        StageSpec {
            name,
            latency_ms,
            threads,
        }
    }

    /// Frames per second this stage sustains.
    pub fn rate(&self) -> f64 {
        self.threads as f64 * 1000.0 / self.latency_ms
    }

    /// Per-frame latency with all threads working.
    pub fn effective_ms(&self) -> f64 {
        self.latency_ms / self.threads as f64
    }
}

/// FPGA stage latency for `cycles` at `freq_mhz`.
pub fn fpga_latency_ms(cycles: u64, freq_mhz: f64) -> f64 {
    cycles as f64 / (freq_mhz * 1e3)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub stages: Vec<StageSpec>,
    pub fps: f64,
    pub sequential_fps: f64,
    /// Index of the slowest stage (first on ties).
    pub bottleneck: usize,
    /// Fraction of time each stage is busy at the pipeline rate.
    pub utilization: Vec<f64>,
}

fn check(stages: &[StageSpec]) -> Result<()> {
    if stages.is_empty() {
        return Err(Error::arg("no stages"));
    }
    for s in stages {
        if !(s.latency_ms.is_finite() && s.latency_ms > 0.0) {
            return Err(Error::arg(format!("stage {} has latency {} ms", s.name, s.latency_ms)));
        }
        if s.threads == 0 {
            return Err(Error::arg(format!("stage {} has no threads", s.name)));
        }
    }
    Ok(())
}

fn slowest(stages: &[StageSpec], filter: impl Fn(&StageSpec) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in stages.iter().enumerate().filter(|(_, s)| filter(s)) {
        if best.is_none_or(|b| s.rate() < stages[b].rate()) {
            best = Some(i);
        }
    }
    best
}

pub fn pipeline_throughput(stages: &[StageSpec]) -> Result<PipelineReport> {
    check(stages)?;
    let bottleneck = slowest(stages, |_| true).expect("non-empty");
    let fps = stages[bottleneck].rate();
    let total_ms: f64 = stages.iter().map(|s| s.latency_ms).sum();
    Ok(PipelineReport {
        stages: stages.to_vec(),
        fps,
        sequential_fps: 1000.0 / total_ms,
        bottleneck,
        utilization: stages.iter().map(|s| fps / s.rate()).collect(),
    })
}

/// Give every CPU stage one thread, then hand the rest of `core_budget` one
/// at a time to the slowest CPU stage (earliest on ties). The FPGA stage
/// keeps its thread count.
pub fn assign_threads(stages: &[StageSpec], core_budget: usize) -> Result<Vec<StageSpec>> {
    if core_budget == 0 {
        return Err(Error::arg("core budget of 0 threads"));
    }
    let mut out: Vec<StageSpec> = stages
        .iter()
        .map(|s| StageSpec {
            threads: if s.name.is_cpu() { 1 } else { s.threads.max(1) },
            ..*s
        })
        .collect();
    check(&out)?;
    let cpu = out.iter().filter(|s| s.name.is_cpu()).count();
    for _ in 0..core_budget.saturating_sub(cpu) {
        match slowest(&out, |s| s.name.is_cpu()) {
            Some(i) => out[i].threads += 1,
            None => break,
        }
    }
    Ok(out)
}

/// Parse `name latency_ms threads` lines; `#` starts a comment.
pub fn parse_stage_table(text: &str, file: &str) -> Result<Vec<StageSpec>> {
    let mut stages = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let [name, lat, threads] = f[..] else {
            return Err(Error::parse(file, i + 1, "expected `name latency_ms threads`"));
        };
        let name = name.parse().map_err(|e| Error::parse(file, i + 1, e))?;
        let latency_ms = lat
            .parse()
            .map_err(|_| Error::parse(file, i + 1, format!("bad latency {lat:?}")))?;
        let threads = threads
            .parse()
            .map_err(|_| Error::parse(file, i + 1, format!("bad thread count {threads:?}")))?;
        stages.push(StageSpec::new(name, latency_ms, threads));
    }
    check(&stages).map_err(|e| Error::parse(file, 0, e))?;
    Ok(stages)
}

pub fn format_stage_table(stages: &[StageSpec]) -> String {
    stages
        .iter()
        .map(|s| format!("{} {} {}\n", s.name, s.latency_ms, s.threads))
        .collect()
}

impl fmt::Display for PipelineReport {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        let mut phase = "";
        for (i, s) in self.stages.iter().enumerate() {
            if s.name.phase() != phase {
                phase = s.name.phase();
                writeln!(f, "{phase}:")?;
            }
            let mark = if i == self.bottleneck { "  <- bottleneck" } else { "" };
            writeln!(
                f,
                "  {:<20} {:>8.2} ms x{} -> {:>8.2} ms/frame  util {:>5.1}%{mark}",
                s.name.as_str(),
                s.latency_ms,
                s.threads,
                s.effective_ms(),
                100.0 * self.utilization[i],
            )?;
        }
        let mut totals = String::new();
        for p in ["pre-processing", "accelerator", "post-processing"] {
            let ms: f64 = self.stages.iter().filter(|s| s.name.phase() == p).map(|s| s.latency_ms).sum();
            let _ = write!(totals, " {p} {ms:.2} ms;");
        }
        writeln!(f, "single-thread totals:{}", totals.trim_end_matches(';'))?;
        writeln!(f, "sequential fps {:.2}", self.sequential_fps)?;
        writeln!(f, "pipelined fps {:.2}", self.fps)
    }
}
