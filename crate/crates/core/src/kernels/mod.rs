//! Functional models of the processing elements.
//!
//! Every kernel is bit-exact: it produces the same integers the hardware
//! would, and reports a coarse cycle count alongside. Kernels only touch
//! integer fields (codes, mantissas, activation bytes).

mod banked;
mod conv;
mod fused;
mod head;
mod layer;
mod linebuffer;
mod region;

pub use banked::BankedFeature;
pub use conv::{conv11, conv11_cycles, conv33, conv33_cycles, linebuffer_baseline_cycles};
pub use fused::{fused_11_dw, fused_33_dw, FusedStats};
pub use head::{head11, HeadStats};
pub use layer::{
    check_chain, conv_out, Fusion, LayerKind, LayerSpec, PeConfig, Precision, ACCEL_FREQ_MHZ,
};
pub use linebuffer::{dw33_linebuffer, line_buffer_registers, LineBufferStats};
pub use region::{LayerGroup, RegionRun, ShiftLayer};

use std::ops::{Add, AddAssign};

/// Cycles spent computing and cycles spent priming registers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CycleCount {
    pub compute: u64,
    pub fill: u64,
}

impl CycleCount {
    pub const fn new(compute: u64, fill: u64) -> Self {
        CycleCount { compute, fill }
    }

    pub const fn total(&self) -> u64 {
        self.compute + self.fill
    }
}

impl Add for CycleCount {
    type Output = CycleCount;

    fn add(self, o: CycleCount) -> CycleCount {
        CycleCount::new(self.compute + o.compute, self.fill + o.fill)
    }
}

impl AddAssign for CycleCount {
    fn add_assign(&mut self, o: CycleCount) {
        *self = *self + o;
    }
}

/// Placement of a column slab inside the full feature map: the slab holds
/// columns `[col0, col0 + slab width)` of a map `full_w` columns wide.
///
/// Columns outside the map read as zero padding. Columns inside the map but
/// outside the slab are a missing halo and raise an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnWindow {
    pub col0: usize,
    pub full_w: usize,
}

impl ColumnWindow {
    pub const fn whole(w: usize) -> Self {
        ColumnWindow { col0: 0, full_w: w }
    }

    /// Local column of global column `gx`, `Ok(None)` for padding.
    #[inline]
    pub(crate) fn local(&self, gx: isize, slab_w: usize) -> crate::Result<Option<usize>> {
        if gx < 0 || gx >= self.full_w as isize {
            return Ok(None);
        }
        let lx = gx - self.col0 as isize;
        if lx < 0 || lx >= slab_w as isize {
            return Err(crate::Error::dim(format!(
                "column {gx} is outside slab [{}, {}) and not padding",
                self.col0,
                self.col0 + slab_w
            )));
        }
        Ok(Some(lx as usize))
    }
}
