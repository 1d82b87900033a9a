//! Column-prior tiling: split a feature map into column strips that fit the
//! on-chip buffer, each carrying the halo columns its 3x3 stages read from
//! the neighbouring strips.

use std::fmt;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::fixq::QTensor;
use crate::kernels::{conv_out, line_buffer_registers, ColumnWindow, CycleCount, LayerGroup, RegionRun};

/// One column strip of the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tile {
    pub col_start: usize,
    /// Input columns this tile owns; tiles partition `[0, W)`.
    pub valid_cols: usize,
    pub halo_left: usize,
    pub halo_right: usize,
    /// Output columns produced from this tile.
    pub out_cols: Range<usize>,
}

impl Tile {
    pub fn col_end(&self) -> usize {
        self.col_start + self.valid_cols
    }

    /// Columns transferred from DDR for this tile.
    pub fn fetched_cols(&self) -> usize {
        self.valid_cols + self.halo_left + self.halo_right
    }

    /// Input columns held on chip, halo included.
    pub fn slab(&self) -> Range<usize> {
        self.col_start - self.halo_left..self.col_end() + self.halo_right
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub width: usize,
    /// Rows per tile; tiles always span the full height.
    pub rows: usize,
    pub buffer_limit: usize,
    /// Tile starts are multiples of this (the product of stage strides).
    pub align: usize,
    pub tiles: Vec<Tile>,
}

impl TilePlan {
    pub fn max_valid(&self) -> usize {
        self.tiles.iter().map(|t| t.valid_cols).max().unwrap_or(0)
    }

    /// Line-buffer registers for the widest tile, `2 * W_T + 3`.
    pub fn register_cost(&self) -> usize {
        line_buffer_registers(self.max_valid())
    }

    /// Columns fetched from DDR over all tiles, halo re-fetches included.
    pub fn ddr_columns(&self) -> usize {
        self.tiles.iter().map(Tile::fetched_cols).sum()
    }
}

impl fmt::Display for TilePlan {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        for (i, t) in self.tiles.iter().enumerate() {
            writeln!(
                f,
                "tile {i}: cols [{},{}) halo({},{})",
                t.col_start,
                t.col_end(),
                t.halo_left,
                t.halo_right
            )?;
        }
        Ok(())
    }
}

/// Input columns needed to produce outputs `[o0, o1)` of a stage chain.
fn required_input(stages: &[(usize, usize)], widths: &[usize], out: Range<usize>) -> Range<usize> {
    let (mut lo, mut hi) = (out.start as isize, out.end as isize);
    for (i, &(k, s)) in stages.iter().enumerate().rev() {
        let p = ((k - 1) / 2) as isize;
        let s = s as isize;
        lo = (lo * s - p).max(0);
        hi = ((hi - 1) * s + p + 1).min(widths[i] as isize);
    }
    lo as usize..hi as usize
}

fn partition(
    stages: &[(usize, usize)],
    widths: &[usize],
    count: usize,
    align: usize,
) -> Option<Vec<Tile>> {
    let w = widths[0];
    let base = w / count / align * align;
    if base == 0 {
        return None;
    }
    let tiles = (0..count)
        .map(|i| {
            let a = i * base;
            let b = if i + 1 == count { w } else { a + base };
            let out_cols = a / align..b.div_ceil(align);
            let req = required_input(stages, widths, out_cols.clone());
            Tile {
                col_start: a,
                valid_cols: b - a,
                halo_left: a - req.start.min(a),
                halo_right: req.end.saturating_sub(b),
                out_cols,
            }
        })
        .collect();
    Some(tiles)
}

/// Fewest equal-width column tiles (remainder to the last) whose valid and
/// halo columns fit `buffer_limit`. `stages` lists `(kernel, stride)` from
/// the input side.
pub fn plan_tiles(stages: &[(usize, usize)], width: usize, rows: usize, buffer_limit: usize) -> Result<TilePlan> {
    if stages.is_empty() || width == 0 {
        return Err(Error::arg("nothing to tile"));
    }
    if let Some(&(k, s)) = stages.iter().find(|&&(k, s)| k % 2 == 0 || s == 0) {
        return Err(Error::arg(format!("unsupported stage {k}x{k} stride {s}")));
    }
    let mut widths = vec![width];
    for &(_, s) in stages {
        widths.push(conv_out(*widths.last().unwrap(), s));
    }
    let align: usize = stages.iter().map(|&(_, s)| s).product();
    for count in 1..=width {
        let Some(tiles) = partition(stages, &widths, count, align) else {
            break;
        };
        if tiles.iter().all(|t| t.fetched_cols() <= buffer_limit) {
            return Ok(TilePlan {
                width,
                rows,
                buffer_limit,
                align,
                tiles,
            });
        }
    }
    Err(Error::InfeasiblePlan(format!(
        "no column split of width {width} fits {buffer_limit} columns with its halo"
    )))
}

/// Plan for a layer group over its input.
pub fn plan_group(group: &LayerGroup, buffer_limit: usize) -> Result<TilePlan> {
    let d = group.input();
    plan_tiles(&group.stages(), d.w, d.h, buffer_limit)
}

/// `(row-prior, column-prior)` line-buffer registers when a width-`w` map
/// is split into `split` column tiles.
pub fn register_cost_compare(w: usize, split: usize) -> (usize, usize) {
    (line_buffer_registers(w), line_buffer_registers(w.div_ceil(split.max(1))))
}

/// Result of a tiled execution.
#[derive(Debug, Clone, PartialEq)]
pub struct TiledRun {
    pub output: QTensor,
    /// DDR columns fetched per tile.
    pub tile_ddr_columns: Vec<usize>,
    pub cycles: CycleCount,
    pub peak_intermediate: usize,
    pub line_buffer_registers: usize,
}

impl TiledRun {
    pub fn ddr_columns(&self) -> usize {
        self.tile_ddr_columns.iter().sum()
    }
}

/// Run each tile through `run(slab, window, out_cols)` and stitch the
/// outputs back together by column range.
pub fn execute_tiled_with(
    plan: &TilePlan,
    input: &QTensor,
    mut run: impl FnMut(&QTensor, ColumnWindow, Range<usize>) -> Result<RegionRun>,
) -> Result<TiledRun> {
    let d = input.dims();
    if d.w != plan.width || d.h != plan.rows {
        return Err(Error::dim(format!(
            "plan is for {}x{} columns/rows, input is {d}",
            plan.width, plan.rows
        )));
    }
    let mut parts = Vec::with_capacity(plan.tiles.len());
    let mut run_total = TiledRun {
        output: QTensor::zeros(crate::fixq::Dims::new(0, 0, 0), 1)?,
        tile_ddr_columns: Vec::with_capacity(plan.tiles.len()),
        cycles: CycleCount::default(),
        peak_intermediate: 0,
        line_buffer_registers: 0,
    };
    for tile in &plan.tiles {
        let slab_cols = tile.slab();
        let slab = input.columns(slab_cols.start, slab_cols.end)?;
        let window = ColumnWindow {
            col0: slab_cols.start,
            full_w: d.w,
        };
        let r = run(&slab, window, tile.out_cols.clone())?;
        run_total.tile_ddr_columns.push(tile.fetched_cols());
        run_total.cycles += r.cycles;
        run_total.peak_intermediate = run_total.peak_intermediate.max(r.peak_intermediate);
        run_total.line_buffer_registers = run_total.line_buffer_registers.max(r.line_buffer_registers);
        parts.push(r.output);
    }
    run_total.output = QTensor::concat_columns(&parts)?;
    Ok(run_total)
}

/// Tiled execution of a layer group.
pub fn execute_tiled(plan: &TilePlan, group: &LayerGroup, input: &QTensor) -> Result<TiledRun> {
    execute_tiled_with(plan, input, |slab, window, cols| group.run_region(slab, window, cols))
}
