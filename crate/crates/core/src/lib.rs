//! Fixed-point quantization and a bit-exact functional model of a shift-based
//! CNN accelerator.
//!
//! The crate is organised bottom-up:
//!
//! - [`fixq`]: integer tensors, power-of-two weight codes, the shift MAC and
//!   saturating requantization.
//! - [`quantizer`]: uniform activation quantization, power-of-two weight
//!   quantization, scale merge and scale quantization, fitted with Lloyd
//!   iterations.
//! - [`kernels`]: functional models of the PE_33, PE_11, PE_DW and PE_Head
//!   processing elements and the fused cascades, with cycle counting.
//! - [`tiling`]: the column-prior tile planner and tiled executor.
//! - [`dataflow`]: output- and weight-stationary schedules for 1x1 layers and
//!   their memory-access accounting.
//! - [`sysmodel`]: the pipelined CPU/FPGA throughput model.
//! - [`harness`]: model files, end-to-end inference, float comparison and
//!   reporting used by the `shiftflow` binary.

pub mod dataflow;
pub mod error;
pub mod fixq;
pub mod harness;
pub mod kernels;
pub mod quantizer;
pub mod sysmodel;
pub mod tiling;

pub use error::{Error, Result};
