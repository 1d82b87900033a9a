//! Model files, end-to-end runs, float comparison and reports.

mod compare;
mod example;
mod files;
mod infer;
mod report;

pub use compare::{compare_float, Sqnr, SqnrReport};
pub use example::{example_specs, identity_model, random_float_network, random_input, toy_specs};
pub use files::{
    parse_dims, read_float_model, read_model, read_rtensor, write_float_model, write_model, write_rtensor,
    FLOAT_MAGIC, MANIFEST, MODEL_MAGIC,
};
pub use infer::{run_inference, InferenceOptions, InferenceResult, Output, StepReport, DEFAULT_WEIGHT_BUFFER};
pub use report::{peak_report, peak_throughput, read_ppm, write_ppm, REFERENCE_ACHIEVED_GOPS};
