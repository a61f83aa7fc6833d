//! Supply-chain-aware static taint analysis over language-neutral program graphs.

pub mod advisory;
pub mod agent;
pub mod code_model;
pub mod dataflow;
pub mod dependency_scan;
pub mod pipeline;
pub mod poc;
pub mod recursion;
pub mod review;
pub mod sinks;
pub mod synth;
