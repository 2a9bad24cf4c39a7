//! Diverse subgraph-mask collections for out-of-distribution graph
//! classification, with a synthetic motif benchmark and experiment harness.

pub mod diffmath;
pub mod dive;
pub mod exec;
pub mod gnn;
pub mod graphdata;
pub mod harness;
pub mod motifgen;
pub mod noise;
