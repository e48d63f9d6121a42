pub mod batch;
pub mod cli;
pub mod config;
pub mod data;
pub mod dgraph;
pub mod fusion;
pub mod io;
pub mod nn;
pub mod preprocess;
pub mod sgraph;
pub mod sketch;
pub mod synth;
pub mod tasks;
pub mod tensor;
