pub mod config;
pub mod embedding;
pub mod graph;
pub mod model;
pub mod nn;
pub mod retrieval;
pub mod rng;
pub mod textfmt;
pub mod train;
