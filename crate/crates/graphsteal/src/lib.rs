//! Hard-label model extraction laboratory for graph classifiers.
//!
//! The crate trains a victim graph classifier behind a hard-label query
//! oracle and evaluates attack strategies that grow the attacker's training
//! pool from a small real-data seed: gradient-guided edge flips under an
//! authenticity constraint, PageRank-matched subgraph mixing, their
//! composition, and sign-step/random baselines. Supporting machinery covers
//! TU-format dataset I/O, a from-scratch GNN engine with adjacency
//! gradients, imperceptibility statistics, and defender-side noise and
//! detection.
//!
//! Inner loops are data-parallel via rayon when the default `parallel`
//! feature is on; disabling it yields a dependency-free sequential build
//! with identical results.

pub mod attack;
pub mod cli;
pub mod data;
pub mod defense;
pub mod exec;
pub mod gnn;
pub mod graph;
pub mod metrics;
pub mod stats;
pub mod steal;
