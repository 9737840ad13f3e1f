//! Stochastic on-time arrival routing: optimal arrival-probability policies
//! over road networks with random arc travel times, plus the
//! alternative-route pruning techniques that make them affordable.
//!
//! The crate is organized around the pipeline the benchmark harness runs:
//!
//! * [`dist`] — discretized travel-time distributions and convolution kernels
//! * [`graph`] — topology, weight views and deterministic shortest paths
//! * [`pruning`] — corridor, via-node and penalty subgraphs
//! * [`solver`] — label-setting policy computation and its oracle
//! * [`datagen`] — synthetic grids and distribution generators
//! * [`io`] — the line-oriented file formats
//! * [`bench`] — query batches, error curves and CSV output

pub mod datagen;
pub mod dist;
pub mod graph;
pub mod io;
pub mod pruning;
pub mod solver;

pub mod bench;
