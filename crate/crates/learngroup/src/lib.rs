//! Software model of a sparse-training accelerator built around learnable
//! weight grouping.
//!
//! The pipeline has four hardware-motivated stages, each with its own module:
//!
//! * [`flgw`] — fully learnable weight grouping: a pair of trainable grouping
//!   matrices is argmax-binarized into selection matrices whose product is a
//!   binary mask over the weights. Masked weights are excluded from compute
//!   but never erased.
//! * [`osel`] — the on-chip sparse-data encoding loop: mask rows are generated
//!   by comparing argmax indexes and cached in a sparse row memory holding at
//!   most one tuple per group. Includes the cycle and memory-footprint models.
//! * [`alloc`] — the load-allocation unit: row-based partitioning across
//!   cores, the threshold-based baseline scheme, address planning, and
//!   workload-deviation statistics.
//! * [`vpu`] — the per-core vector-processing-unit dataflow: packed
//!   run-length select signals over four-row waves, partial-sum aggregation,
//!   and cycle/utilization accounting.
//!
//! [`train`] closes the loop with a small dense-tensor training engine
//! (masked layers, RMSprop, REINFORCE) on a toy cooperative predator-prey
//! task, and [`bench`](mod@bench) drives the batch experiments exposed by
//! the CLI.

pub mod alloc;
pub mod bench;
pub mod bits;
pub mod config;
pub mod error;
pub mod flgw;
pub mod matrix;
pub mod osel;
pub mod report;
pub mod rng;
pub mod train;
pub mod vpu;

pub use bits::Bitvector;
pub use error::{Error, Result};
pub use matrix::Matrix;

/// Which pass of training a plan or encoding serves. Backward passes operate
/// on the transposed mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    Forward,
    Backward,
}
