//! Load allocation across cores.
//!
//! The allocator distributes weight-matrix rows to `C` cores. The proposed
//! scheme hands each core a contiguous block of rows of near-equal count;
//! because each row keeps a `1/G` fraction of its weights in expectation,
//! every core's workload converges to `1/(C*G)` of the dense total without
//! counters or shifting logic. The baseline scheme instead accumulates rows
//! onto a core until its unmasked count exceeds `total/C`, which leaves the
//! last core systematically short.
//!
//! Address plans resolve each assigned row's non-zero columns through the
//! sparse row memory into flat addresses over the row-major weight store:
//! `row * N + col` in the forward pass, and `col * N + row` when walking the
//! transposed mask in the backward pass (same underlying weights).

use std::fmt::Write as _;
use std::ops::Range;

use crate::bits::Bitvector;
use crate::error::{Error, Result};
use crate::osel::{IndexList, SparseRowMemory};
use crate::Pass;

/// One row's compute task: which sparse-row-memory slot describes it and how
/// many MACs it contributes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowTask {
    pub row: usize,
    pub group: u32,
    pub workload: usize,
}

/// Rows and total workload owned by one core.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CoreLoad {
    pub rows: Vec<RowTask>,
    pub workload: u64,
}

/// Allocation scheme selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocScheme {
    /// Contiguous near-equal row blocks per core.
    RowBased,
    /// Greedy fill against the `total/C` workload threshold.
    ThresholdBased,
}

/// Full per-core assignment, carrying its own copy of the cached row
/// patterns so downstream planning needs no further memory references.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoreAssignment {
    cores: Vec<CoreLoad>,
    patterns: Vec<Option<Bitvector>>,
    num_rows: usize,
    row_len: usize,
}

impl CoreAssignment {
    pub fn cores(&self) -> &[CoreLoad] {
        &self.cores
    }

    pub fn core_count(&self) -> usize {
        self.cores.len()
    }

    /// Rows of the encoded matrix this assignment covers.
    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    /// Bit length of each row pattern.
    pub fn row_len(&self) -> usize {
        self.row_len
    }

    pub fn pattern(&self, group: u32) -> Result<&Bitvector> {
        self.patterns
            .get(group as usize)
            .and_then(|p| p.as_ref())
            .ok_or(Error::EmptySlot {
                group: group as usize,
            })
    }

    /// Cores that received no rows (allowed when `C > M`, but worth
    /// surfacing in reports).
    pub fn idle_core_count(&self) -> usize {
        self.cores.iter().filter(|c| c.rows.is_empty()).count()
    }

    pub fn total_workload(&self) -> u64 {
        self.cores.iter().map(|c| c.workload).sum()
    }

    /// Debug dump: CSV with one `core,row,group_idx,workload` line per row.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("core,row,group_idx,workload\n");
        for (core, load) in self.cores.iter().enumerate() {
            for task in &load.rows {
                let _ = writeln!(out, "{},{},{},{}", core, task.row, task.group, task.workload);
            }
        }
        out
    }
}

/// Contiguous row ranges of near-equal size, one per core. Sizes differ by
/// at most one; when `C > M` the trailing cores get empty ranges.
pub fn partition_rows(m: usize, cores: usize) -> Result<Vec<Range<usize>>> {
    if cores == 0 {
        return Err(Error::InvalidCoreCount { cores });
    }
    let base = m / cores;
    let extra = m % cores;
    let mut out = Vec::with_capacity(cores);
    let mut start = 0;
    for c in 0..cores {
        let len = base + usize::from(c < extra);
        out.push(start..start + len);
        start += len;
    }
    Ok(out)
}

/// Baseline split: walk rows in order, keeping them on the current core
/// until its accumulated workload reaches `total/C`, then move on. The last
/// core takes whatever remains. Uniform workloads that divide evenly
/// reproduce the contiguous row partition.
pub fn threshold_split(row_workloads: &[usize], cores: usize) -> Result<Vec<Vec<usize>>> {
    if cores == 0 {
        return Err(Error::InvalidCoreCount { cores });
    }
    let total: u64 = row_workloads.iter().map(|&w| w as u64).sum();
    let threshold = total as f64 / cores as f64;
    let mut out = vec![Vec::new(); cores];
    let mut core = 0usize;
    let mut acc = 0u64;
    for (row, &w) in row_workloads.iter().enumerate() {
        out[core].push(row);
        acc += w as u64;
        if acc as f64 >= threshold && core + 1 < cores {
            core += 1;
            acc = 0;
        }
    }
    Ok(out)
}

/// Resolve an assignment from the encoder outputs: rows are split by
/// `scheme`, and each row's group index and workload come from the sparse
/// row memory.
pub fn assign_rows(
    srm: &SparseRowMemory,
    index_list: &IndexList,
    cores: usize,
    scheme: AllocScheme,
) -> Result<CoreAssignment> {
    let make_task = |row: usize| -> Result<RowTask> {
        let group = index_list.get(row);
        let workload = srm.require(group as usize)?.workload();
        Ok(RowTask {
            row,
            group,
            workload,
        })
    };
    let row_ids: Vec<Vec<usize>> = match scheme {
        AllocScheme::RowBased => partition_rows(index_list.len(), cores)?
            .into_iter()
            .map(|r| r.collect())
            .collect(),
        AllocScheme::ThresholdBased => {
            let workloads: Result<Vec<usize>> = index_list
                .values()
                .iter()
                .map(|&g| Ok(srm.require(g as usize)?.workload()))
                .collect();
            threshold_split(&workloads?, cores)?
        }
    };
    let mut loads = Vec::with_capacity(cores);
    for rows in row_ids {
        let mut load = CoreLoad::default();
        for row in rows {
            let task = make_task(row)?;
            load.workload += task.workload as u64;
            load.rows.push(task);
        }
        loads.push(load);
    }
    Ok(CoreAssignment {
        cores: loads,
        patterns: srm.patterns(),
        num_rows: index_list.len(),
        row_len: srm.row_len(),
    })
}

/// One planned weight access: the pattern coordinates plus the flat address
/// into the row-major weight store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AddressRef {
    pub row: u32,
    pub col: u32,
    pub addr: u64,
}

/// Per-core ordered weight accesses for one pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddressPlan {
    pub per_core: Vec<Vec<AddressRef>>,
    pub pass: Pass,
}

/// Expand an assignment into flat weight addresses. Forward entries address
/// `row * N + col`; backward entries walk the transposed mask, so the same
/// stored weight is found at `col * N + row`, with `N` equal to the number
/// of rows of the transposed matrix.
pub fn address_plan(assignment: &CoreAssignment, pass: Pass) -> Result<AddressPlan> {
    let stride = match pass {
        Pass::Forward => assignment.row_len() as u64,
        Pass::Backward => assignment.num_rows() as u64,
    };
    let mut per_core = Vec::with_capacity(assignment.core_count());
    for load in assignment.cores() {
        let mut refs = Vec::with_capacity(load.workload as usize);
        for task in &load.rows {
            let pattern = assignment.pattern(task.group)?;
            for col in pattern.ones_positions() {
                let addr = match pass {
                    Pass::Forward => task.row as u64 * stride + col as u64,
                    Pass::Backward => col as u64 * stride + task.row as u64,
                };
                refs.push(AddressRef {
                    row: task.row as u32,
                    col: col as u32,
                    addr,
                });
            }
        }
        per_core.push(refs);
    }
    Ok(AddressPlan { per_core, pass })
}

/// Per-core workloads against the perfectly balanced ideal.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadStats {
    pub per_core: Vec<u64>,
    /// `total / C`.
    pub theoretical: f64,
    /// Largest `|workload - theoretical|` over cores.
    pub max_deviation: f64,
}

impl WorkloadStats {
    pub fn from_core_workloads(per_core: Vec<u64>) -> Self {
        let total: u64 = per_core.iter().sum();
        let theoretical = total as f64 / per_core.len().max(1) as f64;
        let max_deviation = per_core
            .iter()
            .map(|&w| (w as f64 - theoretical).abs())
            .fold(0.0, f64::max);
        WorkloadStats {
            per_core,
            theoretical,
            max_deviation,
        }
    }
}

/// Deviation statistics of an assignment.
pub fn deviation(assignment: &CoreAssignment) -> WorkloadStats {
    WorkloadStats::from_core_workloads(assignment.cores.iter().map(|c| c.workload).collect())
}
