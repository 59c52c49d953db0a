//! Core dataflow: vector processing units over compressed rows.
//!
//! A core walks its assigned rows four at a time (one wave). The four
//! activations are broadcast to the VPU array and every engaged VPU picks
//! its lane with a 2-bit select signal; the select stream is a run-length
//! expansion of the four workloads, so `WL_k` consecutive VPUs serve lane
//! `k`. Each VPU multiplies its weight by the selected activation and the
//! products scatter-accumulate into the output buffer at their column
//! index, in lane order, which keeps accumulation deterministic (ascending
//! row, then ascending column).
//!
//! Timing model (constants in [`CoreConfig`]):
//!
//! * packed (sparse) flow — the select-signal shifter packs runs across wave
//!   boundaries, so the compute beats are workload-bound:
//!   `ceil(core_workload / vpu_count)`, plus one initial weight-load fill of
//!   `weight_load_cycles`. Compressed weights were already staged by the
//!   load-allocation unit (that fetch time is the encoder's
//!   weight-compression category).
//! * dense flow — no compressed stream exists; each row's weights stream
//!   from the parameter store with a floor of `weight_load_cycles` per row,
//!   so a row costs `max(weight_load_cycles, ceil(N / vpu_count))` and the
//!   array idles while it waits. This is what makes sparse utilization beat
//!   dense utilization.
//!
//! MAC slots count `vpu_count` per busy cycle (dense stalls are busy; the
//! packed fill is a prologue and is counted in cycles but not slots).

use half::f16;
use serde::Serialize;

use crate::alloc::CoreAssignment;
use crate::error::{Error, Result};
use crate::flgw::GroupingPair;
use crate::matrix::Matrix;
use crate::osel::{self, CycleParams, EncodeStats};
use crate::Pass;

/// Arithmetic mode of the VPU array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// `f32` storage and accumulation.
    Fp32,
    /// `f16` storage with `f32` accumulation.
    Fp16Fp32,
    /// Integer multiply-accumulate; exact against an integer oracle.
    Int,
}

/// Core geometry and timing constants.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreConfig {
    /// VPUs per core.
    pub vpu_count: usize,
    /// Rows flattened into one wave; the 2-bit select supports up to four.
    pub rows_per_wave: usize,
    /// Minimum cycles to stream one dense row's weights; also the packed
    /// pipeline's initial fill.
    pub weight_load_cycles: u64,
    pub precision: Precision,
}

impl Default for CoreConfig {
    fn default() -> Self {
        CoreConfig {
            vpu_count: 264,
            rows_per_wave: 4,
            weight_load_cycles: 4,
            precision: Precision::Fp16Fp32,
        }
    }
}

impl CoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows_per_wave == 0 || self.rows_per_wave > 4 {
            return Err(Error::Config(format!(
                "rows_per_wave {} outside 1..=4 (2-bit select)",
                self.rows_per_wave
            )));
        }
        if self.vpu_count < self.rows_per_wave {
            return Err(Error::Config(format!(
                "vpu_count {} smaller than rows_per_wave {}",
                self.vpu_count, self.rows_per_wave
            )));
        }
        Ok(())
    }
}

/// Run-length select signals for one wave: `WL_0` zeros, then `WL_1` ones,
/// and so on. An all-zero window yields an empty array and the wave is
/// skipped.
pub fn generate_select_signals(window: &[(u32, usize)]) -> Vec<u8> {
    let total: usize = window.iter().map(|&(_, wl)| wl).sum();
    let mut out = Vec::with_capacity(total);
    for (lane, &(_, wl)) in window.iter().enumerate() {
        out.extend(std::iter::repeat_n(lane as u8, wl));
    }
    out
}

/// Per-core simulation tallies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CoreRunStats {
    /// Total cycles including any pipeline fill.
    pub cycles: u64,
    /// Cycles that occupy the VPU array; `mac_slots = busy * vpu_count`.
    pub busy_cycles: u64,
    /// Multiplies actually performed (the unmasked count).
    pub active_macs: u64,
}

/// Which dataflow prices the core's cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dataflow {
    Dense,
    Packed,
}

enum Accum {
    F32 { out: Vec<f32>, half_storage: bool },
    I64(Vec<i64>),
}

impl Accum {
    fn new(len: usize, precision: Precision) -> Self {
        match precision {
            Precision::Fp32 => Accum::F32 {
                out: vec![0.0; len],
                half_storage: false,
            },
            Precision::Fp16Fp32 => Accum::F32 {
                out: vec![0.0; len],
                half_storage: true,
            },
            Precision::Int => Accum::I64(vec![0; len]),
        }
    }

    #[inline]
    fn mac(&mut self, col: usize, x: f64, w: f64) {
        match self {
            Accum::F32 { out, half_storage } => {
                let (xq, wq) = if *half_storage {
                    (f16::from_f64(x).to_f32(), f16::from_f64(w).to_f32())
                } else {
                    (x as f32, w as f32)
                };
                out[col] += xq * wq;
            }
            Accum::I64(out) => {
                out[col] += (x.round() as i64) * (w.round() as i64);
            }
        }
    }

    fn merge(&mut self, other: &Accum) -> Result<()> {
        match (self, other) {
            (Accum::F32 { out: a, .. }, Accum::F32 { out: b, .. }) if a.len() == b.len() => {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += *y;
                }
                Ok(())
            }
            (Accum::I64(a), Accum::I64(b)) if a.len() == b.len() => {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += *y;
                }
                Ok(())
            }
            _ => Err(Error::Config("mismatched partial accumulators".into())),
        }
    }

    fn widen(&self) -> Vec<f64> {
        match self {
            Accum::F32 { out, .. } => out.iter().map(|&v| v as f64).collect(),
            Accum::I64(out) => out.iter().map(|&v| v as f64).collect(),
        }
    }
}

/// Execute one core's assigned rows. Returns the partial output (length
/// `assignment.row_len()`) and the core's cycle tallies.
pub fn run_core(
    assignment: &CoreAssignment,
    core: usize,
    x: &[f64],
    w: &Matrix,
    pass: Pass,
    flow: Dataflow,
    config: &CoreConfig,
) -> Result<(Vec<f64>, CoreRunStats)> {
    let (acc, stats) = run_core_impl(assignment, core, x, w, pass, flow, config)?;
    Ok((acc.widen(), stats))
}

fn run_core_impl(
    assignment: &CoreAssignment,
    core: usize,
    x: &[f64],
    w: &Matrix,
    pass: Pass,
    flow: Dataflow,
    config: &CoreConfig,
) -> Result<(Accum, CoreRunStats)> {
    config.validate()?;
    let load = assignment
        .cores()
        .get(core)
        .ok_or(Error::InvalidCoreCount { cores: core })?;
    if x.len() != assignment.num_rows() {
        return Err(Error::LengthMismatch {
            what: "activation vector",
            expected: assignment.num_rows(),
            got: x.len(),
        });
    }
    let expected_shape = match pass {
        Pass::Forward => (assignment.num_rows(), assignment.row_len()),
        Pass::Backward => (assignment.row_len(), assignment.num_rows()),
    };
    if w.shape() != expected_shape {
        return Err(Error::ShapeMismatch {
            what: "weight store",
            expected: expected_shape,
            got: w.shape(),
        });
    }
    let stride = match pass {
        Pass::Forward => assignment.row_len() as u64,
        Pass::Backward => assignment.num_rows() as u64,
    };

    let mut acc = Accum::new(assignment.row_len(), config.precision);
    let mut stats = CoreRunStats::default();
    let wstore = w.as_slice();

    for wave in load.rows.chunks(config.rows_per_wave) {
        let window: Vec<(u32, usize)> = wave.iter().map(|t| (t.group, t.workload)).collect();
        let signals = generate_select_signals(&window);
        if signals.is_empty() {
            continue;
        }
        debug_assert!(signals
            .chunks(config.vpu_count)
            .all(|beat| beat.len() <= config.vpu_count));
        stats.active_macs += signals.len() as u64;

        for (lane, task) in wave.iter().enumerate() {
            debug_assert_eq!(
                signals.iter().filter(|&&s| s as usize == lane).count(),
                task.workload
            );
            let xv = x[task.row];
            let pattern = assignment.pattern(task.group)?;
            for col in pattern.ones_positions() {
                let addr = match pass {
                    Pass::Forward => task.row as u64 * stride + col as u64,
                    Pass::Backward => col as u64 * stride + task.row as u64,
                };
                acc.mac(col, xv, wstore[addr as usize]);
            }
        }
    }

    match flow {
        Dataflow::Packed => {
            let beats = load.workload.div_ceil(config.vpu_count as u64);
            stats.busy_cycles = beats;
            stats.cycles = if beats == 0 {
                0
            } else {
                config.weight_load_cycles + beats
            };
        }
        Dataflow::Dense => {
            let mut busy = 0u64;
            for task in &load.rows {
                if task.workload == 0 {
                    continue;
                }
                let beats = (task.workload as u64).div_ceil(config.vpu_count as u64);
                busy += beats.max(config.weight_load_cycles);
            }
            stats.busy_cycles = busy;
            stats.cycles = busy;
        }
    }
    Ok((acc, stats))
}

/// Elementwise sum of per-core partials in ascending core order.
pub fn aggregate(partials: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = partials.first() else {
        return Ok(Vec::new());
    };
    let mut out = first.clone();
    for p in &partials[1..] {
        if p.len() != out.len() {
            return Err(Error::LengthMismatch {
                what: "partial sums",
                expected: out.len(),
                got: p.len(),
            });
        }
        for (a, b) in out.iter_mut().zip(p) {
            *a += *b;
        }
    }
    Ok(out)
}

/// Per-stage cycle breakdown of one simulated layer pass. The first four
/// categories are the encoder's; the last two are the compute stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SimBreakdown {
    pub max_index: u64,
    pub index_miss: u64,
    pub index_hit: u64,
    pub weight_compression: u64,
    pub pipeline_fill: u64,
    pub compute: u64,
}

/// Simulation report for one layer pass. Serialized as
/// `{cycles, active_macs, utilization, breakdown{...}}`; that schema is
/// frozen.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    /// End-to-end cycles: encoding plus the slowest core's compute.
    pub cycles: u64,
    pub active_macs: u64,
    pub utilization: f64,
    pub breakdown: SimBreakdown,
    /// `vpu_count` slots per busy cycle, summed over cores.
    #[serde(skip)]
    pub mac_slots: u64,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serialization")
    }
}

/// Full sparse matrix-vector multiply through the modeled pipeline:
/// grouping argmaxes, encoding, row allocation, per-core waves, and
/// aggregation. `y == x * (w ⊙ mask)`, length `N`.
///
/// `G = 1` selects the dense flow; the result is then bit-identical to a
/// blocked dense matvec with the same core partition.
pub fn spmv(
    w: &Matrix,
    grouping: &GroupingPair,
    x: &[f64],
    cores: usize,
    config: &CoreConfig,
    cycle_params: &CycleParams,
) -> Result<(Vec<f64>, SimReport)> {
    spmv_pass(w, grouping, x, cores, config, cycle_params, Pass::Forward)
}

/// Backward-pass multiply over the transposed mask: `y == x * (w ⊙ mask)^T`,
/// length `M`. `x` has length `N`.
pub fn spmv_backward(
    w: &Matrix,
    grouping: &GroupingPair,
    x: &[f64],
    cores: usize,
    config: &CoreConfig,
    cycle_params: &CycleParams,
) -> Result<(Vec<f64>, SimReport)> {
    spmv_pass(w, grouping, x, cores, config, cycle_params, Pass::Backward)
}

fn spmv_pass(
    w: &Matrix,
    grouping: &GroupingPair,
    x: &[f64],
    cores: usize,
    config: &CoreConfig,
    cycle_params: &CycleParams,
    pass: Pass,
) -> Result<(Vec<f64>, SimReport)> {
    config.validate()?;
    if w.shape() != (grouping.m(), grouping.n()) {
        return Err(Error::ShapeMismatch {
            what: "spmv weights",
            expected: (grouping.m(), grouping.n()),
            got: w.shape(),
        });
    }
    let row_max = grouping.row_max_indexes();
    let col_max = grouping.col_max_indexes();
    let (srm, index_list, encode_stats) = match pass {
        Pass::Forward => osel::encode_forward(&row_max, &col_max, cycle_params)?,
        Pass::Backward => osel::encode_backward(&col_max, &row_max, cycle_params)?,
    };
    let assignment = crate::alloc::assign_rows(
        &srm,
        &index_list,
        cores,
        crate::alloc::AllocScheme::RowBased,
    )?;
    let flow = if grouping.groups() == 1 {
        Dataflow::Dense
    } else {
        Dataflow::Packed
    };

    let mut total: Option<Accum> = None;
    let mut fill = 0u64;
    let mut compute = 0u64;
    let mut slots = 0u64;
    let mut active = 0u64;
    for core in 0..assignment.core_count() {
        let (partial, stats) = run_core_impl(&assignment, core, x, w, pass, flow, config)?;
        match &mut total {
            None => total = Some(partial),
            Some(acc) => acc.merge(&partial)?,
        }
        fill = fill.max(stats.cycles - stats.busy_cycles);
        compute = compute.max(stats.busy_cycles);
        slots += stats.busy_cycles * config.vpu_count as u64;
        active += stats.active_macs;
    }
    let y = total
        .map(|acc| acc.widen())
        .unwrap_or_else(|| vec![0.0; assignment.row_len()]);

    let report = build_report(&encode_stats, fill, compute, slots, active);
    Ok((y, report))
}

fn build_report(
    encode: &EncodeStats,
    fill: u64,
    compute: u64,
    slots: u64,
    active: u64,
) -> SimReport {
    let breakdown = SimBreakdown {
        max_index: encode.cycles.max_index,
        index_miss: encode.cycles.index_miss,
        index_hit: encode.cycles.index_hit,
        weight_compression: encode.cycles.weight_compression,
        pipeline_fill: fill,
        compute,
    };
    SimReport {
        cycles: encode.cycles.total() + fill + compute,
        active_macs: active,
        utilization: if slots == 0 {
            0.0
        } else {
            active as f64 / slots as f64
        },
        breakdown,
        mac_slots: slots,
    }
}
