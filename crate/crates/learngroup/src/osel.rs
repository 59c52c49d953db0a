//! On-chip sparse-data encoding loop.
//!
//! The encoder walks the row index list once. For each row it looks up the
//! row's argmax index in the sparse row memory: on a miss it generates the
//! row's bitvector by comparing the index against every column argmax in
//! parallel and stores the (bitvector, workload) tuple; on a hit it only
//! appends the index to the index list. At most `G` distinct tuples can
//! exist, so after the `G`-th distinct index every remaining row hits.
//!
//! The backward pass runs the identical loop with the roles of the two index
//! lists swapped, producing the transposed mask's row tuples.
//!
//! Cycle accounting and the memory-footprint model live here too. The cycle
//! categories (max-index extraction, index miss, index hit, weight
//! compression) are fixed; the constants are model parameters with defaults
//! in [`CycleParams`].

use std::fmt::Write as _;

use crate::bits::Bitvector;
use crate::error::{Error, Result};
use crate::flgw::{mask_row_from_indexes, MaskMatrix, MaxIndexList};

/// Index list referencing sparse-row-memory slots: entry `i` is the group
/// index whose cached bitvector reproduces row `i` of the mask.
pub type IndexList = MaxIndexList;

/// One cached mask row: the bitvector plus its workload (set-bit count).
/// Non-zero indexes are derived from the bitvector on demand rather than
/// stored; the modeled tuple budget has no room for a materialized list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseRowTuple {
    bitvector: Bitvector,
    workload: usize,
}

impl SparseRowTuple {
    pub fn new(bitvector: Bitvector) -> Self {
        let workload = bitvector.popcount();
        SparseRowTuple {
            bitvector,
            workload,
        }
    }

    pub fn bitvector(&self) -> &Bitvector {
        &self.bitvector
    }

    pub fn workload(&self) -> usize {
        self.workload
    }

    /// Ascending positions of the unmasked weights in this row.
    pub fn nonzero_indexes(&self) -> Vec<usize> {
        self.bitvector.ones_positions()
    }
}

/// The `G`-slot cache of row tuples, indexed by group index. A slot's
/// occupancy bit is the tuple's generated/empty status; once generated, a
/// slot is never overwritten within an encoding pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseRowMemory {
    entries: Vec<Option<SparseRowTuple>>,
    row_len: usize,
}

impl SparseRowMemory {
    pub fn empty(groups: usize, row_len: usize) -> Self {
        SparseRowMemory {
            entries: vec![None; groups],
            row_len,
        }
    }

    pub fn groups(&self) -> usize {
        self.entries.len()
    }

    /// Bit length of the cached rows.
    pub fn row_len(&self) -> usize {
        self.row_len
    }

    pub fn get(&self, group: usize) -> Option<&SparseRowTuple> {
        self.entries.get(group).and_then(|e| e.as_ref())
    }

    /// Tuple for `group`, or an error when the slot was never generated.
    pub fn require(&self, group: usize) -> Result<&SparseRowTuple> {
        if group >= self.entries.len() {
            return Err(Error::IndexOutOfRange {
                index: group,
                bound: self.entries.len(),
            });
        }
        self.get(group).ok_or(Error::EmptySlot { group })
    }

    pub fn occupied(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    pub fn iter_occupied(&self) -> impl Iterator<Item = (usize, &SparseRowTuple)> {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.as_ref().map(|t| (i, t)))
    }

    /// Clone of the slot table, for plans that carry their own copy.
    pub fn patterns(&self) -> Vec<Option<Bitvector>> {
        self.entries
            .iter()
            .map(|e| e.as_ref().map(|t| t.bitvector.clone()))
            .collect()
    }

    /// Dump format: a `G N` header, then one `idx workload hex-bitvector`
    /// line per occupied slot, ascending by index. Stable for a fixed seed.
    pub fn to_dump_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.groups(), self.row_len);
        for (idx, tuple) in self.iter_occupied() {
            let _ = writeln!(
                out,
                "{} {} {}",
                idx,
                tuple.workload,
                tuple.bitvector.to_hex_string()
            );
        }
        out
    }

    /// Parse the dump format, validating slot bounds, uniqueness, ascending
    /// order, the workload/popcount invariant, and bitvector width.
    pub fn parse_dump(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty dump"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::parse(1, "header must be `G N`"));
        }
        let groups: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(1, "bad group count"))?;
        let row_len: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(1, "bad row length"))?;
        if groups == 0 || groups > crate::flgw::MAX_GROUPS {
            return Err(Error::parse(
                1,
                format!("group count outside 1..={}", crate::flgw::MAX_GROUPS),
            ));
        }
        let mut srm = SparseRowMemory::empty(groups, row_len);
        let mut last_idx: Option<usize> = None;
        for (lineno, line) in lines {
            let lineno = lineno + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::parse(lineno, "entry must be `idx workload hex`"));
            }
            let idx: usize = fields[0]
                .parse()
                .map_err(|_| Error::parse(lineno, "bad slot index"))?;
            let workload: usize = fields[1]
                .parse()
                .map_err(|_| Error::parse(lineno, "bad workload"))?;
            if idx >= groups {
                return Err(Error::parse(lineno, format!("slot {idx} out of range")));
            }
            if last_idx.is_some_and(|prev| idx <= prev) {
                return Err(Error::parse(lineno, "slot indexes must ascend"));
            }
            last_idx = Some(idx);
            let bitvector = Bitvector::from_hex_str(row_len, fields[2])
                .map_err(|e| Error::parse(lineno, e.to_string()))?;
            if bitvector.popcount() != workload {
                return Err(Error::parse(
                    lineno,
                    format!(
                        "workload {workload} != popcount {}",
                        bitvector.popcount()
                    ),
                ));
            }
            srm.entries[idx] = Some(SparseRowTuple {
                bitvector,
                workload,
            });
        }
        Ok(srm)
    }
}

/// Constants of the cycle model. The categories come from the modeled
/// hardware; these knobs are this model's, with defaults chosen to sit at
/// the hardware envelope (16 parallel comparators, 8-wide weight fetch).
#[derive(Debug, Clone, PartialEq)]
pub struct CycleParams {
    /// Parallel comparators available to the max-index reduction over `G`.
    pub comparators: usize,
    /// Unmasked weights fetched per cycle during weight compression.
    pub fetch_width: usize,
    /// Cycles per miss: one parallel compare against all column argmaxes
    /// plus one sparse-row-memory write.
    pub miss_cycles: u64,
    /// Cycles per hit: the memory lookup.
    pub hit_cycles: u64,
}

impl Default for CycleParams {
    fn default() -> Self {
        CycleParams {
            comparators: 16,
            fetch_width: 8,
            miss_cycles: 2,
            hit_cycles: 1,
        }
    }
}

impl CycleParams {
    pub fn validate(&self) -> Result<()> {
        if self.comparators == 0 || self.fetch_width == 0 {
            return Err(Error::Config(
                "cycle params must have positive comparators and fetch width".into(),
            ));
        }
        Ok(())
    }
}

/// Per-category cycle counts of one encoding pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CycleBreakdown {
    /// Finding the argmax of every grouping-matrix row and column.
    pub max_index: u64,
    /// Generating and storing bitvectors on misses.
    pub index_miss: u64,
    /// Sparse-row-memory lookups on hits.
    pub index_hit: u64,
    /// Streaming the unmasked weights.
    pub weight_compression: u64,
}

impl CycleBreakdown {
    pub fn total(&self) -> u64 {
        self.max_index + self.index_miss + self.index_hit + self.weight_compression
    }
}

/// Hit/miss tallies and the cycle breakdown of one encoding pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodeStats {
    pub hits: u64,
    pub misses: u64,
    pub cycles: CycleBreakdown,
}

/// Whether the cycle model caches bitvectors or regenerates every row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeMode {
    /// Cache row tuples; at most `G` misses.
    Osel,
    /// No cache: every row regenerates and stores its tuple.
    Baseline,
}

fn breakdown(
    m: usize,
    n: usize,
    groups: usize,
    misses: u64,
    hits: u64,
    unmasked: f64,
    params: &CycleParams,
) -> CycleBreakdown {
    let reduction = groups.div_ceil(params.comparators) as u64;
    CycleBreakdown {
        max_index: (m + n) as u64 * reduction,
        index_miss: misses * params.miss_cycles,
        index_hit: hits * params.hit_cycles,
        weight_compression: (unmasked / params.fetch_width as f64).ceil() as u64,
    }
}

fn encode(
    outer: &MaxIndexList,
    inner: &MaxIndexList,
    params: &CycleParams,
) -> Result<(SparseRowMemory, IndexList, EncodeStats)> {
    if outer.groups() != inner.groups() {
        return Err(Error::LengthMismatch {
            what: "encode group counts",
            expected: outer.groups(),
            got: inner.groups(),
        });
    }
    params.validate()?;
    let groups = outer.groups();
    let mut srm = SparseRowMemory::empty(groups, inner.len());
    let mut hits = 0u64;
    let mut misses = 0u64;
    let mut total_workload = 0u64;
    for &idx in outer.values() {
        let slot = idx as usize;
        match &srm.entries[slot] {
            Some(tuple) => {
                hits += 1;
                total_workload += tuple.workload as u64;
            }
            None => {
                misses += 1;
                let tuple = SparseRowTuple::new(mask_row_from_indexes(idx, inner));
                total_workload += tuple.workload as u64;
                srm.entries[slot] = Some(tuple);
            }
        }
    }
    let cycles = breakdown(
        outer.len(),
        inner.len(),
        groups,
        misses,
        hits,
        total_workload as f64,
        params,
    );
    let index_list = IndexList::new(outer.values().to_vec(), groups)?;
    Ok((srm, index_list, EncodeStats {
        hits,
        misses,
        cycles,
    }))
}

/// Encode the forward mask: one pass over the row argmax list, bitvectors of
/// length `N`. Reconstructing row `i` as `srm[index_list[i]]` reproduces the
/// dense mask exactly.
pub fn encode_forward(
    row_max: &MaxIndexList,
    col_max: &MaxIndexList,
    params: &CycleParams,
) -> Result<(SparseRowMemory, IndexList, EncodeStats)> {
    encode(row_max, col_max, params)
}

/// Encode the transposed mask for the backward pass: the output-grouping
/// index list drives the loop and bitvectors have length `M`.
pub fn encode_backward(
    col_max: &MaxIndexList,
    row_max: &MaxIndexList,
    params: &CycleParams,
) -> Result<(SparseRowMemory, IndexList, EncodeStats)> {
    encode(col_max, row_max, params)
}

/// Rebuild the full mask from an encoding. Used by tests and by consumers
/// that need a dense view.
pub fn reconstruct_mask(srm: &SparseRowMemory, index_list: &IndexList) -> Result<MaskMatrix> {
    let mut rows = Vec::with_capacity(index_list.len());
    for &idx in index_list.values() {
        rows.push(srm.require(idx as usize)?.bitvector().clone());
    }
    MaskMatrix::new(rows, srm.groups())
}

/// Analytic cycle model for generating an `M x N` mask at group count `G`.
/// Deterministic: misses are `min(G, M)` in OSEL mode (every slot fills for
/// the sizes of interest) and `M` in baseline mode; the unmasked count is
/// the expectation `M*N/G`.
pub fn cycle_model(
    m: usize,
    n: usize,
    groups: usize,
    mode: EncodeMode,
    params: &CycleParams,
) -> Result<EncodeStats> {
    if groups == 0 {
        return Err(Error::InvalidGroupCount { groups, max: 0 });
    }
    params.validate()?;
    let (misses, hits) = match mode {
        EncodeMode::Osel => {
            let misses = groups.min(m) as u64;
            (misses, m as u64 - misses)
        }
        EncodeMode::Baseline => (m as u64, 0),
    };
    let unmasked = m as f64 * n as f64 / groups as f64;
    Ok(EncodeStats {
        hits,
        misses,
        cycles: breakdown(m, n, groups, misses, hits, unmasked, params),
    })
}

/// Memory-footprint accounting for one layer's sparse data.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FootprintReport {
    /// Bits for the unmasked weights alone.
    pub unmasked_weight_bits: f64,
    /// Bits for the two grouping matrices.
    pub grouping_matrix_bits: f64,
    /// Bits for the sparse row memory tuples.
    pub sparse_row_memory_bits: f64,
    /// Bits of the uncompressed dense weight matrix.
    pub dense_bits: f64,
    /// `dense / (unmasked + grouping + srm)`.
    pub compression_ratio: f64,
    /// Whether the unmasked count came from a concrete mask or from the
    /// `M*N/G` expectation.
    pub from_actual_mask: bool,
    /// Group counts above the hardware envelope are reported but flagged.
    pub beyond_hardware_envelope: bool,
}

/// Footprint of an `M x N` layer at group count `G` with `weight_bits` per
/// stored value. When `mask` is given the unmasked count is its actual
/// popcount; otherwise the `M*N/G` expectation is used and flagged.
pub fn memory_footprint(
    m: usize,
    n: usize,
    groups: usize,
    weight_bits: u32,
    mask: Option<&MaskMatrix>,
) -> Result<FootprintReport> {
    if groups == 0 {
        return Err(Error::InvalidGroupCount { groups, max: 0 });
    }
    let wb = weight_bits as f64;
    let dense_bits = (m * n) as f64 * wb;
    let (unmasked, from_actual_mask) = match mask {
        Some(mask) => (mask.popcount() as f64 * wb, true),
        None => (m as f64 * n as f64 / groups as f64 * wb, false),
    };
    let grouping = (groups * (m + n)) as f64 * wb;
    // per slot: the bitvector, a ceil(log2 N)-bit workload, and a
    // ceil(log2 G)-bit index
    let slot_bits = n + log2_ceil(n) + log2_ceil(groups);
    let srm = (groups * slot_bits) as f64;
    let compressed = unmasked + grouping + srm;
    Ok(FootprintReport {
        unmasked_weight_bits: unmasked,
        grouping_matrix_bits: grouping,
        sparse_row_memory_bits: srm,
        dense_bits,
        compression_ratio: dense_bits / compressed,
        from_actual_mask,
        beyond_hardware_envelope: groups > crate::flgw::HARDWARE_MAX_GROUPS,
    })
}

fn log2_ceil(v: usize) -> usize {
    if v <= 1 {
        0
    } else {
        (usize::BITS - (v - 1).leading_zeros()) as usize
    }
}
