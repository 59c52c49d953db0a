//! Fully learnable weight grouping.
//!
//! A layer of size `M x N` carries two trainable real matrices: an input
//! grouping `IG` of size `M x G` and an output grouping `OG` of size `G x N`,
//! where `G` is the group count. Binarizing `IG` row-wise and `OG`
//! column-wise at the argmax yields one-hot selection matrices `IS` and `OS`,
//! and their product `IS * OS` is the binary mask over the weights. A mask
//! entry is 1 exactly when the row's argmax index equals the column's argmax
//! index, which happens with probability `1/G` under random init, so `G`
//! dials the sparsity. Masked weights are excluded from compute by an
//! elementwise product; their stored values survive for later iterations.
//!
//! Gradients flow back into the grouping matrices through a straight-through
//! estimator: the binarization is treated as identity, so `dIG = dmask * OS^T`
//! and `dOG = IS^T * dmask`, and any first-order optimizer keeps the grouping
//! matrices (and therefore the mask) learning.

use std::fmt::Write as _;

use rand::Rng as _;

use crate::bits::Bitvector;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

/// Largest supported group count. Experiments sweep up to 32; group counts
/// above 16 are outside the hardware envelope and get flagged in reports.
pub const MAX_GROUPS: usize = 32;

/// Largest group count the modeled hardware supports.
pub const HARDWARE_MAX_GROUPS: usize = 16;

/// The learnable input/output grouping matrices of one layer.
#[derive(Debug, Clone)]
pub struct GroupingPair {
    ig: Matrix,
    og: Matrix,
    groups: usize,
}

impl GroupingPair {
    /// Random initialization, uniform on `[0, 1)` per entry, deterministic
    /// for a fixed seed.
    pub fn init(m: usize, n: usize, groups: usize, seed: u64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::Config(format!("degenerate layer shape {m}x{n}")));
        }
        check_group_count(groups, m, n)?;
        let mut rng = rng::rng_from_seed(seed);
        let ig = Matrix::from_fn(m, groups, |_, _| rng.random::<f64>());
        let og = Matrix::from_fn(groups, n, |_, _| rng.random::<f64>());
        Ok(GroupingPair { ig, og, groups })
    }

    /// Wrap existing grouping matrices. Shapes must agree on `G` and all
    /// entries must be finite (argmax over NaN is meaningless).
    pub fn from_matrices(ig: Matrix, og: Matrix) -> Result<Self> {
        if ig.cols() != og.rows() {
            return Err(Error::ShapeMismatch {
                what: "grouping pair",
                expected: (ig.cols(), ig.cols()),
                got: (og.rows(), og.cols()),
            });
        }
        check_group_count(ig.cols(), ig.rows(), og.cols())?;
        for (mat, name) in [(&ig, "ig"), (&og, "og")] {
            for r in 0..mat.rows() {
                for c in 0..mat.cols() {
                    if !mat.get(r, c).is_finite() {
                        let _ = name;
                        return Err(Error::NonFinite { row: r, col: c });
                    }
                }
            }
        }
        let groups = ig.cols();
        Ok(GroupingPair { ig, og, groups })
    }

    pub fn m(&self) -> usize {
        self.ig.rows()
    }

    pub fn n(&self) -> usize {
        self.og.cols()
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn ig(&self) -> &Matrix {
        &self.ig
    }

    pub fn og(&self) -> &Matrix {
        &self.og
    }

    pub fn ig_mut(&mut self) -> &mut Matrix {
        &mut self.ig
    }

    pub fn og_mut(&mut self) -> &mut Matrix {
        &mut self.og
    }

    /// Argmax index of every `IG` row.
    pub fn row_max_indexes(&self) -> MaxIndexList {
        argmax_rows(&self.ig)
    }

    /// Argmax index of every `OG` column.
    pub fn col_max_indexes(&self) -> MaxIndexList {
        argmax_cols(&self.og)
    }

    /// Derive the current mask directly from the two index lists.
    pub fn mask(&self) -> MaskMatrix {
        let rows = self.row_max_indexes();
        let cols = self.col_max_indexes();
        let bits = rows
            .values()
            .iter()
            .map(|&r| mask_row_from_indexes(r, &cols))
            .collect();
        MaskMatrix {
            rows: bits,
            groups: self.groups,
        }
    }
}

fn check_group_count(groups: usize, m: usize, n: usize) -> Result<()> {
    let max = MAX_GROUPS.min(m).min(n);
    if groups == 0 || groups > max {
        return Err(Error::InvalidGroupCount { groups, max });
    }
    Ok(())
}

/// Per-row (or per-column) argmax indexes of a grouping matrix, each in
/// `[0, G)`. The encoder consumes these; they are also the index list that
/// references sparse-row-memory slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaxIndexList {
    values: Vec<u32>,
    groups: usize,
}

impl MaxIndexList {
    pub fn new(values: Vec<u32>, groups: usize) -> Result<Self> {
        if let Some(&bad) = values.iter().find(|&&v| v as usize >= groups) {
            return Err(Error::IndexOutOfRange {
                index: bad as usize,
                bound: groups,
            });
        }
        Ok(MaxIndexList { values, groups })
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn get(&self, i: usize) -> u32 {
        self.values[i]
    }
}

/// Argmax per row, ties broken toward the lowest index so identical inputs
/// always yield identical selections.
pub fn argmax_rows(m: &Matrix) -> MaxIndexList {
    let values = (0..m.rows())
        .map(|r| {
            let row = m.row(r);
            let mut best = 0usize;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            best as u32
        })
        .collect();
    MaxIndexList {
        values,
        groups: m.cols(),
    }
}

/// Argmax per column, same tie rule as [`argmax_rows`].
pub fn argmax_cols(m: &Matrix) -> MaxIndexList {
    let values = (0..m.cols())
        .map(|c| {
            let mut best = 0usize;
            for r in 1..m.rows() {
                if m.get(r, c) > m.get(best, c) {
                    best = r;
                }
            }
            best as u32
        })
        .collect();
    MaxIndexList {
        values,
        groups: m.rows(),
    }
}

/// Which axis of a selection matrix is one-hot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Input selection: `M x G`, exactly one 1 per row.
    RowOneHot,
    /// Output selection: `G x N`, exactly one 1 per column.
    ColOneHot,
}

/// A binarized grouping matrix. Stored as explicit bit rows so the mask
/// product below is a genuine binary matrix multiply, independent of the
/// index-comparison shortcut the encoder uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMatrix {
    bits: Vec<Bitvector>,
    orientation: Orientation,
    groups: usize,
}

impl SelectionMatrix {
    /// Binarize an input grouping matrix: 1 at each row's argmax.
    pub fn from_input_grouping(ig: &Matrix) -> Self {
        let idx = argmax_rows(ig);
        let bits = idx
            .values()
            .iter()
            .map(|&k| {
                let mut row = Bitvector::zeros(ig.cols());
                row.set(k as usize, true);
                row
            })
            .collect();
        SelectionMatrix {
            bits,
            orientation: Orientation::RowOneHot,
            groups: ig.cols(),
        }
    }

    /// Binarize an output grouping matrix: 1 at each column's argmax.
    /// Stored as `G` rows of `N` bits; the mask's rows are drawn from these.
    pub fn from_output_grouping(og: &Matrix) -> Self {
        let idx = argmax_cols(og);
        let mut bits = vec![Bitvector::zeros(og.cols()); og.rows()];
        for (c, &k) in idx.values().iter().enumerate() {
            bits[k as usize].set(c, true);
        }
        SelectionMatrix {
            bits,
            orientation: Orientation::ColOneHot,
            groups: og.rows(),
        }
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    /// (rows, cols) of the represented binary matrix.
    pub fn shape(&self) -> (usize, usize) {
        match self.orientation {
            Orientation::RowOneHot => (self.bits.len(), self.groups),
            Orientation::ColOneHot => (self.bits.len(), self.bits[0].len()),
        }
    }

    #[inline]
    pub fn bit(&self, r: usize, c: usize) -> bool {
        self.bits[r].get(c)
    }

    pub fn row(&self, r: usize) -> &Bitvector {
        &self.bits[r]
    }
}

/// The binary `M x N` mask. Row `i` keeps weight `(i, j)` when bit `j` is
/// set. At most `G` distinct rows can ever occur, since every row is a row
/// of the output selection matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    rows: Vec<Bitvector>,
    groups: usize,
}

impl MaskMatrix {
    pub fn new(rows: Vec<Bitvector>, groups: usize) -> Result<Self> {
        if groups == 0 {
            return Err(Error::InvalidGroupCount { groups, max: 0 });
        }
        let mask = MaskMatrix { rows, groups };
        if let Some(first) = mask.rows.first() {
            let n = first.len();
            if mask.rows.iter().any(|r| r.len() != n) {
                return Err(Error::Config("ragged mask rows".into()));
            }
        }
        if distinct_rows(&mask.rows, groups.saturating_add(1)) > groups {
            return Err(Error::Config(format!(
                "mask has more than {groups} distinct rows"
            )));
        }
        Ok(mask)
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn n(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn row(&self, r: usize) -> &Bitvector {
        &self.rows[r]
    }

    pub fn rows(&self) -> &[Bitvector] {
        &self.rows
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.rows[r].get(c)
    }

    /// Total unmasked entries.
    pub fn popcount(&self) -> usize {
        self.rows.iter().map(|r| r.popcount()).sum()
    }

    /// Fraction of entries kept.
    pub fn density(&self) -> f64 {
        let total = self.m() * self.n();
        if total == 0 {
            return 0.0;
        }
        self.popcount() as f64 / total as f64
    }

    pub fn distinct_row_count(&self) -> usize {
        distinct_rows(&self.rows, usize::MAX)
    }

    /// Per-row unmasked counts.
    pub fn row_workloads(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.popcount()).collect()
    }

    pub fn transpose(&self) -> MaskMatrix {
        let m = self.m();
        let n = self.n();
        let mut rows = vec![Bitvector::zeros(m); n];
        for i in 0..m {
            for j in self.rows[i].ones_positions() {
                rows[j].set(i, true);
            }
        }
        MaskMatrix {
            rows,
            groups: self.groups,
        }
    }

    /// Dump format used by the golden tests: a `M N G` header line, then one
    /// ASCII `'0'`/`'1'` line of length `N` per row.
    pub fn to_dump_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {} {}", self.m(), self.n(), self.groups);
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.to_bit_string());
        }
        out
    }

    /// Parse the dump format. Validates the header, row count, row width,
    /// charset, and the distinct-rows-vs-groups bound.
    pub fn parse_dump(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::parse(1, "empty dump"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::parse(1, "header must be `M N G`"));
        }
        let m: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(1, "bad row count"))?;
        let n: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(1, "bad column count"))?;
        let groups: usize = fields[2]
            .parse()
            .map_err(|_| Error::parse(1, "bad group count"))?;
        if groups == 0 || groups > MAX_GROUPS {
            return Err(Error::parse(
                1,
                format!("group count outside 1..={MAX_GROUPS}"),
            ));
        }
        // capacity bounded by the input itself, not the declared row count
        let mut rows = Vec::with_capacity(m.min(text.len() / n.saturating_add(1).max(1) + 1));
        for i in 0..m {
            let line = lines
                .next()
                .ok_or_else(|| Error::parse(i + 2, "missing mask row"))?;
            if line.len() != n {
                return Err(Error::parse(i + 2, format!("expected {n} bits")));
            }
            rows.push(Bitvector::from_bit_str(line).map_err(|_| {
                Error::parse(i + 2, "mask rows must be '0'/'1' characters".to_string())
            })?);
        }
        if lines.next().is_some() {
            return Err(Error::parse(m + 2, "trailing content after mask rows"));
        }
        MaskMatrix::new(rows, groups)
    }
}

/// Distinct rows, giving up once `cap` have been seen.
fn distinct_rows(rows: &[Bitvector], cap: usize) -> usize {
    let mut seen: Vec<&Bitvector> = Vec::new();
    for r in rows {
        if !seen.contains(&r) {
            seen.push(r);
            if seen.len() >= cap {
                break;
            }
        }
    }
    seen.len()
}

/// Binary matrix product `IS * OS`. This is the reference construction the
/// encoder is checked against.
pub fn dense_mask(input_sel: &SelectionMatrix, output_sel: &SelectionMatrix) -> Result<MaskMatrix> {
    if input_sel.orientation() != Orientation::RowOneHot
        || output_sel.orientation() != Orientation::ColOneHot
    {
        return Err(Error::Config("selection orientations swapped".into()));
    }
    if input_sel.groups() != output_sel.groups() {
        return Err(Error::ShapeMismatch {
            what: "mask product",
            expected: (input_sel.groups(), input_sel.groups()),
            got: (output_sel.groups(), output_sel.groups()),
        });
    }
    let (m, g) = input_sel.shape();
    let (_, n) = output_sel.shape();
    let mut rows = Vec::with_capacity(m);
    for i in 0..m {
        let mut row = Bitvector::zeros(n);
        for k in 0..g {
            if !input_sel.bit(i, k) {
                continue;
            }
            for j in 0..n {
                if output_sel.bit(k, j) {
                    row.set(j, true);
                }
            }
        }
        rows.push(row);
    }
    MaskMatrix::new(rows, g)
}

/// One mask row from index comparisons alone: bit `j` is set iff the row's
/// argmax equals column `j`'s argmax. Equals the corresponding
/// [`dense_mask`] row.
pub fn mask_row_from_indexes(row_max_idx: u32, col_max: &MaxIndexList) -> Bitvector {
    let mut row = Bitvector::zeros(col_max.len());
    for (j, &c) in col_max.values().iter().enumerate() {
        if c == row_max_idx {
            row.set(j, true);
        }
    }
    row
}

/// Effective weights `w` ⊙ `mask`. The stored weights are untouched; masked
/// positions merely contribute zero downstream.
pub fn apply_mask(w: &Matrix, mask: &MaskMatrix) -> Result<Matrix> {
    if w.shape() != (mask.m(), mask.n()) {
        return Err(Error::ShapeMismatch {
            what: "apply mask",
            expected: (mask.m(), mask.n()),
            got: w.shape(),
        });
    }
    Ok(Matrix::from_fn(w.rows(), w.cols(), |r, c| {
        if mask.get(r, c) {
            w.get(r, c)
        } else {
            0.0
        }
    }))
}

/// Loss gradient w.r.t. the mask: `dmask = dw_eff` ⊙ `w` (chain rule through
/// the elementwise product in [`apply_mask`]).
pub fn mask_gradient(w: &Matrix, dw_eff: &Matrix) -> Result<Matrix> {
    if w.shape() != dw_eff.shape() {
        return Err(Error::ShapeMismatch {
            what: "mask gradient",
            expected: w.shape(),
            got: dw_eff.shape(),
        });
    }
    Ok(Matrix::from_fn(w.rows(), w.cols(), |r, c| {
        w.get(r, c) * dw_eff.get(r, c)
    }))
}

/// Loss gradient w.r.t. the stored weights: `dw = dw_eff` ⊙ `mask`. Masked
/// weights get exactly zero.
pub fn weight_gradient(dw_eff: &Matrix, mask: &MaskMatrix) -> Result<Matrix> {
    apply_mask(dw_eff, mask)
}

/// Straight-through gradients for the grouping matrices:
/// `dIG = dmask * OS^T` and `dOG = IS^T * dmask`, with the binarization
/// treated as identity.
pub fn grouping_gradients(
    dmask: &Matrix,
    input_sel: &SelectionMatrix,
    output_sel: &SelectionMatrix,
) -> Result<(Matrix, Matrix)> {
    let (m, g) = input_sel.shape();
    let (_, n) = output_sel.shape();
    if dmask.shape() != (m, n) {
        return Err(Error::ShapeMismatch {
            what: "grouping gradients",
            expected: (m, n),
            got: dmask.shape(),
        });
    }
    if input_sel.groups() != output_sel.groups() {
        return Err(Error::ShapeMismatch {
            what: "grouping gradients",
            expected: (input_sel.groups(), input_sel.groups()),
            got: (output_sel.groups(), output_sel.groups()),
        });
    }
    let mut dig = Matrix::zeros(m, g);
    for i in 0..m {
        for k in 0..g {
            let mut acc = 0.0;
            for j in output_sel.row(k).ones_positions() {
                acc += dmask.get(i, j);
            }
            dig.set(i, k, acc);
        }
    }
    let mut dog = Matrix::zeros(g, n);
    for i in 0..m {
        // IS row i is one-hot; only its argmax group receives this row.
        let k = input_sel
            .row(i)
            .ones_positions()
            .first()
            .copied()
            .expect("row-one-hot invariant");
        for j in 0..n {
            dog.set(k, j, dog.get(k, j) + dmask.get(i, j));
        }
    }
    Ok((dig, dog))
}

/// Expected mask density `1/G` under uniform random grouping init.
pub fn expected_density(groups: usize) -> f64 {
    debug_assert!(groups >= 1);
    1.0 / groups as f64
}
