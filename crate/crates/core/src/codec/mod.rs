//! Analog fountain code construction, encoding and belief-propagation
//! decoding.
//!
//! A coded symbol is a real weighted sum of `d_c` BPSK-modulated message
//! bits. Columns are picked by a degree-balancing rule (always among the
//! least-used bits), weight magnitudes are drawn uniformly from a finite
//! [`WeightSet`], and each nonzero carries an independent uniform sign so
//! that coded symbols are zero mean.

mod bp;
mod text;

pub use bp::{bp_decode, bp_decode_with, BpOptions, DecodeResult, Observation, MAX_EXACT_CAP};
pub use text::{read_graph, write_graph};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::rng::stream_rng;

/// Finite set of strictly positive weight magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    weights: Vec<f64>,
    sigma2_w: f64,
}

impl WeightSet {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return invalid("weight set must be non-empty");
        }
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return invalid("weights must be finite and strictly positive");
        }
        let sigma2_w = weights.iter().map(|w| w * w).sum::<f64>() / weights.len() as f64;
        Ok(Self { weights, sigma2_w })
    }

    /// `D` equally spaced magnitudes `{1, ..., D} / c` with `c` chosen so the
    /// mean squared weight is one.
    pub fn normalized(size: usize) -> Result<Self> {
        if size == 0 {
            return invalid("weight set size must be at least 1");
        }
        let d = size as f64;
        // (1/D) * sum i^2 = (D + 1)(2D + 1) / 6
        let c = ((d + 1.0) * (2.0 * d + 1.0) / 6.0).sqrt();
        Self::new((1..=size).map(|i| i as f64 / c).collect())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Mean squared weight `(1/D) * sum w_i^2`.
    pub fn sigma2_w(&self) -> f64 {
        self.sigma2_w
    }

    pub fn contains_magnitude(&self, w: f64) -> bool {
        let a = w.abs();
        self.weights.contains(&a)
    }
}

/// One nonzero of a code graph row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub col: usize,
    pub weight: f64,
}

/// Sparse weighted bipartite code graph: one row per coded symbol.
///
/// Graphs built by [`build_graph`] have a fixed row degree. Graphs
/// assembled at the receiver from several superposed devices have a
/// varying degree (including empty rows for silent channel uses), which is
/// recorded as `degree == None`.
#[derive(Debug, Clone, PartialEq)]
pub struct AfcGraph {
    k: usize,
    degree: Option<usize>,
    rows: Vec<Vec<Entry>>,
}

impl AfcGraph {
    /// Assembles a graph from explicit rows, checking column bounds and
    /// distinctness within each row.
    pub fn from_rows(k: usize, rows: Vec<Vec<Entry>>) -> Result<Self> {
        let mut seen = vec![usize::MAX; k];
        for (i, row) in rows.iter().enumerate() {
            for e in row {
                if e.col >= k {
                    return invalid(format!("row {i} references column {} >= k={k}", e.col));
                }
                if seen[e.col] == i {
                    return invalid(format!("row {i} references column {} twice", e.col));
                }
                if !e.weight.is_finite() {
                    return invalid(format!("row {i} has a non-finite weight"));
                }
                seen[e.col] = i;
            }
        }
        let degree = match rows.first() {
            Some(first) if rows.iter().all(|r| r.len() == first.len()) => Some(first.len()),
            _ => None,
        };
        Ok(Self { k, degree, rows })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Row degree when every row has the same number of nonzeros.
    pub fn degree(&self) -> Option<usize> {
        self.degree
    }

    pub fn rows(&self) -> &[Vec<Entry>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[Entry] {
        &self.rows[i]
    }

    /// Number of rows referencing each column.
    pub fn variable_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.k];
        for e in self.rows.iter().flatten() {
            deg[e.col] += 1;
        }
        deg
    }

    /// The graph restricted to its first `n` rows.
    pub fn truncated(&self, n: usize) -> Self {
        let rows = self.rows[..n.min(self.rows.len())].to_vec();
        let degree = match rows.first() {
            Some(first) if rows.iter().all(|r| r.len() == first.len()) => Some(first.len()),
            _ => None,
        };
        Self { k: self.k, degree, rows }
    }

    /// Dense `n_rows x k` generator matrix.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut g = vec![vec![0.0; self.k]; self.rows.len()];
        for (i, row) in self.rows.iter().enumerate() {
            for e in row {
                g[i][e.col] += e.weight;
            }
        }
        g
    }
}

/// A length-`k` binary message and its BPSK image (bit 0 -> +1, bit 1 -> -1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageBlock {
    bits: Vec<u8>,
    bpsk: Vec<i8>,
}

impl MessageBlock {
    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return invalid("message bits must be 0 or 1");
        }
        let bpsk = bits.iter().map(|&b| 1 - 2 * b as i8).collect();
        Ok(Self { bits, bpsk })
    }

    pub fn random(k: usize, rng: &mut impl Rng) -> Self {
        let bits: Vec<u8> = (0..k).map(|_| rng.random_range(0..2u8)).collect();
        Self::from_bits(bits).expect("bits are binary")
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn bpsk(&self) -> &[i8] {
        &self.bpsk
    }

    /// Number of positions where `other` differs.
    pub fn bit_errors(&self, other: &[u8]) -> usize {
        self.bits.iter().zip(other).filter(|(a, b)| a != b).count()
    }
}

/// Code parameters shared by a device and the base station.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeParams {
    pub k: usize,
    pub d_c: usize,
    pub weights: WeightSet,
}

impl CodeParams {
    pub fn new(k: usize, d_c: usize, weights: WeightSet) -> Result<Self> {
        if d_c < 1 {
            return invalid("code degree d_c must be at least 1");
        }
        if d_c > k {
            return invalid(format!("code degree d_c={d_c} exceeds k={k}"));
        }
        Ok(Self { k, d_c, weights })
    }
}

/// Stateful degree-balanced row generator.
///
/// Each call to [`RowGenerator::next_row`] draws `d_c` distinct columns
/// uniformly among the columns of currently minimum degree (topping up from
/// the next degree level when fewer than `d_c` remain), so column degrees
/// never differ by more than one. The same seed yields the same row
/// sequence at the device and at the base station.
#[derive(Debug, Clone)]
pub struct RowGenerator {
    params: CodeParams,
    /// Columns at the current minimum degree.
    pool: Vec<usize>,
    rng: ChaCha8Rng,
    rows_emitted: usize,
}

/// Stream used by graph construction; activity draws use another stream of
/// the same seed.
pub(crate) const GRAPH_STREAM: u64 = 0;

impl RowGenerator {
    pub fn new(params: CodeParams, seed: u64) -> Self {
        let pool = (0..params.k).collect();
        Self { params, pool, rng: stream_rng(seed, GRAPH_STREAM), rows_emitted: 0 }
    }

    pub fn params(&self) -> &CodeParams {
        &self.params
    }

    pub fn rows_emitted(&self) -> usize {
        self.rows_emitted
    }

    fn take_from_pool(&mut self, n: usize, exclude: &[usize], out: &mut Vec<usize>) {
        // Partial Fisher-Yates restricted to pool members not in `exclude`.
        let mut eligible: Vec<usize> = (0..self.pool.len()).filter(|&i| !exclude.contains(&self.pool[i])).collect();
        let mut picked_slots = Vec::with_capacity(n);
        for i in 0..n {
            let j = self.rng.random_range(i..eligible.len());
            eligible.swap(i, j);
            picked_slots.push(eligible[i]);
        }
        picked_slots.sort_unstable_by(|a, b| b.cmp(a));
        for slot in picked_slots {
            out.push(self.pool.swap_remove(slot));
        }
    }

    pub fn next_row(&mut self) -> Vec<Entry> {
        let d_c = self.params.d_c;
        let mut cols = Vec::with_capacity(d_c);
        if self.pool.len() >= d_c {
            self.take_from_pool(d_c, &[], &mut cols);
        } else {
            // Every remaining minimum-degree column is used; the rest come
            // from the next level, which becomes the new minimum.
            cols.append(&mut self.pool);
            self.pool = (0..self.params.k).collect();
            let first = cols.clone();
            self.take_from_pool(d_c - first.len(), &first, &mut cols);
        }
        if self.pool.is_empty() {
            self.pool = (0..self.params.k).collect();
        }
        cols.sort_unstable();
        let w = self.params.weights.weights();
        let row = cols
            .into_iter()
            .map(|col| {
                let mag = w[self.rng.random_range(0..w.len())];
                let weight = if self.rng.random::<bool>() { mag } else { -mag };
                Entry { col, weight }
            })
            .collect();
        self.rows_emitted += 1;
        row
    }
}

/// Builds an `n_rows x k` degree-balanced code graph.
pub fn build_graph(k: usize, n_rows: usize, d_c: usize, weights: &WeightSet, seed: u64) -> Result<AfcGraph> {
    if n_rows < 1 {
        return invalid("n_rows must be at least 1");
    }
    let params = CodeParams::new(k, d_c, weights.clone())?;
    let mut gen = RowGenerator::new(params, seed);
    let rows = (0..n_rows).map(|_| gen.next_row()).collect();
    Ok(AfcGraph { k, degree: Some(d_c), rows })
}

/// Coded symbols `c = G b` for a BPSK message.
pub fn encode(graph: &AfcGraph, msg: &MessageBlock) -> Result<Vec<f64>> {
    if msg.len() != graph.k {
        return invalid(format!("message length {} does not match k={}", msg.len(), graph.k));
    }
    Ok(graph.rows.iter().map(|row| encode_row(row, msg.bpsk())).collect())
}

/// One coded symbol.
pub fn encode_row(row: &[Entry], bpsk: &[i8]) -> f64 {
    row.iter().map(|e| e.weight * bpsk[e.col] as f64).sum()
}
