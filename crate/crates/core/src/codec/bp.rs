//! Flooding belief propagation on a weighted code graph.
//!
//! Messages are log-likelihood ratios `ln P(x=+1)/P(x=-1)` of the BPSK
//! symbol. A check node sees `y = a * sum_r w_r x_r + z` with
//! `z ~ N(0, noise_var)`. Its extrinsic messages are computed by exact
//! marginalization over the other bits when the row is small enough, and by
//! a Gaussian approximation of the interference otherwise.

use super::AfcGraph;
use crate::error::{invalid, Result};

/// One received value for a graph row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub value: f64,
    pub noise_var: f64,
    /// Channel amplitude multiplying every weight of the row.
    pub scale: f64,
}

impl Observation {
    pub fn new(value: f64, noise_var: f64, scale: f64) -> Self {
        Self { value, noise_var, scale }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpOptions {
    pub max_iter: usize,
    /// Stop once the mean absolute change of the total LLRs drops below this.
    pub tol: f64,
    /// Largest row degree decoded by exhaustive marginalization.
    pub exact_cap: usize,
}

impl Default for BpOptions {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-4, exact_cap: 16 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub llr: Vec<f64>,
    pub hard_bits: Vec<u8>,
    pub iterations_used: usize,
    pub converged: bool,
}

/// Exhaustive marginalization is capped here regardless of options.
pub const MAX_EXACT_CAP: usize = 24;

/// Decodes with `max_iter` and `tol` and the default exact-marginalization cap.
pub fn bp_decode(graph: &AfcGraph, obs: &[Observation], max_iter: usize, tol: f64) -> Result<DecodeResult> {
    let opts = BpOptions { max_iter, tol, ..BpOptions::default() };
    bp_decode_with(graph, obs, &opts, None)
}

/// Decodes with explicit options. `init_llr` seeds the variable-to-check
/// messages (a warm start); `None` starts from uniform priors.
pub fn bp_decode_with(
    graph: &AfcGraph,
    obs: &[Observation],
    opts: &BpOptions,
    init_llr: Option<&[f64]>,
) -> Result<DecodeResult> {
    if obs.is_empty() {
        return invalid("observations must be non-empty");
    }
    if obs.len() != graph.n_rows() {
        return invalid(format!("{} observations for {} graph rows", obs.len(), graph.n_rows()));
    }
    if let Some(o) = obs.iter().find(|o| !(o.noise_var > 0.0)) {
        return invalid(format!("noise variance must be positive, got {}", o.noise_var));
    }
    if opts.exact_cap > MAX_EXACT_CAP {
        return invalid(format!("exact_cap {} exceeds {MAX_EXACT_CAP}", opts.exact_cap));
    }
    let k = graph.k();
    if let Some(init) = init_llr {
        if init.len() != k {
            return invalid("warm-start LLR length must equal k");
        }
    }

    // Flat edge arrays in row order.
    let mut row_start = Vec::with_capacity(graph.n_rows() + 1);
    let mut edge_col = Vec::new();
    let mut edge_gain = Vec::new();
    row_start.push(0);
    for (row, o) in graph.rows().iter().zip(obs) {
        for e in row {
            edge_col.push(e.col);
            edge_gain.push(o.scale * e.weight);
        }
        row_start.push(edge_col.len());
    }
    let n_edges = edge_col.len();

    let mut v2c: Vec<f64> = match init_llr {
        Some(init) => edge_col.iter().map(|&c| init[c]).collect(),
        None => vec![0.0; n_edges],
    };
    let mut c2v = vec![0.0; n_edges];
    let mut total = vec![0.0; k];
    let mut prev_total = init_llr.map_or_else(|| vec![0.0; k], <[f64]>::to_vec);

    let mut scratch = CheckScratch::default();
    let mut iterations_used = 0;
    let mut converged = false;
    for _ in 0..opts.max_iter {
        iterations_used += 1;
        for (i, o) in obs.iter().enumerate() {
            let (a, b) = (row_start[i], row_start[i + 1]);
            if a == b {
                continue;
            }
            let gains = &edge_gain[a..b];
            let inc = &v2c[a..b];
            let out = &mut c2v[a..b];
            if b - a <= opts.exact_cap {
                check_exact(o.value, o.noise_var, gains, inc, out, &mut scratch);
            } else {
                check_gaussian(o.value, o.noise_var, gains, inc, out);
            }
        }

        total.iter_mut().for_each(|t| *t = 0.0);
        for (e, &c) in edge_col.iter().enumerate() {
            total[c] += c2v[e];
        }
        for (e, &c) in edge_col.iter().enumerate() {
            v2c[e] = total[c] - c2v[e];
        }

        let change = total.iter().zip(&prev_total).map(|(a, b)| (a - b).abs()).sum::<f64>() / k.max(1) as f64;
        std::mem::swap(&mut prev_total, &mut total);
        if change < opts.tol {
            converged = true;
            break;
        }
    }

    let llr = prev_total;
    let hard_bits = llr.iter().map(|&l| u8::from(l < 0.0)).collect();
    Ok(DecodeResult { llr, hard_bits, iterations_used, converged })
}

#[derive(Default)]
struct CheckScratch {
    // Running (max, scaled sum) per (variable, sign) for log-sum-exp.
    acc_max: Vec<[f64; 2]>,
    acc_sum: Vec<[f64; 2]>,
}

/// Exact check-to-variable messages by Gray-code enumeration of all `2^d`
/// sign patterns of the row.
fn check_exact(y: f64, var: f64, gains: &[f64], inc: &[f64], out: &mut [f64], s: &mut CheckScratch) {
    let d = gains.len();
    s.acc_max.clear();
    s.acc_max.resize(d, [f64::NEG_INFINITY; 2]);
    s.acc_sum.clear();
    s.acc_sum.resize(d, [0.0; 2]);

    // State: bit r set means x_r = -1. Start from all +1.
    let mut state: u32 = 0;
    let mut sum: f64 = gains.iter().sum();
    let mut prior: f64 = inc.iter().map(|l| 0.5 * l).sum();
    let inv2var = 0.5 / var;
    let n = 1u32 << d;
    for step in 0..n {
        if step > 0 {
            let r = step.trailing_zeros() as usize;
            state ^= 1 << r;
            let x = if state & (1 << r) != 0 { -1.0 } else { 1.0 };
            // Flip from -x to x.
            sum += 2.0 * x * gains[r];
            prior += x * inc[r];
        }
        let resid = y - sum;
        let metric = prior - resid * resid * inv2var;
        for r in 0..d {
            let sign = ((state >> r) & 1) as usize;
            let m = &mut s.acc_max[r][sign];
            let acc = &mut s.acc_sum[r][sign];
            if metric > *m {
                *acc = *acc * (*m - metric).exp() + 1.0;
                *m = metric;
            } else {
                *acc += (metric - *m).exp();
            }
        }
    }
    for r in 0..d {
        let plus = s.acc_max[r][0] + s.acc_sum[r][0].ln();
        let minus = s.acc_max[r][1] + s.acc_sum[r][1].ln();
        // Remove the target's own prior contribution (+l/2 vs -l/2).
        out[r] = plus - minus - inc[r];
    }
}

/// Gaussian-approximation check update: the other bits are replaced by a
/// Gaussian with the mean and variance implied by their soft estimates.
fn check_gaussian(y: f64, var: f64, gains: &[f64], inc: &[f64], out: &mut [f64]) {
    let mut mean = 0.0;
    let mut spread = 0.0;
    for (&g, &l) in gains.iter().zip(inc) {
        let mu = (0.5 * l).tanh();
        mean += g * mu;
        spread += g * g * (1.0 - mu * mu);
    }
    for ((o, &g), &l) in out.iter_mut().zip(gains).zip(inc) {
        let mu = (0.5 * l).tanh();
        let mean_o = mean - g * mu;
        let spread_o = (spread - g * g * (1.0 - mu * mu)).max(0.0);
        *o = 2.0 * g * (y - mean_o) / (var + spread_o);
    }
}
