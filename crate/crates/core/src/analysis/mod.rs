//! Closed-form and semi-analytical performance predictions.
//!
//! Rates here follow the usual complex-baseband convention (bits per
//! complex channel use). The simulator carries one real coded symbol per
//! channel use, so comparisons against simulated rates use
//! [`per_real_dimension`].

mod de;

pub use de::{
    approx_mean, de_trajectory_rows, density_evolution, BerMapping, DeClass, DeConfig, DeMode, DeOptions, DeRow,
    DeState, MAX_EXACT_DEVICES,
};

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::GaussLegendre;
use rand_distr::{Binomial, Distribution};

use crate::codec::{CodeParams, RowGenerator, WeightSet};
use crate::masim::ACTIVITY_STREAM;
use crate::rng::stream_rng;

use crate::error::{invalid, Result};
use crate::special::{binomial, q_func, q_inv};

/// Beyond `|z| > TANH_CUT` the deficit `1 - tanh z` is replaced by its
/// asymptote, which is exact to ~1e-17.
const TANH_CUT: f64 = 20.0;
/// Gaussian mass beyond this many standard deviations is dropped.
const GAUSS_CUT: f64 = 12.0;
const PANEL_NODES: usize = 16;

fn panel_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(PANEL_NODES).unwrap()))
}

/// `Omega(x) = E[1 - tanh(x - Y sqrt(x))]` for standard normal `Y`.
///
/// Evaluated in the variable `z = x - Y sqrt(x) ~ N(x, x)`. The two regions
/// `|z| > 20` have closed forms (each contributes `2 Q((x + 20)/sqrt(x))`);
/// the rest is integrated with composite 16-point Gauss-Legendre on panels
/// no wider than the Gaussian's standard deviation. Absolute error is below
/// 1e-12 on `[0, 100]`.
pub fn omega(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return invalid(format!("omega requires x >= 0, got {x}"));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    let s = x.sqrt();
    let tails = 4.0 * q_func((x + TANH_CUT) / s);
    let lo = (x - GAUSS_CUT * s).max(-TANH_CUT);
    let hi = (x + GAUSS_CUT * s).min(TANH_CUT);
    if lo >= hi {
        return Ok(tails);
    }
    let width = s.min(1.0);
    let panels = ((hi - lo) / width).ceil().max(1.0) as usize;
    let h = (hi - lo) / panels as f64;
    let inv_norm = 1.0 / (s * (2.0 * std::f64::consts::PI).sqrt());
    let f = |z: f64| {
        let y = (x - z) / s;
        // 1 - tanh z = 2 / (1 + e^{2z}), stable for either sign.
        2.0 / (1.0 + (2.0 * z).exp()) * (-0.5 * y * y).exp() * inv_norm
    };
    let rule = panel_rule();
    let middle: f64 = (0..panels)
        .map(|i| {
            let a = lo + i as f64 * h;
            rule.integrate(a, a + h, f)
        })
        .sum();
    Ok(middle + tails)
}

/// BER of a consistent-Gaussian LLR with mean `m`, `Q(sqrt(m))`.
pub fn ber_from_mean(m: f64) -> f64 {
    q_func(m.max(0.0).sqrt())
}

/// Predicted BER of device `i` from the BER of device `j` and the ratio
/// `(|h_i|^2 d_i p_i) / (|h_j|^2 d_j p_j)`: `Q(sqrt(ratio) Q^{-1}(ber_j))`.
pub fn approx_ber_transfer(ber_j: f64, ratio: f64) -> Result<f64> {
    if !(ber_j > 0.0 && ber_j < 0.5) {
        return invalid(format!("reference BER must be in (0, 0.5), got {ber_j}"));
    }
    if !(ratio > 0.0) {
        return invalid("gain ratio must be > 0");
    }
    let x = q_inv(ber_j).expect("ber in (0, 0.5)");
    Ok(q_func(ratio.sqrt() * x))
}

/// Largest common rate for a coordinated MAC with the given received gains:
/// `min_j (1/j) log2(1 + gamma * sum of the j largest gains)`.
pub fn common_rate_bound(gains: &[f64], gamma: f64) -> Result<f64> {
    if gains.is_empty() {
        return invalid("gains must be non-empty");
    }
    if gains.iter().any(|g| !(*g >= 0.0)) || !(gamma > 0.0) {
        return invalid("gains must be >= 0 and gamma > 0");
    }
    let mut sorted = gains.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut best = f64::INFINITY;
    for (j, g) in sorted.iter().enumerate() {
        acc += g;
        best = best.min((1.0 + gamma * acc).log2() / (j + 1) as f64);
    }
    Ok(best)
}

/// Common rate with `n` users all received at SNR `gamma0`:
/// `(1/n) log2(1 + n gamma0)`.
pub fn equal_snr_rate(n: usize, gamma0: f64) -> Result<f64> {
    if n == 0 {
        return invalid("n must be >= 1");
    }
    if !(gamma0 > 0.0) {
        return invalid("gamma0 must be > 0");
    }
    Ok((1.0 + n as f64 * gamma0).log2() / n as f64)
}

/// Converts a rate per complex channel use into one per real channel use.
pub fn per_real_dimension(rate: f64) -> f64 {
    0.5 * rate
}

/// Largest per-device payload in one block of `duration_s * bandwidth_hz`
/// channel uses at the equal-SNR common rate.
pub fn optimal_payload(duration_s: f64, bandwidth_hz: f64, n: usize, gamma0: f64) -> Result<f64> {
    if !(duration_s >= 0.0 && bandwidth_hz >= 0.0) {
        return invalid("duration and bandwidth must be >= 0");
    }
    Ok(duration_s * bandwidth_hz * equal_snr_rate(n, gamma0)?)
}

/// `beta = m p d_c / k`, snapped to the nearest integer within 1e-9 so that
/// integral loads are not pushed up a degree by rounding.
fn mean_column_degree(m: usize, p: f64, d_c: usize, k: usize) -> f64 {
    let beta = m as f64 * p * d_c as f64 / k as f64;
    if (beta - beta.round()).abs() < 1e-9 {
        beta.round()
    } else {
        beta
    }
}

/// Probability that two given columns of the received generator matrix are
/// identical, for `m` channel uses, access probability `p`, row degree
/// `d_c`, `k` bits and `weight_set_size` weights.
pub fn column_collision_prob(m: usize, p: f64, d_c: usize, k: usize, weight_set_size: usize) -> Result<f64> {
    if k == 0 || weight_set_size == 0 {
        return invalid("k and D must be >= 1");
    }
    let beta = mean_column_degree(m, p, d_c, k);
    if !(beta > 0.0) {
        return invalid("m p d_c / k must be > 0");
    }
    let d_v = beta.ceil();
    if d_v > m as f64 {
        return invalid(format!("column degree {d_v} exceeds m={m}"));
    }
    let dd = weight_set_size as f64;
    let first = (1.0 + beta - d_v).powi(2) * (m as f64 - d_v + 1.0) / (dd * d_v);
    let second = (d_v - beta).powi(2);
    let denom = dd.powf(d_v - 1.0) * binomial(m as u64, d_v as u64 - 1);
    Ok((first + second) / denom)
}

/// Fraction of identical column pairs (same rows, same signed weights) in
/// one sampled generator matrix: `m` channel uses, each carrying a coded
/// symbol with probability `p`. Averaging over seeds estimates
/// [`column_collision_prob`].
pub fn identical_column_fraction(
    m: usize,
    p: f64,
    d_c: usize,
    k: usize,
    weight_set_size: usize,
    seed: u64,
) -> Result<f64> {
    if k < 2 {
        return invalid("need k >= 2 columns");
    }
    if !(0.0..=1.0).contains(&p) {
        return invalid("p must be in [0, 1]");
    }
    let params = CodeParams::new(k, d_c, WeightSet::normalized(weight_set_size)?)?;
    let active = Binomial::new(m as u64, p)
        .map_err(|e| crate::Error::InvalidArgument(e.to_string()))?
        .sample(&mut stream_rng(seed, ACTIVITY_STREAM));
    let mut gen = RowGenerator::new(params, seed);
    let mut cols: Vec<Vec<(usize, u64)>> = vec![Vec::new(); k];
    for r in 0..active as usize {
        for e in gen.next_row() {
            cols[e.col].push((r, e.weight.to_bits()));
        }
    }
    cols.sort_unstable();
    let mut pairs = 0u64;
    let mut run = 1u64;
    for w in cols.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            pairs += run * (run - 1) / 2;
            run = 1;
        }
    }
    pairs += run * (run - 1) / 2;
    Ok(pairs as f64 / (k as u64 * (k as u64 - 1) / 2) as f64)
}

/// Probability that two rows drawing `d_l` and `d_m` distinct weight indices
/// out of `weight_set_size` share at least one.
pub fn common_weight_prob(d_l: usize, d_m: usize, weight_set_size: usize) -> f64 {
    if d_l > weight_set_size || d_m > weight_set_size - d_l {
        return 1.0;
    }
    let n = weight_set_size as u64;
    1.0 - binomial(n - d_l as u64, d_m as u64) / binomial(n, d_m as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    // 30-digit quadrature of the defining integral.
    const OMEGA_REF: [(f64, f64); 8] = [
        (0.5, 0.6498865953248691),
        (1.0, 0.44959950920667285),
        (2.0, 0.2310182219292956),
        (5.0, 0.03846281136938268),
        (10.0, 0.0024113147354122575),
        (20.0, 1.2036620875489877e-05),
        (50.0, 2.404252518816518e-12),
        (100.0, 2.38838347127114e-23),
    ];

    #[test]
    fn omega_reference_values() {
        assert_eq!(omega(0.0).unwrap(), 1.0);
        for (x, want) in OMEGA_REF {
            let got = omega(x).unwrap();
            assert!((got - want).abs() < 1e-12, "x={x}: {got} vs {want}");
        }
        assert!(omega(-1e-3).is_err());
    }

    #[test]
    fn omega_small_argument_is_continuous() {
        let a = omega(1e-10).unwrap();
        assert!((a - 1.0).abs() < 1e-4);
        // Omega(x) ~ 1 - x near zero.
        assert!((omega(1e-3).unwrap() - (1.0 - 1e-3)).abs() < 1e-5);
    }

    #[test]
    fn omega_decreasing() {
        let mut prev = omega(0.0).unwrap();
        for i in 1..=400 {
            let v = omega(i as f64 * 0.25).unwrap();
            assert!(v < prev && v > 0.0, "x={}", i as f64 * 0.25);
            prev = v;
        }
    }

    #[test]
    fn ber_mapping() {
        assert_eq!(ber_from_mean(0.0), 0.5);
        let t = q_inv(1e-3).unwrap();
        assert!((ber_from_mean(t * t) / 1e-3 - 1.0).abs() < 1e-6);
        // Truncated argument; reference from a 30-digit erfc.
        assert!((ber_from_mean(9.5494) - 1.000_073_934_851_330_9e-3).abs() < 1e-15);
        assert!(ber_from_mean(2.0) > ber_from_mean(3.0));
    }

    #[test]
    fn ber_transfer() {
        assert!((approx_ber_transfer(0.01, 1.0).unwrap() - 0.01).abs() < 1e-10);
        let x = q_inv(0.01).unwrap();
        let want = q_func(2f64.sqrt() * x);
        assert!((approx_ber_transfer(0.01, 2.0).unwrap() - want).abs() < 1e-15);
        assert!(approx_ber_transfer(0.01, 2.0).unwrap() < 0.01);
        assert!(approx_ber_transfer(0.5, 2.0).is_err());
        assert!(approx_ber_transfer(0.01, 0.0).is_err());
    }

    #[test]
    fn rates() {
        assert_eq!(equal_snr_rate(1, 1.0).unwrap(), 1.0);
        assert!((equal_snr_rate(10, 1.0).unwrap() - 11f64.log2() / 10.0).abs() < 1e-15);
        assert!((equal_snr_rate(10, 1.0).unwrap() - 0.34594).abs() < 1e-5);
        let b = common_rate_bound(&[1.0, 1.0], 1.0).unwrap();
        assert!((b - 0.5 * 3f64.log2()).abs() < 1e-15);
        assert!(common_rate_bound(&[], 1.0).is_err());
        // Unsorted input is sorted internally.
        assert_eq!(common_rate_bound(&[0.5, 4.0], 1.0).unwrap(), common_rate_bound(&[4.0, 0.5], 1.0).unwrap());
        let l = optimal_payload(1e-3, 1e7, 10, 1.0).unwrap();
        assert!((l - 1e4 * 11f64.log2() / 10.0).abs() < 1e-9);
    }

    #[test]
    fn sum_rate_grows_logarithmically() {
        for n in 1..50 {
            let a = n as f64 * equal_snr_rate(n, 1.0).unwrap();
            let b = (n + 1) as f64 * equal_snr_rate(n + 1, 1.0).unwrap();
            assert!(b > a);
            assert!((b - (2.0 + n as f64).log2()).abs() < 1e-12);
        }
    }

    #[test]
    fn column_collision_worked_example() {
        let q = column_collision_prob(100, 0.5, 4, 100, 10).unwrap();
        // beta = 2, d_v = 2: (99 / 20) / (10 * 100)
        assert!((q - 0.00495).abs() < 1e-15);
        assert!(column_collision_prob(1, 1.0, 4, 1, 10).is_err());
        assert!(column_collision_prob(100, 0.0, 4, 100, 10).is_err());
    }

    #[test]
    fn common_weight_enumeration() {
        // Oracle: count pairs of 2-subsets of 10 indices that intersect.
        let subsets: Vec<u32> = (0u32..1 << 10).filter(|s| s.count_ones() == 2).collect();
        let hit = subsets.iter().flat_map(|a| subsets.iter().map(move |b| a & b != 0)).filter(|&x| x).count();
        let want = hit as f64 / (subsets.len() * subsets.len()) as f64;
        assert!((common_weight_prob(2, 2, 10) - want).abs() < 1e-14);
        assert!((common_weight_prob(2, 2, 10) - 17.0 / 45.0).abs() < 1e-14);
        assert_eq!(common_weight_prob(2, 0, 10), 0.0);
        assert_eq!(common_weight_prob(6, 5, 10), 1.0);
        let mut prev = 1.0;
        for d in 4..200 {
            let p = common_weight_prob(2, 2, d);
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn identical_columns_edge_cases() {
        // No symbols received: every column is empty and equal.
        assert_eq!(identical_column_fraction(50, 0.0, 2, 10, 4, 1).unwrap(), 1.0);
        // One symbol of degree 1 over two columns separates them.
        assert_eq!(identical_column_fraction(1, 1.0, 1, 2, 1, 1).unwrap(), 0.0);
        assert!(identical_column_fraction(5, 1.0, 1, 1, 1, 1).is_err());
    }

    #[test]
    fn identical_columns_match_dense_comparison() {
        for seed in 0..20 {
            let (m, k, d_c, dd) = (6, 8, 2, 2);
            let f = identical_column_fraction(m, 1.0, d_c, k, dd, seed).unwrap();
            let g = crate::codec::build_graph(k, m, d_c, &WeightSet::normalized(dd).unwrap(), seed).unwrap();
            let dense = g.to_dense();
            let col = |c: usize| dense.iter().map(|r| r[c]).collect::<Vec<_>>();
            let mut same = 0;
            for a in 0..k {
                for b in a + 1..k {
                    same += usize::from(col(a) == col(b));
                }
            }
            assert_eq!(f, same as f64 / 28.0, "seed {seed}");
        }
    }
}
