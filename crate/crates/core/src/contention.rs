//! Contention phase: delay-group preamble partitioning, multiplicity
//! estimation, random-seed sizing and overhead accounting.
//!
//! Devices that pick the same preamble share a resource block. The base
//! station estimates how many did so from the preamble's received energy
//! and broadcasts a seed length; each device then draws a nonzero seed of
//! that many bits, and decoding needs the seeds on a preamble to be
//! distinct.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::rng::stream_rng;
use crate::table::CsvRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct PreamblePlan {
    pub n_preambles: usize,
    /// `groups[g]` lists the preamble indices reserved for delay group `g`.
    pub groups: Vec<Vec<usize>>,
    /// Per-group deadline in seconds.
    pub deadlines: Vec<f64>,
}

impl PreamblePlan {
    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Group owning preamble `s`.
    pub fn group_of(&self, s: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&s))
    }
}

/// Splits `n_preambles` into one contiguous block per deadline, sizes
/// differing by at most one (earlier groups take the remainder).
pub fn partition_preambles(n_preambles: usize, deadlines: &[f64]) -> Result<PreamblePlan> {
    let n_groups = deadlines.len();
    if n_groups == 0 {
        return invalid("at least one delay group is required");
    }
    if n_groups > n_preambles {
        return invalid(format!("{n_groups} delay groups exceed {n_preambles} preambles"));
    }
    let (base, extra) = (n_preambles / n_groups, n_preambles % n_groups);
    let mut next = 0;
    let groups = (0..n_groups)
        .map(|g| {
            let size = base + usize::from(g < extra);
            let set = (next..next + size).collect();
            next += size;
            set
        })
        .collect();
    Ok(PreamblePlan { n_preambles, groups, deadlines: deadlines.to_vec() })
}

/// Matched-filter amplitude divided by `sqrt(gamma0)`, rounded to the
/// nearest non-negative integer.
pub fn estimate_multiplicity(amplitude: f64, gamma0: f64) -> Result<usize> {
    if !(gamma0 > 0.0) {
        return invalid("gamma0 must be > 0");
    }
    Ok((amplitude / gamma0.sqrt()).round().max(0.0) as usize)
}

/// Received preamble amplitude for `multiplicity` power-controlled senders.
pub fn preamble_amplitude(multiplicity: usize, gamma0: f64, noise_var: f64, rng: &mut impl Rng) -> f64 {
    let clean = multiplicity as f64 * gamma0.sqrt();
    if noise_var == 0.0 {
        return clean;
    }
    clean + Normal::new(0.0, noise_var.sqrt()).expect("variance checked").sample(rng)
}

/// Probability that a given device's `L`-bit nonzero seed differs from
/// those of all `multiplicity - 1` competitors,
/// `(1 - 1/(2^L - 1))^(multiplicity - 1)`.
pub fn seed_uniqueness_prob(seed_len: u32, multiplicity: f64) -> Result<f64> {
    if seed_len == 0 {
        return invalid("seed length must be >= 1");
    }
    if !(multiplicity >= 1.0) {
        return invalid("multiplicity must be >= 1");
    }
    let space = 2f64.powi(seed_len as i32) - 1.0;
    Ok((1.0 - 1.0 / space).powf(multiplicity - 1.0))
}

/// Probability that a given device's seed is shared with a competitor:
/// one minus [`seed_uniqueness_prob`].
pub fn seed_collision_prob(seed_len: u32, multiplicity: f64) -> Result<f64> {
    Ok(1.0 - seed_uniqueness_prob(seed_len, multiplicity)?)
}

/// Smallest seed length whose collision probability is at most `epsilon`.
/// A multiplicity of at most one needs no disambiguation and gets the
/// protocol minimum of one bit.
pub fn required_seed_length(epsilon: f64, multiplicity: f64) -> Result<u32> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return invalid(format!("epsilon must be in (0, 1), got {epsilon}"));
    }
    if !(multiplicity > 1.0) {
        return Ok(1);
    }
    // 1 - (1 - eps)^(1/(M-1)) without cancellation.
    let gap = -((1.0 - epsilon).ln() / (multiplicity - 1.0)).exp_m1();
    let mut len = (1.0 + 1.0 / gap).log2().ceil().clamp(1.0, 63.0) as u32;
    // The closed form can land one off when its argument sits on a power of two.
    while len < 63 && seed_collision_prob(len, multiplicity)? > epsilon {
        len += 1;
    }
    while len > 1 && seed_collision_prob(len - 1, multiplicity)? <= epsilon {
        len -= 1;
    }
    Ok(len)
}

/// Per-device contention overhead in bits when the base station broadcasts
/// a single multiplicity `N / N_s`:
/// `L_cp1 + ceil(log2(N/N_s)) + L(epsilon, N/N_s)`.
pub fn contention_overhead(n: usize, n_preambles: usize, epsilon: f64, l_cp1: u32) -> Result<u32> {
    let (t2, t3) = overhead_terms(n, n_preambles, epsilon)?;
    Ok(l_cp1 + t2 + t3)
}

/// Overhead when multiplicity and seed length are broadcast for every
/// preamble: `L_cp1 + N_s (ceil(log2(N/N_s)) + L(epsilon, N/N_s))`.
pub fn contention_overhead_unreduced(n: usize, n_preambles: usize, epsilon: f64, l_cp1: u32) -> Result<u32> {
    let (t2, t3) = overhead_terms(n, n_preambles, epsilon)?;
    Ok(l_cp1 + n_preambles as u32 * (t2 + t3))
}

fn overhead_terms(n: usize, n_preambles: usize, epsilon: f64) -> Result<(u32, u32)> {
    if n_preambles == 0 {
        return invalid("N_s must be >= 1");
    }
    let mult = n as f64 / n_preambles as f64;
    let t2 = if mult > 1.0 { mult.log2().ceil() as u32 } else { 0 };
    Ok((t2, required_seed_length(epsilon, mult)?))
}

/// Largest payload after contention overhead: `max(floor(tau_s W R_c - L_ov), 0)`.
pub fn max_payload(duration_s: f64, bandwidth_hz: f64, common_rate: f64, overhead_bits: u32) -> u64 {
    (duration_s * bandwidth_hz * common_rate - overhead_bits as f64).floor().max(0.0) as u64
}

/// Parameters of a simulated contention round.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentionParams {
    pub epsilon: f64,
    pub gamma0: f64,
    pub noise_var: f64,
    pub l_cp1: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContentionOutcome {
    /// Device indices per preamble.
    pub selectors: Vec<Vec<usize>>,
    pub estimated: Vec<usize>,
    pub seed_len: Vec<u32>,
    /// Seed drawn by each device.
    pub seeds: Vec<u64>,
    /// Device shares its seed with another selector of its preamble.
    pub device_collision: Vec<bool>,
    /// Any two selectors of the preamble share a seed.
    pub preamble_collision: Vec<bool>,
    pub overhead_bits: Vec<u32>,
    pub epsilon: f64,
}

impl ContentionOutcome {
    pub fn true_multiplicity(&self, s: usize) -> usize {
        self.selectors[s].len()
    }

    /// Fraction of devices whose seed is not unique on their preamble.
    pub fn device_collision_rate(&self) -> f64 {
        if self.device_collision.is_empty() {
            return 0.0;
        }
        self.device_collision.iter().filter(|&&c| c).count() as f64 / self.device_collision.len() as f64
    }
}

/// One contention round: every device picks a preamble of its delay
/// group, the base station estimates multiplicities from noisy preamble
/// amplitudes and sizes seeds from the estimates, and devices draw seeds.
pub fn simulate_contention_round(
    plan: &PreamblePlan,
    device_groups: &[usize],
    params: &ContentionParams,
    seed: u64,
) -> Result<ContentionOutcome> {
    if !(params.noise_var >= 0.0) {
        return invalid("noise variance must be >= 0");
    }
    let mut rng = stream_rng(seed, 0);
    let mut selectors = vec![Vec::new(); plan.n_preambles];
    for (i, &g) in device_groups.iter().enumerate() {
        let set = plan.groups.get(g).ok_or_else(|| Error::InvalidArgument(format!("device {i}: no group {g}")))?;
        selectors[set[rng.random_range(0..set.len())]].push(i);
    }
    let mut estimated = Vec::with_capacity(plan.n_preambles);
    let mut seed_len = Vec::with_capacity(plan.n_preambles);
    let mut overhead_bits = Vec::with_capacity(plan.n_preambles);
    let mut seeds = vec![0u64; device_groups.len()];
    let mut device_collision = vec![false; device_groups.len()];
    let mut preamble_collision = vec![false; plan.n_preambles];
    for (s, sel) in selectors.iter().enumerate() {
        let amp = preamble_amplitude(sel.len(), params.gamma0, params.noise_var, &mut rng);
        let est = estimate_multiplicity(amp, params.gamma0)?;
        let len = required_seed_length(params.epsilon, est as f64)?;
        let extra = if est > 1 { (est as f64).log2().ceil() as u32 } else { 0 };
        estimated.push(est);
        seed_len.push(len);
        overhead_bits.push(params.l_cp1 + extra + len);
        let space = (1u64 << len) - 1;
        for &i in sel {
            seeds[i] = rng.random_range(1..=space);
        }
        for &i in sel {
            if sel.iter().any(|&o| o != i && seeds[o] == seeds[i]) {
                device_collision[i] = true;
                preamble_collision[s] = true;
            }
        }
    }
    Ok(ContentionOutcome {
        selectors,
        estimated,
        seed_len,
        seeds,
        device_collision,
        preamble_collision,
        overhead_bits,
        epsilon: params.epsilon,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContentionRow {
    pub round: usize,
    pub preamble: usize,
    pub group: usize,
    pub true_multiplicity: usize,
    pub est_multiplicity: usize,
    pub seed_len: u32,
    pub collision: bool,
    pub overhead_bits: u32,
}

impl CsvRecord for ContentionRow {
    const HEADER: &'static [&'static str] = &[
        "round",
        "preamble",
        "group",
        "true_multiplicity",
        "est_multiplicity",
        "seed_len",
        "collision_flag",
        "overhead_bits",
    ];
    fn fields(&self) -> Vec<String> {
        vec![
            self.round.to_string(),
            self.preamble.to_string(),
            self.group.to_string(),
            self.true_multiplicity.to_string(),
            self.est_multiplicity.to_string(),
            self.seed_len.to_string(),
            u8::from(self.collision).to_string(),
            self.overhead_bits.to_string(),
        ]
    }
}

pub fn contention_rows(round: usize, plan: &PreamblePlan, out: &ContentionOutcome) -> Vec<ContentionRow> {
    (0..plan.n_preambles)
        .map(|s| ContentionRow {
            round,
            preamble: s,
            group: plan.group_of(s).unwrap_or(usize::MAX),
            true_multiplicity: out.true_multiplicity(s),
            est_multiplicity: out.estimated[s],
            seed_len: out.seed_len[s],
            collision: out.preamble_collision[s],
            overhead_bits: out.overhead_bits[s],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn partition_sizes() {
        let p = partition_preambles(60, &[1.0; 10]).unwrap();
        assert!(p.groups.iter().all(|g| g.len() == 6));
        let p = partition_preambles(5, &[1.0; 5]).unwrap();
        assert!(p.groups.iter().all(|g| g.len() == 1));
        let p = partition_preambles(7, &[1.0; 3]).unwrap();
        assert_eq!(p.groups.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 2, 2]);
        let mut all: Vec<usize> = p.groups.concat();
        all.sort_unstable();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
        assert!(partition_preambles(3, &[1.0; 4]).is_err());
    }

    #[test]
    fn multiplicity_estimates() {
        let g0: f64 = 2.5;
        assert_eq!(estimate_multiplicity(3.0 * g0.sqrt(), g0).unwrap(), 3);
        assert_eq!(estimate_multiplicity(0.0, g0).unwrap(), 0);
        assert_eq!(estimate_multiplicity(-0.3, g0).unwrap(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ok = (0..10_000)
            .filter(|_| estimate_multiplicity(preamble_amplitude(3, 100.0, 1.0, &mut rng), 100.0).unwrap() == 3)
            .count();
        assert!(ok >= 9_900);
    }

    #[test]
    fn seed_probabilities() {
        assert_eq!(seed_uniqueness_prob(5, 1.0).unwrap(), 1.0);
        assert!((seed_uniqueness_prob(2, 2.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((seed_collision_prob(2, 2.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(seed_uniqueness_prob(0, 2.0).is_err());
    }

    #[test]
    fn seed_lengths() {
        assert_eq!(required_seed_length(0.5, 2.0).unwrap(), 2);
        assert_eq!(required_seed_length(0.1, 10.0).unwrap(), 7);
        assert_eq!(required_seed_length(0.1, 1.0).unwrap(), 1);
        assert_eq!(required_seed_length(0.1, 0.0).unwrap(), 1);
        assert!(required_seed_length(0.0, 3.0).is_err());
        assert!(required_seed_length(1.0, 3.0).is_err());
    }

    #[test]
    fn overheads() {
        assert_eq!(contention_overhead(600, 60, 0.1, 64).unwrap(), 75);
        assert_eq!(contention_overhead(60, 60, 0.1, 64).unwrap(), 65);
        assert_eq!(contention_overhead(30, 60, 0.1, 64).unwrap(), 65);
        assert_eq!(contention_overhead_unreduced(600, 60, 0.1, 64).unwrap(), 724);
    }

    #[test]
    fn payloads() {
        assert_eq!(max_payload(1e-3, 1e7, 0.34594, 75), 3384);
        assert_eq!(max_payload(1e-3, 1e7, 0.0, 75), 0);
        assert_eq!(max_payload(1e-3, 1e3, 0.01, 75), 0);
    }

    #[test]
    fn round_respects_groups() {
        let plan = partition_preambles(12, &[0.1, 0.2, 0.3]).unwrap();
        let groups: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let params = ContentionParams { epsilon: 0.1, gamma0: 100.0, noise_var: 1.0, l_cp1: 64 };
        let out = simulate_contention_round(&plan, &groups, &params, 3).unwrap();
        for (s, sel) in out.selectors.iter().enumerate() {
            let g = plan.group_of(s).unwrap();
            assert!(sel.iter().all(|&i| groups[i] == g));
        }
        assert_eq!(out.selectors.iter().map(Vec::len).sum::<usize>(), 60);
        assert_eq!(contention_rows(0, &plan, &out).len(), 12);
        assert!(simulate_contention_round(&plan, &[5], &params, 3).is_err());
    }
}
