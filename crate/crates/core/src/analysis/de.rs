//! Density evolution for joint BP on the superposed code.
//!
//! Devices are grouped into classes sharing received SNR, code degree,
//! access probability and number of available channel uses. The state is
//! the mean `m_c` of the (consistent Gaussian) LLR of a class-`c` bit. One
//! iteration maps
//!
//! ```text
//! m_c <- snr_c * sigma2_w * (uses_c d_c / k) * sum_{v: v_i = 1} q_v * 2 / (1 + sigma2_v)
//! sigma2_v = sum_j v_j * snr_j * d_j * sigma2_w * Omega(m_j)
//! ```
//!
//! where `v` ranges over activity patterns of the whole population, `i` is
//! any member of class `c`, and `q_v` is the pattern probability (which
//! already carries the access probabilities).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use super::{ber_from_mean, omega};
use crate::error::{invalid, Error, Result};
use crate::special::{binomial, q_func};
use crate::table::CsvRecord;

/// Largest population for which exact pattern enumeration is allowed.
pub const MAX_EXACT_DEVICES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeClass {
    /// Received SNR `gamma |h|^2` per unit weight, linear.
    pub snr: f64,
    /// Coded-symbol degree `d_i`.
    pub degree: usize,
    pub access_prob: f64,
    /// Channel uses available to this class.
    pub uses: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeConfig {
    pub classes: Vec<DeClass>,
    pub k: usize,
    pub sigma2_w: f64,
}

impl DeConfig {
    pub fn n_devices(&self) -> usize {
        self.classes.iter().map(|c| c.count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return invalid("k must be >= 1");
        }
        if !(self.sigma2_w > 0.0) {
            return invalid("sigma2_w must be > 0");
        }
        if self.classes.is_empty() {
            return invalid("at least one class is required");
        }
        for (i, c) in self.classes.iter().enumerate() {
            if !(c.snr >= 0.0 && c.snr.is_finite()) {
                return invalid(format!("class {i}: snr must be finite and >= 0"));
            }
            if !(0.0..=1.0).contains(&c.access_prob) {
                return invalid(format!("class {i}: access probability must be in [0, 1]"));
            }
            if !(c.uses >= 0.0) {
                return invalid(format!("class {i}: uses must be >= 0"));
            }
            if c.count == 0 {
                return invalid(format!("class {i}: count must be >= 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeMode {
    Exact,
    /// Monte Carlo over activity patterns; the samples are drawn once and
    /// reused by every iteration.
    Sampled {
        samples: usize,
        seed: u64,
    },
}

/// How an LLR mean maps to a bit error rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BerMapping {
    /// `Q(sqrt(m))`.
    #[default]
    Direct,
    /// `Q(sqrt(m / 2))`, the error rate of an LLR distributed `N(m, 2m)`.
    Consistent,
}

impl BerMapping {
    pub fn ber(self, m: f64) -> f64 {
        match self {
            BerMapping::Direct => ber_from_mean(m),
            BerMapping::Consistent => q_func((0.5 * m.max(0.0)).sqrt()),
        }
    }

    /// Inverse: the LLR mean giving error rate `ber`.
    pub fn mean_for(self, ber: f64) -> Option<f64> {
        let x = crate::special::q_inv(ber)?;
        Some(match self {
            BerMapping::Direct => x * x,
            BerMapping::Consistent => 2.0 * x * x,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeOptions {
    pub mode: DeMode,
    pub max_iter: usize,
    /// Stop once the mean relative change of the class means drops below this.
    pub tol: f64,
    /// `Omega` argument is `m * omega_scale`; `1` evaluates `Omega(m)`, `0.5`
    /// the consistent-Gaussian variant.
    pub omega_scale: f64,
}

impl Default for DeOptions {
    fn default() -> Self {
        Self { mode: DeMode::Exact, max_iter: 500, tol: 1e-6, omega_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeState {
    pub iteration: usize,
    pub m: Vec<f64>,
    pub converged: bool,
}

/// Activity patterns summarized by per-class active counts, with weights.
/// `cond[c]` lists the patterns conditioned on one fixed member of class
/// `c` being active (that member included in the counts).
struct Patterns {
    cond: Vec<Vec<(f64, Vec<usize>)>>,
}

fn exact_patterns(cfg: &DeConfig) -> Patterns {
    let n_classes = cfg.classes.len();
    let mut cond = Vec::with_capacity(n_classes);
    for target in 0..n_classes {
        // Enumerate counts of the *other* devices per class.
        let caps: Vec<usize> =
            cfg.classes.iter().enumerate().map(|(c, cl)| if c == target { cl.count - 1 } else { cl.count }).collect();
        let mut out = Vec::new();
        let mut counts = vec![0usize; n_classes];
        loop {
            let mut w = 1.0;
            for (c, cl) in cfg.classes.iter().enumerate() {
                let (n, r) = (caps[c] as u64, counts[c] as i32);
                w *= binomial(n, r as u64) * cl.access_prob.powi(r) * (1.0 - cl.access_prob).powi(n as i32 - r);
            }
            if w > 0.0 {
                let mut active = counts.clone();
                active[target] += 1;
                out.push((w, active));
            }
            // Odometer increment.
            let mut c = 0;
            while c < n_classes {
                counts[c] += 1;
                if counts[c] <= caps[c] {
                    break;
                }
                counts[c] = 0;
                c += 1;
            }
            if c == n_classes {
                break;
            }
        }
        cond.push(out);
    }
    Patterns { cond }
}

fn sampled_patterns(cfg: &DeConfig, samples: usize, seed: u64) -> Result<Patterns> {
    if samples == 0 {
        return invalid("sampled mode needs at least one sample");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dists: Vec<Binomial> = cfg
        .classes
        .iter()
        .map(|c| Binomial::new(c.count as u64, c.access_prob).map_err(|e| Error::InvalidArgument(e.to_string())))
        .collect::<Result<_>>()?;
    let draws: Vec<Vec<usize>> =
        (0..samples).map(|_| dists.iter().map(|d| d.sample(&mut rng) as usize).collect()).collect();
    // A fixed member of class c is active in a fraction n_c / count_c of the
    // patterns with class count n_c; the weight divides by p_c so that the
    // conditional average is unbiased.
    let cond = cfg
        .classes
        .iter()
        .enumerate()
        .map(|(c, cl)| {
            if cl.access_prob == 0.0 {
                return Vec::new();
            }
            draws
                .iter()
                .filter(|v| v[c] > 0)
                .map(|v| (v[c] as f64 / (cl.count as f64 * cl.access_prob * samples as f64), v.clone()))
                .collect()
        })
        .collect();
    Ok(Patterns { cond })
}

/// Runs the recursion from `m = 0` and returns every state, the initial one
/// included.
pub fn density_evolution(cfg: &DeConfig, opts: &DeOptions) -> Result<Vec<DeState>> {
    cfg.validate()?;
    let patterns = match opts.mode {
        DeMode::Exact => {
            let n = cfg.n_devices();
            if n > MAX_EXACT_DEVICES {
                return Err(Error::CapacityExceeded(format!(
                    "exact enumeration supports at most {MAX_EXACT_DEVICES} devices, got {n}"
                )));
            }
            exact_patterns(cfg)
        }
        DeMode::Sampled { samples, seed } => sampled_patterns(cfg, samples, seed)?,
    };
    let n_classes = cfg.classes.len();
    let prefactor: Vec<f64> =
        cfg.classes.iter().map(|c| c.snr * cfg.sigma2_w * c.uses * c.degree as f64 / cfg.k as f64).collect();

    let mut m = vec![0.0; n_classes];
    let mut traj = vec![DeState { iteration: 0, m: m.clone(), converged: false }];
    let mut interference = vec![0.0; n_classes];
    for it in 1..=opts.max_iter {
        for (c, cl) in cfg.classes.iter().enumerate() {
            interference[c] = cl.snr * cl.degree as f64 * cfg.sigma2_w * omega(m[c] * opts.omega_scale)?;
        }
        let next: Vec<f64> = (0..n_classes)
            .map(|c| {
                if cfg.classes[c].access_prob == 0.0 {
                    return 0.0;
                }
                let avg: f64 = patterns.cond[c]
                    .iter()
                    .map(|(w, counts)| {
                        let s2: f64 = counts.iter().zip(&interference).map(|(&n, s)| n as f64 * s).sum();
                        w * 2.0 / (1.0 + s2)
                    })
                    .sum();
                prefactor[c] * cfg.classes[c].access_prob * avg
            })
            .collect();
        let change = next
            .iter()
            .zip(&m)
            .map(|(a, b)| if *a == 0.0 && *b == 0.0 { 0.0 } else { (a - b).abs() / a.abs().max(*b) })
            .sum::<f64>()
            / n_classes as f64;
        m = next;
        let converged = change < opts.tol;
        traj.push(DeState { iteration: it, m: m.clone(), converged });
        if converged {
            break;
        }
    }
    Ok(traj)
}

/// High-SNR approximation of the fixed point, valid once every `Omega`
/// term is negligible: `2 snr sigma2_w d uses p / k`.
pub fn approx_mean(snr: f64, sigma2_w: f64, degree: usize, uses: f64, access_prob: f64, k: usize) -> f64 {
    2.0 * snr * sigma2_w * degree as f64 * uses * access_prob / k as f64
}

/// One row of a density-evolution trajectory export.
#[derive(Debug, Clone, PartialEq)]
pub struct DeRow {
    pub iteration: usize,
    pub class_id: usize,
    pub m: f64,
    pub ber: f64,
}

impl CsvRecord for DeRow {
    const HEADER: &'static [&'static str] = &["iteration", "class_id", "m", "ber"];
    fn fields(&self) -> Vec<String> {
        vec![self.iteration.to_string(), self.class_id.to_string(), self.m.to_string(), self.ber.to_string()]
    }
}

pub fn de_trajectory_rows(traj: &[DeState], mapping: BerMapping) -> Vec<DeRow> {
    traj.iter()
        .flat_map(|s| {
            s.m.iter().enumerate().map(move |(c, &m)| DeRow {
                iteration: s.iteration,
                class_id: c,
                m,
                ber: mapping.ber(m),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(p: f64) -> DeConfig {
        DeConfig {
            classes: vec![DeClass { snr: 1.0, degree: 8, access_prob: p, uses: 100.0, count: 1 }],
            k: 100,
            sigma2_w: 1.0,
        }
    }

    #[test]
    fn first_iteration_by_hand() {
        let traj = density_evolution(&single(1.0), &DeOptions::default()).unwrap();
        assert_eq!(traj[0].m, vec![0.0]);
        // sigma2_v = 8 Omega(0) = 8, m = 1 * 1 * 8 * 1 * 2 / 9
        assert!((traj[1].m[0] - 16.0 / 9.0).abs() < 1e-14);
        assert!(traj.last().unwrap().converged);
    }

    #[test]
    fn silent_population_stays_at_zero() {
        let mut cfg = single(0.0);
        cfg.classes.push(DeClass { snr: 2.0, degree: 4, access_prob: 0.0, uses: 50.0, count: 3 });
        let traj = density_evolution(&cfg, &DeOptions::default()).unwrap();
        assert!(traj.iter().all(|s| s.m.iter().all(|&m| m == 0.0)));
        assert!(traj.last().unwrap().converged);
    }

    #[test]
    fn exact_matches_brute_force_type_sum() {
        // Oracle: enumerate all 2^N - 1 device patterns directly.
        let cfg = DeConfig {
            classes: vec![
                DeClass { snr: 1.0, degree: 4, access_prob: 0.3, uses: 80.0, count: 2 },
                DeClass { snr: 2.0, degree: 6, access_prob: 0.6, uses: 40.0, count: 3 },
            ],
            k: 40,
            sigma2_w: 1.0,
        };
        let dev: Vec<DeClass> = cfg.classes.iter().flat_map(|c| std::iter::repeat_n(*c, c.count)).collect();
        let class_of = [0, 0, 1, 1, 1];
        let opts = DeOptions { max_iter: 5, tol: 0.0, ..DeOptions::default() };
        let traj = density_evolution(&cfg, &opts).unwrap();
        let mut m = vec![0.0; 5];
        for it in 1..=5 {
            let om: Vec<f64> = m.iter().map(|&x| omega(x).unwrap()).collect();
            let mut next = vec![0.0; 5];
            for i in 0..5 {
                let mut s = 0.0;
                for v in 1u32..32 {
                    if v >> i & 1 == 0 {
                        continue;
                    }
                    let mut q = 1.0;
                    let mut s2 = 0.0;
                    for j in 0..5 {
                        let on = v >> j & 1 == 1;
                        q *= if on { dev[j].access_prob } else { 1.0 - dev[j].access_prob };
                        if on {
                            s2 += dev[j].snr * dev[j].degree as f64 * om[j];
                        }
                    }
                    s += q * 2.0 / (1.0 + s2);
                }
                next[i] = dev[i].snr * dev[i].uses * dev[i].degree as f64 / 40.0 * s;
            }
            m = next;
            for i in 0..5 {
                let got = traj[it].m[class_of[i]];
                assert!((got - m[i]).abs() < 1e-12 * m[i].max(1.0), "it {it} dev {i}");
            }
        }
    }

    #[test]
    fn exact_capacity_enforced() {
        let cfg = DeConfig {
            classes: vec![DeClass { snr: 1.0, degree: 8, access_prob: 0.1, uses: 100.0, count: 21 }],
            k: 100,
            sigma2_w: 1.0,
        };
        assert!(matches!(density_evolution(&cfg, &DeOptions::default()), Err(Error::CapacityExceeded(_))));
        let opts = DeOptions { mode: DeMode::Sampled { samples: 1000, seed: 1 }, ..DeOptions::default() };
        assert!(density_evolution(&cfg, &opts).is_ok());
    }

    #[test]
    fn sampled_tracks_exact() {
        let cfg = DeConfig {
            classes: vec![
                DeClass { snr: 1.0, degree: 8, access_prob: 0.2, uses: 400.0, count: 6 },
                DeClass { snr: 1.0, degree: 8, access_prob: 0.1, uses: 400.0, count: 6 },
            ],
            k: 100,
            sigma2_w: 1.0,
        };
        let exact = density_evolution(&cfg, &DeOptions::default()).unwrap();
        let opts = DeOptions { mode: DeMode::Sampled { samples: 100_000, seed: 4 }, ..DeOptions::default() };
        let sampled = density_evolution(&cfg, &opts).unwrap();
        let (a, b) = (&exact.last().unwrap().m, &sampled.last().unwrap().m);
        for c in 0..2 {
            assert!((a[c] / b[c] - 1.0).abs() < 0.02, "{a:?} {b:?}");
        }
    }

    #[test]
    fn high_snr_approximation() {
        let cfg = DeConfig {
            classes: vec![DeClass { snr: 1.0, degree: 8, access_prob: 0.25, uses: 1000.0, count: 2 }],
            k: 100,
            sigma2_w: 1.0,
        };
        let m = density_evolution(&cfg, &DeOptions::default()).unwrap().last().unwrap().m[0];
        let approx = approx_mean(1.0, 1.0, 8, 1000.0, 0.25, 100);
        assert!(m > 10.0);
        assert!((m / approx - 1.0).abs() < 0.1, "{m} vs {approx}");
    }

    #[test]
    fn ber_mappings() {
        assert_eq!(BerMapping::Direct.ber(4.0), q_func(2.0));
        assert_eq!(BerMapping::Consistent.ber(8.0), q_func(2.0));
        let m = BerMapping::Consistent.mean_for(1e-3).unwrap();
        assert!((BerMapping::Consistent.ber(m) / 1e-3 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn csv_rows() {
        let traj = density_evolution(&single(1.0), &DeOptions { max_iter: 2, ..DeOptions::default() }).unwrap();
        let rows = de_trajectory_rows(&traj, BerMapping::Direct);
        assert_eq!(rows.len(), traj.len());
        assert_eq!(rows[0].ber, 0.5);
    }
}
