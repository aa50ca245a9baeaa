//! Random-access delay and blocking: conventional preamble contention with
//! backoff, and the shared-resource-block procedure.
//!
//! Time is in integer milliseconds. All devices become active inside an
//! activation window (a burst at `t = 0` by default) and attempt at
//! periodic random-access opportunities. Resource-block grants are limited
//! per opportunity and handed out first-come first-served, ordered by each
//! device's first attempt.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::contention::{estimate_multiplicity, preamble_amplitude, required_seed_length};
use crate::error::{invalid, Result};
use crate::rng::stream_rng;
use crate::table::CsvRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct BackoffConfig {
    pub n_preambles: usize,
    pub max_attempts: usize,
    /// Backoff window sizes in ms; attempt `i + 1` waits `U[0, X_i - 1]`.
    pub backoff_ms: Vec<u64>,
    /// Spacing of random-access opportunities.
    pub ra_period_ms: u64,
    pub frame_ms: u64,
    pub subframe_ms: u64,
    pub rbs_per_subframe: u64,
    pub rbs_per_grant: u64,
    /// Delay between an attempt and its response.
    pub ra_response_ms: u64,
    pub activation_window_ms: u64,
}

impl Default for BackoffConfig {
    fn default() -> Self {
        Self {
            n_preambles: 60,
            max_attempts: 10,
            backoff_ms: vec![10, 20, 30, 40, 60, 80, 120, 160, 240, 320, 480, 960],
            ra_period_ms: 10,
            frame_ms: 10,
            subframe_ms: 1,
            rbs_per_subframe: 100,
            rbs_per_grant: 16,
            ra_response_ms: 10,
            activation_window_ms: 0,
        }
    }
}

impl BackoffConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_preambles == 0 {
            return invalid("n_preambles must be >= 1");
        }
        if self.max_attempts == 0 {
            return invalid("max_attempts must be >= 1");
        }
        if self.backoff_ms.is_empty() || self.backoff_ms.contains(&0) {
            return invalid("backoff table must be non-empty and positive");
        }
        if self.ra_period_ms == 0 || self.frame_ms == 0 || self.subframe_ms == 0 {
            return invalid("periods must be >= 1 ms");
        }
        if self.rbs_per_grant == 0 || self.rbs_per_subframe < self.rbs_per_grant {
            return invalid("a subframe must hold at least one grant");
        }
        Ok(())
    }

    /// Grants available per random-access opportunity.
    pub fn grants_per_opportunity(&self) -> usize {
        let subframes = self.ra_period_ms / self.subframe_ms;
        (subframes * self.rbs_per_subframe / self.rbs_per_grant) as usize
    }

    /// Backoff window before attempt `attempt + 1` (1-based `attempt`),
    /// clamped to the last table entry.
    pub fn backoff_window(&self, attempt: usize) -> u64 {
        self.backoff_ms[(attempt.max(1) - 1).min(self.backoff_ms.len() - 1)]
    }

    fn next_opportunity(&self, t_ms: u64) -> u64 {
        t_ms.div_ceil(self.ra_period_ms)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaMetrics {
    pub n_devices: usize,
    pub blocking_probability: f64,
    pub mean_delay_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    /// Access delay of every successful device, sorted.
    pub delays_ms: Vec<f64>,
}

impl RaMetrics {
    fn from_outcomes(n: usize, blocked: usize, mut delays: Vec<f64>) -> Self {
        delays.sort_by(f64::total_cmp);
        let mean = if delays.is_empty() { 0.0 } else { delays.iter().sum::<f64>() / delays.len() as f64 };
        Self {
            n_devices: n,
            blocking_probability: blocked as f64 / n as f64,
            mean_delay_ms: mean,
            p50_ms: percentile(&delays, 0.5),
            p95_ms: percentile(&delays, 0.95),
            delays_ms: delays,
        }
    }
}

/// Nearest-rank percentile of sorted data; 0 for empty input.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

#[derive(Debug, Clone)]
struct Pending {
    attempts: usize,
    first_ms: Option<u64>,
}

fn initial_schedule(cfg: &BackoffConfig, n: usize, rng: &mut ChaCha8Rng) -> BTreeMap<u64, Vec<usize>> {
    let mut queue: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let t = if cfg.activation_window_ms > 0 { rng.random_range(0..=cfg.activation_window_ms) } else { 0 };
        queue.entry(cfg.next_opportunity(t)).or_default().push(i);
    }
    queue
}

fn reschedule(
    cfg: &BackoffConfig,
    queue: &mut BTreeMap<u64, Vec<usize>>,
    dev: usize,
    state: &mut Pending,
    now_ms: u64,
    rng: &mut ChaCha8Rng,
) -> bool {
    if state.attempts >= cfg.max_attempts {
        return false;
    }
    let wait = rng.random_range(0..cfg.backoff_window(state.attempts));
    queue.entry(cfg.next_opportunity(now_ms + cfg.ra_response_ms + wait)).or_default().push(dev);
    true
}

/// Conventional contention: an attempt succeeds when its preamble is
/// unique at that opportunity and a grant is left; otherwise the device
/// backs off, and after `max_attempts` failures it is blocked.
pub fn run_backoff_sim(cfg: &BackoffConfig, n: usize, seed: u64) -> Result<RaMetrics> {
    cfg.validate()?;
    if n == 0 {
        return invalid("at least one device is required");
    }
    let mut rng = stream_rng(seed, 0);
    let mut queue = initial_schedule(cfg, n, &mut rng);
    let mut state = vec![Pending { attempts: 0, first_ms: None }; n];
    let mut delays = Vec::with_capacity(n);
    let mut blocked = 0;
    let grants = cfg.grants_per_opportunity();
    while let Some((slot, mut devs)) = queue.pop_first() {
        let now = slot * cfg.ra_period_ms;
        devs.sort_unstable();
        let mut by_preamble: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_preambles];
        for &d in &devs {
            let st = &mut state[d];
            st.attempts += 1;
            st.first_ms.get_or_insert(now);
            by_preamble[rng.random_range(0..cfg.n_preambles)].push(d);
        }
        let mut unique: Vec<usize> = by_preamble.iter().filter(|s| s.len() == 1).map(|s| s[0]).collect();
        unique.sort_by_key(|&d| (state[d].first_ms, d));
        let winners: Vec<usize> = unique.iter().copied().take(grants).collect();
        for &d in &winners {
            delays.push((now - state[d].first_ms.unwrap() + cfg.ra_response_ms) as f64);
        }
        for &d in &devs {
            if winners.contains(&d) {
                continue;
            }
            if !reschedule(cfg, &mut queue, d, &mut state[d], now, &mut rng) {
                blocked += 1;
            }
        }
    }
    Ok(RaMetrics::from_outcomes(n, blocked, delays))
}

/// Access-probability rule of the shared-block procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessScenario {
    /// `p = N_s / N`.
    One,
    /// `p = 10 N_s / N`.
    Two,
}

impl AccessScenario {
    pub fn access_prob(self, n: usize, n_preambles: usize) -> f64 {
        let scale = match self {
            AccessScenario::One => 1.0,
            AccessScenario::Two => 10.0,
        };
        (scale * n_preambles as f64 / n as f64).min(1.0)
    }

    pub fn label(self) -> &'static str {
        match self {
            AccessScenario::One => "1",
            AccessScenario::Two => "2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposedConfig {
    pub timing: BackoffConfig,
    pub epsilon: f64,
    /// Received preamble SNR used for multiplicity estimation, linear.
    pub preamble_snr: f64,
    /// Received data SNR per device, linear.
    pub gamma0: f64,
    pub payload_bits: u64,
    pub l_cp1: u32,
    pub rb_bandwidth_hz: f64,
}

impl Default for ProposedConfig {
    fn default() -> Self {
        Self {
            timing: BackoffConfig::default(),
            epsilon: 1e-3,
            preamble_snr: 100.0,
            gamma0: 1.0,
            payload_bits: 1000,
            l_cp1: 64,
            rb_bandwidth_hz: 0.2e6,
        }
    }
}

impl ProposedConfig {
    /// Time to deliver payload plus overhead for one device of a block
    /// shared by `sharers` devices transmitting with probability `p`.
    pub fn decode_time_ms(&self, sharers: usize, p: f64, overhead_bits: u32) -> f64 {
        let m = sharers.max(1);
        let active = (m as f64 * p).max(f64::MIN_POSITIVE);
        // Equal-SNR common rate with `active` simultaneous senders, split over
        // all `m` sharers of the block.
        let sum_rate = (active * self.gamma0).ln_1p() / std::f64::consts::LN_2;
        let per_device = sum_rate / m as f64;
        let bandwidth = self.timing.rbs_per_grant as f64 * self.rb_bandwidth_hz;
        1e3 * (self.payload_bits as f64 + overhead_bits as f64) / (per_device * bandwidth)
    }
}

/// Shared-block procedure: every used preamble is granted one block shared
/// by its selectors. A device fails an attempt only when its random seed is
/// not unique on its preamble, then backs off as in the baseline.
pub fn run_proposed_ra_sim(cfg: &ProposedConfig, n: usize, scenario: AccessScenario, seed: u64) -> Result<RaMetrics> {
    let t = &cfg.timing;
    t.validate()?;
    if n == 0 {
        return invalid("at least one device is required");
    }
    let p = scenario.access_prob(n, t.n_preambles);
    let mut rng = stream_rng(seed, 0);
    let mut queue = initial_schedule(t, n, &mut rng);
    let mut state = vec![Pending { attempts: 0, first_ms: None }; n];
    let mut delays = Vec::with_capacity(n);
    let mut blocked = 0;
    let grants = t.grants_per_opportunity();
    // Blocks still waiting for a grant: (granted devices, overhead bits).
    let mut backlog: std::collections::VecDeque<(Vec<usize>, u32)> = Default::default();
    while let Some((slot, mut devs)) = queue.pop_first() {
        let now = slot * t.ra_period_ms;
        devs.sort_unstable();
        let mut by_preamble: Vec<Vec<usize>> = vec![Vec::new(); t.n_preambles];
        for &d in &devs {
            let st = &mut state[d];
            st.attempts += 1;
            st.first_ms.get_or_insert(now);
            by_preamble[rng.random_range(0..t.n_preambles)].push(d);
        }
        let mut failed = Vec::new();
        for sel in by_preamble.iter().filter(|s| !s.is_empty()) {
            let amp = preamble_amplitude(sel.len(), cfg.preamble_snr, 1.0, &mut rng);
            let est = estimate_multiplicity(amp, cfg.preamble_snr)?;
            let len = required_seed_length(cfg.epsilon, est as f64)?;
            let space = (1u64 << len) - 1;
            let seeds: Vec<u64> = sel.iter().map(|_| rng.random_range(1..=space)).collect();
            let mut ok = Vec::new();
            for (a, &d) in sel.iter().enumerate() {
                if seeds.iter().enumerate().any(|(b, &s)| b != a && s == seeds[a]) {
                    failed.push(d);
                } else {
                    ok.push(d);
                }
            }
            if !ok.is_empty() {
                let extra = if est > 1 { (est as f64).log2().ceil() as u32 } else { 0 };
                backlog.push_back((ok, cfg.l_cp1 + extra + len));
            }
        }
        let mut served = 0;
        while served < grants {
            let Some((group, overhead)) = backlog.pop_front() else { break };
            let decode = cfg.decode_time_ms(group.len(), p, overhead);
            for d in group {
                let access = (now - state[d].first_ms.unwrap() + t.ra_response_ms) as f64;
                delays.push(access + decode);
            }
            served += 1;
        }
        for d in failed {
            if !reschedule(t, &mut queue, d, &mut state[d], now, &mut rng) {
                blocked += 1;
            }
        }
        if queue.is_empty() && !backlog.is_empty() {
            // Keep the clock running until every block is granted.
            queue.insert(slot + 1, Vec::new());
        }
    }
    Ok(RaMetrics::from_outcomes(n, blocked, delays))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub scheme: String,
    pub scenario: String,
    pub n: usize,
    pub metrics: RaMetrics,
}

impl CsvRecord for MetricsRow {
    const HEADER: &'static [&'static str] =
        &["scheme", "scenario", "N", "blocking_prob", "mean_delay_ms", "p50", "p95"];
    fn fields(&self) -> Vec<String> {
        vec![
            self.scheme.clone(),
            self.scenario.clone(),
            self.n.to_string(),
            self.metrics.blocking_probability.to_string(),
            self.metrics.mean_delay_ms.to_string(),
            self.metrics.p50_ms.to_string(),
            self.metrics.p95_ms.to_string(),
        ]
    }
}
