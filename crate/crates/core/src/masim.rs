//! Data phase of the multiple-access scheme.
//!
//! Every device holds a seed shared with the base station. One stream of
//! that seed drives its per-channel-use Bernoulli activity, another drives
//! its code graph. A device emits a fresh coded symbol only when active, so
//! the base station can rebuild the exact rows each device used from the
//! two streams alone and decode all devices jointly on the equivalent graph
//! whose column `j*k + r` is bit `r` of device `j`.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::analysis::{equal_snr_rate, per_real_dimension};
use crate::codec::{
    bp_decode_with, encode_row, AfcGraph, BpOptions, CodeParams, DecodeResult, Entry, MessageBlock, Observation,
    RowGenerator, WeightSet,
};
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, stream_rng};
use crate::table::CsvRecord;

pub(crate) const ACTIVITY_STREAM: u64 = 1;
const MESSAGE_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Device {
    pub id: usize,
    pub message: MessageBlock,
    pub code: CodeParams,
    /// Seed shared with the base station.
    pub seed: u64,
    /// Received amplitude per unit weight after power control, relative to
    /// unit noise variance.
    pub amplitude: f64,
    pub access_probability: f64,
    pub delay_group: usize,
    /// Channel uses available before the deadline.
    pub delay_budget: usize,
}

impl Device {
    pub fn new(
        id: usize,
        message: MessageBlock,
        code: CodeParams,
        seed: u64,
        amplitude: f64,
        access_probability: f64,
    ) -> Result<Self> {
        if message.len() != code.k {
            return invalid(format!("device {id}: message length {} != k={}", message.len(), code.k));
        }
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return invalid(format!("device {id}: amplitude must be finite and >= 0"));
        }
        // Zero is accepted for silent devices.
        if !(0.0..=1.0).contains(&access_probability) {
            return invalid(format!("device {id}: access probability must be in [0, 1]"));
        }
        Ok(Self { id, message, code, seed, amplitude, access_probability, delay_group: 0, delay_budget: usize::MAX })
    }

    /// Device with a uniformly random message drawn from its own seed.
    pub fn random(id: usize, code: CodeParams, seed: u64, amplitude: f64, access_probability: f64) -> Result<Self> {
        let mut rng = stream_rng(seed, MESSAGE_STREAM);
        let message = MessageBlock::random(code.k, &mut rng);
        Self::new(id, message, code, seed, amplitude, access_probability)
    }

    pub fn with_delay(mut self, group: usize, budget: usize) -> Self {
        self.delay_group = group;
        self.delay_budget = budget.max(1);
        self
    }

    pub fn row_generator(&self) -> RowGenerator {
        RowGenerator::new(self.code.clone(), self.seed)
    }

    /// The device's own first `n_rows` code rows, unscaled.
    pub fn graph(&self, n_rows: usize) -> Result<AfcGraph> {
        let mut gen = self.row_generator();
        AfcGraph::from_rows(self.code.k, (0..n_rows).map(|_| gen.next_row()).collect())
    }

    /// Activity indicators for the first `n_uses` channel uses.
    pub fn activity(&self, n_uses: usize) -> Vec<bool> {
        let mut rng = stream_rng(self.seed, ACTIVITY_STREAM);
        let p = self.access_probability;
        (0..n_uses).map(|_| rng.random::<f64>() < p).collect()
    }
}

/// Per-device activity rows, `indicators[j][l]`.
pub fn schedule_activity(devices: &[Device], n_uses: usize) -> Vec<Vec<bool>> {
    devices.iter().map(|d| d.activity(n_uses)).collect()
}

fn check_indicators(devices: &[Device], indicators: &[Vec<bool>]) -> Result<usize> {
    if indicators.len() != devices.len() {
        return invalid(format!("{} indicator rows for {} devices", indicators.len(), devices.len()));
    }
    let n_uses = indicators.first().map_or(0, Vec::len);
    if indicators.iter().any(|r| r.len() != n_uses) {
        return invalid("indicator rows have different lengths");
    }
    if let Some(d) = devices.iter().find(|d| d.code.k != devices[0].code.k) {
        return invalid(format!("device {} has k={}, expected {}", d.id, d.code.k, devices[0].code.k));
    }
    Ok(n_uses)
}

/// Equivalent joint graph and noiseless received signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub graph: AfcGraph,
    pub noiseless: Vec<f64>,
}

/// Replays every device's lazily generated rows over the indicator matrix.
pub fn transmit(devices: &[Device], indicators: &[Vec<bool>]) -> Result<Transmission> {
    let n_uses = check_indicators(devices, indicators)?;
    let k = devices.first().map_or(0, |d| d.code.k);
    let mut gens: Vec<RowGenerator> = devices.iter().map(Device::row_generator).collect();
    let mut rows = Vec::with_capacity(n_uses);
    let mut noiseless = Vec::with_capacity(n_uses);
    for l in 0..n_uses {
        let mut row = Vec::new();
        let mut y = 0.0;
        for (j, (dev, gen)) in devices.iter().zip(gens.iter_mut()).enumerate() {
            if !indicators[j][l] {
                continue;
            }
            let r = gen.next_row();
            y += dev.amplitude * encode_row(&r, dev.message.bpsk());
            row.extend(r.into_iter().map(|e| Entry { col: j * k + e.col, weight: dev.amplitude * e.weight }));
        }
        rows.push(row);
        noiseless.push(y);
    }
    Ok(Transmission { graph: AfcGraph::from_rows(devices.len() * k, rows)?, noiseless })
}

/// Base-station view of the superposed code.
pub fn build_equivalent_graph(devices: &[Device], indicators: &[Vec<bool>]) -> Result<AfcGraph> {
    Ok(transmit(devices, indicators)?.graph)
}

/// Received signal `y_l = sum_j I_{j,l} a_j u_l^{(j)} + z_l`.
pub fn superpose(devices: &[Device], indicators: &[Vec<bool>], noise_var: f64, awgn_seed: u64) -> Result<Vec<f64>> {
    let tx = transmit(devices, indicators)?;
    crate::channel::add_awgn(&tx.noiseless, noise_var, awgn_seed)
}

/// Mean power of the noiseless part of `y`.
pub fn aggregate_power(noiseless: &[f64]) -> f64 {
    if noiseless.is_empty() {
        return 0.0;
    }
    noiseless.iter().map(|v| v * v).sum::<f64>() / noiseless.len() as f64
}

/// One resource block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbConfig {
    pub duration_s: f64,
    pub bandwidth_hz: f64,
    /// Fraction of the block reserved for random access.
    pub ra_fraction: f64,
    /// Received SNR `gamma0`, linear.
    pub received_snr: f64,
    /// Mean number of arriving devices per block.
    pub arrival_rate: f64,
}

impl RbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.bandwidth_hz > 0.0) {
            return invalid("duration and bandwidth must be > 0");
        }
        if !(self.ra_fraction > 0.0 && self.ra_fraction < 1.0) {
            return invalid("ra_fraction must be in (0, 1)");
        }
        if !(self.received_snr > 0.0) {
            return invalid("received_snr must be > 0");
        }
        if !(self.arrival_rate >= 0.0) {
            return invalid("arrival_rate must be >= 0");
        }
        Ok(())
    }

    /// Real channel uses left for data, `floor((1 - tau) tau_s W)`.
    pub fn n_channel_uses(&self) -> usize {
        ((1.0 - self.ra_fraction) * self.duration_s * self.bandwidth_hz + 1e-9).floor() as usize
    }
}

/// Decoder settings for a block simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// BER below which a device counts as decoded.
    pub delta: f64,
    pub noise_var: f64,
    pub bp: BpOptions,
    /// Start each checkpoint's decoding from the previous checkpoint's LLRs.
    pub warm_start: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { delta: 1e-3, noise_var: 1.0, bp: BpOptions::default(), warm_start: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbTrace {
    pub activity: Vec<Vec<bool>>,
    pub received: Vec<f64>,
    pub checkpoints: Vec<usize>,
    /// `ber[j][c]`: device `j` after checkpoint `c`.
    pub ber: Vec<Vec<f64>>,
    /// First checkpoint (in channel uses) at which the device's BER < delta.
    pub decode_time: Vec<Option<usize>>,
    /// Mean power of the noiseless received signal.
    pub aggregate_power: f64,
}

/// Bit errors counting undetermined bits (LLR exactly 0) as half an error.
pub fn soft_bit_errors(llr: &[f64], bits: &[u8]) -> f64 {
    llr.iter()
        .zip(bits)
        .map(|(&l, &b)| {
            if l == 0.0 {
                0.5
            } else if u8::from(l < 0.0) != b {
                1.0
            } else {
                0.0
            }
        })
        .sum()
}

/// Decodes the first `n` channel uses of a transmission.
pub fn decode_prefix(
    graph: &AfcGraph,
    received: &[f64],
    n: usize,
    opts: &SimOptions,
    init: Option<&[f64]>,
) -> Result<DecodeResult> {
    let g = graph.truncated(n);
    if g.rows().iter().all(Vec::is_empty) {
        let llr = init.map_or_else(|| vec![0.0; graph.k()], <[f64]>::to_vec);
        let hard_bits = llr.iter().map(|&l| u8::from(l < 0.0)).collect();
        return Ok(DecodeResult { llr, hard_bits, iterations_used: 0, converged: true });
    }
    let obs: Vec<Observation> = received[..n].iter().map(|&v| Observation::new(v, opts.noise_var, 1.0)).collect();
    bp_decode_with(&g, &obs, &opts.bp, init)
}

/// Streams `max(checkpoints)` channel uses and jointly decodes at every
/// checkpoint.
pub fn run_rb_simulation(
    config: &RbConfig,
    devices: &[Device],
    checkpoints: &[usize],
    opts: &SimOptions,
    seed: u64,
) -> Result<RbTrace> {
    config.validate()?;
    if devices.is_empty() {
        return invalid("at least one device is required");
    }
    let limit = config.n_channel_uses();
    if let Some(&c) = checkpoints.iter().find(|&&c| c > limit) {
        return invalid(format!("checkpoint {c} exceeds the block's {limit} channel uses"));
    }
    if checkpoints.windows(2).any(|w| w[0] > w[1]) {
        return invalid("checkpoints must be non-decreasing");
    }
    let n = checkpoints.last().copied().unwrap_or(0);
    let activity = schedule_activity(devices, n);
    let tx = transmit(devices, &activity)?;
    let received = crate::channel::add_awgn(&tx.noiseless, opts.noise_var, seed)?;
    let k = devices[0].code.k;

    let mut ber = vec![Vec::with_capacity(checkpoints.len()); devices.len()];
    let mut decode_time = vec![None; devices.len()];
    let mut prev: Option<Vec<f64>> = None;
    for &c in checkpoints {
        let init = if opts.warm_start { prev.as_deref() } else { None };
        let res = decode_prefix(&tx.graph, &received, c, opts, init)?;
        for (j, dev) in devices.iter().enumerate() {
            let e = soft_bit_errors(&res.llr[j * k..(j + 1) * k], dev.message.bits()) / k as f64;
            ber[j].push(e);
            if decode_time[j].is_none() && e < opts.delta {
                decode_time[j] = Some(c);
            }
        }
        prev = Some(res.llr);
    }
    Ok(RbTrace {
        aggregate_power: aggregate_power(&tx.noiseless),
        activity,
        received,
        checkpoints: checkpoints.to_vec(),
        ber,
        decode_time,
    })
}

/// Evenly spaced checkpoints `step, 2 step, ..., <= n`, always ending at `n`.
pub fn checkpoints_every(step: usize, n: usize) -> Vec<usize> {
    let step = step.max(1);
    let mut v: Vec<usize> = (1..).map(|i| i * step).take_while(|&c| c <= n).collect();
    if v.last() != Some(&n) && n > 0 {
        v.push(n);
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub trial: usize,
    pub device_id: usize,
    pub checkpoint_uses: usize,
    pub ber: f64,
    pub decoded: bool,
}

impl CsvRecord for TraceRow {
    const HEADER: &'static [&'static str] = &["trial", "device_id", "checkpoint_uses", "ber", "decoded_flag"];
    fn fields(&self) -> Vec<String> {
        vec![
            self.trial.to_string(),
            self.device_id.to_string(),
            self.checkpoint_uses.to_string(),
            self.ber.to_string(),
            u8::from(self.decoded).to_string(),
        ]
    }
}

pub fn trace_rows(trial: usize, devices: &[Device], trace: &RbTrace, delta: f64) -> Vec<TraceRow> {
    let mut out = Vec::new();
    for (j, dev) in devices.iter().enumerate() {
        for (c, &uses) in trace.checkpoints.iter().enumerate() {
            let ber = trace.ber[j][c];
            out.push(TraceRow { trial, device_id: dev.id, checkpoint_uses: uses, ber, decoded: ber < delta });
        }
    }
    out
}

/// How the per-device access probability follows the realized population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AccessPolicy {
    /// Every device transmits at every channel use.
    Full,
    /// `p = min(1, a / N)`, targeting `a` active devices per use.
    ExpectedActive(f64),
    Fixed(f64),
}

impl AccessPolicy {
    pub fn probability(&self, n: usize) -> f64 {
        match *self {
            AccessPolicy::Full => 1.0,
            AccessPolicy::ExpectedActive(a) => (a / n.max(1) as f64).min(1.0),
            AccessPolicy::Fixed(p) => p,
        }
    }
}

/// How `gamma0` translates into a received amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PowerNormalization {
    /// Amplitude `sqrt(gamma0)` per unit weight: an active coded symbol
    /// arrives with power `gamma0 d_c sigma2_w`.
    #[default]
    PerWeight,
    /// Amplitude chosen so the power averaged over all channel uses,
    /// idle ones included, is `gamma0`.
    AveragePower,
}

impl PowerNormalization {
    pub fn amplitude(self, gamma0: f64, access_prob: f64, d_c: usize, sigma2_w: f64) -> f64 {
        match self {
            PowerNormalization::PerWeight => gamma0.sqrt(),
            PowerNormalization::AveragePower => (gamma0 / (access_prob * d_c as f64 * sigma2_w)).sqrt(),
        }
    }
}

/// Parameters of the common-rate search.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSearch {
    pub gamma0: f64,
    /// Channel uses in the block.
    pub n_uses: usize,
    pub d_c: usize,
    pub weights: WeightSet,
    pub k_max: usize,
    pub power: PowerNormalization,
    pub sim: SimOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateTrial {
    pub n_devices: usize,
    pub access_prob: f64,
    /// Largest payload every device decoded; 0 if even `k = d_c` failed.
    pub k_best: usize,
    /// Per-device rate in bits per real channel use.
    pub rate: f64,
    /// `(1/N) log2(1 + N gamma0)` converted to bits per real channel use.
    pub bound: f64,
}

/// Decodes `n` devices with payload `k` over the whole block; true if every
/// device ends below the BER target.
pub fn all_decoded(search: &RateSearch, n: usize, p: f64, k: usize, seed: u64) -> Result<bool> {
    let code = CodeParams::new(k, search.d_c, search.weights.clone())?;
    let amp = search.power.amplitude(search.gamma0, p, search.d_c, search.weights.sigma2_w());
    let devices: Vec<Device> =
        (0..n).map(|j| Device::random(j, code.clone(), derive_seed(seed, j as u64), amp, p)).collect::<Result<_>>()?;
    let activity = schedule_activity(&devices, search.n_uses);
    let tx = transmit(&devices, &activity)?;
    let received = crate::channel::add_awgn(&tx.noiseless, search.sim.noise_var, derive_seed(seed, u64::MAX))?;
    let res = decode_prefix(&tx.graph, &received, search.n_uses, &search.sim, None)?;
    Ok(devices
        .iter()
        .enumerate()
        .all(|(j, d)| soft_bit_errors(&res.llr[j * k..(j + 1) * k], d.message.bits()) / (k as f64) < search.sim.delta))
}

/// One trial: draw `N ~ Poisson(lambda)` (redrawn while zero), then
/// binary-search the largest payload in `[d_c, k_max]` that all devices
/// decode within the block.
pub fn rate_trial(search: &RateSearch, lambda: f64, policy: AccessPolicy, seed: u64) -> Result<RateTrial> {
    if !(lambda > 0.0) {
        return invalid("arrival rate must be > 0");
    }
    if search.k_max < search.d_c || search.n_uses == 0 {
        return invalid("need k_max >= d_c and n_uses >= 1");
    }
    let poisson = Poisson::new(lambda).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = stream_rng(seed, 0);
    let n = loop {
        let draw = poisson.sample(&mut rng) as usize;
        if draw > 0 {
            break draw;
        }
    };
    let p = policy.probability(n);
    if !(p > 0.0 && p <= 1.0) {
        return invalid(format!("access probability {p} outside (0, 1]"));
    }
    let inner = derive_seed(seed, 1);
    let (mut lo, mut hi) = (search.d_c - 1, search.k_max);
    // Invariant: lo succeeded (or is below the smallest valid k); hi + 1 failed.
    if !all_decoded(search, n, p, search.d_c, inner)? {
        hi = search.d_c - 1;
    }
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if all_decoded(search, n, p, mid, inner)? {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let k_best = if lo < search.d_c { 0 } else { lo };
    Ok(RateTrial {
        n_devices: n,
        access_prob: p,
        k_best,
        rate: k_best as f64 / search.n_uses as f64,
        bound: per_real_dimension(equal_snr_rate(n, search.gamma0)?),
    })
}

/// Runs `trials` independent rate trials; seeds derive from `master_seed`.
pub fn measure_common_rate(
    search: &RateSearch,
    lambda: f64,
    policy: AccessPolicy,
    trials: usize,
    master_seed: u64,
) -> Result<Vec<RateTrial>> {
    crate::rng::par_trials(master_seed, trials, |_, s| rate_trial(search, lambda, policy, s)).into_iter().collect()
}

/// Mean rate over trials.
pub fn mean_rate(trials: &[RateTrial]) -> f64 {
    if trials.is_empty() {
        return 0.0;
    }
    trials.iter().map(|t| t.rate).sum::<f64>() / trials.len() as f64
}
