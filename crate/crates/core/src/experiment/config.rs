//! TOML experiment configuration. Sections mirror the library modules;
//! every field has a default, unknown keys are rejected.

use serde::Deserialize;

use crate::analysis::{BerMapping, DeMode, DeOptions};
use crate::channel::ChannelParams;
use crate::codec::{BpOptions, CodeParams, WeightSet};
use crate::contention::ContentionParams;
use crate::error::{Error, Result};
use crate::lte::{AccessScenario, BackoffConfig, ProposedConfig};
use crate::masim::{AccessPolicy, PowerNormalization, RbConfig, SimOptions};
use crate::qos::{deadline_uses, effective_deadline, QosSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Rate,
    Payload,
    Blocking,
    Delay,
    BerSymbols,
    Qos,
    Columns,
    DeCheck,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Rate => "rate",
            ExperimentKind::Payload => "payload",
            ExperimentKind::Blocking => "blocking",
            ExperimentKind::Delay => "delay",
            ExperimentKind::BerSymbols => "ber-symbols",
            ExperimentKind::Qos => "qos",
            ExperimentKind::Columns => "columns",
            ExperimentKind::DeCheck => "de-check",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// CSV file name; defaults to `<experiment>.csv`.
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub codec: CodecSection,
    #[serde(default)]
    pub channel: ChannelParams,
    #[serde(default)]
    pub masim: MasimSection,
    #[serde(default)]
    pub contention: ContentionSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub qos: QosSection,
    #[serde(default)]
    pub lte: LteSection,
}

fn default_seed() -> u64 {
    1
}

fn default_trials() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecSection {
    pub k: usize,
    pub d_c: usize,
    /// `D`: weights are `{1..D}` scaled to unit mean square.
    pub weight_set_size: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Largest check degree marginalized exactly.
    pub exact_cap: usize,
}

impl Default for CodecSection {
    fn default() -> Self {
        let bp = BpOptions::default();
        Self { k: 100, d_c: 8, weight_set_size: 10, max_iter: bp.max_iter, tol: bp.tol, exact_cap: 8 }
    }
}

impl CodecSection {
    pub fn weights(&self) -> Result<WeightSet> {
        WeightSet::normalized(self.weight_set_size)
    }

    pub fn params(&self) -> Result<CodeParams> {
        CodeParams::new(self.k, self.d_c, self.weights()?)
    }

    pub fn bp(&self) -> BpOptions {
        BpOptions { max_iter: self.max_iter, tol: self.tol, exact_cap: self.exact_cap }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Full,
    ExpectedActive,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PowerKind {
    PerWeight,
    AveragePower,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MasimSection {
    /// Received SNR per unit weight; noise variance is 1.
    pub gamma0_db: f64,
    pub delta: f64,
    pub warm_start: bool,
    pub power: PowerKind,
    /// Devices per sweep point (ber-symbols, de-check, payload).
    pub n_devices: Vec<usize>,
    pub access_prob: f64,
    pub duration_s: f64,
    pub bandwidth_hz: f64,
    pub ra_fraction: f64,
    pub checkpoint_step: usize,
    /// Poisson arrival rates swept by the rate experiment.
    pub lambdas: Vec<f64>,
    pub policy: PolicyKind,
    /// Target active devices per use for the expected-active policy.
    pub expected_active: f64,
    pub k_max: usize,
    /// Power-control ceiling on the transmit amplitude multiplier.
    pub max_tx_scale: Option<f64>,
}

impl Default for MasimSection {
    fn default() -> Self {
        Self {
            gamma0_db: 0.0,
            delta: 1e-3,
            warm_start: true,
            power: PowerKind::PerWeight,
            n_devices: vec![2, 4],
            access_prob: 1.0,
            duration_s: 1e-3,
            bandwidth_hz: 1e6,
            ra_fraction: 0.1,
            checkpoint_step: 100,
            lambdas: vec![2.0, 4.0, 8.0],
            policy: PolicyKind::Full,
            expected_active: 1.0,
            k_max: 200,
            max_tx_scale: None,
        }
    }
}

impl MasimSection {
    pub fn gamma0(&self) -> f64 {
        db_to_linear(self.gamma0_db)
    }

    pub fn power(&self) -> PowerNormalization {
        match self.power {
            PowerKind::PerWeight => PowerNormalization::PerWeight,
            PowerKind::AveragePower => PowerNormalization::AveragePower,
        }
    }

    pub fn policy(&self) -> AccessPolicy {
        match self.policy {
            PolicyKind::Full => AccessPolicy::Full,
            PolicyKind::ExpectedActive => AccessPolicy::ExpectedActive(self.expected_active),
            PolicyKind::Fixed => AccessPolicy::Fixed(self.access_prob),
        }
    }

    pub fn rb(&self) -> RbConfig {
        RbConfig {
            duration_s: self.duration_s,
            bandwidth_hz: self.bandwidth_hz,
            ra_fraction: self.ra_fraction,
            received_snr: self.gamma0(),
            arrival_rate: 0.0,
        }
    }

    pub fn sim(&self, bp: BpOptions) -> SimOptions {
        SimOptions { delta: self.delta, noise_var: 1.0, bp, warm_start: self.warm_start }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContentionSection {
    pub n_preambles: usize,
    pub epsilon: f64,
    pub l_cp1: u32,
    pub preamble_snr_db: f64,
}

impl Default for ContentionSection {
    fn default() -> Self {
        Self { n_preambles: 60, epsilon: 1e-3, l_cp1: 64, preamble_snr_db: 20.0 }
    }
}

impl ContentionSection {
    pub fn params(&self) -> ContentionParams {
        ContentionParams {
            epsilon: self.epsilon,
            gamma0: db_to_linear(self.preamble_snr_db),
            noise_var: 1.0,
            l_cp1: self.l_cp1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MappingKind {
    Direct,
    Consistent,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Weight-set sizes swept by the columns experiment.
    pub weight_set_sizes: Vec<usize>,
    /// Columns of the generator examined by the columns experiment.
    pub columns_k: usize,
    pub columns_p: f64,
    /// Channel uses per column, `m / (N k)`, swept by the columns experiment.
    pub load_points: Vec<f64>,
    pub mapping: MappingKind,
    /// `0` selects exact type enumeration, otherwise this many sampled draws.
    pub de_samples: usize,
    pub de_max_iter: usize,
    pub de_tol: f64,
    pub omega_scale: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let de = DeOptions::default();
        Self {
            weight_set_sizes: vec![2, 5, 10, 20],
            columns_k: 40,
            columns_p: 0.1,
            load_points: vec![2.5, 5.0, 7.5, 10.0],
            mapping: MappingKind::Direct,
            de_samples: 0,
            de_max_iter: de.max_iter,
            de_tol: de.tol,
            omega_scale: de.omega_scale,
        }
    }
}

impl AnalysisSection {
    pub fn mapping(&self) -> BerMapping {
        match self.mapping {
            MappingKind::Direct => BerMapping::Direct,
            MappingKind::Consistent => BerMapping::Consistent,
        }
    }

    pub fn de(&self, seed: u64) -> DeOptions {
        let mode = match self.de_samples {
            0 => DeMode::Exact,
            samples => DeMode::Sampled { samples, seed },
        };
        DeOptions { mode, max_iter: self.de_max_iter, tol: self.de_tol, omega_scale: self.omega_scale }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QosSection {
    pub deadlines_ms: Vec<f64>,
    pub devices_per_group: usize,
    pub bandwidth_hz: f64,
    pub ra_fraction: f64,
    /// Packet arrival rate per device; deadlines are capped at its inverse.
    pub arrival_rate: f64,
    /// Refine the closed-form plan by density evolution.
    pub optimize: bool,
    pub checkpoint_step: usize,
}

impl Default for QosSection {
    fn default() -> Self {
        Self {
            deadlines_ms: vec![10.0, 20.0, 40.0, 100.0],
            devices_per_group: 4,
            bandwidth_hz: 1e5,
            ra_fraction: 0.1,
            arrival_rate: 0.0,
            optimize: false,
            checkpoint_step: 900,
        }
    }
}

impl QosSection {
    pub fn deadline_uses(&self) -> Vec<usize> {
        self.deadlines_ms
            .iter()
            .map(|&ms| {
                deadline_uses(effective_deadline(ms / 1e3, self.arrival_rate), self.bandwidth_hz, self.ra_fraction)
            })
            .collect()
    }

    pub fn spec(&self, codec: &CodecSection, masim: &MasimSection) -> Result<QosSpec> {
        Ok(QosSpec {
            deadlines: self.deadline_uses().into_iter().map(|u| u as f64).collect(),
            group_sizes: vec![self.devices_per_group; self.deadlines_ms.len()],
            delta: masim.delta,
            k: codec.k,
            d_c: codec.d_c,
            gamma0: masim.gamma0(),
            sigma2_w: codec.weights()?.sigma2_w(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LteSection {
    pub n_devices: Vec<usize>,
    /// Access-probability rules of the shared-block scheme: 1 or 2.
    pub scenarios: Vec<u8>,
    pub max_attempts: usize,
    pub backoff_ms: Vec<u64>,
    pub ra_period_ms: u64,
    pub frame_ms: u64,
    pub subframe_ms: u64,
    pub rbs_per_subframe: u64,
    pub rbs_per_grant: u64,
    pub ra_response_ms: u64,
    pub activation_window_ms: u64,
    pub payload_bits: u64,
    pub rb_bandwidth_hz: f64,
}

impl Default for LteSection {
    fn default() -> Self {
        let b = BackoffConfig::default();
        let p = ProposedConfig::default();
        Self {
            n_devices: vec![500, 2000, 5000],
            scenarios: vec![1, 2],
            max_attempts: b.max_attempts,
            backoff_ms: b.backoff_ms,
            ra_period_ms: b.ra_period_ms,
            frame_ms: b.frame_ms,
            subframe_ms: b.subframe_ms,
            rbs_per_subframe: b.rbs_per_subframe,
            rbs_per_grant: b.rbs_per_grant,
            ra_response_ms: b.ra_response_ms,
            activation_window_ms: b.activation_window_ms,
            payload_bits: p.payload_bits,
            rb_bandwidth_hz: p.rb_bandwidth_hz,
        }
    }
}

impl LteSection {
    pub fn backoff(&self, contention: &ContentionSection) -> BackoffConfig {
        BackoffConfig {
            n_preambles: contention.n_preambles,
            max_attempts: self.max_attempts,
            backoff_ms: self.backoff_ms.clone(),
            ra_period_ms: self.ra_period_ms,
            frame_ms: self.frame_ms,
            subframe_ms: self.subframe_ms,
            rbs_per_subframe: self.rbs_per_subframe,
            rbs_per_grant: self.rbs_per_grant,
            ra_response_ms: self.ra_response_ms,
            activation_window_ms: self.activation_window_ms,
        }
    }

    pub fn proposed(&self, contention: &ContentionSection, gamma0: f64) -> ProposedConfig {
        ProposedConfig {
            timing: self.backoff(contention),
            epsilon: contention.epsilon,
            preamble_snr: db_to_linear(contention.preamble_snr_db),
            gamma0,
            payload_bits: self.payload_bits,
            l_cp1: contention.l_cp1,
            rb_bandwidth_hz: self.rb_bandwidth_hz,
        }
    }

    pub fn scenarios(&self) -> Result<Vec<AccessScenario>> {
        self.scenarios
            .iter()
            .map(|&s| match s {
                1 => Ok(AccessScenario::One),
                2 => Ok(AccessScenario::Two),
                _ => Err(Error::InvalidArgument(format!("scenario {s} is not 1 or 2"))),
            })
            .collect()
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Parses and validates a configuration. Parse errors carry the line,
/// column and offending key.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn in_section<T>(section: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("[{section}] {m}")),
        other => other,
    })
}

fn check(section: &str, ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("[{section}] {msg}")))
    }
}

impl ExperimentConfig {
    /// Re-runs every module's parameter validation.
    pub fn validate(&self) -> Result<()> {
        check("experiment", self.trials >= 1, "trials must be >= 1")?;
        if let Some(name) = &self.output {
            let simple =
                !name.is_empty() && std::path::Path::new(name).file_name().map(|f| f == name.as_str()) == Some(true);
            check("experiment", simple, "output must be a plain file name")?;
        }

        let c = &self.codec;
        in_section("codec", c.params())?;
        check("codec", c.max_iter >= 1, "max_iter must be >= 1")?;
        check("codec", c.tol >= 0.0, "tol must be >= 0")?;
        check(
            "codec",
            c.exact_cap <= crate::codec::MAX_EXACT_CAP,
            "exact_cap exceeds the exact-marginalization limit",
        )?;

        in_section("channel", self.channel.validate())?;

        let m = &self.masim;
        check("masim", m.gamma0_db.is_finite(), "gamma0_db must be finite")?;
        check("masim", m.delta > 0.0 && m.delta < 0.5, "delta must be in (0, 0.5)")?;
        check("masim", !m.n_devices.is_empty() && !m.n_devices.contains(&0), "n_devices must be non-empty and >= 1")?;
        check("masim", m.access_prob > 0.0 && m.access_prob <= 1.0, "access_prob must be in (0, 1]")?;
        in_section("masim", m.rb().validate())?;
        check("masim", m.rb().n_channel_uses() >= 1, "block holds no data channel uses")?;
        check("masim", m.checkpoint_step >= 1, "checkpoint_step must be >= 1")?;
        check(
            "masim",
            !m.lambdas.is_empty() && m.lambdas.iter().all(|&l| l > 0.0),
            "lambdas must be non-empty and > 0",
        )?;
        check("masim", m.expected_active > 0.0, "expected_active must be > 0")?;
        check("masim", m.k_max >= c.d_c, "k_max must be >= codec.d_c")?;
        check("masim", m.max_tx_scale.is_none_or(|s| s > 0.0), "max_tx_scale must be > 0")?;

        let ct = &self.contention;
        check("contention", ct.n_preambles >= 1, "n_preambles must be >= 1")?;
        check("contention", ct.epsilon > 0.0 && ct.epsilon < 1.0, "epsilon must be in (0, 1)")?;
        check("contention", ct.preamble_snr_db.is_finite(), "preamble_snr_db must be finite")?;

        let a = &self.analysis;
        check(
            "analysis",
            !a.weight_set_sizes.is_empty() && !a.weight_set_sizes.contains(&0),
            "weight_set_sizes must be >= 1",
        )?;
        check("analysis", a.columns_k >= 2, "columns_k must be >= 2")?;
        check("analysis", a.columns_p > 0.0 && a.columns_p <= 1.0, "columns_p must be in (0, 1]")?;
        check("analysis", c.d_c <= a.columns_k, "codec.d_c must not exceed columns_k")?;
        check(
            "analysis",
            !a.load_points.is_empty() && a.load_points.iter().all(|&x| x > 0.0),
            "load_points must be > 0",
        )?;
        check("analysis", a.de_max_iter >= 1 && a.de_tol >= 0.0, "de_max_iter >= 1 and de_tol >= 0 required")?;
        check("analysis", a.omega_scale > 0.0, "omega_scale must be > 0")?;

        let q = &self.qos;
        check("qos", q.bandwidth_hz > 0.0, "bandwidth_hz must be > 0")?;
        check("qos", q.ra_fraction > 0.0 && q.ra_fraction < 1.0, "ra_fraction must be in (0, 1)")?;
        check("qos", q.arrival_rate >= 0.0, "arrival_rate must be >= 0")?;
        check("qos", q.deadlines_ms.iter().all(|&t| t > 0.0), "deadlines_ms must be > 0")?;
        check("qos", q.checkpoint_step >= 1, "checkpoint_step must be >= 1")?;
        in_section("qos", q.spec(c, m)?.validate())?;

        let l = &self.lte;
        check("lte", !l.n_devices.is_empty() && !l.n_devices.contains(&0), "n_devices must be non-empty and >= 1")?;
        check(
            "lte",
            l.payload_bits >= 1 && l.rb_bandwidth_hz > 0.0,
            "payload_bits and rb_bandwidth_hz must be positive",
        )?;
        in_section("lte", l.backoff(ct).validate())?;
        in_section("lte", l.scenarios())?;
        Ok(())
    }

    pub fn output_name(&self) -> String {
        self.output.clone().unwrap_or_else(|| format!("{}.csv", self.experiment.name()))
    }
}
