//! Configuration-driven experiment runner.
//!
//! Each experiment maps a parsed [`ExperimentConfig`] onto one module
//! pipeline and returns a table plus one summary line per sweep point.
//! Sweep point `i` draws its trial seeds from `derive_seed(seed, i)`, and
//! trials are merged in index order, so output depends only on the config
//! and the seed, never on the thread count.

mod config;

pub use config::{
    db_to_linear, parse_config, AnalysisSection, CodecSection, ContentionSection, ExperimentConfig, ExperimentKind,
    LteSection, MappingKind, MasimSection, PolicyKind, PowerKind, QosSection,
};

use std::io::Write;
use std::path::Path;

use crate::analysis::{column_collision_prob, density_evolution, equal_snr_rate, identical_column_fraction};
use crate::analysis::{DeClass, DeConfig};
use crate::channel::{apply_power_control_capped, sample_channel};
use crate::contention::{contention_overhead, max_payload, partition_preambles, simulate_contention_round};
use crate::error::Result;
use crate::lte::{run_backoff_sim, run_proposed_ra_sim, RaMetrics};
use crate::masim::{checkpoints_every, measure_common_rate, run_rb_simulation, Device, RateSearch, RbConfig};
use crate::qos::{closed_form_access_prob, optimize_access, verify_plan, VerifyOptions};
use crate::rng::{derive_seed, par_trials};
use crate::table::write_rows;

/// Rows tagged with their trial index; the seed column is added on output.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    fn push(&mut self, trial: usize, fields: Vec<String>) {
        debug_assert_eq!(fields.len(), self.header.len());
        self.rows.push((trial, fields));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub table: Table,
    pub summary: Vec<String>,
}

impl ExperimentOutput {
    /// CSV with `seed,trial` ahead of the experiment's own columns.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let header = ["seed", "trial"].into_iter().chain(self.table.header.iter().copied());
        let seed = self.seed.to_string();
        let rows = self.table.rows.iter().map(|(trial, fields)| {
            let mut r = Vec::with_capacity(fields.len() + 2);
            r.push(seed.clone());
            r.push(trial.to_string());
            r.extend(fields.iter().cloned());
            r
        });
        write_rows(out, header, rows)
    }

    /// Writes the CSV to a temporary file in the target directory and
    /// renames it into place, so a failed run leaves no partial file.
    pub fn write_atomic(&self, path: &Path) -> std::io::Result<()> {
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        self.write_csv(std::io::BufWriter::new(tmp.as_file_mut())).map_err(std::io::Error::other)?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    }
}

/// Runs the configured experiment. The config is revalidated first.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let (table, summary) = match cfg.experiment {
        ExperimentKind::Rate => run_rate(cfg)?,
        ExperimentKind::Payload => run_payload(cfg)?,
        ExperimentKind::Blocking | ExperimentKind::Delay => run_access(cfg)?,
        ExperimentKind::BerSymbols => run_ber_symbols(cfg)?,
        ExperimentKind::Qos => run_qos(cfg)?,
        ExperimentKind::Columns => run_columns(cfg)?,
        ExperimentKind::DeCheck => run_de_check(cfg)?,
    };
    Ok(ExperimentOutput { experiment: cfg.experiment, seed: cfg.seed, table, summary })
}

type Outcome = Result<(Table, Vec<String>)>;

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn run_rate(cfg: &ExperimentConfig) -> Outcome {
    let m = &cfg.masim;
    let search = RateSearch {
        gamma0: m.gamma0(),
        n_uses: m.rb().n_channel_uses(),
        d_c: cfg.codec.d_c,
        weights: cfg.codec.weights()?,
        k_max: m.k_max,
        power: m.power(),
        sim: m.sim(cfg.codec.bp()),
    };
    let mut table = Table::new(&["lambda", "n_devices", "access_prob", "k_best", "rate", "bound"]);
    let mut summary = Vec::new();
    for (i, &lambda) in m.lambdas.iter().enumerate() {
        let trials = measure_common_rate(&search, lambda, m.policy(), cfg.trials, derive_seed(cfg.seed, i as u64))?;
        for (t, r) in trials.iter().enumerate() {
            table.push(
                t,
                vec![
                    lambda.to_string(),
                    r.n_devices.to_string(),
                    r.access_prob.to_string(),
                    r.k_best.to_string(),
                    r.rate.to_string(),
                    r.bound.to_string(),
                ],
            );
        }
        let rate = mean(trials.iter().map(|r| r.rate));
        let bound = mean(trials.iter().map(|r| r.bound));
        let above = trials.iter().filter(|r| r.rate > r.bound).count();
        summary.push(format!(
            "lambda={lambda} mean_rate={rate:.4} mean_bound={bound:.4} ratio={:.3} above_bound={above}/{}",
            rate / bound,
            trials.len()
        ));
    }
    Ok((table, summary))
}

fn run_payload(cfg: &ExperimentConfig) -> Outcome {
    let m = &cfg.masim;
    let ct = &cfg.contention;
    let params = ct.params();
    let plan = partition_preambles(ct.n_preambles, &[1.0])?;
    let mut table = Table::new(&[
        "n_devices",
        "common_rate",
        "payload_bound",
        "overhead_formula",
        "payload_formula",
        "overhead_mean",
        "payload_mean",
        "seed_collision_rate",
    ]);
    let mut summary = Vec::new();
    for (i, &n) in m.n_devices.iter().enumerate() {
        let rate = equal_snr_rate(n, m.gamma0())?;
        let bound = m.duration_s * m.bandwidth_hz * rate;
        let overhead = contention_overhead(n, ct.n_preambles, ct.epsilon, ct.l_cp1)?;
        let payload = max_payload(m.duration_s, m.bandwidth_hz, rate, overhead);
        let groups = vec![0; n];
        let rounds = par_trials(derive_seed(cfg.seed, i as u64), cfg.trials, |_, s| {
            simulate_contention_round(&plan, &groups, &params, s)
        });
        let mut collisions = Vec::with_capacity(cfg.trials);
        for (t, round) in rounds.into_iter().enumerate() {
            let round = round?;
            let per_device =
                round.selectors.iter().zip(&round.overhead_bits).flat_map(|(sel, &o)| sel.iter().map(move |_| o));
            let (oh, pl): (Vec<f64>, Vec<f64>) =
                per_device.map(|o| (o as f64, max_payload(m.duration_s, m.bandwidth_hz, rate, o) as f64)).unzip();
            let collision = round.device_collision_rate();
            collisions.push(collision);
            table.push(
                t,
                vec![
                    n.to_string(),
                    rate.to_string(),
                    bound.to_string(),
                    overhead.to_string(),
                    payload.to_string(),
                    mean(oh).to_string(),
                    mean(pl).to_string(),
                    collision.to_string(),
                ],
            );
        }
        summary.push(format!(
            "N={n} common_rate={rate:.4} payload_bound={bound:.1} overhead={overhead} max_payload={payload} seed_collision_rate={:.2e}",
            mean(collisions)
        ));
    }
    Ok((table, summary))
}

fn metrics_fields(scheme: &str, scenario: &str, n: usize, r: &RaMetrics) -> Vec<String> {
    vec![
        scheme.to_string(),
        scenario.to_string(),
        n.to_string(),
        r.blocking_probability.to_string(),
        r.mean_delay_ms.to_string(),
        r.p50_ms.to_string(),
        r.p95_ms.to_string(),
    ]
}

fn run_access(cfg: &ExperimentConfig) -> Outcome {
    let l = &cfg.lte;
    let backoff = l.backoff(&cfg.contention);
    let proposed = l.proposed(&cfg.contention, cfg.masim.gamma0());
    let scenarios = l.scenarios()?;
    let mut table =
        Table::new(&["scheme", "scenario", "n_devices", "blocking_prob", "mean_delay_ms", "p50_ms", "p95_ms"]);
    let mut summary = Vec::new();
    for (i, &n) in l.n_devices.iter().enumerate() {
        let point = derive_seed(cfg.seed, i as u64);
        let base: Vec<RaMetrics> =
            par_trials(derive_seed(point, 0), cfg.trials, |_, s| run_backoff_sim(&backoff, n, s))
                .into_iter()
                .collect::<Result<_>>()?;
        for (t, r) in base.iter().enumerate() {
            table.push(t, metrics_fields("backoff", "-", n, r));
        }
        let base_block = mean(base.iter().map(|r| r.blocking_probability));
        let base_delay = mean(base.iter().map(|r| r.mean_delay_ms));
        let mut line = match cfg.experiment {
            ExperimentKind::Blocking => format!("N={n} backoff_blocking={base_block:.4}"),
            _ => format!("N={n} backoff_delay_ms={base_delay:.1}"),
        };
        for (j, &sc) in scenarios.iter().enumerate() {
            let runs: Vec<RaMetrics> = par_trials(derive_seed(point, 1 + j as u64), cfg.trials, |_, s| {
                run_proposed_ra_sim(&proposed, n, sc, s)
            })
            .into_iter()
            .collect::<Result<_>>()?;
            for (t, r) in runs.iter().enumerate() {
                table.push(t, metrics_fields("proposed", sc.label(), n, r));
            }
            let block = mean(runs.iter().map(|r| r.blocking_probability));
            let delay = mean(runs.iter().map(|r| r.mean_delay_ms));
            line += &match cfg.experiment {
                ExperimentKind::Blocking => format!(" proposed_s{}_blocking={block:.4}", sc.label()),
                _ => format!(" proposed_s{}_delay_ms={delay:.1} ratio={:.3}", sc.label(), delay / base_delay),
            };
        }
        summary.push(line);
    }
    Ok((table, summary))
}

fn run_ber_symbols(cfg: &ExperimentConfig) -> Outcome {
    let m = &cfg.masim;
    let code = cfg.codec.params()?;
    let sigma2_w = code.weights.sigma2_w();
    let gamma0 = m.gamma0();
    let rb = m.rb();
    let sim = m.sim(cfg.codec.bp());
    let checkpoints = checkpoints_every(m.checkpoint_step, rb.n_channel_uses());
    let mut table = Table::new(&[
        "n_devices",
        "device_id",
        "received_snr",
        "checkpoint_uses",
        "uses_per_bit",
        "ber",
        "decoded_flag",
    ]);
    let mut summary = Vec::new();
    for (i, &n) in m.n_devices.iter().enumerate() {
        let traces = par_trials(derive_seed(cfg.seed, i as u64), cfg.trials, |_, s| -> Result<_> {
            let mut devices = Vec::with_capacity(n);
            let mut snrs = Vec::with_capacity(n);
            for j in 0..n {
                let dev_seed = derive_seed(s, j as u64);
                let ch = sample_channel(&cfg.channel, dev_seed ^ 0x5eed)?;
                let gamma = cfg.channel.reference_snr;
                let snr = apply_power_control_capped(&ch, gamma, gamma0, m.max_tx_scale)?.received_snr(gamma);
                let amp = (snr / gamma0).sqrt() * m.power().amplitude(gamma0, m.access_prob, code.d_c, sigma2_w);
                devices.push(Device::random(j, code.clone(), dev_seed, amp, m.access_prob)?);
                snrs.push(snr);
            }
            let trace = run_rb_simulation(&rb, &devices, &checkpoints, &sim, derive_seed(s, u64::MAX))?;
            Ok((snrs, trace))
        });
        let mut final_ber = Vec::new();
        let mut decode_times = Vec::new();
        for (t, res) in traces.into_iter().enumerate() {
            let (snrs, trace) = res?;
            for j in 0..n {
                for (c, &uses) in checkpoints.iter().enumerate() {
                    let ber = trace.ber[j][c];
                    table.push(
                        t,
                        vec![
                            n.to_string(),
                            j.to_string(),
                            snrs[j].to_string(),
                            uses.to_string(),
                            (uses as f64 / (n * code.k) as f64).to_string(),
                            ber.to_string(),
                            u8::from(ber < m.delta).to_string(),
                        ],
                    );
                }
                final_ber.push(*trace.ber[j].last().unwrap_or(&f64::NAN));
                if let Some(d) = trace.decode_time[j] {
                    decode_times.push(d as f64);
                }
            }
        }
        summary.push(format!(
            "N={n} final_ber={:.3e} decoded={}/{} mean_decode_uses={:.1}",
            mean(final_ber),
            decode_times.len(),
            n * cfg.trials,
            mean(decode_times)
        ));
    }
    Ok((table, summary))
}

fn run_qos(cfg: &ExperimentConfig) -> Outcome {
    let m = &cfg.masim;
    let q = &cfg.qos;
    let spec = q.spec(&cfg.codec, m)?;
    let snr = vec![spec.gamma0; spec.deadlines.len()];
    let opts = VerifyOptions { mapping: cfg.analysis.mapping(), de: cfg.analysis.de(derive_seed(cfg.seed, u64::MAX)) };
    let plan = if q.optimize {
        optimize_access(&spec, &snr, &vec![spec.d_c; snr.len()], &opts)?
    } else {
        closed_form_access_prob(&spec)?
    };
    let checks = verify_plan(&plan, &spec, &snr, &opts)?;
    let deadlines = q.deadline_uses();
    let horizon = *deadlines.iter().max().expect("validated non-empty");
    let mut checkpoints = checkpoints_every(q.checkpoint_step, horizon);
    checkpoints.extend(&deadlines);
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let rb = RbConfig {
        duration_s: horizon as f64 / ((1.0 - q.ra_fraction) * q.bandwidth_hz),
        bandwidth_hz: q.bandwidth_hz,
        ra_fraction: q.ra_fraction,
        received_snr: spec.gamma0,
        arrival_rate: q.arrival_rate,
    };
    let code = cfg.codec.params()?;
    let sim = m.sim(cfg.codec.bp());
    let groups: Vec<usize> = (0..deadlines.len()).flat_map(|g| std::iter::repeat_n(g, q.devices_per_group)).collect();
    let traces = par_trials(derive_seed(cfg.seed, 0), cfg.trials, |_, s| -> Result<_> {
        let devices: Vec<Device> = groups
            .iter()
            .enumerate()
            .map(|(j, &g)| {
                Ok(Device::random(j, code.clone(), derive_seed(s, j as u64), spec.gamma0.sqrt(), plan.p[g])?
                    .with_delay(g, deadlines[g]))
            })
            .collect::<Result<_>>()?;
        run_rb_simulation(&rb, &devices, &checkpoints, &sim, derive_seed(s, u64::MAX))
    });
    let mut table =
        Table::new(&["group", "device_id", "access_prob", "deadline_uses", "checkpoint_uses", "ber", "decoded_flag"]);
    let mut at_deadline = vec![Vec::new(); deadlines.len()];
    for (t, trace) in traces.into_iter().enumerate() {
        let trace = trace?;
        for (j, &g) in groups.iter().enumerate() {
            for (c, &uses) in checkpoints.iter().enumerate() {
                let ber = trace.ber[j][c];
                if uses == deadlines[g] {
                    at_deadline[g].push(ber);
                }
                table.push(
                    t,
                    vec![
                        g.to_string(),
                        j.to_string(),
                        plan.p[g].to_string(),
                        deadlines[g].to_string(),
                        uses.to_string(),
                        ber.to_string(),
                        u8::from(ber < m.delta).to_string(),
                    ],
                );
            }
        }
    }
    let summary = checks
        .iter()
        .map(|c| {
            let g = c.group;
            let ber = mean(at_deadline[g].iter().copied());
            format!(
                "group={g} deadline_uses={} p={:.4} predicted_ber={:.2e} simulated_ber={ber:.2e} met={}",
                deadlines[g],
                plan.p[g],
                c.predicted_ber,
                ber < m.delta
            )
        })
        .collect();
    Ok((table, summary))
}

fn run_columns(cfg: &ExperimentConfig) -> Outcome {
    let a = &cfg.analysis;
    let d_c = cfg.codec.d_c;
    let mut table = Table::new(&["weight_set_size", "m", "load", "q_formula", "identical_pair_fraction"]);
    let mut summary = Vec::new();
    let mut point = 0u64;
    for &dd in &a.weight_set_sizes {
        for &x in &a.load_points {
            let m = (x * a.columns_k as f64).round().max(1.0) as usize;
            let q = column_collision_prob(m, a.columns_p, d_c, a.columns_k, dd)?;
            let fr: Vec<f64> = par_trials(derive_seed(cfg.seed, point), cfg.trials, |_, s| {
                identical_column_fraction(m, a.columns_p, d_c, a.columns_k, dd, s)
            })
            .into_iter()
            .collect::<Result<_>>()?;
            point += 1;
            for (t, f) in fr.iter().enumerate() {
                table.push(t, vec![dd.to_string(), m.to_string(), x.to_string(), q.to_string(), f.to_string()]);
            }
            let mc = mean(fr.iter().copied());
            let se = if fr.len() > 1 {
                (fr.iter().map(|f| (f - mc).powi(2)).sum::<f64>() / ((fr.len() - 1) * fr.len()) as f64).sqrt()
            } else {
                f64::NAN
            };
            summary.push(format!("D={dd} m={m} q_formula={q:.4e} q_mc={mc:.4e} se={se:.1e}"));
        }
    }
    Ok((table, summary))
}

fn run_de_check(cfg: &ExperimentConfig) -> Outcome {
    let m = &cfg.masim;
    let code = cfg.codec.params()?;
    let sigma2_w = code.weights.sigma2_w();
    let gamma0 = m.gamma0();
    let amp = m.power().amplitude(gamma0, m.access_prob, code.d_c, sigma2_w);
    let rb = m.rb();
    let sim = m.sim(cfg.codec.bp());
    let checkpoints = checkpoints_every(m.checkpoint_step, rb.n_channel_uses());
    let mapping = cfg.analysis.mapping();
    let mut table = Table::new(&["n_devices", "checkpoint_uses", "uses_per_bit", "mc_ber", "de_ber"]);
    let mut summary = Vec::new();
    for (i, &n) in m.n_devices.iter().enumerate() {
        let point = derive_seed(cfg.seed, i as u64);
        let de_opts = cfg.analysis.de(derive_seed(point, u64::MAX));
        let de_ber: Vec<f64> = checkpoints
            .iter()
            .map(|&uses| {
                let class = DeClass {
                    snr: amp * amp,
                    degree: code.d_c,
                    access_prob: m.access_prob,
                    uses: uses as f64,
                    count: n,
                };
                let cfg = DeConfig { classes: vec![class], k: code.k, sigma2_w };
                let traj = density_evolution(&cfg, &de_opts)?;
                Ok(mapping.ber(traj.last().expect("initial state").m[0]))
            })
            .collect::<Result<_>>()?;
        let traces = par_trials(point, cfg.trials, |_, s| -> Result<_> {
            let devices: Vec<Device> = (0..n)
                .map(|j| Device::random(j, code.clone(), derive_seed(s, j as u64), amp, m.access_prob))
                .collect::<Result<_>>()?;
            run_rb_simulation(&rb, &devices, &checkpoints, &sim, derive_seed(s, u64::MAX))
        });
        let mut mc_sum = vec![0.0; checkpoints.len()];
        for (t, trace) in traces.into_iter().enumerate() {
            let trace = trace?;
            for (c, &uses) in checkpoints.iter().enumerate() {
                let ber = mean(trace.ber.iter().map(|b| b[c]));
                mc_sum[c] += ber;
                table.push(
                    t,
                    vec![
                        n.to_string(),
                        uses.to_string(),
                        (uses as f64 / (n * code.k) as f64).to_string(),
                        ber.to_string(),
                        de_ber[c].to_string(),
                    ],
                );
            }
        }
        let mc: Vec<f64> = mc_sum.iter().map(|s| s / cfg.trials as f64).collect();
        let compared: Vec<f64> =
            mc.iter().zip(&de_ber).filter(|(&mc, _)| mc >= 1e-3).map(|(&mc, &de)| (de / mc).max(mc / de)).collect();
        let within = compared.iter().filter(|&&r| r <= 3.0).count();
        summary.push(format!(
            "N={n} checkpoints_with_ber_ge_1e-3={} within_factor_3={within} worst_factor={:.3e}",
            compared.len(),
            compared.iter().copied().fold(f64::NAN, f64::max)
        ));
    }
    Ok((table, summary))
}
