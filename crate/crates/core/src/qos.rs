//! Delay-aware access probabilities.
//!
//! Each delay group gets one access probability. The closed-form rule
//! solves the high-SNR approximation of density evolution for the smallest
//! probability that reaches the target BER exactly at the deadline; the
//! general solver refines a plan by coordinate descent with every candidate
//! checked through full density evolution.

use crate::analysis::{density_evolution, BerMapping, DeClass, DeConfig, DeOptions};
use crate::error::{invalid, Result};
use crate::special::q_inv;
use crate::table::CsvRecord;

/// `min(1/lambda, t)`: a device cannot wait longer than the gap to its next
/// packet. A zero arrival rate leaves the deadline unchanged.
pub fn effective_deadline(deadline_s: f64, arrival_rate: f64) -> f64 {
    if arrival_rate > 0.0 {
        deadline_s.min(1.0 / arrival_rate)
    } else {
        deadline_s
    }
}

/// Real channel uses available within `seconds`: `(1 - tau) W seconds`.
pub fn deadline_uses(seconds: f64, bandwidth_hz: f64, ra_fraction: f64) -> usize {
    ((1.0 - ra_fraction) * bandwidth_hz * seconds + 1e-9).floor().max(1.0) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct QosSpec {
    /// Per-group deadline in channel uses.
    pub deadlines: Vec<f64>,
    /// Devices per group.
    pub group_sizes: Vec<usize>,
    pub delta: f64,
    pub k: usize,
    pub d_c: usize,
    /// Received SNR per unit weight, linear.
    pub gamma0: f64,
    pub sigma2_w: f64,
}

impl QosSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return invalid(format!("delta must be in (0, 0.5), got {}", self.delta));
        }
        if self.deadlines.is_empty() || self.deadlines.len() != self.group_sizes.len() {
            return invalid("deadlines and group_sizes must be non-empty and equally long");
        }
        if self.deadlines.iter().any(|&t| !(t >= 1.0)) {
            return invalid("deadlines must be >= 1 channel use");
        }
        if self.group_sizes.contains(&0) {
            return invalid("every group needs at least one device");
        }
        if self.k == 0 || self.d_c == 0 {
            return invalid("k and d_c must be >= 1");
        }
        if !(self.gamma0 > 0.0 && self.sigma2_w > 0.0) {
            return invalid("gamma0 and sigma2_w must be > 0");
        }
        Ok(())
    }

    fn n_groups(&self) -> usize {
        self.deadlines.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccessPlan {
    pub p: Vec<f64>,
    pub degrees: Vec<usize>,
    /// `sum over devices of p d`.
    pub objective: f64,
    /// False if some group would need `p > 1` under the approximation.
    pub feasible: bool,
    /// Set once the plan has been checked by density evolution.
    pub de_verified: Option<bool>,
}

fn objective(spec: &QosSpec, p: &[f64], degrees: &[usize]) -> f64 {
    p.iter().zip(degrees).zip(&spec.group_sizes).map(|((p, &d), &n)| n as f64 * p * d as f64).sum()
}

/// `p_i = min(k Q^{-1}(delta)^2 / (2 d_c gamma0 sigma2_w t_i), 1)`.
pub fn closed_form_access_prob(spec: &QosSpec) -> Result<AccessPlan> {
    spec.validate()?;
    let x = q_inv(spec.delta).expect("delta in (0, 0.5)");
    let mut feasible = true;
    let p: Vec<f64> = spec
        .deadlines
        .iter()
        .map(|&t| {
            let raw = spec.k as f64 * x * x / (2.0 * spec.d_c as f64 * spec.gamma0 * spec.sigma2_w * t);
            if raw > 1.0 {
                feasible = false;
            }
            raw.min(1.0)
        })
        .collect();
    let degrees = vec![spec.d_c; spec.n_groups()];
    Ok(AccessPlan { objective: objective(spec, &p, &degrees), p, degrees, feasible, de_verified: None })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub mapping: BerMapping,
    pub de: DeOptions,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { mapping: BerMapping::Direct, de: DeOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub group: usize,
    pub deadline_uses: f64,
    pub predicted_ber: f64,
    /// Smallest number of channel uses with predicted BER below delta, if
    /// reached within four times the deadline.
    pub decode_time: Option<usize>,
    pub de_converged: bool,
    pub pass: bool,
}

fn predicted_ber(
    spec: &QosSpec,
    plan: &AccessPlan,
    snr: &[f64],
    group: usize,
    uses: f64,
    opts: &VerifyOptions,
) -> Result<(f64, bool)> {
    // Every device is credited with the same number of channel uses: the
    // ones elapsed by group `group`'s deadline.
    let classes = (0..spec.n_groups())
        .map(|g| DeClass {
            snr: snr[g],
            degree: plan.degrees[g],
            access_prob: plan.p[g],
            uses,
            count: spec.group_sizes[g],
        })
        .collect();
    let cfg = DeConfig { classes, k: spec.k, sigma2_w: spec.sigma2_w };
    let traj = density_evolution(&cfg, &opts.de)?;
    let last = traj.last().expect("trajectory holds the initial state");
    Ok((opts.mapping.ber(last.m[group]), last.converged))
}

/// Checks every group's predicted BER at its deadline against delta.
/// `snr[g]` is group `g`'s received SNR per unit weight.
pub fn verify_plan(plan: &AccessPlan, spec: &QosSpec, snr: &[f64], opts: &VerifyOptions) -> Result<Vec<GroupCheck>> {
    spec.validate()?;
    if plan.p.len() != spec.n_groups() || snr.len() != spec.n_groups() || plan.degrees.len() != spec.n_groups() {
        return invalid("plan, SNR list and spec must cover the same groups");
    }
    let mut out = Vec::with_capacity(spec.n_groups());
    for g in 0..spec.n_groups() {
        let t = spec.deadlines[g];
        let (ber, converged) = predicted_ber(spec, plan, snr, g, t, opts)?;
        let decode_time = {
            let cap = (4.0 * t).ceil() as usize;
            let ok =
                |u: usize| -> Result<bool> { Ok(predicted_ber(spec, plan, snr, g, u as f64, opts)?.0 < spec.delta) };
            if ok(cap)? {
                let (mut lo, mut hi) = (0usize, cap);
                while hi - lo > 1 {
                    let mid = (lo + hi) / 2;
                    if ok(mid)? {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                Some(hi)
            } else {
                None
            }
        };
        out.push(GroupCheck {
            group: g,
            deadline_uses: t,
            predicted_ber: ber,
            decode_time,
            de_converged: converged,
            pass: converged && ber < spec.delta,
        });
    }
    Ok(out)
}

fn all_pass(plan: &AccessPlan, spec: &QosSpec, snr: &[f64], opts: &VerifyOptions) -> Result<bool> {
    // Cheaper than verify_plan: no decode-time search.
    for g in 0..spec.n_groups() {
        let (ber, converged) = predicted_ber(spec, plan, snr, g, spec.deadlines[g], opts)?;
        if !(converged && ber < spec.delta) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Coordinate descent from the closed-form plan (rescaled by each group's
/// SNR). Failing groups are raised until every group passes, then each
/// group is lowered by bisection as far as the whole plan keeps passing.
pub fn optimize_access(spec: &QosSpec, snr: &[f64], degrees: &[usize], opts: &VerifyOptions) -> Result<AccessPlan> {
    spec.validate()?;
    if snr.len() != spec.n_groups() || degrees.len() != spec.n_groups() {
        return invalid("SNR and degree lists must cover every group");
    }
    let x = q_inv(spec.delta).expect("validated");
    let mut p: Vec<f64> = (0..spec.n_groups())
        .map(|g| {
            let raw = spec.k as f64 * x * x / (2.0 * degrees[g] as f64 * snr[g] * spec.sigma2_w * spec.deadlines[g]);
            raw.min(1.0)
        })
        .collect();
    let make = |p: &[f64]| AccessPlan {
        p: p.to_vec(),
        degrees: degrees.to_vec(),
        objective: objective(spec, p, degrees),
        feasible: true,
        de_verified: None,
    };

    // Raise until feasible or saturated.
    for _ in 0..200 {
        let plan = make(&p);
        let mut raised = false;
        for g in 0..spec.n_groups() {
            let (ber, converged) = predicted_ber(spec, &plan, snr, g, spec.deadlines[g], opts)?;
            if !(converged && ber < spec.delta) && p[g] < 1.0 {
                p[g] = (p[g] * 1.1).min(1.0);
                raised = true;
            }
        }
        if !raised {
            break;
        }
    }
    if !all_pass(&make(&p), spec, snr, opts)? {
        let mut plan = make(&p);
        plan.feasible = false;
        plan.de_verified = Some(false);
        return Ok(plan);
    }

    // Lower each coordinate in turn while the plan still passes.
    for _ in 0..3 {
        for g in 0..spec.n_groups() {
            let (mut lo, mut hi) = (0.0, p[g]);
            for _ in 0..30 {
                let mid = 0.5 * (lo + hi);
                let mut trial = p.clone();
                trial[g] = mid;
                if mid > 0.0 && all_pass(&make(&trial), spec, snr, opts)? {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo < 1e-4 * hi {
                    break;
                }
            }
            p[g] = hi;
        }
    }
    let mut plan = make(&p);
    plan.de_verified = Some(true);
    Ok(plan)
}

/// Runs [`optimize_access`] with every group on each candidate degree and
/// keeps the verified plan with the smallest objective.
pub fn optimize_joint(
    spec: &QosSpec,
    snr: &[f64],
    candidate_degrees: &[usize],
    opts: &VerifyOptions,
) -> Result<Option<AccessPlan>> {
    let mut best: Option<AccessPlan> = None;
    for &d in candidate_degrees {
        if d == 0 || d > spec.k {
            continue;
        }
        let plan = optimize_access(spec, snr, &vec![d; spec.n_groups()], opts)?;
        if plan.de_verified == Some(true) && best.as_ref().is_none_or(|b| plan.objective < b.objective) {
            best = Some(plan);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanRow {
    pub group: usize,
    pub deadline_uses: f64,
    pub p_opt: f64,
    pub predicted_ber: f64,
    pub pass: bool,
}

impl CsvRecord for PlanRow {
    const HEADER: &'static [&'static str] = &["group", "deadline_uses", "p_opt", "predicted_ber_at_deadline", "pass"];
    fn fields(&self) -> Vec<String> {
        vec![
            self.group.to_string(),
            self.deadline_uses.to_string(),
            self.p_opt.to_string(),
            self.predicted_ber.to_string(),
            u8::from(self.pass).to_string(),
        ]
    }
}

pub fn plan_rows(plan: &AccessPlan, checks: &[GroupCheck]) -> Vec<PlanRow> {
    checks
        .iter()
        .map(|c| PlanRow {
            group: c.group,
            deadline_uses: c.deadline_uses,
            p_opt: plan.p[c.group],
            predicted_ber: c.predicted_ber,
            pass: c.pass,
        })
        .collect()
}
