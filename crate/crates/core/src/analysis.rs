//! Certificates evaluated on completed traces.
//!
//! Every check is a pure function of the scenario and its trace. Checks are
//! registered by name in a [`CertificateRegistry`]; a run selects a subset
//! (or all) and collects the verdicts into a [`CertificateReport`].
//!
//! Monotonicity checks compare consecutive samples inside a segment of
//! constant operating conditions. A sample pair may increase the Lyapunov
//! function by at most `c·dt⁴·steps·W_prev` (RK4 local error) plus a
//! floating-point rounding allowance.
//!
//! Convergence claims are tested as band entry by the end of a segment, with
//! the band at 0.5% of the segment's error scale, and only when the segment is
//! at least eight time constants long.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrate::Segment;
use crate::network::Layer;
use crate::scenario::Scenario;
use crate::trace::{Sample, SimulationTrace};

/// Default coefficient of the RK4 slack `c·dt⁴` per step.
pub const DEFAULT_SLACK_C: f64 = 1e-6;
/// Relative tolerance of the producer temperature oracle.
pub const PRODUCER_REL_TOL: f64 = 1e-6;
/// Absolute tolerance for temperature bounds (°C).
pub const TEMPERATURE_TOL: f64 = 1e-9;
/// Absolute tolerance for the return-layer hull (°C).
pub const RETURN_HULL_TOL: f64 = 1e-6;
/// Largest admissible node mass-balance residual (m³/s).
pub const MASS_BALANCE_TOL: f64 = 1e-12;
/// Largest admissible drift of `V_sh + V_sc` from the tank capacity (m³).
pub const CAPACITY_TOL: f64 = 1e-9;
/// Convergence band as a fraction of the error scale.
pub const BAND_FRACTION: f64 = 0.005;
/// Number of time constants a segment must span before convergence is claimed.
pub const HORIZON_TIME_CONSTANTS: f64 = 8.0;
/// Margin by which the consumer Lyapunov weight exceeds its lower bound.
pub const OMEGA_MARGIN: f64 = 1.1;

const EPS: f64 = f64::EPSILON;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Checks to run; all registered checks when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checks: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack_c: Option<f64>,
    /// Tank temperature envelope; defaults to `min T_p* - max T_c* - epsilon`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_degc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::NotApplicable => "N/A",
        }
    }
}

/// Outcome of one check with its numeric witness.
///
/// `worst_violation` is the worst observed value of the checked quantity and
/// `tolerance` the limit it is compared against; for not-applicable checks the
/// witness is the size of the violated precondition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub status: Status,
    pub worst_violation: f64,
    pub tolerance: f64,
    pub worst_time: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Witness {
    value: f64,
    limit: f64,
    t: f64,
}

impl Witness {
    fn excess(&self) -> f64 {
        self.value - self.limit
    }
}

/// Tracks the witness with the largest excess over its limit.
#[derive(Debug, Clone, Default)]
struct Worst {
    best: Option<Witness>,
}

impl Worst {
    fn see(&mut self, value: f64, limit: f64, t: f64) {
        let w = Witness { value, limit, t };
        let replace = match self.best {
            None => true,
            Some(b) => w.excess() > b.excess() || w.excess().is_nan(),
        };
        if replace {
            self.best = Some(w);
        }
    }

    fn merge(&mut self, other: &Worst) {
        if let Some(w) = other.best {
            self.see(w.value, w.limit, w.t);
        }
    }

    fn failed(&self) -> bool {
        self.best.is_some_and(|w| !(w.excess() <= 0.0))
    }

    fn verdict(&self, name: &str, detail: String) -> Verdict {
        let w = self.best.unwrap_or(Witness {
            value: 0.0,
            limit: 0.0,
            t: 0.0,
        });
        Verdict {
            name: name.to_string(),
            status: if self.failed() { Status::Fail } else { Status::Pass },
            worst_violation: w.value,
            tolerance: w.limit,
            worst_time: w.t,
            detail,
        }
    }
}

fn not_applicable(name: &str, witness: f64, t: f64, detail: String) -> Verdict {
    Verdict {
        name: name.to_string(),
        status: Status::NotApplicable,
        worst_violation: witness,
        tolerance: 0.0,
        worst_time: t,
        detail,
    }
}

/// Allowed increase of a Lyapunov function between two samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slack {
    pub c: f64,
}

impl Slack {
    pub fn allowance(&self, dt: f64, steps: u64, w_prev: f64, rounding: f64) -> f64 {
        self.c * dt.powi(4) * steps as f64 * w_prev.abs() + rounding
    }
}

/// Everything a check may read.
pub struct CheckContext<'a> {
    pub scenario: &'a Scenario,
    pub trace: &'a SimulationTrace,
    pub segments: Vec<Segment>,
    pub slack: Slack,
}

impl<'a> CheckContext<'a> {
    pub fn new(scenario: &'a Scenario, trace: &'a SimulationTrace) -> Self {
        let t_end = trace.last().map_or(0.0, |s| s.t);
        CheckContext {
            scenario,
            trace,
            segments: scenario.events.segments(&scenario.operating, t_end),
            slack: Slack {
                c: scenario.analysis.slack_c.unwrap_or(DEFAULT_SLACK_C),
            },
        }
    }

    fn samples(&self) -> &[Sample] {
        &self.trace.samples
    }

    fn has_temperature_events(&self) -> bool {
        self.scenario
            .events
            .events()
            .iter()
            .any(|e| e.changes.changes_setpoint_temperatures())
    }

    /// Envelope from the initial setpoints.
    pub fn default_phi(&self) -> f64 {
        let g = &self.scenario.operating.gains;
        g.t_p_set_min() - g.t_c_set_max() - g.epsilon
    }

    /// Largest violation of `|T_p(0) - T_p*| <= phi` and `|T_sh(0) - T_p*| <= phi`.
    fn envelope_precondition(&self, phi: f64) -> f64 {
        let s = &self.scenario.initial;
        let g = &self.scenario.operating.gains;
        (0..s.t_p.len())
            .map(|i| {
                let a = (s.t_p[i] - g.t_p_set[i]).abs();
                let b = (s.t_sh[i] - g.t_p_set[i]).abs();
                a.max(b) - phi
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub trait Certificate: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn check(&self, ctx: &CheckContext) -> Verdict;
}

/// Checks by name, in registration-independent (alphabetical) order.
pub struct CertificateRegistry {
    checks: BTreeMap<&'static str, Arc<dyn Certificate>>,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("unknown check `{name}` (known: {known})")]
pub struct UnknownCheck {
    pub name: String,
    pub known: String,
}

impl CertificateRegistry {
    pub fn empty() -> Self {
        CertificateRegistry {
            checks: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(ProducerExponential));
        r.register(Arc::new(VolumeLyapunov));
        r.register(Arc::new(TankEnvelope));
        r.register(Arc::new(SupplyBound));
        r.register(Arc::new(ConsumerLyapunov));
        r.register(Arc::new(ReturnBounded));
        r.register(Arc::new(ColdVolume));
        r.register(Arc::new(EstimatorPositive));
        r.register(Arc::new(MassBalance));
        r
    }

    pub fn register(&mut self, check: Arc<dyn Certificate>) {
        self.checks.insert(check.name(), check);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn Certificate>> {
        self.checks.get(name).cloned()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.checks.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<dyn Certificate>> {
        self.checks.values()
    }

    /// Resolves a list of names; `None` selects everything.
    pub fn select(&self, names: Option<&[String]>) -> Result<Vec<Arc<dyn Certificate>>, UnknownCheck> {
        match names {
            None => Ok(self.checks.values().cloned().collect()),
            Some(names) => names
                .iter()
                .map(|n| {
                    self.get(n).ok_or_else(|| UnknownCheck {
                        name: n.clone(),
                        known: self.names().join(", "),
                    })
                })
                .collect(),
        }
    }
}

impl Default for CertificateRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub scenario: String,
    pub samples: usize,
    pub t_end: f64,
    pub verdicts: Vec<Verdict>,
}

impl CertificateReport {
    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.status != Status::Fail)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.iter().filter(|v| v.status == Status::Fail)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "certificate report for `{}` ({} samples, t_end = {} s)",
            self.scenario, self.samples, self.t_end
        );
        let width = self.verdicts.iter().map(|v| v.name.len()).max().unwrap_or(0);
        for v in &self.verdicts {
            let _ = writeln!(
                out,
                "  {:<4}  {:<width$}  worst {:.6e} (limit {:.3e}) at t = {} s  {}",
                v.status.label(),
                v.name,
                v.worst_violation,
                v.tolerance,
                v.worst_time,
                v.detail,
            );
        }
        let failed = self.failures().count();
        let na = self
            .verdicts
            .iter()
            .filter(|v| v.status == Status::NotApplicable)
            .count();
        let _ = writeln!(
            out,
            "overall: {} ({} checks, {} failed, {} not applicable)",
            if failed == 0 { "PASS" } else { "FAIL" },
            self.verdicts.len(),
            failed,
            na
        );
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn write_report(report: &CertificateReport, text_path: &Path, json_path: &Path) -> std::io::Result<()> {
    fs::write(text_path, report.to_text())?;
    fs::write(json_path, report.to_json())
}

/// Runs the selected checks; `selection` overrides the scenario's own list.
pub fn run_checks(
    registry: &CertificateRegistry,
    scenario: &Scenario,
    trace: &SimulationTrace,
    selection: Option<&[String]>,
) -> Result<CertificateReport, UnknownCheck> {
    let names = selection.or(scenario.analysis.checks.as_deref());
    let checks = registry.select(names)?;
    let ctx = CheckContext::new(scenario, trace);
    Ok(CertificateReport {
        scenario: scenario.name.clone(),
        samples: trace.samples.len(),
        t_end: trace.last().map_or(0.0, |s| s.t),
        verdicts: checks.iter().map(|c| c.check(&ctx)).collect(),
    })
}

fn steps_between(a: &Sample, b: &Sample) -> u64 {
    b.step.saturating_sub(a.step).max(1)
}

// ---------------------------------------------------------------------------
// producer-exponential

/// Largest relative deviation of `T_p` from the first-order closed form,
/// restarted at every segment.
pub fn check_producer_exponential(ctx: &CheckContext) -> Verdict {
    let name = "producer-exponential";
    let sc = ctx.scenario;
    let rho = sc.params.rho_c;
    if sc.integrator.saturation {
        for s in ctx.samples() {
            for i in 0..s.plant.t_p.len() {
                let g = &sc.operating.gains;
                let law = -rho * s.inputs.flows.q_p[i] * (s.plant.t_sc[i] - s.plant.t_p[i])
                    - g.k_p[i] * (s.plant.t_p[i] - current_t_p_set(ctx, s.t, i));
                let gap = (s.inputs.p_p[i] - law).abs();
                if gap > 1e-9 * law.abs().max(1.0) {
                    return not_applicable(
                        name,
                        gap,
                        s.t,
                        format!("producer {} power saturated; closed form does not apply", i + 1),
                    );
                }
            }
        }
    }
    let mut worst = Worst::default();
    for seg in &ctx.segments {
        let samples = seg.samples(ctx.trace);
        let Some(first) = samples.first() else { continue };
        let g = &seg.op.gains;
        for i in 0..first.plant.t_p.len() {
            let rate = g.k_p[i] / (rho * sc.params.v_p[i]);
            let t_set = g.t_p_set[i];
            let e0 = first.plant.t_p[i] - t_set;
            for s in samples {
                let exact = t_set + e0 * (-rate * (s.t - first.t)).exp();
                let rel = (s.plant.t_p[i] - exact).abs() / exact.abs().max(f64::MIN_POSITIVE);
                worst.see(rel, PRODUCER_REL_TOL, s.t);
            }
        }
    }
    worst.verdict(name, "relative deviation from the closed-form producer temperature".into())
}

fn current_t_p_set(ctx: &CheckContext, t: f64, i: usize) -> f64 {
    ctx.segments
        .iter()
        .rev()
        .find(|s| s.t_start <= t)
        .map_or(ctx.scenario.operating.gains.t_p_set[i], |s| s.op.gains.t_p_set[i])
}

struct ProducerExponential;

impl Certificate for ProducerExponential {
    fn name(&self) -> &'static str {
        "producer-exponential"
    }
    fn description(&self) -> &'static str {
        "producer temperatures follow the closed-form exponential approach to the setpoint"
    }
    fn check(&self, ctx: &CheckContext) -> Verdict {
        check_producer_exponential(ctx)
    }
}

// ---------------------------------------------------------------------------
// volume-lyapunov

/// Monotone decrease of `W = ½(V_sh - V_sh*)²` and, where the outflow stays
/// positive over a long enough segment, convergence into the band.
pub fn check_volume_lyapunov(ctx: &CheckContext) -> Verdict {
    let name = "volume-lyapunov";
    let mut worst = Worst::default();
    let mut claimed = 0;
    let mut lyapunov_only = 0;
    for seg in &ctx.segments {
        let samples = seg.samples(ctx.trace);
        if samples.len() < 2 {
            continue;
        }
        for i in 0..samples[0].plant.v_sh.len() {
            let v_set = seg.op.gains.v_sh_set[i];
            let (m, claim) = volume_segment(ctx, samples, i, v_set, seg.op.gains.kappa_p[i]);
            worst.merge(&m);
            match claim {
                Some(c) => {
                    worst.merge(&c);
                    claimed += 1;
                }
                None => lyapunov_only += 1,
            }
        }
    }
    worst.verdict(
        name,
        format!(
            "monotone W_Vsh; convergence claimed on {claimed} tank segments, \
             Lyapunov stability only on {lyapunov_only}"
        ),
    )
}

/// Monotonicity witness and optional convergence witness of one tank segment.
fn volume_segment(
    ctx: &CheckContext,
    samples: &[Sample],
    tank: usize,
    v_set: f64,
    kappa: f64,
) -> (Worst, Option<Worst>) {
    let dt = ctx.trace.dt;
    let w = |s: &Sample| 0.5 * (s.plant.v_sh[tank] - v_set).powi(2);
    let mut mono = Worst::default();
    for pair in samples.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let scale = v_set.abs().max(a.plant.v_sh[tank].abs()).max(1.0);
        let d = (a.plant.v_sh[tank] - v_set).abs();
        let rounding = 8.0 * EPS * scale * (d + 8.0 * EPS * scale);
        let allow = ctx.slack.allowance(dt, steps_between(a, b), w(a), rounding);
        mono.see(w(b) - w(a), allow, b.t);
    }

    let first = &samples[0];
    let last = &samples[samples.len() - 1];
    let q_min = samples
        .iter()
        .map(|s| s.inputs.flows.q_st[tank])
        .fold(f64::INFINITY, f64::min);
    if !(q_min > 0.0) {
        return (mono, None);
    }
    let d0 = first.plant.v_sh[tank] - v_set;
    let needed = if d0 <= 0.0 {
        HORIZON_TIME_CONSTANTS / kappa
    } else {
        (d0 + HORIZON_TIME_CONSTANTS) / q_min
    };
    if last.t - first.t < needed {
        return (mono, None);
    }
    let band = (BAND_FRACTION * d0.abs()).max(CAPACITY_TOL);
    let mut conv = Worst::default();
    conv.see((last.plant.v_sh[tank] - v_set).abs(), band, last.t);
    (mono, Some(conv))
}

struct VolumeLyapunov;

impl Certificate for VolumeLyapunov {
    fn name(&self) -> &'static str {
        "volume-lyapunov"
    }
    fn description(&self) -> &'static str {
        "hot-layer volume error energy never increases and converges when outflow stays positive"
    }
    fn check(&self, ctx: &CheckContext) -> Verdict {
        check_volume_lyapunov(ctx)
    }
}

// ---------------------------------------------------------------------------
// tank-envelope

pub fn check_tank_temperature_envelope(ctx: &CheckContext, phi: f64) -> Verdict {
    let name = "tank-envelope";
    if ctx.has_temperature_events() {
        return not_applicable(name, 0.0, 0.0, "temperature setpoints change during the run".into());
    }
    let pre = ctx.envelope_precondition(phi);
    if pre > 0.0 {
        return not_applicable(
            name,
            pre,
            0.0,
            format!("initial producer or hot-layer temperature outside envelope phi = {phi}"),
        );
    }
    let sc = ctx.scenario;
    let g = &sc.operating.gains;
    let samples = ctx.samples();
    let mut worst = Worst::default();
    for s in samples {
        for i in 0..s.plant.t_sh.len() {
            worst.see((s.plant.t_sh[i] - g.t_p_set[i]).abs(), phi + TEMPERATURE_TOL, s.t);
        }
    }

    // Convergence needs positive producer flow throughout and a long horizon.
    let mut detail = format!("|T_sh - T_p*| <= phi = {phi}");
    if let (Some(first), Some(last)) = (samples.first(), samples.last()) {
        let n_p = first.plant.t_sh.len();
        let q_min = samples
            .iter()
            .flat_map(|s| s.inputs.flows.q_p.iter().copied())
            .fold(f64::INFINITY, f64::min);
        let v_max = samples
            .iter()
            .flat_map(|s| s.plant.v_sh.iter().copied())
            .fold(0.0, f64::max);
        let tau_p = (0..n_p)
            .map(|i| sc.params.rho_c * sc.params.v_p[i] / g.k_p[i])
            .fold(0.0, f64::max);
        let tau = tau_p.max(v_max / q_min);
        if q_min > 0.0 && last.t - first.t >= HORIZON_TIME_CONSTANTS * tau {
            for i in 0..n_p {
                let e0 = (first.plant.t_sh[i] - g.t_p_set[i])
                    .abs()
                    .max((first.plant.t_p[i] - g.t_p_set[i]).abs());
                let band = (BAND_FRACTION * e0).max(1e-6);
                worst.see((last.plant.t_sh[i] - g.t_p_set[i]).abs(), band, last.t);
            }
            detail.push_str("; convergence claimed");
        } else {
            detail.push_str("; envelope only (producer flow not bounded away from zero or horizon short)");
        }
    }
    worst.verdict(name, detail)
}

struct TankEnvelope;

impl Certificate for TankEnvelope {
    fn name(&self) -> &'static str {
        "tank-envelope"
    }
    fn description(&self) -> &'static str {
        "hot-layer temperatures stay within phi of the producer setpoints"
    }
    fn check(&self, ctx: &CheckContext) -> Verdict {
        let phi = ctx.scenario.analysis.phi_degc.unwrap_or_else(|| ctx.default_phi());
        check_tank_temperature_envelope(ctx, phi)
    }
}

// ---------------------------------------------------------------------------
// supply-bound

pub fn check_supply_lower_bound(ctx: &CheckContext, epsilon: f64) -> Verdict {
    let name = "supply-bound";
    if ctx.has_temperature_events() {
        return not_applicable(name, 0.0, 0.0, "temperature setpoints change during the run".into());
    }
    let g = &ctx.scenario.operating.gains;
    let bound = g.t_c_set_max() + epsilon;
    let phi = g.t_p_set_min() - bound;
    let pre = ctx.envelope_precondition(phi);
    if pre > 0.0 {
        return not_applicable(
            name,
            pre,
            0.0,
            "initial producer or hot-layer temperatures violate the envelope precondition".into(),
        );
    }
    let init = &ctx.scenario.initial;
    let cold = init
        .t_s_pipe
        .iter()
        .chain(&init.t_s_node)
        .map(|t| bound - t)
        .fold(f64::NEG_INFINITY, f64::max);
    if cold > 0.0 {
        return not_applicable(
            name,
            cold,
            0.0,
            format!("initial supply temperature below T_c*max + epsilon = {bound}"),
        );
    }
    let mut worst = Worst::default();
    for s in ctx.samples() {
        for t in s.plant.t_s_pipe.iter().chain(&s.plant.t_s_node) {
            worst.see(bound - t, TEMPERATURE_TOL, s.t);
        }
    }
    worst.verdict(
        name,
        format!("T_s >= {bound}; witness is the largest shortfall (negative means margin)"),
    )
}

struct SupplyBound;

impl Certificate for SupplyBound {
    fn name(&self) -> &'static str {
        "supply-bound"
    }
    fn description(&self) -> &'static str {
        "every supply temperature stays above the warmest consumer setpoint plus epsilon"
    }
    fn check(&self, ctx: &CheckContext) -> Verdict {
        check_supply_lower_bound(ctx, ctx.scenario.epsilon())
    }
}

// ---------------------------------------------------------------------------
// consumer-lyapunov

/// Weight `omega` of the consumer Lyapunov function for heat capacity `c`,
/// peak estimate `z_max` and supply margin `margin`.
pub fn consumer_omega(c: f64, z_max: f64, margin: f64) -> f64 {
    OMEGA_MARGIN * (1.0 / c + z_max / (4.0 * c * c * margin))
}

/// `W = ½(C e² + 2 e d + ω d²)` with `e = T_c - T_c*`, `d = z_c - P_c`.
pub fn consumer_lyapunov(c: f64, omega: f64, e: f64, d: f64) -> f64 {
    0.5 * (c * e * e + 2.0 * e * d + omega * d * d)
}

pub fn check_consumer_lyapunov(ctx: &CheckContext) -> Verdict {
    let name = "consumer-lyapunov";
    let sc = ctx.scenario;
    let topo = &sc.topology;
    let samples = ctx.samples();
    let dt = ctx.trace.dt;
    let n_c = topo.n_consumers();
    let mut worst = Worst::default();
    let mut min_margin = f64::INFINITY;
    let mut claimed = 0;
    let mut skipped = 0;

    for i in 0..n_c {
        let c = sc.params.rho_c * sc.params.v_c[i];
        let z_max = samples.iter().map(|s| s.z_c[i].abs()).fold(0.0, f64::max);
        let margin_i = ctx
            .segments
            .iter()
            .flat_map(|seg| {
                let t_set = seg.op.gains.t_c_set[i];
                seg.samples(ctx.trace)
                    .iter()
                    .map(move |s| s.plant.consumer_inlet_temperature(topo, i) - t_set)
            })
            .fold(f64::INFINITY, f64::min);
        min_margin = min_margin.min(margin_i);
        let omega = consumer_omega(c, z_max, sc.epsilon().min(margin_i));

        for seg in &ctx.segments {
            let seg_samples = seg.samples(ctx.trace);
            if seg_samples.is_empty() {
                continue;
            }
            let t_set = seg.op.gains.t_c_set[i];
            let p = seg.op.p_c[i];
            let parts = |s: &Sample| (s.plant.t_c[i] - t_set, s.z_c[i] - p);
            for s in seg_samples {
                let (e, d) = parts(s);
                let w = consumer_lyapunov(c, omega, e, d);
                let scale = c * e * e + omega * d * d;
                worst.see(-w, 16.0 * EPS * scale + f64::MIN_POSITIVE, s.t);
            }
            for pair in seg_samples.windows(2) {
                let (a, b) = (&pair[0], &pair[1]);
                let (e, d) = parts(a);
                let w_a = consumer_lyapunov(c, omega, e, d);
                let (eb, db) = parts(b);
                let w_b = consumer_lyapunov(c, omega, eb, db);
                let s_t = a.plant.t_c[i].abs().max(t_set.abs()).max(1.0);
                let de = 4.0 * EPS * s_t;
                let dd = 4.0 * EPS * (c * s_t + a.z_c[i].abs().max(p.abs()));
                let rounding = 4.0
                    * ((c * e + d).abs() * de
                        + (e + omega * d).abs() * dd
                        + c * de * de
                        + omega * dd * dd)
                    + 8.0 * EPS * w_a.abs();
                let allow = ctx.slack.allowance(dt, steps_between(a, b), w_a, rounding);
                worst.see(w_b - w_a, allow, b.t);
            }

            // Band entry around T_c* by the end of the segment.
            let first = &seg_samples[0];
            let last = &seg_samples[seg_samples.len() - 1];
            let z_min = seg_samples.iter().map(|s| s.z_c[i]).fold(f64::INFINITY, f64::min);
            let m_max = seg_samples
                .iter()
                .map(|s| s.plant.consumer_inlet_temperature(topo, i) - t_set)
                .fold(0.0, f64::max);
            let tau = (c * m_max / z_min).max(1.0);
            if z_min > 0.0 && last.t - first.t >= HORIZON_TIME_CONSTANTS * tau {
                let peak = seg_samples
                    .iter()
                    .map(|s| (s.plant.t_c[i] - t_set).abs())
                    .fold(0.0, f64::max);
                let band = (BAND_FRACTION * peak).max(1e-6);
                worst.see((last.plant.t_c[i] - t_set).abs(), band, last.t);
                claimed += 1;
            } else {
                skipped += 1;
            }
        }
    }
    let mut v = worst.verdict(
        name,
        format!(
            "W_Tc positive and non-increasing; convergence claimed on {claimed} consumer \
             segments ({skipped} too short); minimum supply margin {min_margin:.6}"
        ),
    );
    if n_c == 0 {
        v.detail = "no consumers".into();
    }
    v
}

struct ConsumerLyapunov;

impl Certificate for ConsumerLyapunov {
    fn name(&self) -> &'static str {
        "consumer-lyapunov"
    }
    fn description(&self) -> &'static str {
        "consumer temperature and load-estimate errors decay along a quadratic Lyapunov function"
    }
    fn check(&self, ctx: &CheckContext) -> Verdict {
        check_consumer_lyapunov(ctx)
    }
}

// ---------------------------------------------------------------------------
// return-bounded and cold-volume

/// Return-layer temperatures stay in the hull of the initial return
/// temperatures and the consumer outlet temperatures.
pub fn check_return_bounded(ctx: &CheckContext) -> Verdict {
    let name = "return-bounded";
    let samples = ctx.samples();
    let init = &ctx.scenario.initial;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut widen = |t: f64| {
        lo = lo.min(t);
        hi = hi.max(t);
    };
    init.t_r_pipe.iter().chain(&init.t_r_node).for_each(|&t| widen(t));
    for s in samples {
        s.plant.t_c.iter().for_each(|&t| widen(t));
    }
    let mut worst = Worst::default();
    for s in samples {
        for &t in s.plant.layer_pipes(Layer::Return).iter().chain(s.plant.layer_nodes(Layer::Return)) {
            worst.see((lo - t).max(t - hi), RETURN_HULL_TOL, s.t);
        }
    }
    worst.verdict(name, format!("T_r within [{lo:.6}, {hi:.6}]; witness is the largest excursion"))
}

struct ReturnBounded;

impl Certificate for ReturnBounded {
    fn name(&self) -> &'static str {
        "return-bounded"
    }
    fn description(&self) -> &'static str {
        "return-layer temperatures stay within the hull of initial return and consumer temperatures"
    }
    fn check(&self, ctx: &CheckContext) -> Verdict {
        check_return_bounded(ctx)
    }
}

/// `V_sc = capacity - V_sh` at every sample, and the cold layer reaches
/// `capacity - V_sh*` wherever the hot layer is claimed to converge.
pub fn check_cold_layer(ctx: &CheckContext) -> Verdict {
    let name = "cold-volume";
    let cap = &ctx.scenario.params.tank_capacity;
    let mut worst = Worst::default();
    for s in ctx.samples() {
        for i in 0..s.plant.v_sc.len() {
            worst.see((s.plant.v_sh[i] + s.plant.v_sc[i] - cap[i]).abs(), CAPACITY_TOL, s.t);
        }
    }
    let mut claimed = 0;
    for seg in &ctx.segments {
        let samples = seg.samples(ctx.trace);
        if samples.len() < 2 {
            continue;
        }
        for i in 0..cap.len() {
            let g = &seg.op.gains;
            let (_, conv) = volume_segment(ctx, samples, i, g.v_sh_set[i], g.kappa_p[i]);
            if conv.is_some() {
                let first = &samples[0];
                let last = &samples[samples.len() - 1];
                let target = cap[i] - g.v_sh_set[i];
                let band = (BAND_FRACTION * (first.plant.v_sc[i] - target).abs()).max(CAPACITY_TOL);
                worst.see((last.plant.v_sc[i] - target).abs(), band + CAPACITY_TOL, last.t);
                claimed += 1;
            }
        }
    }
    worst.verdict(
        name,
        format!("|V_sh + V_sc - capacity| <= {CAPACITY_TOL}; convergence claimed on {claimed} tank segments"),
    )
}

struct ColdVolume;

impl Certificate for ColdVolume {
    fn name(&self) -> &'static str {
        "cold-volume"
    }
    fn description(&self) -> &'static str {
        "cold-layer volumes mirror the hot layers and converge with them"
    }
    fn check(&self, ctx: &CheckContext) -> Verdict {
        check_cold_layer(ctx)
    }
}

// ---------------------------------------------------------------------------
// estimator-positive and mass-balance

pub fn check_estimator_positive(ctx: &CheckContext) -> Verdict {
    let mut worst = Worst::default();
    for s in ctx.samples() {
        for &z in &s.z_c {
            worst.see(-z, -f64::MIN_POSITIVE, s.t);
        }
    }
    worst.verdict("estimator-positive", "z_c > 0; witness is -min z_c".into())
}

struct EstimatorPositive;

impl Certificate for EstimatorPositive {
    fn name(&self) -> &'static str {
        "estimator-positive"
    }
    fn description(&self) -> &'static str {
        "consumer load estimates stay strictly positive"
    }
    fn check(&self, ctx: &CheckContext) -> Verdict {
        check_estimator_positive(ctx)
    }
}

pub fn check_mass_balance(ctx: &CheckContext) -> Verdict {
    let mut worst = Worst::default();
    for s in ctx.samples() {
        worst.see(s.mass_residual, MASS_BALANCE_TOL, s.t);
    }
    worst.verdict("mass-balance", "largest node mass-balance residual, both layers".into())
}

struct MassBalance;

impl Certificate for MassBalance {
    fn name(&self) -> &'static str {
        "mass-balance"
    }
    fn description(&self) -> &'static str {
        "every supply and return node balances its flows"
    }
    fn check(&self, ctx: &CheckContext) -> Verdict {
        check_mass_balance(ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn omega_makes_form_definite() {
        for &(c, z, m) in &[(1.0, 2.0, 1.0), (3.0, 0.1, 30.0), (0.5, 10.0, 0.2)] {
            let w = consumer_omega(c, z, m);
            assert!(c * w > 1.0);
            // Derivative form -(a e² + (a/c) e d + (w - 1/c) d²) is definite for a <= z/m.
            let a = z / m;
            assert!(4.0 * a * (w - 1.0 / c) > (a / c).powi(2));
        }
    }

    #[test]
    fn lyapunov_zero_at_equilibrium() {
        assert_eq!(consumer_lyapunov(2.0, 1.0, 0.0, 0.0), 0.0);
        assert!((consumer_lyapunov(2.0, 1.0, 1.0, -1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn worst_keeps_largest_excess() {
        let mut w = Worst::default();
        w.see(1.0, 2.0, 0.0);
        w.see(5.0, 10.0, 1.0);
        w.see(0.5, 0.0, 2.0);
        let v = w.verdict("x", String::new());
        assert_eq!(v.worst_time, 2.0);
        assert_eq!(v.status, Status::Fail);
        let mut ok = Worst::default();
        ok.see(-3.0, 0.0, 4.0);
        assert_eq!(ok.verdict("x", String::new()).status, Status::Pass);
    }

    #[test]
    fn nan_witness_fails() {
        let mut w = Worst::default();
        w.see(f64::NAN, 1.0, 0.0);
        assert_eq!(w.verdict("x", String::new()).status, Status::Fail);
    }

    #[test]
    fn registry_selects_by_name() {
        let r = CertificateRegistry::with_builtins();
        assert_eq!(r.names().len(), 9);
        let sel = r.select(Some(&["mass-balance".to_string()])).unwrap();
        assert_eq!(sel.len(), 1);
        assert!(r.select(Some(&["nope".to_string()])).is_err());
        for c in r.iter() {
            assert!(!c.description().is_empty());
        }
    }

    #[test]
    fn slack_scales_with_dt4() {
        let s = Slack { c: 2.0 };
        assert_eq!(s.allowance(0.5, 4, 3.0, 0.0), 2.0 * 0.0625 * 4.0 * 3.0);
        assert_eq!(s.allowance(1.0, 1, 0.0, 1e-20), 1e-20);
    }
}
