//! Acceptance gate: one line per criterion, non-zero exit if any fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use dhs_core::analysis::{run_checks, CertificateRegistry, CertificateReport, Status};
use dhs_core::integrate::simulate;
use dhs_core::network::{resolve_flows, IndependentFlows};
use dhs_core::plant::{energy_rate, full_rhs, stored_energy, PlantInputs, PlantState};
use dhs_core::scenario::random::random_scenario;
use dhs_core::scenario::Scenario;
use dhs_core::trace::SimulationTrace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{fig3, max_rel, scenario, single_loop, two_tanks};

/// Tolerances and limits of the acceptance criteria.
const C1_REL_TOL: f64 = 1e-6;
const C1_RUNTIME: Duration = Duration::from_secs(1);
const C2_REL_TOL: f64 = 1e-6;
const C2_DT: f64 = 0.01;
const C2_BAND: f64 = 0.05;
const C3_REL_TOL: f64 = 1e-6;
const C4_TP_BAND: f64 = 0.1;
const C4_VOLUME_BAND: f64 = 0.01;
const C4_TC_BAND: f64 = 0.5;
const C4_RUNTIME: Duration = Duration::from_secs(30);
const C5_COUNT: u64 = 100;
const C5_RUNTIME: Duration = Duration::from_secs(300);
const C7_DRAWS: usize = 1000;
const C7_REL_TOL: f64 = 1e-9;

const HOUR: f64 = 3600.0;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run(s: &Scenario) -> Result<(SimulationTrace, CertificateReport), String> {
    let trace = simulate(s).map_err(|e| e.to_string())?;
    let report =
        run_checks(&CertificateRegistry::with_builtins(), s, &trace, None).map_err(|e| e.to_string())?;
    Ok((trace, report))
}

fn all_pass(report: &CertificateReport) -> Result<(), String> {
    let failed: Vec<&str> = report.failures().map(|v| v.name.as_str()).collect();
    ensure(failed.is_empty(), || format!("certificates failed: {}", failed.join(", ")))
}

fn criterion_1() -> Outcome {
    let mut v = single_loop();
    v["initial"]["producers"][0]["t_p_degc"] = 80.0.into();
    v["integrator"]["t_end_s"] = 5000.0.into();
    let s = scenario(&v);
    let start = Instant::now();
    let trace = simulate(&s).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let dev = max_rel(
        trace
            .samples
            .iter()
            .map(|x| (x.plant.t_p[0], 85.0 - 5.0 * (-1e-3 * x.t).exp())),
    );
    ensure(trace.samples.len() == 5001, || format!("{} samples", trace.samples.len()))?;
    ensure(dev <= C1_REL_TOL, || format!("relative deviation {dev:.3e}"))?;
    ensure(elapsed < C1_RUNTIME, || format!("runtime {elapsed:?}"))?;
    Ok(format!("max relative deviation {dev:.3e} over 5000 s, runtime {elapsed:.2?}"))
}

fn criterion_2() -> Outcome {
    let p = 1.65;
    let z0 = 1.0;
    let c: f64 = 1.0;
    let tau = (c * (85.0 - 55.0) / p).max(1.0);
    let mut v = single_loop();
    v["loads"]["p_c_w"] = serde_json::json!([p]);
    v["initial"]["consumers"] = serde_json::json!([{"t_c_degc": 60.0, "z_c_w": z0}]);
    v["integrator"]["dt_s"] = C2_DT.into();
    v["integrator"]["t_end_s"] = (10.0 * tau).ceil().into();
    v["integrator"]["record_every"] = 10.into();
    let s = scenario(&v);
    let (trace, report) = run(&s)?;

    let mut z_dev: f64 = 0.0;
    let mut t_in_dev: f64 = 0.0;
    for x in trace.samples.iter().filter(|x| x.t <= 20.0) {
        let oracle = p + (z0 - p) * (-x.t).exp();
        z_dev = z_dev.max((x.z_c[0] - oracle).abs() / (z0 - p).abs());
        t_in_dev = t_in_dev.max((x.plant.consumer_inlet_temperature(&s.topology, 0) - 85.0).abs());
    }
    ensure(t_in_dev == 0.0, || format!("inlet temperature moved by {t_in_dev:e}"))?;
    ensure(z_dev <= C2_REL_TOL, || format!("estimator deviation {z_dev:.3e}"))?;
    let late = trace
        .samples
        .iter()
        .filter(|x| x.t >= 8.0 * tau)
        .map(|x| (x.plant.t_c[0] - 55.0).abs())
        .fold(0.0, f64::max);
    ensure(late <= C2_BAND, || format!("|T_c - 55| = {late:.4} after 8 tau"))?;
    all_pass(&report)?;
    Ok(format!(
        "estimator deviation {z_dev:.3e} (relative) on [0, 20] s, |T_c - 55| <= {late:.2e} after 8 tau = {:.1} s",
        8.0 * tau
    ))
}

fn criterion_3() -> Outcome {
    let mut v = two_tanks(0.05);
    v["integrator"]["t_end_s"] = 10_000.0.into();
    let s = scenario(&v);
    let (trace, report) = run(&s)?;
    let dev = max_rel(
        trace
            .samples
            .iter()
            .map(|x| (x.plant.v_sh[0], 850.0 - 750.0 * (-1e-3 * x.t).exp())),
    );
    ensure(dev <= C3_REL_TOL, || format!("relative deviation {dev:.3e}"))?;
    let vol = report.verdict("volume-lyapunov").expect("registered");
    ensure(vol.status == Status::Pass, || format!("volume-lyapunov: {}", vol.detail))?;
    ensure(vol.detail.contains("convergence claimed on 2"), || vol.detail.clone())?;
    all_pass(&report)?;
    Ok(format!(
        "max relative deviation {dev:.3e}; W_Vsh monotone within slack, {}",
        vol.detail
    ))
}

/// First time at or after `from` when `pred` holds at every later sample up to `until`.
fn settle_time(trace: &SimulationTrace, from: f64, until: f64, pred: impl Fn(&dhs_core::trace::Sample) -> bool) -> Option<f64> {
    let window: Vec<_> = trace.samples.iter().filter(|x| x.t >= from && x.t <= until).collect();
    let last_bad = window.iter().rposition(|x| !pred(x));
    match last_bad {
        None => window.first().map(|x| x.t),
        Some(k) => window.get(k + 1).map(|x| x.t),
    }
}

struct Fig3Timeline {
    transient_end: f64,
    step_peak: f64,
    charged: f64,
    charged_tank2: f64,
    recovered: f64,
    discharged: f64,
}

fn fig3_timeline(s: &Scenario, trace: &SimulationTrace) -> Result<Fig3Timeline, String> {
    let end = s.integrator.t_end;
    let tp_ok = |x: &dhs_core::trace::Sample| x.plant.t_p.iter().all(|t| (t - 85.0).abs() <= C4_TP_BAND);
    let transient_end = settle_time(trace, 0.0, end, tp_ok).ok_or("T_p never settles")?;

    let high = [850.0, 900.0, 950.0];
    let low = [100.0, 150.0, 200.0];
    let near = |x: &dhs_core::trace::Sample, target: &[f64], k: usize| {
        (x.plant.v_sh[k] - target[k]).abs() <= C4_VOLUME_BAND * target[k]
    };
    let first = |from: f64, pred: &dyn Fn(&dhs_core::trace::Sample) -> bool| {
        trace.samples.iter().find(|x| x.t >= from && pred(x)).map(|x| x.t)
    };
    let charged = first(6.0 * HOUR, &|x| (0..3).all(|k| near(x, &high, k))).ok_or("tanks never charge")?;
    let charged_tank2 = first(6.0 * HOUR, &|x| near(x, &high, 1)).ok_or("tank 2 never charges")?;
    let discharged =
        first(18.0 * HOUR, &|x| (0..3).all(|k| near(x, &low, k))).ok_or("tanks never discharge")?;
    let tc_ok = |x: &dhs_core::trace::Sample| x.plant.t_c.iter().all(|t| (t - 55.0).abs() <= C4_TC_BAND);
    let recovered = settle_time(trace, 12.0 * HOUR, 18.0 * HOUR, tc_ok).ok_or("T_c never recovers")?;
    let step_peak = trace
        .samples
        .iter()
        .filter(|x| x.t >= 12.0 * HOUR && x.t <= 18.0 * HOUR)
        .flat_map(|x| x.plant.t_c.iter().map(|t| (t - 55.0).abs()))
        .fold(0.0, f64::max);
    Ok(Fig3Timeline {
        transient_end,
        step_peak,
        charged,
        charged_tank2,
        recovered,
        discharged,
    })
}

fn check_timeline(tl: &Fig3Timeline) -> Result<(), String> {
    ensure(tl.transient_end < 6.0 * HOUR, || {
        format!("T_p settles only at {:.2} h", tl.transient_end / HOUR)
    })?;
    ensure(tl.charged < 12.0 * HOUR, || format!("charged at {:.2} h", tl.charged / HOUR))?;
    ensure(tl.recovered <= 14.0 * HOUR, || {
        format!("T_c back in band at {:.2} h", tl.recovered / HOUR)
    })?;
    ensure(tl.discharged < 24.0 * HOUR, || {
        format!("discharged at {:.2} h", tl.discharged / HOUR)
    })
}

fn describe(tl: &Fig3Timeline) -> String {
    format!(
        "T_p in band from {:.2} h, charged {:.2} h, demand step peak |T_c - 55| = {:.3} \
         back in band {:.1} min after the step, discharged {:.2} h",
        tl.transient_end / HOUR,
        tl.charged / HOUR,
        tl.step_peak,
        (tl.recovered - 12.0 * HOUR) / 60.0,
        tl.discharged / HOUR
    )
}

/// Fig. 3 scenario recorded at every step so short excursions are not missed.
fn fig3_every_step() -> Scenario {
    let mut s = fig3();
    s.integrator.record_every = 1;
    s
}

fn criterion_4() -> Outcome {
    let s = fig3_every_step();
    ensure(s.topology.n_producers() == 3 && s.topology.n_consumers() == 9, || "wrong device counts".into())?;
    let start = Instant::now();
    let (trace, report) = run(&s)?;
    let elapsed = start.elapsed();
    let tl = fig3_timeline(&s, &trace)?;
    check_timeline(&tl)?;
    all_pass(&report)?;
    ensure(elapsed < C4_RUNTIME, || format!("runtime {elapsed:?}"))?;
    Ok(format!("{}; all certificates pass; runtime {elapsed:.2?}", describe(&tl)))
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let required = [
        "mass-balance",
        "cold-volume",
        "supply-bound",
        "estimator-positive",
        "volume-lyapunov",
        "consumer-lyapunov",
    ];
    let mut not_applicable = 0;
    for seed in 0..C5_COUNT {
        let s = random_scenario(seed);
        let (_, report) = run(&s).map_err(|e| format!("seed {seed}: {e}"))?;
        for name in required {
            let v = report.verdict(name).expect("registered");
            ensure(v.status == Status::Pass, || {
                format!("seed {seed}: {name} {:?} ({})", v.status, v.detail)
            })?;
        }
        all_pass(&report).map_err(|e| format!("seed {seed}: {e}"))?;
        not_applicable += report
            .verdicts
            .iter()
            .filter(|v| v.status == Status::NotApplicable)
            .count();
    }
    let elapsed = start.elapsed();
    ensure(elapsed < C5_RUNTIME, || format!("runtime {elapsed:?}"))?;
    Ok(format!(
        "{C5_COUNT} random scenarios, zero violations ({not_applicable} not-applicable verdicts), runtime {elapsed:.2?}"
    ))
}

fn criterion_6() -> Outcome {
    let base = fig3_every_step();
    let mut s = base.clone();
    s.integrator.saturation = true;
    let (trace, report) = run(&s)?;
    all_pass(&report)?;
    let tl = fig3_timeline(&s, &trace)?;
    check_timeline(&tl)?;
    let (base_trace, _) = run(&base)?;
    let base_tl = fig3_timeline(&base, &base_trace)?;
    let clamped = trace.samples.iter().filter(|x| x.clamped > 0).count();
    ensure(clamped > 0, || "saturation never engaged".into())?;
    ensure(tl.charged_tank2 >= base_tl.charged_tank2, || "tank 2 charged faster when saturated".into())?;
    Ok(format!(
        "all certificates pass; tank 2 charged at {:.2} h (unsaturated {:.2} h); {clamped} samples clamped",
        tl.charged_tank2 / HOUR,
        base_tl.charged_tank2 / HOUR
    ))
}

fn random_state(rng: &mut ChaCha8Rng, s: &Scenario) -> PlantState {
    let mut x = s.initial.clone();
    let mut temps = |v: &mut Vec<f64>| v.iter_mut().for_each(|t| *t = rng.random_range(20.0..95.0));
    temps(&mut x.t_p);
    temps(&mut x.t_sh);
    temps(&mut x.t_sc);
    temps(&mut x.t_c);
    temps(&mut x.t_s_pipe);
    temps(&mut x.t_s_node);
    temps(&mut x.t_r_pipe);
    temps(&mut x.t_r_node);
    for i in 0..x.v_sh.len() {
        let cap = s.params.tank_capacity[i];
        x.v_sh[i] = cap * rng.random_range(0.01..0.99);
        x.v_sc[i] = cap - x.v_sh[i];
    }
    x
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut worst_fd: f64 = 0.0;
    for draw in 0..C7_DRAWS {
        let s = random_scenario(draw as u64 % 97);
        let topo = &s.topology;
        let state = random_state(&mut rng, &s);
        // Consumer flows well above every scheduled injection, so no edge reverses.
        let q_c: Vec<f64> = (0..topo.n_consumers()).map(|_| rng.random_range(0.4..1.0)).collect();
        let q_p: Vec<f64> = (0..topo.n_producers()).map(|_| rng.random_range(0.0..2.0)).collect();
        let flows = resolve_flows(
            topo,
            &IndependentFlows {
                q_p,
                q_c,
                q_st: s.operating.gains.q_st_sched.clone(),
                q_chord: s.operating.gains.q_chord.clone(),
            },
        )
        .map_err(|e| format!("draw {draw}: {e}"))?;
        let inputs = PlantInputs {
            p_p: (0..topo.n_producers()).map(|_| rng.random_range(0.0..50.0)).collect(),
            p_c: (0..topo.n_consumers()).map(|_| rng.random_range(0.0..5.0)).collect(),
            flows,
        };
        let d = full_rhs(&state, &inputs, &s.params, topo);
        let (rate, scale) = energy_rate(&state, &d, &s.params);
        let net: f64 = inputs.p_p.iter().sum::<f64>() - inputs.p_c.iter().sum::<f64>();
        let denom = scale.max(net.abs()).max(f64::MIN_POSITIVE);
        worst = worst.max((rate - net).abs() / denom);

        // Stored energy is quadratic, so a central difference is exact up to rounding.
        let h = 1e-3;
        let shift = |sign: f64| {
            let mut y = state.pack();
            for (a, b) in y.iter_mut().zip(d.pack()) {
                *a += sign * h * b;
            }
            stored_energy(&dhs_core::plant::StateLayout::of(topo).unpack(&y), &s.params)
        };
        let fd = (shift(1.0) - shift(-1.0)) / (2.0 * h);
        worst_fd = worst_fd.max((fd - net).abs() / stored_energy(&state, &s.params));
    }
    ensure(worst <= C7_REL_TOL, || format!("relative energy residual {worst:.3e}"))?;
    ensure(worst_fd <= 1e-9, || format!("central-difference residual {worst_fd:.3e}"))?;
    Ok(format!(
        "{C7_DRAWS} random states: max relative residual {worst:.3e}, central difference {worst_fd:.3e}"
    ))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("producer exponential oracle", criterion_1),
        ("consumer estimator oracle", criterion_2),
        ("volume regulation", criterion_3),
        ("fig3 qualitative reproduction", criterion_4),
        ("certificates on random scenarios", criterion_5),
        ("saturated fig3 rerun", criterion_6),
        ("energy audit", criterion_7),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {} ({name}): PASS: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL: {detail}", k + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
