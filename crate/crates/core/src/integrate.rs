//! Fixed-step RK4 integration of the closed loop and timed events.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{
    ControlError, DecentralizedController, OperatingPoint, OutflowPolicyRegistry,
    StorageOutflowPolicy,
};
use crate::network::max_balance_residual;
use crate::plant::{full_rhs, PlantState, StateLayout};
use crate::scenario::Scenario;
use crate::trace::{Sample, SimulationTrace};

/// Times within this fraction of a step of an event are treated as the event.
const EVENT_SNAP: f64 = 1e-9;

/// Capacity drift allowed on `V_sh + V_sc` before the run aborts (m³).
pub const CAPACITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
    pub saturation: bool,
}

/// Parameter changes applied at an event. Absent fields are left unchanged.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventChanges {
    pub v_sh_set: Option<Vec<f64>>,
    pub p_c: Option<Vec<f64>>,
    pub q_st: Option<Vec<f64>>,
    pub t_p_set: Option<Vec<f64>>,
    pub t_c_set: Option<Vec<f64>>,
}

impl EventChanges {
    pub fn is_empty(&self) -> bool {
        self.v_sh_set.is_none()
            && self.p_c.is_none()
            && self.q_st.is_none()
            && self.t_p_set.is_none()
            && self.t_c_set.is_none()
    }

    pub fn apply(&self, op: &mut OperatingPoint) {
        let g = &mut op.gains;
        if let Some(v) = &self.v_sh_set {
            g.v_sh_set.clone_from(v);
        }
        if let Some(v) = &self.q_st {
            g.q_st_sched.clone_from(v);
        }
        if let Some(v) = &self.t_p_set {
            g.t_p_set.clone_from(v);
        }
        if let Some(v) = &self.t_c_set {
            g.t_c_set.clone_from(v);
        }
        if let Some(v) = &self.p_c {
            op.p_c.clone_from(v);
        }
    }

    pub fn changes_setpoint_temperatures(&self) -> bool {
        self.t_p_set.is_some() || self.t_c_set.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub changes: EventChanges,
}

/// Events in strictly increasing time order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventSchedule {
    events: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("event {index} at t = {t} s is not after the previous event")]
pub struct ScheduleError {
    pub index: usize,
    pub t: f64,
}

impl EventSchedule {
    pub fn new(events: Vec<Event>) -> Result<Self, ScheduleError> {
        let mut last = 0.0;
        for (index, e) in events.iter().enumerate() {
            if !(e.t > last) || !e.t.is_finite() {
                return Err(ScheduleError { index, t: e.t });
            }
            last = e.t;
        }
        Ok(EventSchedule { events })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Intervals of constant operating conditions covering `[0, t_end]`.
    pub fn segments(&self, initial: &OperatingPoint, t_end: f64) -> Vec<Segment> {
        let mut out = Vec::new();
        let mut op = initial.clone();
        let mut start = 0.0;
        for e in self.events.iter().take_while(|e| e.t <= t_end) {
            out.push(Segment {
                t_start: start,
                t_end: e.t,
                op: op.clone(),
            });
            e.changes.apply(&mut op);
            start = e.t;
        }
        out.push(Segment {
            t_start: start,
            t_end,
            op,
        });
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub op: OperatingPoint,
}

impl Segment {
    /// Samples with `t_start <= t <= t_end`; state is continuous across
    /// events, so the boundary samples belong to both neighbours.
    pub fn samples<'a>(&self, trace: &'a SimulationTrace) -> &'a [Sample] {
        let s = &trace.samples;
        let lo = s.partition_point(|x| x.t < self.t_start);
        let hi = s.partition_point(|x| x.t <= self.t_end);
        &s[lo..hi.max(lo)]
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError<E> {
    #[error("right-hand side failed at stage {stage}")]
    Rhs { stage: usize, source: E },
    #[error("non-finite derivative at stage {stage}, component {index}")]
    NonFinite { stage: usize, index: usize },
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step<E, F>(mut rhs: F, y: &[f64], t: f64, dt: f64) -> Result<Vec<f64>, StepError<E>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>, E>,
{
    let mut eval = |stage: usize, tt: f64, yy: &[f64]| {
        let k = rhs(tt, yy).map_err(|source| StepError::Rhs { stage, source })?;
        if let Some(index) = k.iter().position(|v| !v.is_finite()) {
            return Err(StepError::NonFinite { stage, index });
        }
        Ok(k)
    };
    let axpy = |a: f64, k: &[f64]| -> Vec<f64> { y.iter().zip(k).map(|(y, k)| y + a * k).collect() };

    let k1 = eval(1, t, y)?;
    let k2 = eval(2, t + 0.5 * dt, &axpy(0.5 * dt, &k1))?;
    let k3 = eval(3, t + 0.5 * dt, &axpy(0.5 * dt, &k2))?;
    let k4 = eval(4, t + dt, &axpy(dt, &k3))?;
    Ok(y.iter()
        .enumerate()
        .map(|(i, y)| y + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("unknown storage outflow policy `{0}`")]
    UnknownPolicy(String),
    #[error("t = {t} s: {source}")]
    Control {
        t: f64,
        #[source]
        source: ControlError,
    },
    #[error("t = {t} s: non-finite derivative in state component `{component}`")]
    NonFinite { t: f64, component: String },
    #[error("t = {t} s: tank {tank} hot-layer volume {v_sh} left (0, {capacity})")]
    VolumeOutOfRange {
        t: f64,
        tank: usize,
        v_sh: f64,
        capacity: f64,
    },
    #[error("t = {t} s: tank {tank} capacity drift {drift} m³")]
    CapacityDrift { t: f64, tank: usize, drift: f64 },
}

/// Closed-loop system: plant state followed by the consumer controller states.
struct ClosedLoop<'a> {
    scenario: &'a Scenario,
    layout: StateLayout,
    controller: DecentralizedController<'a>,
}

impl ClosedLoop<'_> {
    fn split<'y>(&self, y: &'y [f64]) -> (PlantState, &'y [f64]) {
        let (plant, x_c) = y.split_at(self.layout.len());
        (self.layout.unpack(plant), x_c)
    }

    fn rhs(&self, t: f64, y: &[f64], op: &OperatingPoint) -> Result<Vec<f64>, ControlError> {
        let (plant, x_c) = self.split(y);
        let out = self.controller.evaluate(t, &plant, x_c, op)?;
        let d = full_rhs(&plant, &out.inputs, &self.scenario.params, &self.scenario.topology);
        let mut dy = Vec::with_capacity(y.len());
        d.pack_into(&mut dy);
        let topo = &self.scenario.topology;
        for i in 0..topo.n_consumers() {
            dy.push(crate::control::consumer_controller_rhs(
                plant.consumer_inlet_temperature(topo, i),
                plant.t_c[i],
                out.z_c[i],
                out.inputs.flows.q_c[i],
                self.scenario.params.rho_c,
            ));
        }
        Ok(dy)
    }

    fn sample(&self, t: f64, step: u64, y: &[f64], op: &OperatingPoint) -> Result<Sample, ControlError> {
        let (plant, x_c) = self.split(y);
        let out = self.controller.evaluate(t, &plant, x_c, op)?;
        let capacity_error = (0..plant.v_sh.len())
            .map(|i| (plant.v_sh[i] + plant.v_sc[i] - self.scenario.params.tank_capacity[i]).abs())
            .fold(0.0, f64::max);
        Ok(Sample {
            t,
            step,
            mass_residual: max_balance_residual(&self.scenario.topology, &out.inputs.flows),
            capacity_error,
            clamped: out.clamped,
            x_c: x_c.to_vec(),
            z_c: out.z_c,
            inputs: out.inputs,
            plant,
        })
    }
}

pub fn simulate(scenario: &Scenario) -> Result<SimulationTrace, SimError> {
    let registry = OutflowPolicyRegistry::with_builtins();
    let policy = registry
        .get(&scenario.storage_policy)
        .ok_or_else(|| SimError::UnknownPolicy(scenario.storage_policy.clone()))?;
    simulate_with_policy(scenario, policy.as_ref())
}

pub fn simulate_with_policy(
    scenario: &Scenario,
    policy: &dyn StorageOutflowPolicy,
) -> Result<SimulationTrace, SimError> {
    let cfg = &scenario.integrator;
    let topo = &scenario.topology;
    let sys = ClosedLoop {
        scenario,
        layout: StateLayout::of(topo),
        controller: DecentralizedController {
            topology: topo,
            params: &scenario.params,
            policy,
            saturation: cfg.saturation,
        },
    };
    let names = sys.layout.names(topo);

    let mut y = scenario.initial.pack();
    y.extend(scenario.initial_x_c());
    let mut op = scenario.operating.clone();
    let mut trace = SimulationTrace::new(topo, cfg.dt);
    let control_err = |t: f64| move |source: ControlError| SimError::Control { t, source };

    trace.samples.push(sys.sample(0.0, 0, &y, &op).map_err(control_err(0.0))?);

    let events = scenario.events.events();
    let mut next_event = 0;
    let mut grid = 0u64;
    let mut step = 0u64;
    let mut t = 0.0;
    let snap = EVENT_SNAP * cfg.dt;
    while t < cfg.t_end - snap {
        let grid_t = (grid + 1) as f64 * cfg.dt;
        let event_t = events.get(next_event).map_or(f64::INFINITY, |e| e.t);
        let mut target = grid_t.min(cfg.t_end);
        let mut hits_grid = true;
        if event_t < target - snap {
            target = event_t;
            hits_grid = false;
        } else if (event_t - target).abs() <= snap {
            target = event_t;
        }
        if (cfg.t_end - target).abs() <= snap {
            target = cfg.t_end;
        }

        let h = target - t;
        y = rk4_step(|tt, yy| sys.rhs(tt, yy, &op), &y, t, h).map_err(|e| match e {
            StepError::Rhs { stage, source } => SimError::Control {
                t: if stage == 1 { t } else { t + h },
                source,
            },
            StepError::NonFinite { index, .. } => SimError::NonFinite {
                t,
                component: names.get(index).cloned().unwrap_or_else(|| {
                    format!("x_c_{}", index - sys.layout.len() + 1)
                }),
            },
        })?;
        t = target;
        step += 1;
        if hits_grid {
            grid += 1;
        }

        check_tanks(scenario, &sys.layout, &y, t)?;
        project_cold_volumes(scenario, &sys.layout, &mut y);

        let mut forced = false;
        while next_event < events.len() && (events[next_event].t - t).abs() <= snap {
            events[next_event].changes.apply(&mut op);
            next_event += 1;
            forced = true;
        }
        let at_end = t >= cfg.t_end - snap;
        if forced || at_end || step.is_multiple_of(cfg.record_every as u64) {
            trace.samples.push(sys.sample(t, step, &y, &op).map_err(control_err(t))?);
        }
    }
    Ok(trace)
}

/// Resets `V_sc` to `capacity - V_sh`. The RK4 increments of the two layers
/// are exact negatives, so this only removes accumulated rounding.
fn project_cold_volumes(scenario: &Scenario, layout: &StateLayout, y: &mut [f64]) {
    let n_p = layout.n_p;
    for tank in 0..n_p {
        y[4 * n_p + tank] = scenario.params.tank_capacity[tank] - y[3 * n_p + tank];
    }
}

fn check_tanks(scenario: &Scenario, layout: &StateLayout, y: &[f64], t: f64) -> Result<(), SimError> {
    let n_p = layout.n_p;
    for tank in 0..n_p {
        let v_sh = y[3 * n_p + tank];
        let v_sc = y[4 * n_p + tank];
        let capacity = scenario.params.tank_capacity[tank];
        if !(v_sh > 0.0 && v_sh < capacity) {
            return Err(SimError::VolumeOutOfRange {
                t,
                tank,
                v_sh,
                capacity,
            });
        }
        let drift = v_sh + v_sc - capacity;
        if drift.abs() > CAPACITY_TOLERANCE {
            return Err(SimError::CapacityDrift { t, tank, drift });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_t: f64, y: &[f64]) -> Result<Vec<f64>, ()> {
        Ok(y.iter().map(|v| -v).collect())
    }

    #[test]
    fn zero_rhs_leaves_state() {
        let y = vec![1.5, -2.0];
        let out = rk4_step(|_, y: &[f64]| Ok::<_, ()>(vec![0.0; y.len()]), &y, 0.0, 0.3).unwrap();
        assert_eq!(out, y);
    }

    #[test]
    fn rk4_polynomial_by_hand() {
        // y1 = 1 - h + h²/2 - h³/6 + h⁴/24 at h = 0.1.
        let out = rk4_step(decay, &[1.0], 0.0, 0.1).unwrap();
        let h: f64 = 0.1;
        let poly = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((out[0] - poly).abs() < 1e-15);
        assert!((out[0] - 0.9048375).abs() < 1e-12);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let err = |n: usize| {
            let h = 1.0 / n as f64;
            let mut y = vec![1.0];
            for k in 0..n {
                y = rk4_step(decay, &y, k as f64 * h, h).unwrap();
            }
            (y[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(10) / err(20);
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn non_finite_derivative_reported() {
        let r = rk4_step(|_, _: &[f64]| Ok::<_, ()>(vec![f64::NAN]), &[0.0], 0.0, 1.0);
        assert_eq!(r, Err(StepError::NonFinite { stage: 1, index: 0 }));
    }

    #[test]
    fn schedule_must_increase() {
        let ev = |t| Event {
            t,
            changes: EventChanges::default(),
        };
        assert!(EventSchedule::new(vec![ev(1.0), ev(2.0)]).is_ok());
        assert_eq!(
            EventSchedule::new(vec![ev(2.0), ev(2.0)]),
            Err(ScheduleError { index: 1, t: 2.0 })
        );
        assert!(EventSchedule::new(vec![ev(0.0)]).is_err());
    }
}
