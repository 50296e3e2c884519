//! Decentralized control laws.
//!
//! Each law reads only its own device's measurements, the temperature of the
//! node it is attached to, and its own controller state:
//!
//! * producer power: feedback linearization of the heat-exchanger balance,
//! * producer flow: piecewise hot-layer volume regulation,
//! * consumer flow: ratio of the load estimate to the supply margin,
//! * storage outflow: a pluggable policy (scheduled constants by default).

mod outflow;

pub use outflow::{
    storage_outflow, OutflowPolicyRegistry, ScheduledOutflow, StorageOutflowPolicy,
    TankMeasurement,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{resolve_flows, FlowError, IndependentFlows, NetworkTopology};
use crate::plant::{PlantInputs, PlantParameters, PlantState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("storage outflow for tank {tank} is negative or not finite ({value})")]
    NegativeOutflow { tank: usize, value: f64 },
    #[error("tank {tank} is the dependent tank; its outflow comes from the flow balance")]
    WrongAuthority { tank: usize },
    #[error(
        "consumer {consumer}: supply margin {margin} below guard {guard} \
         (inlet {t_in} °C, setpoint {t_set} °C)"
    )]
    SupplyTemperatureViolation {
        consumer: usize,
        t_in: f64,
        t_set: f64,
        margin: f64,
        guard: f64,
    },
    #[error("producer flow law needs q_st >= 0, got {value} for tank {tank}")]
    NegativeStorageFlow { tank: usize, value: f64 },
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Optional upper bounds per channel; every channel is also clamped below at 0.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SaturationLimits {
    pub q_p_max: Option<Vec<f64>>,
    pub p_p_max: Option<Vec<f64>>,
    pub q_c_max: Option<Vec<f64>>,
}

fn clamp_channel(value: f64, max: Option<&Vec<f64>>, i: usize) -> f64 {
    let upper = max.map_or(f64::INFINITY, |m| m[i]);
    value.clamp(0.0, upper)
}

impl SaturationLimits {
    pub fn clamp_q_p(&self, i: usize, v: f64) -> f64 {
        clamp_channel(v, self.q_p_max.as_ref(), i)
    }

    pub fn clamp_p_p(&self, i: usize, v: f64) -> f64 {
        clamp_channel(v, self.p_p_max.as_ref(), i)
    }

    pub fn clamp_q_c(&self, i: usize, v: f64) -> f64 {
        clamp_channel(v, self.q_c_max.as_ref(), i)
    }
}

/// Gains, setpoints and schedules of every local controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    pub k_p: Vec<f64>,
    pub kappa_p: Vec<f64>,
    pub t_p_set: Vec<f64>,
    pub t_c_set: Vec<f64>,
    pub v_sh_set: Vec<f64>,
    /// Commanded outflow per tank. The dependent tank's entry is unused.
    pub q_st_sched: Vec<f64>,
    /// Constant flows through the chords, in topology chord order.
    pub q_chord: Vec<f64>,
    /// Required margin between the coldest producer and warmest consumer setpoint.
    pub epsilon: f64,
    pub limits: SaturationLimits,
}

impl ControllerGains {
    pub fn t_p_set_min(&self) -> f64 {
        self.t_p_set.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn t_c_set_max(&self) -> f64 {
        self.t_c_set.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Floor on the consumer-law denominator below which evaluation fails.
    pub fn epsilon_guard(&self) -> f64 {
        self.epsilon / 10.0
    }
}

/// Power that cancels the convective term and leaves first-order decay
/// towards the setpoint.
pub fn producer_power(
    gains: &ControllerGains,
    i: usize,
    t_p: f64,
    t_sc: f64,
    q_p: f64,
    rho_c: f64,
) -> f64 {
    -rho_c * q_p * (t_sc - t_p) - gains.k_p[i] * (t_p - gains.t_p_set[i])
}

pub fn producer_flow(
    gains: &ControllerGains,
    i: usize,
    v_sh: f64,
    q_st: f64,
) -> Result<f64, ControlError> {
    if !(q_st >= 0.0) {
        return Err(ControlError::NegativeStorageFlow { tank: i, value: q_st });
    }
    let dv = v_sh - gains.v_sh_set[i];
    Ok(if dv <= 0.0 {
        -gains.kappa_p[i] * dv + q_st
    } else {
        q_st * (-dv).exp()
    })
}

/// Load estimate `z_c = x_c - rho_c·V_c·T_c`.
pub fn consumer_estimate(x_c: f64, t_c: f64, v_c: f64, rho_c: f64) -> f64 {
    x_c - rho_c * v_c * t_c
}

pub fn consumer_flow(
    gains: &ControllerGains,
    i: usize,
    t_c_in: f64,
    z_c: f64,
    rho_c: f64,
) -> Result<f64, ControlError> {
    let margin = t_c_in - gains.t_c_set[i];
    let guard = gains.epsilon_guard();
    if !(margin > guard) {
        return Err(ControlError::SupplyTemperatureViolation {
            consumer: i,
            t_in: t_c_in,
            t_set: gains.t_c_set[i],
            margin,
            guard,
        });
    }
    Ok(z_c / (rho_c * margin))
}

/// Derivative of the integrated consumer controller state `x_c`.
pub fn consumer_controller_rhs(t_c_in: f64, t_c: f64, z_c: f64, q_c: f64, rho_c: f64) -> f64 {
    rho_c * q_c * (t_c_in - t_c) - z_c
}

/// Componentwise clamp of `q_p`, `P_p` and `q_c` into `[0, max]`.
///
/// Dependent flows are not re-resolved here; the closed loop clamps `q_c`
/// before flow resolution (see [`DecentralizedController`]).
pub fn saturate(inputs: &PlantInputs, limits: &SaturationLimits) -> PlantInputs {
    let mut out = inputs.clone();
    for (i, q) in out.flows.q_p.iter_mut().enumerate() {
        *q = limits.clamp_q_p(i, *q);
    }
    for (i, p) in out.p_p.iter_mut().enumerate() {
        *p = limits.clamp_p_p(i, *p);
    }
    for (i, q) in out.flows.q_c.iter_mut().enumerate() {
        *q = limits.clamp_q_c(i, *q);
    }
    out
}

/// Time-varying operating conditions: controller gains and the external loads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub gains: ControllerGains,
    pub p_c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub inputs: PlantInputs,
    pub z_c: Vec<f64>,
    /// Number of channels changed by saturation.
    pub clamped: usize,
}

/// Evaluates every local controller on a measurement snapshot.
pub struct DecentralizedController<'a> {
    pub topology: &'a NetworkTopology,
    pub params: &'a PlantParameters,
    pub policy: &'a dyn StorageOutflowPolicy,
    pub saturation: bool,
}

impl DecentralizedController<'_> {
    pub fn evaluate(
        &self,
        t: f64,
        plant: &PlantState,
        x_c: &[f64],
        op: &OperatingPoint,
    ) -> Result<ControlOutput, ControlError> {
        let topo = self.topology;
        let rho = self.params.rho_c;
        let gains = &op.gains;
        let limits = &gains.limits;
        let mut clamped = 0;
        let mut apply = |raw: f64, sat: f64| {
            if self.saturation && raw != sat {
                clamped += 1;
            }
            if self.saturation {
                sat
            } else {
                raw
            }
        };

        let z_c: Vec<f64> = (0..topo.n_consumers())
            .map(|i| consumer_estimate(x_c[i], plant.t_c[i], self.params.v_c[i], rho))
            .collect();
        let mut q_c = Vec::with_capacity(z_c.len());
        for (i, &z) in z_c.iter().enumerate() {
            let t_in = plant.consumer_inlet_temperature(topo, i);
            let q = consumer_flow(gains, i, t_in, z, rho)?;
            q_c.push(apply(q, limits.clamp_q_c(i, q)));
        }

        let m = topo.dependent_tank();
        let mut q_st = vec![0.0; topo.n_producers()];
        for (i, q) in q_st.iter_mut().enumerate() {
            if i != m {
                let local = TankMeasurement {
                    v_sh: plant.v_sh[i],
                    t_sh: plant.t_sh[i],
                    t_sc: plant.t_sc[i],
                };
                *q = storage_outflow(self.policy, topo, i, t, gains, &local)?;
            }
        }

        let mut flows = resolve_flows(
            topo,
            &IndependentFlows {
                q_p: vec![0.0; topo.n_producers()],
                q_c,
                q_st,
                q_chord: gains.q_chord.clone(),
            },
        )?;

        let mut p_p = Vec::with_capacity(topo.n_producers());
        for i in 0..topo.n_producers() {
            let q = producer_flow(gains, i, plant.v_sh[i], flows.q_st[i])?;
            let q = apply(q, limits.clamp_q_p(i, q));
            flows.q_p[i] = q;
            let p = producer_power(gains, i, plant.t_p[i], plant.t_sc[i], q, rho);
            p_p.push(apply(p, limits.clamp_p_p(i, p)));
        }

        Ok(ControlOutput {
            inputs: PlantInputs {
                p_p,
                p_c: op.p_c.clone(),
                flows,
            },
            z_c,
            clamped,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gains() -> ControllerGains {
        ControllerGains {
            k_p: vec![1e-3],
            kappa_p: vec![1e-3],
            t_p_set: vec![85.0],
            t_c_set: vec![55.0],
            v_sh_set: vec![500.0],
            q_st_sched: vec![0.05],
            q_chord: vec![],
            epsilon: 1.0,
            limits: SaturationLimits::default(),
        }
    }

    #[test]
    fn producer_power_vanishes_at_setpoint() {
        let g = gains();
        assert_eq!(producer_power(&g, 0, 85.0, 85.0, 0.3, 1.0), 0.0);
    }

    #[test]
    fn producer_power_by_hand() {
        let g = gains();
        let p = producer_power(&g, 0, 80.0, 40.0, 0.1, 1.0);
        assert!((p - 4.005).abs() < 1e-12);
    }

    #[test]
    fn producer_power_linearizes() {
        // Substituting the law into the producer balance leaves -k_p (T_p - T*).
        let g = gains();
        for &(q_p, t_sc, t_p) in &[(0.0, 30.0, 70.0), (0.7, 52.0, 88.0), (2.5, 60.0, 84.9)] {
            let p = producer_power(&g, 0, t_p, t_sc, q_p, 1.0);
            let v_p = 1.0;
            let dtp = (q_p * (t_sc - t_p) + p) / v_p;
            let expected = -g.k_p[0] / v_p * (t_p - g.t_p_set[0]);
            assert!((dtp - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn producer_flow_branches() {
        let g = gains();
        assert_eq!(producer_flow(&g, 0, 500.0, 0.05).unwrap(), 0.05);
        let lower = producer_flow(&g, 0, 400.0, 0.05).unwrap();
        assert!((lower - 0.15).abs() < 1e-15);
        let upper = producer_flow(&g, 0, 500.0 + 2f64.ln(), 0.05).unwrap();
        assert!((upper - 0.025).abs() < 1e-15);
        assert!(producer_flow(&g, 0, 400.0, -1e-3).is_err());
    }

    #[test]
    fn consumer_flow_cases() {
        let g = gains();
        assert_eq!(consumer_flow(&g, 0, 85.0, 1.65e6, 1.0).unwrap(), 55000.0);
        assert_eq!(consumer_flow(&g, 0, 85.0, 0.0, 1.0).unwrap(), 0.0);
        let a = consumer_flow(&g, 0, 70.0, 3.0, 1.0).unwrap();
        let b = consumer_flow(&g, 0, 70.0, 6.0, 1.0).unwrap();
        assert_eq!(b, 2.0 * a);
        assert!(matches!(
            consumer_flow(&g, 0, 55.05, 1.0, 1.0),
            Err(ControlError::SupplyTemperatureViolation { .. })
        ));
    }

    #[test]
    fn consumer_controller_equilibrium() {
        // z_c = P_c, T_c = T_c*: q_c (T_in - T_c) = P_c, so x_c and T_c are still.
        let g = gains();
        let p_c = 3.0;
        let q = consumer_flow(&g, 0, 85.0, p_c, 1.0).unwrap();
        assert!(consumer_controller_rhs(85.0, 55.0, p_c, q, 1.0).abs() < 1e-15);
        assert!((q * (85.0 - 55.0) - p_c).abs() < 1e-15);
    }

    #[test]
    fn saturation_clamps() {
        let limits = SaturationLimits {
            q_p_max: Some(vec![1.0]),
            p_p_max: Some(vec![10.0]),
            q_c_max: None,
        };
        let inputs = PlantInputs {
            p_p: vec![-1.0],
            p_c: vec![2.0],
            flows: crate::network::FlowAssignment {
                q_p: vec![99.0],
                q_c: vec![0.4],
                ..Default::default()
            },
        };
        let out = saturate(&inputs, &limits);
        assert_eq!(out.p_p, vec![0.0]);
        assert_eq!(out.flows.q_p, vec![1.0]);
        assert_eq!(out.flows.q_c, vec![0.4]);
        let inside = PlantInputs {
            p_p: vec![5.0],
            flows: crate::network::FlowAssignment {
                q_p: vec![0.5],
                q_c: vec![0.4],
                ..Default::default()
            },
            ..inputs
        };
        assert_eq!(saturate(&inside, &limits), inside);
    }
}
