//! Scenario files: JSON schema, validation and canonical form.
//!
//! Field names carry their units. Per-element quantities of the distribution
//! network (pipe and node volumes, initial temperatures) accept either one
//! number applied to every element or a map keyed by edge or node id; the
//! canonical form always uses maps.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{AnalysisConfig, CertificateRegistry};
use crate::control::{ControllerGains, OperatingPoint, OutflowPolicyRegistry, SaturationLimits};
use crate::integrate::{Event, EventChanges, EventSchedule, IntegratorConfig};
use crate::network::{build_topology, NetworkTopology, TopologySpec};
use crate::plant::{PlantParameters, PlantState};

pub mod random;

fn default_rho() -> f64 {
    1.0
}

fn default_policy() -> String {
    "schedule".into()
}

fn default_record_every() -> usize {
    1
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// One value for every element, or one value per element id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerElement {
    Uniform(f64),
    ById(BTreeMap<String, f64>),
}

impl PerElement {
    fn by_id(ids: impl Iterator<Item = String>, values: &[f64]) -> Self {
        PerElement::ById(ids.zip(values.iter().copied()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub topology: TopologySpec,
    pub plant: PlantSection,
    pub control: ControlSection,
    pub loads: LoadSection,
    pub initial: InitialSection,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    #[serde(default = "default_rho")]
    pub rho_c_j_per_m3_degc: f64,
    pub producers: Vec<ProducerPlant>,
    pub consumers: Vec<ConsumerPlant>,
    pub supply_layer: LayerVolumes,
    pub return_layer: LayerVolumes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProducerPlant {
    pub v_p_m3: f64,
    pub tank_capacity_m3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsumerPlant {
    pub v_c_m3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerVolumes {
    pub pipe_volumes_m3: PerElement,
    pub node_volumes_m3: PerElement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub epsilon_degc: f64,
    #[serde(default = "default_policy")]
    pub storage_policy: String,
    pub producers: Vec<ProducerControl>,
    pub consumers: Vec<ConsumerControl>,
    #[serde(default)]
    pub chord_flows_m3_per_s: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProducerControl {
    pub k_p_w_per_degc: f64,
    pub kappa_p_per_s: f64,
    pub t_p_set_degc: f64,
    pub v_sh_set_m3: f64,
    /// Scheduled tank outflow; ignored for the dependent tank.
    #[serde(default)]
    pub q_st_m3_per_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_p_max_m3_per_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_p_max_w: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsumerControl {
    pub t_c_set_degc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_c_max_m3_per_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSection {
    pub p_c_w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub producers: Vec<ProducerInitial>,
    pub consumers: Vec<ConsumerInitial>,
    pub supply_layer: LayerTemperatures,
    pub return_layer: LayerTemperatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProducerInitial {
    pub t_p_degc: f64,
    pub t_sh_degc: f64,
    pub t_sc_degc: f64,
    pub v_sh_m3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsumerInitial {
    pub t_c_degc: f64,
    /// Prior load estimate the consumer controller starts from.
    pub z_c_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerTemperatures {
    pub pipe_temps_degc: PerElement,
    pub node_temps_degc: PerElement,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub t_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_sh_set_m3: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_c_w: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_st_m3_per_s: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_p_set_degc: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_c_set_degc: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    pub dt_s: f64,
    pub t_end_s: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default, skip_serializing_if = "is_false")]
    pub saturation: bool,
}

/// A validation failure at a location in the scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario:\n{}", join_errors(.0))]
    Invalid(Vec<FieldError>),
}

fn join_errors(errors: &[FieldError]) -> String {
    errors
        .iter()
        .map(|e| format!("  {e}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl ScenarioError {
    /// Field errors of an invalid scenario; empty for I/O and parse errors.
    pub fn field_errors(&self) -> &[FieldError] {
        match self {
            ScenarioError::Invalid(e) => e,
            _ => &[],
        }
    }
}

/// A fully validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub description: Option<String>,
    pub topology: NetworkTopology,
    pub params: PlantParameters,
    /// Gains and loads in force at `t = 0`.
    pub operating: OperatingPoint,
    pub initial: PlantState,
    pub z_c0: Vec<f64>,
    pub events: EventSchedule,
    pub integrator: IntegratorConfig,
    pub analysis: AnalysisConfig,
    pub storage_policy: String,
}

impl Scenario {
    /// Initial consumer controller states `x_c(0) = z_c(0) + rho_c·V_c·T_c(0)`.
    pub fn initial_x_c(&self) -> Vec<f64> {
        (0..self.z_c0.len())
            .map(|i| self.z_c0[i] + self.params.rho_c * self.params.v_c[i] * self.initial.t_c[i])
            .collect()
    }

    pub fn epsilon(&self) -> f64 {
        self.operating.gains.epsilon
    }

    /// Canonical file form. Validating it yields an equal scenario.
    pub fn to_file(&self) -> ScenarioFile {
        let topo = &self.topology;
        let g = &self.operating.gains;
        let p = &self.params;
        let finite = |v: &Option<Vec<f64>>, i: usize| {
            v.as_ref().map(|v| v[i]).filter(|x| x.is_finite())
        };
        let edge_ids = || topo.edges().iter().map(|e| e.id.clone());
        let node_ids = || (0..topo.n_nodes()).map(|j| topo.node_id(j).to_string());
        let s = &self.initial;
        ScenarioFile {
            name: self.name.clone(),
            description: self.description.clone(),
            topology: topo.spec().clone(),
            plant: PlantSection {
                rho_c_j_per_m3_degc: p.rho_c,
                producers: (0..topo.n_producers())
                    .map(|i| ProducerPlant {
                        v_p_m3: p.v_p[i],
                        tank_capacity_m3: p.tank_capacity[i],
                    })
                    .collect(),
                consumers: p.v_c.iter().map(|&v| ConsumerPlant { v_c_m3: v }).collect(),
                supply_layer: LayerVolumes {
                    pipe_volumes_m3: PerElement::by_id(edge_ids(), &p.v_s_pipe),
                    node_volumes_m3: PerElement::by_id(node_ids(), &p.v_s_node),
                },
                return_layer: LayerVolumes {
                    pipe_volumes_m3: PerElement::by_id(edge_ids(), &p.v_r_pipe),
                    node_volumes_m3: PerElement::by_id(node_ids(), &p.v_r_node),
                },
            },
            control: ControlSection {
                epsilon_degc: g.epsilon,
                storage_policy: self.storage_policy.clone(),
                producers: (0..topo.n_producers())
                    .map(|i| ProducerControl {
                        k_p_w_per_degc: g.k_p[i],
                        kappa_p_per_s: g.kappa_p[i],
                        t_p_set_degc: g.t_p_set[i],
                        v_sh_set_m3: g.v_sh_set[i],
                        q_st_m3_per_s: g.q_st_sched[i],
                        q_p_max_m3_per_s: finite(&g.limits.q_p_max, i),
                        p_p_max_w: finite(&g.limits.p_p_max, i),
                    })
                    .collect(),
                consumers: (0..topo.n_consumers())
                    .map(|i| ConsumerControl {
                        t_c_set_degc: g.t_c_set[i],
                        q_c_max_m3_per_s: finite(&g.limits.q_c_max, i),
                    })
                    .collect(),
                chord_flows_m3_per_s: topo
                    .chords()
                    .iter()
                    .zip(&g.q_chord)
                    .map(|(&k, &q)| (topo.edge(k).id.clone(), q))
                    .collect(),
            },
            loads: LoadSection {
                p_c_w: self.operating.p_c.clone(),
            },
            initial: InitialSection {
                producers: (0..topo.n_producers())
                    .map(|i| ProducerInitial {
                        t_p_degc: s.t_p[i],
                        t_sh_degc: s.t_sh[i],
                        t_sc_degc: s.t_sc[i],
                        v_sh_m3: s.v_sh[i],
                    })
                    .collect(),
                consumers: (0..topo.n_consumers())
                    .map(|i| ConsumerInitial {
                        t_c_degc: s.t_c[i],
                        z_c_w: self.z_c0[i],
                    })
                    .collect(),
                supply_layer: LayerTemperatures {
                    pipe_temps_degc: PerElement::by_id(edge_ids(), &s.t_s_pipe),
                    node_temps_degc: PerElement::by_id(node_ids(), &s.t_s_node),
                },
                return_layer: LayerTemperatures {
                    pipe_temps_degc: PerElement::by_id(edge_ids(), &s.t_r_pipe),
                    node_temps_degc: PerElement::by_id(node_ids(), &s.t_r_node),
                },
            },
            events: self
                .events
                .events()
                .iter()
                .map(|e| EventSpec {
                    t_s: e.t,
                    v_sh_set_m3: e.changes.v_sh_set.clone(),
                    p_c_w: e.changes.p_c.clone(),
                    q_st_m3_per_s: e.changes.q_st.clone(),
                    t_p_set_degc: e.changes.t_p_set.clone(),
                    t_c_set_degc: e.changes.t_c_set.clone(),
                })
                .collect(),
            integrator: IntegratorSection {
                dt_s: self.integrator.dt,
                t_end_s: self.integrator.t_end,
                record_every: self.integrator.record_every,
                saturation: self.integrator.saturation,
            },
            analysis: self.analysis.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("scenario serializes")
    }
}

/// Parses JSON into the raw file form, reporting the field path on failure.
pub fn parse_scenario_file(json: &str) -> Result<ScenarioFile, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(json);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ScenarioError::Parse {
            path,
            message: e.into_inner().to_string(),
        }
    })
}

pub fn read_scenario_file(path: &Path) -> Result<ScenarioFile, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario_file(&text)
}

pub fn parse_scenario(json: &str) -> Result<Scenario, ScenarioError> {
    parse_scenario_file(json)?.validate()
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    read_scenario_file(path)?.validate()
}

/// Accumulates field errors during validation.
#[derive(Default)]
struct Checker {
    errors: Vec<FieldError>,
}

impl Checker {
    fn fail(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.errors.push(FieldError {
            path: path.into(),
            message: message.into(),
        });
    }

    fn finite(&mut self, path: &str, v: f64) -> bool {
        if !v.is_finite() {
            self.fail(path, format!("must be finite, got {v}"));
            return false;
        }
        true
    }

    fn positive(&mut self, path: &str, v: f64, what: &str) {
        if !(v > 0.0) || !v.is_finite() {
            self.fail(path, format!("{what} must be positive, got {v}"));
        }
    }

    fn non_negative(&mut self, path: &str, v: f64) {
        if !(v >= 0.0) || !v.is_finite() {
            self.fail(path, format!("must be non-negative, got {v}"));
        }
    }

    fn count(&mut self, path: &str, got: usize, expected: usize, what: &str) -> bool {
        if got != expected {
            self.fail(path, format!("expected {expected} entries (one per {what}), got {got}"));
            return false;
        }
        true
    }

    /// Expands a per-element value over `ids`; unknown and missing ids are errors.
    fn expand(&mut self, path: &str, value: &PerElement, ids: &[String]) -> Vec<f64> {
        match value {
            PerElement::Uniform(v) => vec![*v; ids.len()],
            PerElement::ById(map) => {
                for key in map.keys() {
                    if !ids.contains(key) {
                        self.fail(format!("{path}.{key}"), "unknown id");
                    }
                }
                ids.iter()
                    .map(|id| match map.get(id) {
                        Some(&v) => v,
                        None => {
                            self.fail(path, format!("missing value for `{id}`"));
                            f64::NAN
                        }
                    })
                    .collect()
            }
        }
    }
}

fn check_margin(c: &mut Checker, path: &str, t_p_set: &[f64], t_c_set: &[f64], epsilon: f64) {
    let t_p_min = t_p_set.iter().copied().fold(f64::INFINITY, f64::min);
    let t_c_max = t_c_set.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(t_p_min > t_c_max + epsilon) {
        c.fail(
            path,
            format!(
                "margin violation: minimum producer setpoint {t_p_min} °C must exceed \
                 maximum consumer setpoint {t_c_max} °C plus epsilon {epsilon} °C"
            ),
        );
    }
}

fn limit_vector(c: &mut Checker, path: &str, field: &str, values: Vec<Option<f64>>) -> Option<Vec<f64>> {
    if values.iter().all(Option::is_none) {
        return None;
    }
    Some(
        values
            .into_iter()
            .enumerate()
            .map(|(i, v)| match v {
                Some(v) => {
                    c.positive(&format!("{path}[{i}].{field}"), v, "saturation limit");
                    v
                }
                None => f64::INFINITY,
            })
            .collect(),
    )
}

impl ScenarioFile {
    /// Checks every invariant; all violations are reported together.
    pub fn validate(&self) -> Result<Scenario, ScenarioError> {
        let mut c = Checker::default();
        let topology = match build_topology(&self.topology) {
            Ok(t) => t,
            Err(e) => {
                c.fail("topology", e.to_string());
                return Err(ScenarioError::Invalid(c.errors));
            }
        };
        let n_p = topology.n_producers();
        let n_c = topology.n_consumers();
        let edge_ids: Vec<String> = topology.edges().iter().map(|e| e.id.clone()).collect();
        let node_ids: Vec<String> = (0..topology.n_nodes())
            .map(|j| topology.node_id(j).to_string())
            .collect();

        // Plant.
        let pl = &self.plant;
        c.positive("plant.rho_c_j_per_m3_degc", pl.rho_c_j_per_m3_degc, "heat capacity");
        let producers_ok = c.count("plant.producers", pl.producers.len(), n_p, "producer");
        let consumers_ok = c.count("plant.consumers", pl.consumers.len(), n_c, "consumer");
        for (i, p) in pl.producers.iter().enumerate() {
            c.positive(&format!("plant.producers[{i}].v_p_m3"), p.v_p_m3, "volume");
            c.positive(&format!("plant.producers[{i}].tank_capacity_m3"), p.tank_capacity_m3, "capacity");
        }
        for (i, p) in pl.consumers.iter().enumerate() {
            c.positive(&format!("plant.consumers[{i}].v_c_m3"), p.v_c_m3, "volume");
        }
        let layer_volumes = |name: &str, lv: &LayerVolumes, c: &mut Checker| {
            let pp = format!("plant.{name}.pipe_volumes_m3");
            let np = format!("plant.{name}.node_volumes_m3");
            let pipes = c.expand(&pp, &lv.pipe_volumes_m3, &edge_ids);
            let nodes = c.expand(&np, &lv.node_volumes_m3, &node_ids);
            for (k, v) in pipes.iter().enumerate() {
                if !v.is_nan() {
                    c.positive(&format!("{pp}.{}", edge_ids[k]), *v, "volume");
                }
            }
            for (j, v) in nodes.iter().enumerate() {
                if !v.is_nan() {
                    c.positive(&format!("{np}.{}", node_ids[j]), *v, "volume");
                }
            }
            (pipes, nodes)
        };
        let (v_s_pipe, v_s_node) = layer_volumes("supply_layer", &pl.supply_layer, &mut c);
        let (v_r_pipe, v_r_node) = layer_volumes("return_layer", &pl.return_layer, &mut c);
        let capacity: Vec<f64> = pl.producers.iter().map(|p| p.tank_capacity_m3).collect();

        // Control.
        let ct = &self.control;
        if !(ct.epsilon_degc > 0.0) || !ct.epsilon_degc.is_finite() {
            c.fail("control.epsilon_degc", format!("epsilon must be positive, got {}", ct.epsilon_degc));
        }
        if OutflowPolicyRegistry::with_builtins().get(&ct.storage_policy).is_none() {
            c.fail(
                "control.storage_policy",
                format!(
                    "unknown policy `{}` (known: {})",
                    ct.storage_policy,
                    OutflowPolicyRegistry::with_builtins().names().join(", ")
                ),
            );
        }
        let ctrl_p_ok = c.count("control.producers", ct.producers.len(), n_p, "producer");
        let ctrl_c_ok = c.count("control.consumers", ct.consumers.len(), n_c, "consumer");
        for (i, p) in ct.producers.iter().enumerate() {
            let base = format!("control.producers[{i}]");
            c.positive(&format!("{base}.k_p_w_per_degc"), p.k_p_w_per_degc, "gain");
            c.positive(&format!("{base}.kappa_p_per_s"), p.kappa_p_per_s, "gain");
            c.finite(&format!("{base}.t_p_set_degc"), p.t_p_set_degc);
            c.non_negative(&format!("{base}.q_st_m3_per_s"), p.q_st_m3_per_s);
            if let Some(&cap) = capacity.get(i) {
                check_volume(&mut c, &format!("{base}.v_sh_set_m3"), p.v_sh_set_m3, cap);
            }
        }
        for (i, p) in ct.consumers.iter().enumerate() {
            c.finite(&format!("control.consumers[{i}].t_c_set_degc"), p.t_c_set_degc);
        }
        let t_p_set: Vec<f64> = ct.producers.iter().map(|p| p.t_p_set_degc).collect();
        let t_c_set: Vec<f64> = ct.consumers.iter().map(|p| p.t_c_set_degc).collect();
        if !t_p_set.is_empty() && !t_c_set.is_empty() {
            check_margin(&mut c, "control", &t_p_set, &t_c_set, ct.epsilon_degc);
        }
        let mut q_chord = Vec::new();
        for key in ct.chord_flows_m3_per_s.keys() {
            if !topology.chords().iter().any(|&k| &topology.edge(k).id == key) {
                c.fail(format!("control.chord_flows_m3_per_s.{key}"), "not a chord of the topology");
            }
        }
        for &k in topology.chords() {
            let id = &topology.edge(k).id;
            match ct.chord_flows_m3_per_s.get(id) {
                Some(&q) => {
                    c.non_negative(&format!("control.chord_flows_m3_per_s.{id}"), q);
                    q_chord.push(q);
                }
                None => {
                    c.fail("control.chord_flows_m3_per_s", format!("missing flow for chord `{id}`"));
                    q_chord.push(0.0);
                }
            }
        }
        let limits = SaturationLimits {
            q_p_max: limit_vector(
                &mut c,
                "control.producers",
                "q_p_max_m3_per_s",
                ct.producers.iter().map(|p| p.q_p_max_m3_per_s).collect(),
            ),
            p_p_max: limit_vector(
                &mut c,
                "control.producers",
                "p_p_max_w",
                ct.producers.iter().map(|p| p.p_p_max_w).collect(),
            ),
            q_c_max: limit_vector(
                &mut c,
                "control.consumers",
                "q_c_max_m3_per_s",
                ct.consumers.iter().map(|p| p.q_c_max_m3_per_s).collect(),
            ),
        };

        // Loads.
        c.count("loads.p_c_w", self.loads.p_c_w.len(), n_c, "consumer");
        for (i, &p) in self.loads.p_c_w.iter().enumerate() {
            c.non_negative(&format!("loads.p_c_w[{i}]"), p);
        }

        // Initial state.
        let init = &self.initial;
        let init_p_ok = c.count("initial.producers", init.producers.len(), n_p, "producer");
        let init_c_ok = c.count("initial.consumers", init.consumers.len(), n_c, "consumer");
        for (i, p) in init.producers.iter().enumerate() {
            let base = format!("initial.producers[{i}]");
            c.finite(&format!("{base}.t_p_degc"), p.t_p_degc);
            c.finite(&format!("{base}.t_sh_degc"), p.t_sh_degc);
            c.finite(&format!("{base}.t_sc_degc"), p.t_sc_degc);
            if let Some(&cap) = capacity.get(i) {
                check_volume(&mut c, &format!("{base}.v_sh_m3"), p.v_sh_m3, cap);
            }
        }
        for (i, p) in init.consumers.iter().enumerate() {
            let base = format!("initial.consumers[{i}]");
            c.finite(&format!("{base}.t_c_degc"), p.t_c_degc);
            c.positive(&format!("{base}.z_c_w"), p.z_c_w, "initial load estimate");
        }
        let layer_temps = |name: &str, lt: &LayerTemperatures, c: &mut Checker| {
            let pp = format!("initial.{name}.pipe_temps_degc");
            let np = format!("initial.{name}.node_temps_degc");
            let pipes = c.expand(&pp, &lt.pipe_temps_degc, &edge_ids);
            let nodes = c.expand(&np, &lt.node_temps_degc, &node_ids);
            if let PerElement::Uniform(v) = lt.pipe_temps_degc {
                c.finite(&pp, v);
            }
            if let PerElement::Uniform(v) = lt.node_temps_degc {
                c.finite(&np, v);
            }
            (pipes, nodes)
        };
        let (t_s_pipe, t_s_node) = layer_temps("supply_layer", &init.supply_layer, &mut c);
        let (t_r_pipe, t_r_node) = layer_temps("return_layer", &init.return_layer, &mut c);

        // Events.
        let mut events = Vec::new();
        let mut prev_t = 0.0;
        let mut cur_t_p = t_p_set.clone();
        let mut cur_t_c = t_c_set.clone();
        for (k, e) in self.events.iter().enumerate() {
            let base = format!("events[{k}]");
            if !(e.t_s > prev_t) || !e.t_s.is_finite() {
                c.fail(
                    format!("{base}.t_s"),
                    format!("event times must be finite, positive and strictly increasing, got {}", e.t_s),
                );
            }
            prev_t = e.t_s;
            if let Some(v) = &e.v_sh_set_m3 {
                let p = format!("{base}.v_sh_set_m3");
                if c.count(&p, v.len(), n_p, "producer") {
                    for (i, (&x, &cap)) in v.iter().zip(&capacity).enumerate() {
                        check_volume(&mut c, &format!("{p}[{i}]"), x, cap);
                    }
                }
            }
            if let Some(v) = &e.p_c_w {
                let p = format!("{base}.p_c_w");
                if c.count(&p, v.len(), n_c, "consumer") {
                    for (i, &x) in v.iter().enumerate() {
                        c.non_negative(&format!("{p}[{i}]"), x);
                    }
                }
            }
            if let Some(v) = &e.q_st_m3_per_s {
                let p = format!("{base}.q_st_m3_per_s");
                if c.count(&p, v.len(), n_p, "producer") {
                    for (i, &x) in v.iter().enumerate() {
                        c.non_negative(&format!("{p}[{i}]"), x);
                    }
                }
            }
            let mut margin_changed = false;
            if let Some(v) = &e.t_p_set_degc {
                if c.count(&format!("{base}.t_p_set_degc"), v.len(), n_p, "producer") {
                    cur_t_p.clone_from(v);
                    margin_changed = true;
                }
            }
            if let Some(v) = &e.t_c_set_degc {
                if c.count(&format!("{base}.t_c_set_degc"), v.len(), n_c, "consumer") {
                    cur_t_c.clone_from(v);
                    margin_changed = true;
                }
            }
            if margin_changed {
                check_margin(&mut c, &base, &cur_t_p, &cur_t_c, ct.epsilon_degc);
            }
            events.push(Event {
                t: e.t_s,
                changes: EventChanges {
                    v_sh_set: e.v_sh_set_m3.clone(),
                    p_c: e.p_c_w.clone(),
                    q_st: e.q_st_m3_per_s.clone(),
                    t_p_set: e.t_p_set_degc.clone(),
                    t_c_set: e.t_c_set_degc.clone(),
                },
            });
        }

        // Integrator.
        let ig = &self.integrator;
        c.positive("integrator.dt_s", ig.dt_s, "step size");
        if !(ig.t_end_s >= 0.0) || !ig.t_end_s.is_finite() {
            c.fail("integrator.t_end_s", format!("horizon must be finite and non-negative, got {}", ig.t_end_s));
        }
        if ig.record_every == 0 {
            c.fail("integrator.record_every", "must be at least 1");
        }

        // Analysis.
        let registry = CertificateRegistry::with_builtins();
        if let Some(checks) = &self.analysis.checks {
            for (i, name) in checks.iter().enumerate() {
                if registry.get(name).is_none() {
                    c.fail(
                        format!("analysis.checks[{i}]"),
                        format!("unknown check `{name}` (known: {})", registry.names().join(", ")),
                    );
                }
            }
        }
        if let Some(s) = self.analysis.slack_c {
            c.non_negative("analysis.slack_c", s);
        }
        if let Some(phi) = self.analysis.phi_degc {
            c.positive("analysis.phi_degc", phi, "envelope");
        }

        if !c.errors.is_empty() || !(producers_ok && consumers_ok && ctrl_p_ok && ctrl_c_ok && init_p_ok && init_c_ok) {
            return Err(ScenarioError::Invalid(c.errors));
        }

        let params = PlantParameters {
            v_p: pl.producers.iter().map(|p| p.v_p_m3).collect(),
            v_c: pl.consumers.iter().map(|p| p.v_c_m3).collect(),
            v_s_pipe,
            v_s_node,
            v_r_pipe,
            v_r_node,
            tank_capacity: capacity.clone(),
            rho_c: pl.rho_c_j_per_m3_degc,
        };
        let gains = ControllerGains {
            k_p: ct.producers.iter().map(|p| p.k_p_w_per_degc).collect(),
            kappa_p: ct.producers.iter().map(|p| p.kappa_p_per_s).collect(),
            t_p_set,
            t_c_set,
            v_sh_set: ct.producers.iter().map(|p| p.v_sh_set_m3).collect(),
            q_st_sched: ct.producers.iter().map(|p| p.q_st_m3_per_s).collect(),
            q_chord,
            epsilon: ct.epsilon_degc,
            limits,
        };
        let initial = PlantState {
            t_p: init.producers.iter().map(|p| p.t_p_degc).collect(),
            t_sh: init.producers.iter().map(|p| p.t_sh_degc).collect(),
            t_sc: init.producers.iter().map(|p| p.t_sc_degc).collect(),
            v_sh: init.producers.iter().map(|p| p.v_sh_m3).collect(),
            v_sc: init
                .producers
                .iter()
                .zip(&capacity)
                .map(|(p, cap)| cap - p.v_sh_m3)
                .collect(),
            t_c: init.consumers.iter().map(|p| p.t_c_degc).collect(),
            t_s_pipe,
            t_s_node,
            t_r_pipe,
            t_r_node,
        };
        let events = EventSchedule::new(events).map_err(|e| {
            ScenarioError::Invalid(vec![FieldError {
                path: format!("events[{}].t_s", e.index),
                message: e.to_string(),
            }])
        })?;
        Ok(Scenario {
            name: self.name.clone(),
            description: self.description.clone(),
            topology,
            params,
            operating: OperatingPoint {
                gains,
                p_c: self.loads.p_c_w.clone(),
            },
            initial,
            z_c0: init.consumers.iter().map(|p| p.z_c_w).collect(),
            events,
            integrator: IntegratorConfig {
                dt: ig.dt_s,
                t_end: ig.t_end_s,
                record_every: ig.record_every,
                saturation: ig.saturation,
            },
            analysis: self.analysis.clone(),
            storage_policy: ct.storage_policy.clone(),
        })
    }
}

fn check_volume(c: &mut Checker, path: &str, v: f64, capacity: f64) {
    if !(v > 0.0 && v < capacity) {
        c.fail(path, format!("hot-layer volume must lie in (0, {capacity}) m³, got {v}"));
    }
}
