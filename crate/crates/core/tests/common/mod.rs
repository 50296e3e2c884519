#![allow(dead_code)]

use std::path::PathBuf;

use dhs_core::scenario::{load_scenario, parse_scenario, Scenario};
use serde_json::{json, Value};

pub fn fig3_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/fig3.json")
}

pub fn fig3() -> Scenario {
    load_scenario(&fig3_path()).expect("bundled scenario loads")
}

/// One producer with its tank at node `a`, one consumer at node `b`.
pub fn single_loop() -> Value {
    json!({
        "name": "single-loop",
        "topology": {
            "nodes": ["a", "b"],
            "edges": [{"id": "e1", "tail": "a", "head": "b"}],
            "producers": [{"id": "P1", "node": "a"}],
            "consumers": [{"id": "C1", "node": "b"}],
            "dependent_tank": "P1"
        },
        "plant": {
            "producers": [{"v_p_m3": 1.0, "tank_capacity_m3": 1000.0}],
            "consumers": [{"v_c_m3": 1.0}],
            "supply_layer": {"pipe_volumes_m3": 10.0, "node_volumes_m3": 1.0},
            "return_layer": {"pipe_volumes_m3": 10.0, "node_volumes_m3": 1.0}
        },
        "control": {
            "epsilon_degc": 1.0,
            "producers": [{"k_p_w_per_degc": 1e-3, "kappa_p_per_s": 1e-3,
                           "t_p_set_degc": 85.0, "v_sh_set_m3": 500.0}],
            "consumers": [{"t_c_set_degc": 55.0}]
        },
        "loads": {"p_c_w": [1.65]},
        "initial": {
            "producers": [{"t_p_degc": 85.0, "t_sh_degc": 85.0, "t_sc_degc": 55.0, "v_sh_m3": 500.0}],
            "consumers": [{"t_c_degc": 55.0, "z_c_w": 1.65}],
            "supply_layer": {"pipe_temps_degc": 85.0, "node_temps_degc": 85.0},
            "return_layer": {"pipe_temps_degc": 55.0, "node_temps_degc": 55.0}
        },
        "integrator": {"dt_s": 1.0, "t_end_s": 100.0, "record_every": 1}
    })
}

/// Two producers at node `a`: P1 with a scheduled outflow, P2 dependent.
pub fn two_tanks(q_st: f64) -> Value {
    let mut v = single_loop();
    v["name"] = "two-tanks".into();
    v["topology"]["producers"] = json!([{"id": "P1", "node": "a"}, {"id": "P2", "node": "a"}]);
    v["topology"]["dependent_tank"] = "P2".into();
    v["plant"]["producers"] = json!([
        {"v_p_m3": 1.0, "tank_capacity_m3": 1000.0},
        {"v_p_m3": 1.0, "tank_capacity_m3": 1000.0}
    ]);
    v["control"]["producers"] = json!([
        {"k_p_w_per_degc": 1e-3, "kappa_p_per_s": 1e-3, "t_p_set_degc": 85.0,
         "v_sh_set_m3": 850.0, "q_st_m3_per_s": q_st},
        {"k_p_w_per_degc": 1e-3, "kappa_p_per_s": 1e-3, "t_p_set_degc": 85.0, "v_sh_set_m3": 500.0}
    ]);
    v["loads"]["p_c_w"] = json!([3.0]);
    v["initial"]["producers"] = json!([
        {"t_p_degc": 85.0, "t_sh_degc": 85.0, "t_sc_degc": 55.0, "v_sh_m3": 100.0},
        {"t_p_degc": 85.0, "t_sh_degc": 85.0, "t_sc_degc": 55.0, "v_sh_m3": 500.0}
    ]);
    v["initial"]["consumers"] = json!([{"t_c_degc": 55.0, "z_c_w": 3.0}]);
    v
}

pub fn scenario(v: &Value) -> Scenario {
    parse_scenario(&v.to_string()).expect("test scenario is valid")
}

/// Largest `|a - b| / |b|`.
pub fn max_rel(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    pairs.map(|(a, b)| (a - b).abs() / b.abs()).fold(0.0, f64::max)
}
