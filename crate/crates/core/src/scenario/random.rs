//! Seeded generator of valid scenarios for property sweeps.
//!
//! Networks are random trees rooted at the dependent tank, with edges
//! oriented away from the root, plus a few chords. Tank outflows and chord
//! flows are bounded by a fraction of the smallest possible consumer demand
//! downstream of where they enter, so no tree edge ever reverses.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    ConsumerControl, ConsumerInitial, ConsumerPlant, ControlSection, EventSpec, InitialSection,
    IntegratorSection, LayerTemperatures, LayerVolumes, LoadSection, PerElement, PlantSection,
    ProducerControl, ProducerInitial, ProducerPlant, Scenario, ScenarioFile,
};
use crate::analysis::AnalysisConfig;
use crate::network::{DeviceSpec, EdgeSpec, TopologySpec};

/// Horizon of generated scenarios (s).
pub const RANDOM_HORIZON_S: f64 = 3000.0;
/// Step size of generated scenarios (s).
pub const RANDOM_DT_S: f64 = 0.5;

fn per_id(rng: &mut ChaCha8Rng, ids: &[String], lo: f64, hi: f64) -> PerElement {
    PerElement::ById(ids.iter().map(|id| (id.clone(), rng.random_range(lo..hi))).collect())
}

pub fn random_scenario_file(seed: u64) -> ScenarioFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_p = rng.random_range(1..=4usize);
    let n_c = rng.random_range(1..=9usize);
    let n_nodes = rng.random_range(2..=8usize);

    let node_ids: Vec<String> = (0..n_nodes).map(|j| format!("n{j}")).collect();
    let mut parent = vec![usize::MAX; n_nodes];
    let mut edges = Vec::new();
    for j in 1..n_nodes {
        parent[j] = rng.random_range(0..j);
        edges.push(EdgeSpec {
            id: format!("e{}", edges.len() + 1),
            tail: node_ids[parent[j]].clone(),
            head: node_ids[j].clone(),
        });
    }
    let in_subtree = |w: usize, mut v: usize| loop {
        if v == w {
            return true;
        }
        if v == 0 {
            return false;
        }
        v = parent[v];
    };

    let consumer_nodes: Vec<usize> = (0..n_c).map(|_| rng.random_range(0..n_nodes)).collect();
    let mut producer_nodes = vec![0];
    producer_nodes.extend((1..n_p).map(|_| rng.random_range(0..n_nodes)));

    // Setpoints with the required margin.
    let epsilon = rng.random_range(0.5..2.0);
    let t_c_set: Vec<f64> = (0..n_c).map(|_| rng.random_range(40.0..60.0)).collect();
    let t_c_max = t_c_set.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let t_p_set: Vec<f64> = (0..n_p)
        .map(|_| t_c_max + epsilon + rng.random_range(5.0..25.0))
        .collect();
    let t_p_min = t_p_set.iter().copied().fold(f64::INFINITY, f64::min);
    let phi = t_p_min - t_c_max - epsilon;

    let near = |rng: &mut ChaCha8Rng, x: f64| x + rng.random_range(-0.5..0.5) * phi;
    let t_p0: Vec<f64> = t_p_set.iter().map(|&x| near(&mut rng, x)).collect();
    let t_sh0: Vec<f64> = t_p_set.iter().map(|&x| near(&mut rng, x)).collect();
    let supply_lo = t_c_max + epsilon + 0.5 * phi;
    let supply_hi = t_p_min + 0.5 * phi;

    // Loads, their step at the event, and the initial estimates.
    let p_c: Vec<f64> = (0..n_c).map(|_| rng.random_range(0.2..2.0)).collect();
    let p_c_event: Vec<f64> = p_c.iter().map(|&p| p * rng.random_range(0.8..1.2)).collect();
    let z_c0: Vec<f64> = p_c.iter().map(|&p| p * rng.random_range(0.5..1.5)).collect();

    // Hottest temperature any supply element can reach (maximum principle).
    let t_hi = t_p0
        .iter()
        .chain(&t_sh0)
        .chain(&t_p_set)
        .copied()
        .fold(supply_hi, f64::max);
    let q_c_min: Vec<f64> = (0..n_c)
        .map(|i| {
            let z_min = z_c0[i].min(p_c[i]).min(p_c_event[i]);
            z_min / (t_hi - t_c_set[i])
        })
        .collect();
    let demand_below = |w: usize| -> f64 {
        (0..n_c)
            .filter(|&i| in_subtree(w, consumer_nodes[i]))
            .map(|i| q_c_min[i])
            .sum()
    };

    let mut chords = Vec::new();
    if n_nodes >= 3 {
        for _ in 0..rng.random_range(0..=2usize) {
            let u = rng.random_range(0..n_nodes);
            let v = rng.random_range(0..n_nodes);
            let joined = edges.iter().any(|e| {
                (e.tail == node_ids[u] && e.head == node_ids[v])
                    || (e.tail == node_ids[v] && e.head == node_ids[u])
            });
            if u == v || joined {
                continue;
            }
            let id = format!("e{}", edges.len() + 1);
            edges.push(EdgeSpec {
                id: id.clone(),
                tail: node_ids[u].clone(),
                head: node_ids[v].clone(),
            });
            chords.push((id, v));
        }
    }
    let edge_ids: Vec<String> = edges.iter().map(|e| e.id.clone()).collect();

    let injections = (n_p - 1 + chords.len()).max(1) as f64;
    let budget = |w: usize| 0.5 * demand_below(w) / injections;
    let q_st: Vec<f64> = (0..n_p)
        .map(|i| {
            if i == 0 || rng.random_bool(0.1) {
                0.0
            } else {
                budget(producer_nodes[i]) * rng.random_range(0.2..1.0)
            }
        })
        .collect();
    let chord_flows: BTreeMap<String, f64> = chords
        .iter()
        .map(|(id, v)| (id.clone(), budget(*v) * rng.random_range(0.0..1.0)))
        .collect();

    let capacity: Vec<f64> = (0..n_p).map(|_| rng.random_range(200.0..1000.0)).collect();
    let vol = |rng: &mut ChaCha8Rng, cap: f64| cap * rng.random_range(0.1..0.9);
    let v_sh0: Vec<f64> = capacity.iter().map(|&c| vol(&mut rng, c)).collect();
    let v_set: Vec<f64> = capacity.iter().map(|&c| vol(&mut rng, c)).collect();
    let v_set_event: Vec<f64> = capacity.iter().map(|&c| vol(&mut rng, c)).collect();

    let producers_ctl = (0..n_p)
        .map(|i| ProducerControl {
            k_p_w_per_degc: rng.random_range(5e-4..5e-3),
            kappa_p_per_s: rng.random_range(5e-4..2e-3),
            t_p_set_degc: t_p_set[i],
            v_sh_set_m3: v_set[i],
            q_st_m3_per_s: q_st[i],
            q_p_max_m3_per_s: None,
            p_p_max_w: None,
        })
        .collect();

    ScenarioFile {
        name: format!("random-{seed}"),
        description: Some("generated by the property sweep".into()),
        topology: TopologySpec {
            nodes: node_ids.clone(),
            edges,
            producers: producer_nodes
                .iter()
                .enumerate()
                .map(|(i, &j)| DeviceSpec {
                    id: format!("P{}", i + 1),
                    node: node_ids[j].clone(),
                })
                .collect(),
            consumers: consumer_nodes
                .iter()
                .enumerate()
                .map(|(i, &j)| DeviceSpec {
                    id: format!("C{}", i + 1),
                    node: node_ids[j].clone(),
                })
                .collect(),
            chords: chords.iter().map(|(id, _)| id.clone()).collect(),
            dependent_tank: "P1".into(),
        },
        plant: PlantSection {
            rho_c_j_per_m3_degc: 1.0,
            producers: capacity
                .iter()
                .map(|&c| ProducerPlant {
                    v_p_m3: rng.random_range(1.0..3.0),
                    tank_capacity_m3: c,
                })
                .collect(),
            consumers: (0..n_c)
                .map(|_| ConsumerPlant {
                    v_c_m3: rng.random_range(1.0..3.0),
                })
                .collect(),
            supply_layer: LayerVolumes {
                pipe_volumes_m3: per_id(&mut rng, &edge_ids, 2.0, 20.0),
                node_volumes_m3: per_id(&mut rng, &node_ids, 1.0, 5.0),
            },
            return_layer: LayerVolumes {
                pipe_volumes_m3: per_id(&mut rng, &edge_ids, 2.0, 20.0),
                node_volumes_m3: per_id(&mut rng, &node_ids, 1.0, 5.0),
            },
        },
        control: ControlSection {
            epsilon_degc: epsilon,
            storage_policy: "schedule".into(),
            producers: producers_ctl,
            consumers: t_c_set
                .iter()
                .map(|&t| ConsumerControl {
                    t_c_set_degc: t,
                    q_c_max_m3_per_s: None,
                })
                .collect(),
            chord_flows_m3_per_s: chord_flows,
        },
        loads: LoadSection { p_c_w: p_c },
        initial: InitialSection {
            producers: (0..n_p)
                .map(|i| ProducerInitial {
                    t_p_degc: t_p0[i],
                    t_sh_degc: t_sh0[i],
                    t_sc_degc: rng.random_range(30.0..70.0),
                    v_sh_m3: v_sh0[i],
                })
                .collect(),
            consumers: (0..n_c)
                .map(|i| ConsumerInitial {
                    t_c_degc: t_c_set[i] + rng.random_range(-10.0..10.0),
                    z_c_w: z_c0[i],
                })
                .collect(),
            supply_layer: LayerTemperatures {
                pipe_temps_degc: per_id(&mut rng, &edge_ids, supply_lo, supply_hi),
                node_temps_degc: per_id(&mut rng, &node_ids, supply_lo, supply_hi),
            },
            return_layer: LayerTemperatures {
                pipe_temps_degc: per_id(&mut rng, &edge_ids, 30.0, 70.0),
                node_temps_degc: per_id(&mut rng, &node_ids, 30.0, 70.0),
            },
        },
        events: vec![EventSpec {
            t_s: (RANDOM_HORIZON_S * rng.random_range(0.3..0.6)).round(),
            v_sh_set_m3: Some(v_set_event),
            p_c_w: Some(p_c_event),
            ..Default::default()
        }],
        integrator: IntegratorSection {
            dt_s: RANDOM_DT_S,
            t_end_s: RANDOM_HORIZON_S,
            record_every: 2,
            saturation: false,
        },
        analysis: AnalysisConfig::default(),
    }
}

/// A validated random scenario. Generation never produces an invalid file.
pub fn random_scenario(seed: u64) -> Scenario {
    random_scenario_file(seed)
        .validate()
        .unwrap_or_else(|e| panic!("generator produced an invalid scenario for seed {seed}: {e}"))
}
