//! Two-layer distribution graph and flow resolution.
//!
//! The supply layer is described explicitly; the return layer is its mirror
//! image. Node `j` of the supply layer has return twin `j` in the return layer,
//! and every supply pipe `tail -> head` has a return pipe carrying the same
//! flow in the opposite direction (`head' -> tail'`), so that both layers
//! balance with the same non-negative edge flows.
//!
//! Dependent flows follow from the node mass balance. Independent inputs are
//! the producer and consumer flows, every tank outflow except the dependent
//! one, and the flows through chords (edges outside the spanning tree). Tree
//! edge flows are recovered by eliminating leaves of the spanning tree.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Declarative description of a network, as found in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub nodes: Vec<String>,
    pub edges: Vec<EdgeSpec>,
    pub producers: Vec<DeviceSpec>,
    pub consumers: Vec<DeviceSpec>,
    #[serde(default)]
    pub chords: Vec<String>,
    /// Id of the producer whose tank outflow is resolved from the balance.
    pub dependent_tank: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub id: String,
    pub tail: String,
    pub head: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub id: String,
    pub node: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("network has no nodes")]
    Empty,
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("duplicate edge id `{0}`")]
    DuplicateEdge(String),
    #[error("edge `{edge}` references unknown node `{node}`")]
    UnknownNode { edge: String, node: String },
    #[error("edge `{0}` is a self-loop")]
    SelfLoop(String),
    #[error("supply graph is disconnected: node `{0}` is unreachable")]
    Disconnected(String),
    #[error("device `{0}` is attached more than once")]
    DuplicateAttachment(String),
    #[error("device `{device}` attaches to unknown node `{node}`")]
    UnknownAttachment { device: String, node: String },
    #[error("at least one producer is required")]
    NoProducers,
    #[error("chord `{0}` is not an edge of the network")]
    UnknownChord(String),
    #[error("chord set is not the co-tree of a spanning tree: {0}")]
    InvalidCotree(String),
    #[error("dependent tank `{0}` is not a producer")]
    MissingDependentTank(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("expected {expected} {what} values, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("independent {what} flow {index} is negative or not finite ({value})")]
    NegativeIndependent {
        what: &'static str,
        index: usize,
        value: f64,
    },
    #[error("dependent tank {tank} outflow resolved to {value} < 0")]
    DependentTankNegative { tank: usize, value: f64 },
    #[error("tree edge `{edge}` flow resolved to {value} < 0 (flow reversal)")]
    FlowReversal { edge: String, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    Supply,
    Return,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: String,
    pub tail: usize,
    pub head: usize,
}

/// One step of leaf elimination: `node` is a leaf of the remaining tree and
/// `edge` connects it to `parent`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Elimination {
    node: usize,
    edge: usize,
    parent: usize,
}

/// Validated network. Indices are dense: nodes `0..n_nodes()`, edges
/// `0..n_edges()`, producers (and their tanks) `0..n_producers()`, consumers
/// `0..n_consumers()`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    spec: TopologySpec,
    node_ids: Vec<String>,
    edges: Vec<Edge>,
    producer_nodes: Vec<usize>,
    consumer_nodes: Vec<usize>,
    chords: Vec<usize>,
    is_chord: Vec<bool>,
    dependent_tank: usize,
    root: usize,
    elimination: Vec<Elimination>,
    in_edges: Vec<Vec<usize>>,
    out_edges: Vec<Vec<usize>>,
    node_producers: Vec<Vec<usize>>,
    node_consumers: Vec<Vec<usize>>,
}

pub fn build_topology(spec: &TopologySpec) -> Result<NetworkTopology, TopologyError> {
    if spec.nodes.is_empty() {
        return Err(TopologyError::Empty);
    }
    let mut node_index = HashMap::new();
    for (k, id) in spec.nodes.iter().enumerate() {
        if node_index.insert(id.as_str(), k).is_some() {
            return Err(TopologyError::DuplicateNode(id.clone()));
        }
    }
    let n = spec.nodes.len();

    let mut edge_index = HashMap::new();
    let mut edges = Vec::with_capacity(spec.edges.len());
    for (k, e) in spec.edges.iter().enumerate() {
        if edge_index.insert(e.id.as_str(), k).is_some() {
            return Err(TopologyError::DuplicateEdge(e.id.clone()));
        }
        let lookup = |name: &String| {
            node_index
                .get(name.as_str())
                .copied()
                .ok_or_else(|| TopologyError::UnknownNode {
                    edge: e.id.clone(),
                    node: name.clone(),
                })
        };
        let tail = lookup(&e.tail)?;
        let head = lookup(&e.head)?;
        if tail == head {
            return Err(TopologyError::SelfLoop(e.id.clone()));
        }
        edges.push(Edge {
            id: e.id.clone(),
            tail,
            head,
        });
    }

    // Connectivity of the whole (undirected) supply graph.
    let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, e) in edges.iter().enumerate() {
        adjacency[e.tail].push((e.head, k));
        adjacency[e.head].push((e.tail, k));
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &(w, _) in &adjacency[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(TopologyError::Disconnected(spec.nodes[k].clone()));
    }

    let attach = |devices: &[DeviceSpec]| -> Result<(Vec<String>, Vec<usize>), TopologyError> {
        let mut ids = HashSet::new();
        let mut nodes = Vec::with_capacity(devices.len());
        for d in devices {
            if !ids.insert(d.id.as_str()) {
                return Err(TopologyError::DuplicateAttachment(d.id.clone()));
            }
            let node = node_index.get(d.node.as_str()).copied().ok_or_else(|| {
                TopologyError::UnknownAttachment {
                    device: d.id.clone(),
                    node: d.node.clone(),
                }
            })?;
            nodes.push(node);
        }
        Ok((devices.iter().map(|d| d.id.clone()).collect(), nodes))
    };
    let (producer_ids, producer_nodes) = attach(&spec.producers)?;
    let (consumer_ids, consumer_nodes) = attach(&spec.consumers)?;
    if producer_nodes.is_empty() {
        return Err(TopologyError::NoProducers);
    }
    if let Some(id) = producer_ids.iter().find(|id| consumer_ids.contains(id)) {
        return Err(TopologyError::DuplicateAttachment(id.clone()));
    }
    let dependent_tank = producer_ids
        .iter()
        .position(|id| *id == spec.dependent_tank)
        .ok_or_else(|| TopologyError::MissingDependentTank(spec.dependent_tank.clone()))?;

    let mut is_chord = vec![false; edges.len()];
    let mut chords = Vec::with_capacity(spec.chords.len());
    for c in &spec.chords {
        let k = *edge_index
            .get(c.as_str())
            .ok_or_else(|| TopologyError::UnknownChord(c.clone()))?;
        if is_chord[k] {
            return Err(TopologyError::InvalidCotree(format!("chord `{c}` listed twice")));
        }
        is_chord[k] = true;
        chords.push(k);
    }
    let tree_edges = edges.len() - chords.len();
    if tree_edges != n - 1 {
        return Err(TopologyError::InvalidCotree(format!(
            "{tree_edges} non-chord edges for {n} nodes, a spanning tree needs {}",
            n - 1
        )));
    }

    // Spanning tree rooted at the dependent tank's node; BFS order reversed
    // gives a leaf-first elimination sequence.
    let root = producer_nodes[dependent_tank];
    let mut parent_edge: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = std::collections::VecDeque::from([root]);
    visited[root] = true;
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &(w, k) in &adjacency[v] {
            if is_chord[k] {
                continue;
            }
            if visited[w] {
                if parent_edge[v].map(|(_, pk)| pk) != Some(k) {
                    return Err(TopologyError::InvalidCotree(format!(
                        "non-chord edge `{}` closes a cycle",
                        edges[k].id
                    )));
                }
                continue;
            }
            visited[w] = true;
            parent_edge[w] = Some((v, k));
            queue.push_back(w);
        }
    }
    if let Some(k) = visited.iter().position(|s| !s) {
        return Err(TopologyError::InvalidCotree(format!(
            "node `{}` is not spanned by the non-chord edges",
            spec.nodes[k]
        )));
    }
    let elimination = order
        .iter()
        .rev()
        .filter_map(|&v| {
            parent_edge[v].map(|(parent, edge)| Elimination {
                node: v,
                edge,
                parent,
            })
        })
        .collect();

    let mut in_edges = vec![Vec::new(); n];
    let mut out_edges = vec![Vec::new(); n];
    for (k, e) in edges.iter().enumerate() {
        out_edges[e.tail].push(k);
        in_edges[e.head].push(k);
    }
    let mut node_producers = vec![Vec::new(); n];
    for (i, &j) in producer_nodes.iter().enumerate() {
        node_producers[j].push(i);
    }
    let mut node_consumers = vec![Vec::new(); n];
    for (i, &j) in consumer_nodes.iter().enumerate() {
        node_consumers[j].push(i);
    }

    Ok(NetworkTopology {
        spec: spec.clone(),
        node_ids: spec.nodes.clone(),
        edges,
        producer_nodes,
        consumer_nodes,
        chords,
        is_chord,
        dependent_tank,
        root,
        elimination,
        in_edges,
        out_edges,
        node_producers,
        node_consumers,
    })
}

impl NetworkTopology {
    pub fn spec(&self) -> &TopologySpec {
        &self.spec
    }

    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_producers(&self) -> usize {
        self.producer_nodes.len()
    }

    pub fn n_consumers(&self) -> usize {
        self.consumer_nodes.len()
    }

    pub fn node_id(&self, j: usize) -> &str {
        &self.node_ids[j]
    }

    pub fn edge(&self, k: usize) -> &Edge {
        &self.edges[k]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.node_ids.iter().position(|n| n == id)
    }

    pub fn edge_index(&self, id: &str) -> Option<usize> {
        self.edges.iter().position(|e| e.id == id)
    }

    pub fn producer_id(&self, i: usize) -> &str {
        &self.spec.producers[i].id
    }

    pub fn consumer_id(&self, i: usize) -> &str {
        &self.spec.consumers[i].id
    }

    /// Supply node receiving tank `i`'s hot outflow (α_{i,j} = 1).
    pub fn producer_node(&self, i: usize) -> usize {
        self.producer_nodes[i]
    }

    /// Supply node feeding consumer `i` (β_{i,j} = 1).
    pub fn consumer_node(&self, i: usize) -> usize {
        self.consumer_nodes[i]
    }

    /// γ_dn: the return twin of supply node `j`.
    pub fn return_twin(&self, j: usize) -> usize {
        j
    }

    pub fn dependent_tank(&self) -> usize {
        self.dependent_tank
    }

    pub fn chords(&self) -> &[usize] {
        &self.chords
    }

    pub fn is_chord(&self, k: usize) -> bool {
        self.is_chord[k]
    }

    pub fn tree_root(&self) -> usize {
        self.root
    }

    /// Node the stream through edge `k` sources from, in the given layer.
    pub fn upstream(&self, layer: Layer, k: usize) -> usize {
        match layer {
            Layer::Supply => self.edges[k].tail,
            Layer::Return => self.return_twin(self.edges[k].head),
        }
    }

    /// Node the stream through edge `k` discharges into, in the given layer.
    pub fn downstream(&self, layer: Layer, k: usize) -> usize {
        match layer {
            Layer::Supply => self.edges[k].head,
            Layer::Return => self.return_twin(self.edges[k].tail),
        }
    }

    /// Edges whose stream enters node `j` of the given layer.
    pub fn inflow_edges(&self, layer: Layer, j: usize) -> &[usize] {
        match layer {
            Layer::Supply => &self.in_edges[j],
            Layer::Return => &self.out_edges[j],
        }
    }

    /// Edges whose stream leaves node `j` of the given layer.
    pub fn outflow_edges(&self, layer: Layer, j: usize) -> &[usize] {
        match layer {
            Layer::Supply => &self.out_edges[j],
            Layer::Return => &self.in_edges[j],
        }
    }

    pub fn producers_at(&self, j: usize) -> &[usize] {
        &self.node_producers[j]
    }

    pub fn consumers_at(&self, j: usize) -> &[usize] {
        &self.node_consumers[j]
    }

    /// Nodes in the spanning-tree subtree below `j` (inclusive), rooted at the
    /// dependent tank's node.
    pub fn subtree(&self, j: usize) -> Vec<usize> {
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); self.n_nodes()];
        for el in &self.elimination {
            children[el.parent].push(el.node);
        }
        let mut out = vec![j];
        let mut k = 0;
        while k < out.len() {
            out.extend_from_slice(&children[out[k]]);
            k += 1;
        }
        out
    }
}

/// The independent flow variables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IndependentFlows {
    pub q_p: Vec<f64>,
    pub q_c: Vec<f64>,
    /// One entry per tank; the dependent tank's entry is ignored.
    pub q_st: Vec<f64>,
    /// One entry per chord, in `NetworkTopology::chords()` order.
    pub q_chord: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FlowAssignment {
    pub q_p: Vec<f64>,
    pub q_st: Vec<f64>,
    pub q_c: Vec<f64>,
    pub q_s: Vec<f64>,
    pub q_r: Vec<f64>,
}

fn check_independent(what: &'static str, values: &[f64], expected: usize) -> Result<(), FlowError> {
    if values.len() != expected {
        return Err(FlowError::Length {
            what,
            expected,
            got: values.len(),
        });
    }
    for (index, &value) in values.iter().enumerate() {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(FlowError::NegativeIndependent { what, index, value });
        }
    }
    Ok(())
}

pub fn resolve_flows(
    topology: &NetworkTopology,
    independent: &IndependentFlows,
) -> Result<FlowAssignment, FlowError> {
    let n_p = topology.n_producers();
    check_independent("producer", &independent.q_p, n_p)?;
    check_independent("consumer", &independent.q_c, topology.n_consumers())?;
    check_independent("chord", &independent.q_chord, topology.chords.len())?;
    if independent.q_st.len() != n_p {
        return Err(FlowError::Length {
            what: "tank",
            expected: n_p,
            got: independent.q_st.len(),
        });
    }
    let m = topology.dependent_tank;
    for (index, &value) in independent.q_st.iter().enumerate() {
        if index != m && (!(value >= 0.0) || !value.is_finite()) {
            return Err(FlowError::NegativeIndependent {
                what: "tank",
                index,
                value,
            });
        }
    }

    let mut q_st = independent.q_st.clone();
    let demand: f64 = independent.q_c.iter().sum();
    let others: f64 = q_st
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != m)
        .map(|(_, q)| q)
        .sum();
    q_st[m] = demand - others;
    if q_st[m] < 0.0 {
        return Err(FlowError::DependentTankNegative {
            tank: m,
            value: q_st[m],
        });
    }

    // Net injection into each supply node from everything but tree edges.
    let mut net = vec![0.0; topology.n_nodes()];
    for (i, &j) in topology.producer_nodes.iter().enumerate() {
        net[j] += q_st[i];
    }
    for (i, &j) in topology.consumer_nodes.iter().enumerate() {
        net[j] -= independent.q_c[i];
    }
    let mut q_s = vec![0.0; topology.n_edges()];
    for (c, &k) in topology.chords.iter().enumerate() {
        let e = &topology.edges[k];
        q_s[k] = independent.q_chord[c];
        net[e.tail] -= q_s[k];
        net[e.head] += q_s[k];
    }
    for el in &topology.elimination {
        let e = &topology.edges[el.edge];
        let q = if e.tail == el.node {
            net[el.node]
        } else {
            -net[el.node]
        };
        if q < 0.0 {
            return Err(FlowError::FlowReversal {
                edge: e.id.clone(),
                value: q,
            });
        }
        q_s[el.edge] = q;
        net[el.parent] += net[el.node];
    }

    Ok(FlowAssignment {
        q_p: independent.q_p.clone(),
        q_st,
        q_c: independent.q_c.clone(),
        q_r: q_s.clone(),
        q_s,
    })
}

/// Largest absolute node mass-balance residual over both layers.
pub fn max_balance_residual(topology: &NetworkTopology, flows: &FlowAssignment) -> f64 {
    let mut worst: f64 = 0.0;
    for (layer, q) in [(Layer::Supply, &flows.q_s), (Layer::Return, &flows.q_r)] {
        for j in 0..topology.n_nodes() {
            let mut r: f64 = topology.inflow_edges(layer, j).iter().map(|&k| q[k]).sum::<f64>()
                - topology.outflow_edges(layer, j).iter().map(|&k| q[k]).sum::<f64>();
            let tanks: f64 = topology.producers_at(j).iter().map(|&i| flows.q_st[i]).sum();
            let cons: f64 = topology.consumers_at(j).iter().map(|&i| flows.q_c[i]).sum();
            match layer {
                Layer::Supply => r += tanks - cons,
                Layer::Return => r += cons - tanks,
            }
            worst = worst.max(r.abs());
        }
    }
    worst
}
