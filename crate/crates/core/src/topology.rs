//! VNF-bearing network topologies.
//!
//! A [`Topology`] is an undirected, connected, simple graph with integer
//! millisecond delays on its edges and a list of deployed [`VnfInstance`]s.
//! Node ids are dense (`0..N`). Values are immutable once built; the
//! mutators in this module return fresh topologies.

use std::collections::VecDeque;
use std::fmt;
use std::fs;
use std::ops::RangeInclusive;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type NodeId = usize;
/// Milliseconds.
pub type Delay = u64;

/// Delay range used for freshly drawn edges (fixture and mutation alike).
pub const EDGE_DELAY_RANGE: RangeInclusive<Delay> = 1..=10;

/// Seed the bundled fixture was generated from.
pub const FIXTURE_SEED: u64 = 2020;

const FIXTURE_JSON: &str = include_str!("../data/internet2.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub u: NodeId,
    pub v: NodeId,
    pub delay: Delay,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VnfInstance {
    pub node: NodeId,
    pub vnf_type: usize,
    pub proc_delay: Delay,
}

/// A validated network topology.
#[derive(Clone, Debug)]
pub struct Topology {
    node_count: usize,
    edges: Vec<Edge>,
    instances: Vec<VnfInstance>,
    vnf_type_count: usize,
    // (neighbor, delay), sorted by neighbor
    adjacency: Vec<Vec<(NodeId, Delay)>>,
}

impl PartialEq for Topology {
    fn eq(&self, other: &Self) -> bool {
        self.node_count == other.node_count
            && self.edges == other.edges
            && self.instances == other.instances
            && self.vnf_type_count == other.vnf_type_count
    }
}

impl Eq for Topology {}

/// On-disk form: `{"nodes": N, "edges": [[u, v, d]], "instances": [[node, type, d]], "vnf_type_count": K}`.
#[derive(Debug, Serialize, Deserialize)]
struct TopologyDoc {
    nodes: usize,
    edges: Vec<(NodeId, NodeId, Delay)>,
    instances: Vec<(NodeId, usize, Delay)>,
    vnf_type_count: usize,
}

impl Topology {
    /// Builds and validates a topology.
    pub fn new(
        node_count: usize,
        edges: Vec<Edge>,
        instances: Vec<VnfInstance>,
        vnf_type_count: usize,
    ) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); node_count];
        for (i, e) in edges.iter().enumerate() {
            if e.u >= node_count || e.v >= node_count {
                return Err(Error::InvalidTopology(format!(
                    "edge #{i} ({}, {}) references a node outside 0..{node_count}",
                    e.u, e.v
                )));
            }
            if e.u == e.v {
                return Err(Error::InvalidTopology(format!(
                    "edge #{i} is a self-loop on node {}",
                    e.u
                )));
            }
            if e.delay == 0 {
                return Err(Error::InvalidTopology(format!(
                    "edge #{i} ({}, {}) has nonpositive delay",
                    e.u, e.v
                )));
            }
            if adjacency[e.u].iter().any(|&(n, _)| n == e.v) {
                return Err(Error::InvalidTopology(format!(
                    "edge #{i} ({}, {}) duplicates an earlier edge",
                    e.u, e.v
                )));
            }
            adjacency[e.u].push((e.v, e.delay));
            adjacency[e.v].push((e.u, e.delay));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        for (i, m) in instances.iter().enumerate() {
            if m.node >= node_count {
                return Err(Error::InvalidTopology(format!(
                    "instance #{i} is placed on missing node {}",
                    m.node
                )));
            }
            if m.vnf_type >= vnf_type_count {
                return Err(Error::InvalidTopology(format!(
                    "instance #{i} has type {} outside 0..{vnf_type_count}",
                    m.vnf_type
                )));
            }
            if m.proc_delay == 0 {
                return Err(Error::InvalidTopology(format!(
                    "instance #{i} has nonpositive processing delay"
                )));
            }
        }
        let topo = Topology {
            node_count,
            edges,
            instances,
            vnf_type_count,
            adjacency,
        };
        if node_count < 2 {
            return Err(Error::InvalidTopology(format!(
                "a topology needs at least 2 nodes, found {node_count}"
            )));
        }
        if let Some(unreached) = topo.first_unreachable() {
            return Err(Error::InvalidTopology(format!(
                "graph is disconnected: node {unreached} is unreachable from node 0"
            )));
        }
        Ok(topo)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn instances(&self) -> &[VnfInstance] {
        &self.instances
    }

    pub fn vnf_type_count(&self) -> usize {
        self.vnf_type_count
    }

    /// Neighbors of `u` with the connecting edge delay, sorted by id.
    pub fn neighbors(&self, u: NodeId) -> &[(NodeId, Delay)] {
        &self.adjacency[u]
    }

    pub fn degree(&self, u: NodeId) -> usize {
        self.adjacency[u].len()
    }

    pub fn edge_delay(&self, u: NodeId, v: NodeId) -> Option<Delay> {
        let list = self.adjacency.get(u)?;
        list.binary_search_by_key(&v, |&(n, _)| n)
            .ok()
            .map(|i| list[i].1)
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.edge_delay(u, v).is_some()
    }

    /// Index of the cheapest instance of `vnf_type` hosted at `node`
    /// (lowest index among equal delays).
    pub fn best_instance(&self, node: NodeId, vnf_type: usize) -> Option<usize> {
        self.instances
            .iter()
            .enumerate()
            .filter(|(_, m)| m.node == node && m.vnf_type == vnf_type)
            .min_by_key(|&(i, m)| (m.proc_delay, i))
            .map(|(i, _)| i)
    }

    pub fn hosts(&self, node: NodeId, vnf_type: usize) -> bool {
        self.instances
            .iter()
            .any(|m| m.node == node && m.vnf_type == vnf_type)
    }

    /// VNF types with at least one deployed instance, ascending.
    pub fn deployed_types(&self) -> Vec<usize> {
        let mut present = vec![false; self.vnf_type_count];
        for m in &self.instances {
            present[m.vnf_type] = true;
        }
        (0..self.vnf_type_count).filter(|&k| present[k]).collect()
    }

    pub fn is_connected(&self) -> bool {
        self.first_unreachable().is_none()
    }

    fn first_unreachable(&self) -> Option<NodeId> {
        first_unreachable(self.node_count, |u| {
            self.adjacency[u].iter().map(|&(v, _)| v)
        })
    }

    /// Dense symmetric 0/1 adjacency matrix with zero diagonal.
    pub fn adjacency_matrix(&self) -> Vec<Vec<u8>> {
        let mut a = vec![vec![0u8; self.node_count]; self.node_count];
        for e in &self.edges {
            a[e.u][e.v] = 1;
            a[e.v][e.u] = 1;
        }
        a
    }

    /// Copy with the instance list replaced.
    pub fn with_instances(&self, instances: Vec<VnfInstance>) -> Result<Topology> {
        Topology::new(
            self.node_count,
            self.edges.clone(),
            instances,
            self.vnf_type_count,
        )
    }

    pub fn to_document(&self) -> String {
        let doc = TopologyDoc {
            nodes: self.node_count,
            edges: self.edges.iter().map(|e| (e.u, e.v, e.delay)).collect(),
            instances: self
                .instances
                .iter()
                .map(|m| (m.node, m.vnf_type, m.proc_delay))
                .collect(),
            vnf_type_count: self.vnf_type_count,
        };
        let mut out = String::new();
        // One edge / instance per line keeps the files diffable.
        out.push_str("{\n");
        out.push_str(&format!("  \"nodes\": {},\n", doc.nodes));
        out.push_str("  \"edges\": [");
        push_triples(&mut out, &doc.edges);
        out.push_str("],\n  \"instances\": [");
        push_triples(&mut out, &doc.instances);
        out.push_str(&format!(
            "],\n  \"vnf_type_count\": {}\n}}\n",
            doc.vnf_type_count
        ));
        out
    }

    pub fn from_document(text: &str) -> Result<Topology> {
        let doc: TopologyDoc =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Topology::new(
            doc.nodes,
            doc.edges
                .into_iter()
                .map(|(u, v, delay)| Edge { u, v, delay })
                .collect(),
            doc.instances
                .into_iter()
                .map(|(node, vnf_type, proc_delay)| VnfInstance {
                    node,
                    vnf_type,
                    proc_delay,
                })
                .collect(),
            doc.vnf_type_count,
        )
    }

    /// SHA-256 of the serialized document, hex encoded.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_document().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn push_triples<A: fmt::Display, B: fmt::Display, C: fmt::Display>(
    out: &mut String,
    items: &[(A, B, C)],
) {
    for (i, (a, b, c)) in items.iter().enumerate() {
        out.push_str(if i == 0 { "\n    " } else { ",\n    " });
        out.push_str(&format!("[{a}, {b}, {c}]"));
    }
    if !items.is_empty() {
        out.push_str("\n  ");
    }
}

fn first_unreachable<F, I>(n: usize, neighbors: F) -> Option<NodeId>
where
    F: Fn(NodeId) -> I,
    I: Iterator<Item = NodeId>,
{
    if n == 0 {
        return None;
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for v in neighbors(u) {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen.iter().position(|s| !s)
}

pub fn load_topology(text: &str) -> Result<Topology> {
    Topology::from_document(text)
}

pub fn save_topology(t: &Topology) -> String {
    t.to_document()
}

pub fn read_topology_file(path: &Path) -> Result<Topology> {
    Topology::from_document(&fs::read_to_string(path)?)
}

pub fn write_topology_file(t: &Topology, path: &Path) -> Result<()> {
    fs::write(path, t.to_document())?;
    Ok(())
}

/// The bundled 12-node, 5-type stand-in for the `internet2` topology.
pub fn internet2_fixture() -> Topology {
    Topology::from_document(FIXTURE_JSON).expect("bundled fixture is valid")
}

/// Generator the bundled fixture was produced with: a random spanning tree
/// on 12 nodes plus extra edges up to 15, delays uniform in 1..=10, and two
/// instances of each of 5 types with processing delays in 1..=5.
pub fn generate_fixture(seed: u64) -> Topology {
    const NODES: usize = 12;
    const EDGES: usize = 15;
    const TYPES: usize = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<NodeId> = (0..NODES).collect();
    order.shuffle(&mut rng);
    let mut pairs: Vec<(NodeId, NodeId)> = Vec::new();
    for i in 1..NODES {
        let parent = order[rng.gen_range(0..i)];
        pairs.push(ordered(order[i], parent));
    }
    while pairs.len() < EDGES {
        let p = ordered(rng.gen_range(0..NODES), rng.gen_range(0..NODES));
        if p.0 != p.1 && !pairs.contains(&p) {
            pairs.push(p);
        }
    }
    pairs.sort_unstable();
    let edges = pairs
        .into_iter()
        .map(|(u, v)| Edge {
            u,
            v,
            delay: rng.gen_range(EDGE_DELAY_RANGE),
        })
        .collect();
    let bare = Topology::new(NODES, edges, Vec::new(), TYPES).expect("tree plus edges is connected");
    deploy_vnfs(&bare, 2, 1..=5, TYPES, &mut rng).expect("2 per type fits on 12 nodes")
}

fn ordered(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Places `per_type_count` instances of each of `vnf_types` types on
/// distinct uniformly chosen nodes, replacing any existing instances.
pub fn deploy_vnfs<R: Rng + ?Sized>(
    t: &Topology,
    per_type_count: usize,
    proc_delay_range: RangeInclusive<Delay>,
    vnf_types: usize,
    rng: &mut R,
) -> Result<Topology> {
    if *proc_delay_range.start() == 0 || proc_delay_range.start() > proc_delay_range.end() {
        return Err(Error::InvalidArgument(format!(
            "processing delay range {proc_delay_range:?} must be nonempty and positive"
        )));
    }
    if per_type_count > t.node_count {
        return Err(Error::InvalidArgument(format!(
            "cannot place {per_type_count} instances per type on distinct nodes of a {}-node graph",
            t.node_count
        )));
    }
    let nodes: Vec<NodeId> = (0..t.node_count).collect();
    let mut instances = Vec::with_capacity(per_type_count * vnf_types);
    for vnf_type in 0..vnf_types {
        let mut hosts: Vec<NodeId> = nodes
            .choose_multiple(rng, per_type_count)
            .copied()
            .collect();
        hosts.sort_unstable();
        for node in hosts {
            instances.push(VnfInstance {
                node,
                vnf_type,
                proc_delay: rng.gen_range(proc_delay_range.clone()),
            });
        }
    }
    Topology::new(t.node_count, t.edges.clone(), instances, vnf_types)
}

/// Trial counts and probabilities for random topology changes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MutationParams {
    pub node_add_prob: f64,
    pub node_add_trials: usize,
    pub edge_add_prob: f64,
    pub edge_add_trials: usize,
    pub edge_remove_prob: f64,
    pub edge_remove_trials: usize,
}

impl Default for MutationParams {
    fn default() -> Self {
        MutationParams {
            node_add_prob: 0.1,
            node_add_trials: 12,
            edge_add_prob: 0.3,
            edge_add_trials: 15,
            edge_remove_prob: 0.3,
            edge_remove_trials: 30,
        }
    }
}

impl MutationParams {
    pub fn zero() -> Self {
        MutationParams {
            node_add_prob: 0.0,
            node_add_trials: 0,
            edge_add_prob: 0.0,
            edge_add_trials: 0,
            edge_remove_prob: 0.0,
            edge_remove_trials: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("node_add_prob", self.node_add_prob),
            ("edge_add_prob", self.edge_add_prob),
            ("edge_remove_prob", self.edge_remove_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!(
                    "{name} = {p} is not a probability"
                )));
            }
        }
        Ok(())
    }
}

/// What a single mutation did. Trial counts are Bernoulli successes,
/// before any dismissal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MutationReport {
    pub nodes_added: usize,
    pub edge_add_trials_fired: usize,
    pub edges_added: usize,
    pub edge_remove_trials_fired: usize,
    pub edges_removed: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeStrategy {
    /// Add nodes and edges, remove edges; instances stay put.
    Cs1,
    /// CS1 followed by relocating every instance.
    Cs2,
}

impl fmt::Display for ChangeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChangeStrategy::Cs1 => "cs1",
            ChangeStrategy::Cs2 => "cs2",
        })
    }
}

impl FromStr for ChangeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cs1" => Ok(ChangeStrategy::Cs1),
            "cs2" => Ok(ChangeStrategy::Cs2),
            other => Err(Error::InvalidArgument(format!(
                "unknown change strategy `{other}` (expected cs1 or cs2)"
            ))),
        }
    }
}

pub fn mutate_cs1<R: Rng + ?Sized>(t: &Topology, rng: &mut R, p: &MutationParams) -> Topology {
    mutate_cs1_with_report(t, rng, p).0
}

pub fn mutate_cs1_with_report<R: Rng + ?Sized>(
    t: &Topology,
    rng: &mut R,
    p: &MutationParams,
) -> (Topology, MutationReport) {
    let mut report = MutationReport::default();
    let mut n = t.node_count;
    let mut adj: Vec<Vec<(NodeId, Delay)>> = t.adjacency.clone();
    // Existing edges keep their order; additions are appended.
    let mut edges: Vec<Edge> = t.edges.clone();

    for _ in 0..p.node_add_trials {
        if !rng.gen_bool(p.node_add_prob) {
            continue;
        }
        let mut ends = (0..n).collect::<Vec<_>>();
        ends.partial_shuffle(rng, 2);
        let new = n;
        adj.push(Vec::new());
        n += 1;
        for &other in &ends[..2] {
            let d = rng.gen_range(EDGE_DELAY_RANGE);
            adj[new].push((other, d));
            adj[other].push((new, d));
            edges.push(Edge { u: other, v: new, delay: d });
        }
        report.nodes_added += 1;
    }

    for _ in 0..p.edge_add_trials {
        if !rng.gen_bool(p.edge_add_prob) {
            continue;
        }
        report.edge_add_trials_fired += 1;
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u == v || adj[u].iter().any(|&(w, _)| w == v) {
            continue;
        }
        let d = rng.gen_range(EDGE_DELAY_RANGE);
        adj[u].push((v, d));
        adj[v].push((u, d));
        let (u, v) = ordered(u, v);
        edges.push(Edge { u, v, delay: d });
        report.edges_added += 1;
    }

    for _ in 0..p.edge_remove_trials {
        if !rng.gen_bool(p.edge_remove_prob) {
            continue;
        }
        report.edge_remove_trials_fired += 1;
        let idx = rng.gen_range(0..edges.len());
        let e = edges[idx];
        remove_undirected(&mut adj, e.u, e.v);
        let disconnected =
            first_unreachable(n, |u| adj[u].iter().map(|&(v, _)| v)).is_some();
        if disconnected {
            adj[e.u].push((e.v, e.delay));
            adj[e.v].push((e.u, e.delay));
        } else {
            edges.remove(idx);
            report.edges_removed += 1;
        }
    }

    let topo = Topology::new(n, edges, t.instances.clone(), t.vnf_type_count)
        .expect("mutation preserves topology invariants");
    (topo, report)
}

fn remove_undirected(adj: &mut [Vec<(NodeId, Delay)>], u: NodeId, v: NodeId) {
    adj[u].retain(|&(w, _)| w != v);
    adj[v].retain(|&(w, _)| w != u);
}

/// Moves every instance to a uniformly chosen node, keeping type and delay.
pub fn relocate_instances<R: Rng + ?Sized>(t: &Topology, rng: &mut R) -> Topology {
    let instances = t
        .instances
        .iter()
        .map(|m| VnfInstance {
            node: rng.gen_range(0..t.node_count),
            ..*m
        })
        .collect();
    t.with_instances(instances)
        .expect("relocation keeps instances on existing nodes")
}

pub fn mutate_cs2<R: Rng + ?Sized>(t: &Topology, rng: &mut R, p: &MutationParams) -> Topology {
    let changed = mutate_cs1(t, rng, p);
    relocate_instances(&changed, rng)
}

pub fn mutate<R: Rng + ?Sized>(
    t: &Topology,
    strategy: ChangeStrategy,
    rng: &mut R,
    p: &MutationParams,
) -> Topology {
    match strategy {
        ChangeStrategy::Cs1 => mutate_cs1(t, rng, p),
        ChangeStrategy::Cs2 => mutate_cs2(t, rng, p),
    }
}

/// Randomized variants of a base topology, drawn once before training or
/// testing.
#[derive(Clone, Debug, PartialEq)]
pub struct TopologyPool {
    pub base: Topology,
    pub variants: Vec<Topology>,
    pub strategy: ChangeStrategy,
    pub seed: u64,
}

pub const DEFAULT_POOL_SIZE: usize = 100;

pub fn generate_pool(
    base: &Topology,
    strategy: ChangeStrategy,
    pool_size: usize,
    seed: u64,
) -> Result<TopologyPool> {
    generate_pool_with(base, strategy, pool_size, seed, &MutationParams::default())
}

pub fn generate_pool_with(
    base: &Topology,
    strategy: ChangeStrategy,
    pool_size: usize,
    seed: u64,
    params: &MutationParams,
) -> Result<TopologyPool> {
    if pool_size == 0 {
        return Err(Error::InvalidArgument("pool size must be at least 1".into()));
    }
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let variants = (0..pool_size)
        .map(|_| mutate(base, strategy, &mut rng, params))
        .collect();
    Ok(TopologyPool {
        base: base.clone(),
        variants,
        strategy,
        seed,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct PoolManifest {
    base_hash: String,
    strategy: ChangeStrategy,
    seed: u64,
    count: usize,
    files: Vec<String>,
}

const BASE_FILE: &str = "base.json";
const MANIFEST_FILE: &str = "manifest.json";

impl TopologyPool {
    /// Writes `base.json`, `topo_000.json`... and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_topology_file(&self.base, &dir.join(BASE_FILE))?;
        let mut files = Vec::with_capacity(self.variants.len());
        for (i, t) in self.variants.iter().enumerate() {
            let name = format!("topo_{i:03}.json");
            write_topology_file(t, &dir.join(&name))?;
            files.push(name);
        }
        let manifest = PoolManifest {
            base_hash: self.base.content_hash(),
            strategy: self.strategy,
            seed: self.seed,
            count: self.variants.len(),
            files,
        };
        fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<TopologyPool> {
        let manifest: PoolManifest =
            serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        let base = read_topology_file(&dir.join(BASE_FILE))?;
        if base.content_hash() != manifest.base_hash {
            return Err(Error::Parse(format!(
                "pool base in {} does not match the manifest hash",
                dir.display()
            )));
        }
        let variants = manifest
            .files
            .iter()
            .map(|f| read_topology_file(&dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        if variants.len() != manifest.count {
            return Err(Error::Parse(format!(
                "manifest lists {} variants, count says {}",
                variants.len(),
                manifest.count
            )));
        }
        Ok(TopologyPool {
            base,
            variants,
            strategy: manifest.strategy,
            seed: manifest.seed,
        })
    }

    pub fn is_pool_dir(path: &Path) -> bool {
        path.join(MANIFEST_FILE).is_file()
    }
}
