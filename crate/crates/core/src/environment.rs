//! Episode semantics for SFC path generation.
//!
//! An episode walks from the request's source along edges. Each action
//! moves to a neighbor and may process the top-priority VNF type at that
//! neighbor. The walk succeeds once the whole chain has been processed in
//! order and the walk stands on the destination; it fails when the step
//! budget runs out first.

use std::fmt;
use std::fs;
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{Delay, NodeId, Topology};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SfcRequest {
    pub source: NodeId,
    pub destination: NodeId,
    /// Ordered VNF types to process.
    pub chain: Vec<usize>,
}

impl SfcRequest {
    pub fn new(source: NodeId, destination: NodeId, chain: Vec<usize>) -> Self {
        SfcRequest {
            source,
            destination,
            chain,
        }
    }

    pub fn validate(&self, t: &Topology) -> Result<()> {
        if self.chain.is_empty() {
            return Err(Error::InvalidRequest("chain must not be empty".into()));
        }
        self.validate_references(t)
    }

    /// Like [`SfcRequest::validate`] but tolerates an empty chain.
    pub(crate) fn validate_references(&self, t: &Topology) -> Result<()> {
        let n = t.node_count();
        if self.source >= n {
            return Err(Error::InvalidRequest(format!(
                "source {} is not a node of a {n}-node topology",
                self.source
            )));
        }
        if self.destination >= n {
            return Err(Error::InvalidRequest(format!(
                "destination {} is not a node of a {n}-node topology",
                self.destination
            )));
        }
        if let Some(&k) = self.chain.iter().find(|&&k| k >= t.vnf_type_count()) {
            return Err(Error::InvalidRequest(format!(
                "chain type {k} is outside 0..{}",
                t.vnf_type_count()
            )));
        }
        Ok(())
    }

    /// Default step budget: `3·N + 2·chain length`.
    pub fn default_max_steps(&self, t: &Topology) -> usize {
        default_max_steps(t.node_count(), self.chain.len())
    }
}

pub fn default_max_steps(node_count: usize, chain_len: usize) -> usize {
    3 * node_count + 2 * chain_len
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action {
    pub next_node: NodeId,
    /// Process the top-priority VNF at `next_node`.
    pub process: bool,
}

impl Action {
    pub fn go(next_node: NodeId) -> Self {
        Action {
            next_node,
            process: false,
        }
    }

    pub fn process_at(next_node: NodeId) -> Self {
        Action {
            next_node,
            process: true,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.process {
            write!(f, "{}*", self.next_node)
        } else {
            write!(f, "{}", self.next_node)
        }
    }
}

/// Edge and instance usage of a walk. Edges are stored in traversal order,
/// oriented as walked, with multiplicity.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathResult {
    pub edge_uses: Vec<(NodeId, NodeId)>,
    /// Indices into [`Topology::instances`].
    pub instance_uses: Vec<usize>,
    pub total_delay: Delay,
    pub success: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub success_base: f64,
    pub lambda: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            success_base: 10000.0,
            lambda: 0.0,
        }
    }
}

impl RewardConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        RewardConfig {
            lambda,
            ..Default::default()
        }
    }

    pub fn success_reward(&self, total_delay: Delay) -> f64 {
        self.success_base - self.lambda * total_delay as f64
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnvState {
    pub current_node: NodeId,
    /// Number of chain entries already processed.
    pub chain_index: usize,
    pub steps_taken: usize,
    pub path: PathResult,
    pub done: bool,
}

/// Result of one [`Environment::step`].
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
    /// Delay accrued by this step alone.
    pub step_delay: Delay,
}

/// One request on one topology, with its reward and budget settings.
#[derive(Clone, Debug)]
pub struct Environment<'t> {
    topology: &'t Topology,
    request: SfcRequest,
    reward: RewardConfig,
    max_steps: usize,
}

impl<'t> Environment<'t> {
    pub fn new(
        topology: &'t Topology,
        request: SfcRequest,
        reward: RewardConfig,
        max_steps: usize,
    ) -> Result<Self> {
        request.validate(topology)?;
        Ok(Environment {
            topology,
            request,
            reward,
            max_steps,
        })
    }

    /// Environment with the default step budget.
    pub fn with_default_budget(
        topology: &'t Topology,
        request: SfcRequest,
        reward: RewardConfig,
    ) -> Result<Self> {
        let max_steps = request.default_max_steps(topology);
        Environment::new(topology, request, reward, max_steps)
    }

    pub fn topology(&self) -> &'t Topology {
        self.topology
    }

    pub fn request(&self) -> &SfcRequest {
        &self.request
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }

    pub fn reset(&self) -> EnvState {
        EnvState {
            current_node: self.request.source,
            chain_index: 0,
            steps_taken: 0,
            path: PathResult::default(),
            done: false,
        }
    }

    /// The top-priority VNF type, if any remain.
    pub fn v_now(&self, s: &EnvState) -> Option<usize> {
        self.request.chain.get(s.chain_index).copied()
    }

    pub fn valid_actions(&self, s: &EnvState) -> Result<Vec<Action>> {
        if s.done {
            return Err(Error::EpisodeDone);
        }
        let v_now = self.v_now(s);
        let mut actions = Vec::with_capacity(2 * self.topology.degree(s.current_node));
        for &(v, _) in self.topology.neighbors(s.current_node) {
            actions.push(Action::go(v));
            if v_now.is_some_and(|k| self.topology.hosts(v, k)) {
                actions.push(Action::process_at(v));
            }
        }
        Ok(actions)
    }

    pub fn is_valid(&self, s: &EnvState, a: Action) -> bool {
        if s.done || !self.topology.has_edge(s.current_node, a.next_node) {
            return false;
        }
        !a.process || self.v_now(s).is_some_and(|k| self.topology.hosts(a.next_node, k))
    }

    pub fn step(&self, s: &EnvState, a: Action) -> Result<Transition> {
        if s.done {
            return Err(Error::EpisodeDone);
        }
        if !self.is_valid(s, a) {
            return Err(Error::InvalidAction {
                node: s.current_node,
                action: a.to_string(),
            });
        }
        let mut next = s.clone();
        let edge_delay = self
            .topology
            .edge_delay(s.current_node, a.next_node)
            .expect("validated edge");
        let mut step_delay = edge_delay;
        next.path.edge_uses.push((s.current_node, a.next_node));
        next.current_node = a.next_node;
        if a.process {
            let k = self.request.chain[s.chain_index];
            let m = self
                .topology
                .best_instance(a.next_node, k)
                .expect("validated instance");
            step_delay += self.topology.instances()[m].proc_delay;
            next.path.instance_uses.push(m);
            next.chain_index += 1;
        }
        next.path.total_delay += step_delay;
        next.steps_taken += 1;

        let success = next.current_node == self.request.destination
            && next.chain_index == self.request.chain.len();
        let reward = if success {
            next.path.success = true;
            next.done = true;
            self.reward.success_reward(next.path.total_delay)
        } else {
            next.done = next.steps_taken >= self.max_steps;
            0.0
        };
        let done = next.done;
        Ok(Transition {
            state: next,
            reward,
            done,
            step_delay,
        })
    }

    /// Applies a fixed action sequence from reset, stopping early if the
    /// episode ends.
    pub fn replay(&self, actions: &[Action]) -> Result<EnvState> {
        let mut s = self.reset();
        for &a in actions {
            if s.done {
                break;
            }
            s = self.step(&s, a)?.state;
        }
        Ok(s)
    }
}

/// End-to-end delay of a path: edge delays with multiplicity plus
/// processed instance delays.
pub fn total_delay(p: &PathResult, t: &Topology) -> Result<Delay> {
    let mut sum = 0;
    for &(u, v) in &p.edge_uses {
        sum += t.edge_delay(u, v).ok_or_else(|| {
            Error::InvalidArgument(format!("path uses missing edge ({u}, {v})"))
        })?;
    }
    for &m in &p.instance_uses {
        sum += t
            .instances()
            .get(m)
            .ok_or_else(|| Error::InvalidArgument(format!("path uses missing instance #{m}")))?
            .proc_delay;
    }
    Ok(sum)
}

pub const DEFAULT_CHAIN_LEN: RangeInclusive<usize> = 1..=4;

/// Uniform requests over distinct (source, destination) pairs with chain
/// types drawn from the types deployed in `t`.
pub fn generate_requests<R: Rng + ?Sized>(
    t: &Topology,
    count: usize,
    chain_len: RangeInclusive<usize>,
    rng: &mut R,
) -> Result<Vec<SfcRequest>> {
    if *chain_len.start() == 0 || chain_len.start() > chain_len.end() {
        return Err(Error::InvalidArgument(format!(
            "chain length range {chain_len:?} must be nonempty and start at 1 or more"
        )));
    }
    let types = t.deployed_types();
    if types.is_empty() {
        return Err(Error::InvalidArgument(
            "topology has no deployed VNF instances".into(),
        ));
    }
    let n = t.node_count();
    Ok((0..count)
        .map(|_| {
            let source = rng.gen_range(0..n);
            // uniform over the other n-1 nodes
            let mut destination = rng.gen_range(0..n - 1);
            if destination >= source {
                destination += 1;
            }
            let len = rng.gen_range(chain_len.clone());
            let chain = (0..len).map(|_| types[rng.gen_range(0..types.len())]).collect();
            SfcRequest {
                source,
                destination,
                chain,
            }
        })
        .collect())
}

pub fn save_requests(requests: &[SfcRequest], path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(requests)? + "\n")?;
    Ok(())
}

pub fn load_requests(path: &Path) -> Result<Vec<SfcRequest>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// One line of an episode log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLogRecord {
    pub step: usize,
    pub node: NodeId,
    pub action: Action,
    pub reward: f64,
    pub cumulative_delay: Delay,
}

pub fn write_episode_log<W: Write>(out: &mut W, records: &[EpisodeLogRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
