//! Exact delay-optimal SFC paths.
//!
//! The search runs over the layered product graph: a state is a node paired
//! with the number of chain entries already processed. Transitions follow
//! the environment's action vocabulary exactly (move to a neighbor, and
//! optionally process the next VNF at that neighbor), so every solution
//! replays through [`Environment::step`] unchanged.
//!
//! [`solve_optimal`] is a Dijkstra search; [`brute_force_optimal`] is an
//! independent depth-first enumeration used to cross-check it.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{Action, PathResult, SfcRequest};
use crate::error::{Error, Result};
use crate::topology::{Delay, NodeId, Topology};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LayeredState {
    pub node: NodeId,
    /// Chain entries processed so far.
    pub layer: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleSolution {
    pub actions: Vec<Action>,
    pub path: PathResult,
}

impl OracleSolution {
    pub fn delay(&self) -> Delay {
        self.path.total_delay
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OracleResult {
    Feasible(OracleSolution),
    Infeasible,
}

impl OracleResult {
    pub fn delay(&self) -> Option<Delay> {
        match self {
            OracleResult::Feasible(s) => Some(s.delay()),
            OracleResult::Infeasible => None,
        }
    }

    pub fn solution(&self) -> Option<&OracleSolution> {
        match self {
            OracleResult::Feasible(s) => Some(s),
            OracleResult::Infeasible => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, OracleResult::Feasible(_))
    }
}

/// Outgoing transitions of a layered state: `(action, next state, cost, instance used)`.
fn successors<'a>(
    t: &'a Topology,
    chain: &'a [usize],
    s: LayeredState,
) -> impl Iterator<Item = (Action, LayeredState, Delay, Option<usize>)> + 'a {
    t.neighbors(s.node).iter().flat_map(move |&(v, d)| {
        let plain = (Action::go(v), LayeredState { node: v, layer: s.layer }, d, None);
        let processed = chain.get(s.layer).and_then(|&k| t.best_instance(v, k)).map(|m| {
            (
                Action::process_at(v),
                LayeredState { node: v, layer: s.layer + 1 },
                d + t.instances()[m].proc_delay,
                Some(m),
            )
        });
        std::iter::once(plain).chain(processed)
    })
}

fn is_goal(req: &SfcRequest, s: LayeredState) -> bool {
    s.node == req.destination && s.layer == req.chain.len()
}

fn path_of(actions: &[Action], t: &Topology, req: &SfcRequest) -> PathResult {
    let mut path = PathResult::default();
    let mut node = req.source;
    let mut layer = 0;
    for a in actions {
        path.edge_uses.push((node, a.next_node));
        path.total_delay += t.edge_delay(node, a.next_node).expect("oracle walks edges");
        if a.process {
            let m = t
                .best_instance(a.next_node, req.chain[layer])
                .expect("oracle processes hosted types");
            path.instance_uses.push(m);
            path.total_delay += t.instances()[m].proc_delay;
            layer += 1;
        }
        node = a.next_node;
    }
    path.success = true;
    path
}

// Heap entry ordered by (delay, steps, action sequence). The key only grows
// along extensions and the order is preserved under a common suffix, so a
// Dijkstra search over it settles each state with its best key.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Label {
    delay: Delay,
    actions: Vec<Action>,
    state: LayeredState,
}

impl Label {
    fn key(&self) -> (Delay, usize, &[Action]) {
        (self.delay, self.actions.len(), &self.actions)
    }
}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key()
            .cmp(&other.key())
            .then_with(|| self.state.cmp(&other.state))
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimum-delay walk from `(source, 0)` to `(destination, len(chain))`.
///
/// Ties prefer fewer steps, then the lexicographically smallest action
/// sequence. An empty chain with `source == destination` yields the empty
/// walk.
pub fn solve_optimal(t: &Topology, req: &SfcRequest) -> Result<OracleResult> {
    req.validate_references(t)?;
    let layers = req.chain.len() + 1;
    let n = t.node_count();
    let idx = |s: LayeredState| s.layer * n + s.node;
    let mut settled = vec![false; n * layers];
    let mut best: Vec<Option<Delay>> = vec![None; n * layers];

    let start = LayeredState { node: req.source, layer: 0 };
    let mut heap = BinaryHeap::new();
    heap.push(Reverse(Label {
        delay: 0,
        actions: Vec::new(),
        state: start,
    }));
    best[idx(start)] = Some(0);

    while let Some(Reverse(label)) = heap.pop() {
        let i = idx(label.state);
        if settled[i] {
            continue;
        }
        settled[i] = true;
        if is_goal(req, label.state) {
            let path = path_of(&label.actions, t, req);
            debug_assert_eq!(path.total_delay, label.delay);
            return Ok(OracleResult::Feasible(OracleSolution {
                actions: label.actions,
                path,
            }));
        }
        for (a, next, cost, _) in successors(t, &req.chain, label.state) {
            let j = idx(next);
            let delay = label.delay + cost;
            // equal delays are still pushed so the tie-break can act
            if settled[j] || best[j].is_some_and(|b| b < delay) {
                continue;
            }
            best[j] = Some(delay);
            let mut actions = label.actions.clone();
            actions.push(a);
            heap.push(Reverse(Label {
                delay,
                actions,
                state: next,
            }));
        }
    }
    Ok(OracleResult::Infeasible)
}

/// Cap on DFS expansions for [`brute_force_optimal`].
pub const DEFAULT_EXPANSION_CAP: usize = 50_000_000;

/// Exhaustive depth-first enumeration of action sequences up to
/// `walk_budget` steps, pruning walks that revisit a layered state (the
/// cycle could be cut for a strictly cheaper walk) or that already cost at
/// least the best complete walk.
pub fn brute_force_optimal(
    t: &Topology,
    req: &SfcRequest,
    walk_budget: usize,
    expansion_cap: usize,
) -> Result<OracleResult> {
    req.validate_references(t)?;
    let start = LayeredState { node: req.source, layer: 0 };
    if is_goal(req, start) {
        return Ok(OracleResult::Feasible(OracleSolution {
            actions: Vec::new(),
            path: PathResult {
                success: true,
                ..Default::default()
            },
        }));
    }
    struct Search<'a> {
        t: &'a Topology,
        req: &'a SfcRequest,
        budget: usize,
        cap: usize,
        expansions: usize,
        on_path: Vec<bool>,
        actions: Vec<Action>,
        best: Option<(Delay, Vec<Action>)>,
    }
    impl Search<'_> {
        fn visit(&mut self, s: LayeredState, delay: Delay) -> Result<()> {
            self.expansions += 1;
            if self.expansions > self.cap {
                return Err(Error::BudgetExceeded(self.cap));
            }
            if is_goal(self.req, s) {
                if self.best.as_ref().is_none_or(|(b, _)| delay < *b) {
                    self.best = Some((delay, self.actions.clone()));
                }
                return Ok(());
            }
            if self.actions.len() == self.budget {
                return Ok(());
            }
            let n = self.t.node_count();
            let moves: Vec<_> = successors(self.t, &self.req.chain, s).collect();
            for (a, next, cost, _) in moves {
                let d = delay + cost;
                if self.best.as_ref().is_some_and(|(b, _)| d >= *b) {
                    continue;
                }
                let j = next.layer * n + next.node;
                if self.on_path[j] {
                    continue;
                }
                self.on_path[j] = true;
                self.actions.push(a);
                self.visit(next, d)?;
                self.actions.pop();
                self.on_path[j] = false;
            }
            Ok(())
        }
    }
    let n = t.node_count();
    let mut search = Search {
        t,
        req,
        budget: walk_budget,
        cap: expansion_cap,
        expansions: 0,
        on_path: vec![false; n * (req.chain.len() + 1)],
        actions: Vec::new(),
        best: None,
    };
    search.on_path[start.node] = true;
    search.visit(start, 0)?;
    Ok(match search.best {
        Some((_, actions)) => {
            let path = path_of(&actions, t, req);
            OracleResult::Feasible(OracleSolution { actions, path })
        }
        None => OracleResult::Infeasible,
    })
}

/// Longest simple walk in the layered graph; a budget that makes
/// [`brute_force_optimal`] exact.
pub fn exact_walk_budget(t: &Topology, req: &SfcRequest) -> usize {
    t.node_count() * (req.chain.len() + 1)
}

/// One supervised example: the optimal action sequence for a request.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledEntry {
    pub topology_id: usize,
    pub request: SfcRequest,
    pub action_sequence: Vec<Action>,
    pub optimal_delay: Delay,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabeledDataset {
    pub entries: Vec<LabeledEntry>,
    /// Requests dropped because no walk exists, or the optimal walk does
    /// not fit the default step budget.
    pub dropped: usize,
}

/// Labels `(topology_id, request)` pairs against `topologies[topology_id]`.
pub fn label_dataset(
    topologies: &[Topology],
    requests: &[(usize, SfcRequest)],
) -> Result<LabeledDataset> {
    let solved: Vec<Result<Option<LabeledEntry>>> = requests
        .par_iter()
        .map(|(tid, req)| {
            let t = topologies.get(*tid).ok_or_else(|| {
                Error::InvalidArgument(format!("topology id {tid} out of range"))
            })?;
            Ok(match solve_optimal(t, req)? {
                OracleResult::Feasible(sol) if sol.actions.len() <= req.default_max_steps(t) => {
                    Some(LabeledEntry {
                        topology_id: *tid,
                        request: req.clone(),
                        optimal_delay: sol.delay(),
                        action_sequence: sol.actions,
                    })
                }
                _ => None,
            })
        })
        .collect();
    let mut ds = LabeledDataset::default();
    for r in solved {
        match r? {
            Some(e) => ds.entries.push(e),
            None => ds.dropped += 1,
        }
    }
    Ok(ds)
}

/// JSON lines, one [`LabeledEntry`] per line.
pub fn write_dataset(entries: &[LabeledEntry], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut f, e)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<LabeledEntry>> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{Environment, RewardConfig};
    use crate::topology::{internet2_fixture, Edge, VnfInstance};

    fn path3() -> Topology {
        Topology::new(
            3,
            vec![Edge { u: 0, v: 1, delay: 2 }, Edge { u: 1, v: 2, delay: 3 }],
            vec![VnfInstance { node: 1, vnf_type: 0, proc_delay: 5 }],
            2,
        )
        .unwrap()
    }

    /// Plain enumeration of every action sequence up to `depth` steps.
    fn enumerate_min(t: &Topology, req: &SfcRequest, depth: usize) -> Option<Delay> {
        let env = Environment::new(t, req.clone(), RewardConfig::default(), depth).unwrap();
        let mut best = None;
        let mut stack = vec![env.reset()];
        while let Some(s) = stack.pop() {
            if s.done {
                if s.path.success {
                    best = Some(best.map_or(s.path.total_delay, |b: Delay| b.min(s.path.total_delay)));
                }
                continue;
            }
            for a in env.valid_actions(&s).unwrap() {
                stack.push(env.step(&s, a).unwrap().state);
            }
        }
        best
    }

    #[test]
    fn three_node_example() {
        let t = path3();
        let req = SfcRequest::new(0, 2, vec![0]);
        assert_eq!(enumerate_min(&t, &req, 6), Some(10));
        let sol = solve_optimal(&t, &req).unwrap();
        assert_eq!(sol.delay(), Some(10));
        assert_eq!(
            sol.solution().unwrap().actions,
            vec![Action::process_at(1), Action::go(2)]
        );
        let bf = brute_force_optimal(&t, &req, 6, DEFAULT_EXPANSION_CAP).unwrap();
        assert_eq!(bf.delay(), Some(10));
    }

    #[test]
    fn empty_chain_at_destination() {
        let t = path3();
        let req = SfcRequest::new(1, 1, vec![]);
        let sol = solve_optimal(&t, &req).unwrap();
        assert_eq!(sol.delay(), Some(0));
        assert!(sol.solution().unwrap().actions.is_empty());
        assert_eq!(brute_force_optimal(&t, &req, 3, 1000).unwrap().delay(), Some(0));
    }

    #[test]
    fn missing_type_is_infeasible() {
        let t = path3();
        let req = SfcRequest::new(0, 2, vec![1]);
        assert_eq!(solve_optimal(&t, &req).unwrap(), OracleResult::Infeasible);
        assert_eq!(
            brute_force_optimal(&t, &req, 9, DEFAULT_EXPANSION_CAP).unwrap(),
            OracleResult::Infeasible
        );
    }

    #[test]
    fn two_node_round_trip() {
        // chain satisfiable only at the neighbor of a source that is also
        // the destination: out, process, back.
        let t = Topology::new(
            2,
            vec![Edge { u: 0, v: 1, delay: 3 }],
            vec![VnfInstance { node: 1, vnf_type: 0, proc_delay: 2 }],
            1,
        )
        .unwrap();
        let req = SfcRequest::new(0, 0, vec![0]);
        let sol = solve_optimal(&t, &req).unwrap();
        assert_eq!(sol.delay(), Some(8));
        assert_eq!(brute_force_optimal(&t, &req, 4, 1000).unwrap().delay(), Some(8));
        assert_eq!(enumerate_min(&t, &req, 4), Some(8));
        // processing at the destination itself
        let req = SfcRequest::new(0, 1, vec![0]);
        assert_eq!(solve_optimal(&t, &req).unwrap().delay(), Some(5));
        assert_eq!(brute_force_optimal(&t, &req, 4, 1000).unwrap().delay(), Some(5));
    }

    #[test]
    fn consecutive_processing_needs_a_revisit() {
        // both chain types live on node 1: the walk must leave and return
        let t = Topology::new(
            2,
            vec![Edge { u: 0, v: 1, delay: 1 }],
            vec![
                VnfInstance { node: 1, vnf_type: 0, proc_delay: 1 },
                VnfInstance { node: 1, vnf_type: 1, proc_delay: 1 },
            ],
            2,
        )
        .unwrap();
        let req = SfcRequest::new(0, 1, vec![0, 1]);
        let sol = solve_optimal(&t, &req).unwrap();
        assert_eq!(sol.delay(), Some(1 + 1 + 1 + 1 + 1));
        assert_eq!(enumerate_min(&t, &req, 5), Some(5));
    }

    #[test]
    fn tie_break_prefers_fewer_steps_then_smaller_sequence() {
        // square 0-1-3, 0-2-3 with equal delays; the path through 1 wins
        let t = Topology::new(
            4,
            vec![
                Edge { u: 0, v: 1, delay: 1 },
                Edge { u: 0, v: 2, delay: 1 },
                Edge { u: 1, v: 3, delay: 1 },
                Edge { u: 2, v: 3, delay: 1 },
            ],
            vec![VnfInstance { node: 3, vnf_type: 0, proc_delay: 1 }],
            1,
        )
        .unwrap();
        let sol = solve_optimal(&t, &SfcRequest::new(0, 3, vec![0])).unwrap();
        assert_eq!(
            sol.solution().unwrap().actions,
            vec![Action::go(1), Action::process_at(3)]
        );
    }

    #[test]
    fn brute_force_guard() {
        let f = internet2_fixture();
        let req = SfcRequest::new(0, 5, vec![0, 1, 2, 3]);
        assert!(matches!(
            brute_force_optimal(&f, &req, 60, 10),
            Err(Error::BudgetExceeded(10))
        ));
    }

    #[test]
    fn labels_replay_through_environment() {
        let f = internet2_fixture();
        let reqs: Vec<_> = (0..12)
            .flat_map(|s| (0..12).filter(move |&d| d != s).map(move |d| (s, d)))
            .enumerate()
            .map(|(i, (s, d))| (0, SfcRequest::new(s, d, vec![i % 5, (i / 5) % 5])))
            .collect();
        let ds = label_dataset(std::slice::from_ref(&f), &reqs).unwrap();
        assert_eq!(ds.entries.len() + ds.dropped, reqs.len());
        for e in &ds.entries {
            let env = Environment::with_default_budget(&f, e.request.clone(), RewardConfig::default())
                .unwrap();
            let s = env.replay(&e.action_sequence).unwrap();
            assert!(s.path.success);
            assert_eq!(s.path.total_delay, e.optimal_delay);
        }
    }

    #[test]
    fn dataset_counts_and_files() {
        let t = path3();
        let reqs = vec![(0, SfcRequest::new(0, 2, vec![0])), (0, SfcRequest::new(0, 2, vec![1]))];
        let ds = label_dataset(std::slice::from_ref(&t), &reqs).unwrap();
        assert_eq!(ds.entries.len(), 1);
        assert_eq!(ds.dropped, 1);
        assert_eq!(label_dataset(&[t], &[]).unwrap(), LabeledDataset::default());

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ds.jsonl");
        write_dataset(&ds.entries, &p).unwrap();
        assert_eq!(read_dataset(&p).unwrap(), ds.entries);
    }

    #[test]
    fn adding_an_instance_keeps_feasibility() {
        let f = internet2_fixture();
        let req = SfcRequest::new(2, 5, vec![4, 0]);
        let before = solve_optimal(&f, &req).unwrap().delay().unwrap();
        let mut inst = f.instances().to_vec();
        inst.push(VnfInstance { node: 10, vnf_type: 4, proc_delay: 1 });
        let after = solve_optimal(&f.with_instances(inst).unwrap(), &req).unwrap().delay().unwrap();
        assert!(after <= before);
    }
}
