//! Property tests for the module invariants.

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sfc_core::environment::{Environment, PathResult, RewardConfig, SfcRequest};
use sfc_core::evaluation::{delay_ratio, evaluate_policy, failure_ratio, PathGenerator, TestOutcome};
use sfc_core::neuralnet::masked_softmax;
use sfc_core::oracle::{brute_force_optimal, exact_walk_budget, solve_optimal, DEFAULT_EXPANSION_CAP};
use sfc_core::policy::{adjacency_tensor, annotate, ActionMask, DecoderContext, GgRnn, ModelConfig};
use sfc_core::topology::{internet2_fixture, mutate, ChangeStrategy, Edge, MutationParams, Topology, VnfInstance};
use sfc_core::training::compute_returns;

/// Connected graph on `n` nodes from a seed: random tree plus extra edges.
fn small_topology(n: usize, seed: u64) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push(Edge { u: rng.gen_range(0..v), v, delay: rng.gen_range(1..=10) });
    }
    for _ in 0..n / 2 {
        let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if u != v && !edges.iter().any(|e| (e.u, e.v) == (u, v) || (e.u, e.v) == (v, u)) {
            edges.push(Edge { u, v, delay: rng.gen_range(1..=10) });
        }
    }
    let instances = (0..rng.gen_range(1..=4))
        .map(|_| VnfInstance { node: rng.gen_range(0..n), vnf_type: rng.gen_range(0..3), proc_delay: rng.gen_range(1..=5) })
        .collect();
    Topology::new(n, edges, instances, 3).unwrap()
}

/// `(n, topology seed, source, destination, chain)` with a chain of at
/// least `min_chain` entries.
fn request_strategy(min_chain: usize) -> impl Strategy<Value = (usize, u64, usize, usize, Vec<usize>)> {
    (2usize..=7).prop_flat_map(move |n| {
        (Just(n), any::<u64>(), 0..n, 0..n, prop::collection::vec(0usize..3, min_chain..=3))
    })
}

/// Uniformly random valid actions until the episode ends.
struct RandomWalk(u64);

impl PathGenerator for RandomWalk {
    fn generate(&self, env: &Environment<'_>) -> sfc_core::Result<PathResult> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        let mut s = env.reset();
        while !s.done {
            let actions = env.valid_actions(&s)?;
            let a = *actions.choose(&mut rng).expect("an undone state has a valid action");
            s = env.step(&s, a)?.state;
        }
        Ok(s.path)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mutation_keeps_graph_valid(seed in any::<u64>(), cs2 in any::<bool>()) {
        let f = internet2_fixture();
        let strategy = if cs2 { ChangeStrategy::Cs2 } else { ChangeStrategy::Cs1 };
        let t = mutate(&f, strategy, &mut ChaCha8Rng::seed_from_u64(seed), &MutationParams::default());
        prop_assert!(t.is_connected());
        prop_assert!(t.node_count() >= f.node_count());
        let a = t.adjacency_matrix();
        for i in 0..t.node_count() {
            prop_assert_eq!(a[i][i], 0);
            for j in 0..t.node_count() {
                prop_assert_eq!(a[i][j], a[j][i]);
            }
        }
        prop_assert_eq!(t.instances().len(), f.instances().len());
    }

    #[test]
    fn topology_document_round_trips(n in 2usize..=9, seed in any::<u64>()) {
        let t = small_topology(n, seed);
        prop_assert_eq!(Topology::from_document(&t.to_document()).unwrap(), t);
    }

    #[test]
    fn oracle_matches_brute_force((n, seed, src, dst, chain) in request_strategy(0)) {
        let t = small_topology(n, seed);
        let req = SfcRequest::new(src, dst, chain);
        let fast = solve_optimal(&t, &req).unwrap().delay();
        let slow = brute_force_optimal(&t, &req, exact_walk_budget(&t, &req), DEFAULT_EXPANSION_CAP).unwrap().delay();
        prop_assert_eq!(fast, slow);
    }

    #[test]
    fn oracle_beats_every_random_walk((n, seed, src, dst, chain) in request_strategy(1), walk_seed in any::<u64>()) {
        let t = small_topology(n, seed);
        let req = SfcRequest::new(src, dst, chain);
        let env = Environment::with_default_budget(&t, req.clone(), RewardConfig::default()).unwrap();
        let path = RandomWalk(walk_seed).generate(&env).unwrap();
        if path.success {
            let best = solve_optimal(&t, &req).unwrap().delay();
            prop_assert!(best.is_some_and(|b| b <= path.total_delay));
        }
    }

    #[test]
    fn evaluation_ratios_are_bounded(seed in any::<u64>(), walk_seed in any::<u64>()) {
        let topologies: Vec<Topology> = (0..3).map(|i| small_topology(6, seed.wrapping_add(i))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let requests: Vec<(usize, SfcRequest)> = (0..12)
            .map(|i| {
                let chain = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(0..3)).collect();
                (i % 3, SfcRequest::new(rng.gen_range(0..6), rng.gen_range(0..6), chain))
            })
            .collect();
        let out = evaluate_policy(&RandomWalk(walk_seed), &topologies, &requests, RewardConfig::default()).unwrap();
        prop_assert_eq!(out.records.len() + out.infeasible, requests.len());
        if !out.records.is_empty() {
            let f = failure_ratio(&out).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
        }
        // the oracle is optimal, so any successful walk costs at least as much
        if let Ok(r) = delay_ratio(&out) {
            prop_assert!(r >= 1.0);
        }
    }

    #[test]
    fn failure_ratio_counts_failures(flags in prop::collection::vec(any::<bool>(), 1..50)) {
        let out = TestOutcome {
            records: flags
                .iter()
                .map(|&s| sfc_core::evaluation::RequestOutcome { topology_id: 0, success: s, delay: 5, oracle_delay: 5 })
                .collect(),
            infeasible: 0,
        };
        let failed = flags.iter().filter(|s| !**s).count() as f64;
        prop_assert_eq!(failure_ratio(&out).unwrap(), failed / flags.len() as f64);
    }

    #[test]
    fn returns_are_linear_in_rewards(
        pairs in prop::collection::vec((-1e4f64..1e4, -1e4f64..1e4), 0..20),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        gamma in 0.0f64..=1.0,
    ) {
        let (r1, r2): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let mixed: Vec<f64> = pairs.iter().map(|(x, y)| a * x + b * y).collect();
        let (g1, g2, gm) = (compute_returns(&r1, gamma), compute_returns(&r2, gamma), compute_returns(&mixed, gamma));
        for i in 0..pairs.len() {
            let expect = a * g1[i] + b * g2[i];
            prop_assert!((gm[i] - expect).abs() <= 1e-7 * (1.0 + expect.abs()));
        }
        if gamma == 1.0 && !r1.is_empty() {
            let total: f64 = r1.iter().sum();
            prop_assert!((g1[0] - total).abs() <= 1e-7 * (1.0 + total.abs()));
        }
    }

    #[test]
    fn masked_softmax_is_a_distribution(
        entries in prop::collection::vec((-800.0f64..800.0, any::<bool>()), 1..16),
    ) {
        let (logits, mut mask): (Vec<f64>, Vec<bool>) = entries.into_iter().unzip();
        mask[0] = true;
        let p = masked_softmax(&logits, &mask).unwrap();
        prop_assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (v, m) in p.iter().zip(&mask) {
            if !m {
                prop_assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn decoder_output_respects_the_mask((n, seed, src, dst, chain) in request_strategy(1), pseed in any::<u64>()) {
        let t = small_topology(n, seed);
        let req = SfcRequest::new(src, dst, chain);
        let model = GgRnn::new(ModelConfig { hidden_dim: 8, prop_steps: 2, vnf_types: 3 }).unwrap();
        let p = model.init_params(pseed);
        let env = Environment::with_default_budget(&t, req.clone(), RewardConfig::default()).unwrap();
        let s = env.reset();
        let valid = env.valid_actions(&s).unwrap();
        let mask = ActionMask::from_actions(n, &valid);
        let (enc, _) = model.encode(&p, &annotate(&t, &req, 0, 8).unwrap(), &adjacency_tensor(&t)).unwrap();
        let ctx = DecoderContext::new(model.initial_hidden(), &req, 0, src, 3);
        let (dist, _, _) = model.decode_step(&p, &enc, &ctx, &mask).unwrap();
        prop_assert!((dist.node_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for v in 0..n {
            if !mask.node[v] {
                prop_assert_eq!(dist.node_probs[v], 0.0);
            }
            if !mask.process[v] {
                prop_assert_eq!(dist.process_prob[v], 0.0);
            }
            prop_assert!((0.0..=1.0).contains(&dist.process_prob[v]));
        }
    }
}
