//! Failure ratio, delay ratio and deterioration rate, and the three-test
//! harness: the original topology, random topologies, and random
//! topologies with relocated VNF instances.

use std::fmt::Write as _;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::environment::{generate_requests, Environment, PathResult, RewardConfig, SfcRequest};
use crate::error::{Error, Result};
use crate::neuralnet::ParamSet;
use crate::oracle::{solve_optimal, OracleResult};
use crate::policy::{rollout, GgRnn, RolloutMode};
use crate::topology::{relocate_instances, Delay, Topology};

/// Anything that turns an environment into a path.
pub trait PathGenerator: Sync {
    fn generate(&self, env: &Environment<'_>) -> Result<PathResult>;
}

/// Greedy decoding with a fixed parameter snapshot.
pub struct PolicyGenerator<'a> {
    model: &'a GgRnn,
    params: &'a ParamSet,
}

impl<'a> PolicyGenerator<'a> {
    pub fn new(model: &'a GgRnn, params: &'a ParamSet) -> Self {
        PolicyGenerator { model, params }
    }
}

impl PathGenerator for PolicyGenerator<'_> {
    fn generate(&self, env: &Environment<'_>) -> Result<PathResult> {
        // greedy decoding never draws from the rng
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(rollout(self.model, self.params, env, RolloutMode::Greedy, &mut rng)?.path)
    }
}

/// The exact solver replayed through the environment.
pub struct OracleGenerator;

impl PathGenerator for OracleGenerator {
    fn generate(&self, env: &Environment<'_>) -> Result<PathResult> {
        match solve_optimal(env.topology(), env.request())? {
            OracleResult::Feasible(sol) => Ok(env.replay(&sol.actions)?.path),
            OracleResult::Infeasible => Ok(PathResult::default()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RequestOutcome {
    pub topology_id: usize,
    pub success: bool,
    /// Delay of the generated path; meaningful only on success.
    pub delay: Delay,
    pub oracle_delay: Delay,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TestOutcome {
    pub records: Vec<RequestOutcome>,
    /// Requests with no walk inside the step budget, left out of `records`.
    pub infeasible: usize,
}

/// Evaluates `generator` on each request, in order. Requests the oracle
/// cannot serve within the step budget are counted and skipped.
pub fn evaluate_policy<G: PathGenerator + ?Sized>(
    generator: &G,
    topologies: &[Topology],
    requests: &[(usize, SfcRequest)],
    reward: RewardConfig,
) -> Result<TestOutcome> {
    let results: Vec<Result<Option<RequestOutcome>>> = requests
        .par_iter()
        .map(|(tid, req)| {
            let t = topologies
                .get(*tid)
                .ok_or_else(|| Error::InvalidArgument(format!("topology id {tid} out of range")))?;
            let env = Environment::with_default_budget(t, req.clone(), reward)?;
            let oracle_delay = match solve_optimal(t, req)? {
                OracleResult::Feasible(sol) if sol.actions.len() <= env.max_steps() => sol.delay(),
                _ => return Ok(None),
            };
            let path = generator.generate(&env)?;
            Ok(Some(RequestOutcome {
                topology_id: *tid,
                success: path.success,
                delay: path.total_delay,
                oracle_delay,
            }))
        })
        .collect();
    let mut out = TestOutcome::default();
    for r in results {
        match r? {
            Some(rec) => out.records.push(rec),
            None => out.infeasible += 1,
        }
    }
    Ok(out)
}

pub fn failure_ratio(outcome: &TestOutcome) -> Result<f64> {
    if outcome.records.is_empty() {
        return Err(Error::InvalidArgument("no evaluated requests".into()));
    }
    let failures = outcome.records.iter().filter(|r| !r.success).count();
    Ok(failures as f64 / outcome.records.len() as f64)
}

/// Σ generated delay / Σ optimal delay over successful requests.
pub fn delay_ratio(outcome: &TestOutcome) -> Result<f64> {
    let (gen, opt) = outcome
        .records
        .iter()
        .filter(|r| r.success)
        .fold((0u64, 0u64), |(g, o), r| (g + r.delay, o + r.oracle_delay));
    if opt == 0 {
        return Err(Error::Undefined("delay ratio has a zero denominator".into()));
    }
    Ok(gen as f64 / opt as f64)
}

pub fn mean_success_delay(outcome: &TestOutcome) -> Option<f64> {
    let ok: Vec<f64> = outcome
        .records
        .iter()
        .filter(|r| r.success)
        .map(|r| r.delay as f64)
        .collect();
    (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64)
}

/// Failure ratio on a changed-topology test over the original one.
pub fn deterioration_rate(fr_random: f64, fr_original: f64) -> Result<f64> {
    if fr_original <= 0.0 {
        return Err(Error::Undefined(
            "deterioration rate needs a nonzero original failure ratio".into(),
        ));
    }
    Ok(fr_random / fr_original)
}

/// Rounds to one decimal, the precision deterioration rates are shown at.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TestSet {
    pub topologies: Vec<Topology>,
    pub requests: Vec<(usize, SfcRequest)>,
}

/// Requests for the three tests. The third test reuses the second test's
/// topologies and requests with every instance relocated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TestSuite {
    pub original: TestSet,
    pub random_topo: Option<TestSet>,
    pub random_topo_vnfs: Option<TestSet>,
}

impl TestSuite {
    pub fn build(
        fixture: &Topology,
        random_pool: Option<&[Topology]>,
        count: usize,
        chain_len: std::ops::RangeInclusive<usize>,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let original = TestSet {
            topologies: vec![fixture.clone()],
            requests: generate_requests(fixture, count, chain_len.clone(), &mut rng)?
                .into_iter()
                .map(|r| (0, r))
                .collect(),
        };
        let (random_topo, random_topo_vnfs) = match random_pool {
            None => (None, None),
            Some([]) => return Err(Error::InvalidArgument("random-topology pool is empty".into())),
            Some(pool) => {
                let mut requests = Vec::with_capacity(count);
                for i in 0..count {
                    let tid = i % pool.len();
                    let r = generate_requests(&pool[tid], 1, chain_len.clone(), &mut rng)?.remove(0);
                    requests.push((tid, r));
                }
                let relocated = pool
                    .iter()
                    .map(|t| relocate_instances(t, &mut rng))
                    .collect();
                (
                    Some(TestSet {
                        topologies: pool.to_vec(),
                        requests: requests.clone(),
                    }),
                    Some(TestSet {
                        topologies: relocated,
                        requests,
                    }),
                )
            }
        };
        Ok(TestSuite {
            original,
            random_topo,
            random_topo_vnfs,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChangedTestMetrics {
    pub failure_ratio: f64,
    /// `None` when the original failure ratio is zero.
    pub deterioration: Option<f64>,
    pub delay_ratio: Option<f64>,
    pub infeasible: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub approach: String,
    pub failure_ratio: f64,
    pub delay_ratio: Option<f64>,
    pub mean_success_delay: Option<f64>,
    pub infeasible: usize,
    pub random_topo: Option<ChangedTestMetrics>,
    pub random_topo_vnfs: Option<ChangedTestMetrics>,
}

fn changed_metrics(outcome: &TestOutcome, fr_original: f64) -> Result<ChangedTestMetrics> {
    let fr = failure_ratio(outcome)?;
    Ok(ChangedTestMetrics {
        failure_ratio: fr,
        deterioration: deterioration_rate(fr, fr_original).ok(),
        delay_ratio: delay_ratio(outcome).ok(),
        infeasible: outcome.infeasible,
    })
}

pub fn evaluate_row<G: PathGenerator + ?Sized>(
    approach: &str,
    generator: &G,
    suite: &TestSuite,
) -> Result<MetricsReport> {
    let reward = RewardConfig::default();
    let run = |set: &TestSet| evaluate_policy(generator, &set.topologies, &set.requests, reward);
    let original = run(&suite.original)?;
    let fr = failure_ratio(&original)?;
    let random_topo = suite
        .random_topo
        .as_ref()
        .map(|s| changed_metrics(&run(s)?, fr))
        .transpose()?;
    let random_topo_vnfs = suite
        .random_topo_vnfs
        .as_ref()
        .map(|s| changed_metrics(&run(s)?, fr))
        .transpose()?;
    Ok(MetricsReport {
        approach: approach.to_string(),
        failure_ratio: fr,
        delay_ratio: delay_ratio(&original).ok(),
        mean_success_delay: mean_success_delay(&original),
        infeasible: original.infeasible,
        random_topo,
        random_topo_vnfs,
    })
}

/// One report row per named generator, in the given order.
pub fn run_experiment(
    approaches: &[(&str, &dyn PathGenerator)],
    suite: &TestSuite,
) -> Result<Vec<MetricsReport>> {
    approaches
        .iter()
        .map(|(name, g)| evaluate_row(name, *g, suite))
        .collect()
}

fn fmt_opt(x: Option<f64>, decimals: usize) -> String {
    x.map(|v| format!("{v:.decimals$}")).unwrap_or_default()
}

const CSV_HEADER: [&str; 12] = [
    "approach",
    "original_failure_ratio",
    "original_delay_ratio",
    "original_mean_delay",
    "random_topo_failure_ratio",
    "random_topo_deterioration",
    "random_topo_vnfs_failure_ratio",
    "random_topo_vnfs_deterioration",
    "random_topo_delay_ratio",
    "random_topo_vnfs_delay_ratio",
    "original_infeasible",
    "random_infeasible",
];

/// CSV with fixed decimals: ratios to 4, deterioration rates to 1.
pub fn write_report_csv<W: Write>(out: W, rows: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        let c2 = r.random_topo.as_ref();
        let c3 = r.random_topo_vnfs.as_ref();
        w.write_record([
            r.approach.clone(),
            format!("{:.4}", r.failure_ratio),
            fmt_opt(r.delay_ratio, 4),
            fmt_opt(r.mean_success_delay, 4),
            fmt_opt(c2.map(|c| c.failure_ratio), 4),
            fmt_opt(c2.and_then(|c| c.deterioration).map(round1), 1),
            fmt_opt(c3.map(|c| c.failure_ratio), 4),
            fmt_opt(c3.and_then(|c| c.deterioration).map(round1), 1),
            fmt_opt(c2.and_then(|c| c.delay_ratio), 4),
            fmt_opt(c3.and_then(|c| c.delay_ratio), 4),
            r.infeasible.to_string(),
            c2.map(|c| c.infeasible.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn changed_cell(c: Option<&ChangedTestMetrics>) -> String {
    match c {
        None => "-".to_string(),
        Some(c) => match c.deterioration {
            Some(d) => format!("{:.4} ({:.1})", c.failure_ratio, round1(d)),
            None => format!("{:.4} (n/a)", c.failure_ratio),
        },
    }
}

/// Plain-text results table, one row per approach.
pub fn format_report_table(rows: &[MetricsReport]) -> String {
    let width = rows.iter().map(|r| r.approach.len()).max().unwrap_or(0).max(8);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:width$} | {:^17} | {:^15} | {:^17}",
        "", "Original Topo.", "Random Topo.", "Random Topo.+VNFs"
    );
    let _ = writeln!(
        s,
        "{:width$} | {:>8} {:>8} | {:>15} | {:>17}",
        "Approach", "Failure", "Delay", "Failure (Det.)", "Failure (Det.)"
    );
    let _ = writeln!(s, "{}", "-".repeat(width + 60));
    for r in rows {
        let _ = writeln!(
            s,
            "{:width$} | {:>8.4} {:>8} | {:>15} | {:>17}",
            r.approach,
            r.failure_ratio,
            r.delay_ratio.map(|d| format!("{d:.4}")).unwrap_or_else(|| "-".into()),
            changed_cell(r.random_topo.as_ref()),
            changed_cell(r.random_topo_vnfs.as_ref()),
        );
    }
    s
}
