use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use sfc_core::checkpoint::{Checkpoint, CheckpointMeta};
use sfc_core::environment::{generate_requests, SfcRequest};
use sfc_core::evaluation::{
    format_report_table, run_experiment, write_report_csv, PathGenerator, PolicyGenerator,
    TestSuite,
};
use sfc_core::experiment::{
    file_stem, model_for, pretrain_sl, run_table1, train_variant, ExperimentConfig,
    TrainingTopology,
};
use sfc_core::oracle::{label_dataset, solve_optimal, write_dataset, OracleResult};
use sfc_core::topology::{
    generate_pool_with, internet2_fixture, mutate, read_topology_file, write_topology_file,
    ChangeStrategy, MutationParams, Topology, TopologyPool,
};
use sfc_core::training::write_history;

#[derive(Parser)]
#[command(name = "sfc", version, about = "Service function chaining with a GG-RNN policy")]
struct Cli {
    /// Worker threads for labeling, training and evaluation (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the fixture, a mutated topology or a topology pool.
    #[command(subcommand)]
    Topo(TopoCommand),
    /// Label random requests with the exact oracle.
    Dataset(DatasetArgs),
    /// Train a checkpoint by supervised learning or REINFORCE.
    #[command(subcommand)]
    Train(TrainCommand),
    /// Evaluate checkpoints on the three tests.
    Eval(EvalArgs),
    /// Print the delay-optimal path for one request.
    Solve(SolveArgs),
    /// Predefined experiment pipelines.
    #[command(subcommand)]
    Exp(ExpCommand),
}

#[derive(Subcommand)]
enum TopoCommand {
    Fixture(FixtureArgs),
    Mutate(MutateArgs),
    Pool(PoolArgs),
}

#[derive(Args, Serialize)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct MutateArgs {
    /// Base topology file; the built-in fixture when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    strategy: ChangeStrategy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct PoolArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    strategy: ChangeStrategy,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct DatasetArgs {
    /// Topology file or pool directory; the built-in fixture when omitted.
    #[arg(long)]
    topology: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    min_chain: usize,
    #[arg(long, default_value_t = 4)]
    max_chain: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum TrainCommand {
    Sl(TrainSlArgs),
    Rl(TrainRlArgs),
}

#[derive(Args)]
struct TrainSlArgs {
    /// TOML experiment config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    topology: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainRlArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fixture topology; also the training topology when --pool is absent.
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Train on a pool directory written by `topo pool`.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// SL checkpoint to start from.
    #[arg(long, required_unless_present = "from_scratch", conflicts_with = "from_scratch")]
    init: Option<PathBuf>,
    #[arg(long)]
    from_scratch: bool,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    /// `LABEL=PATH`, or `PATH` to label by the checkpoint's training stage; repeatable.
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<String>,
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Pool directory for the random-topology tests; test 1 only when absent.
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    min_chain: usize,
    #[arg(long, default_value_t = 4)]
    max_chain: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    topology: Option<PathBuf>,
    #[arg(long)]
    source: usize,
    #[arg(long)]
    destination: usize,
    /// Comma-separated VNF types, e.g. `0,3,1`; empty for no chain.
    #[arg(long, default_value = "", value_delimiter = ',')]
    chain: Vec<String>,
}

#[derive(Subcommand)]
enum ExpCommand {
    /// Fixture, pools, dataset, SL, six RL variants, three-test evaluation.
    Table1(Table1Args),
}

#[derive(Args)]
struct Table1Args {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    topology: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
        log::warn!("could not size the worker pool: {e}");
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Topo(TopoCommand::Fixture(a)) => cmd_fixture(a),
        Command::Topo(TopoCommand::Mutate(a)) => cmd_mutate(a),
        Command::Topo(TopoCommand::Pool(a)) => cmd_pool(a),
        Command::Dataset(a) => cmd_dataset(a),
        Command::Train(TrainCommand::Sl(a)) => cmd_train_sl(a),
        Command::Train(TrainCommand::Rl(a)) => cmd_train_rl(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Exp(ExpCommand::Table1(a)) => cmd_table1(a),
    }
}

// ------------------------------------------------------------------ helpers

fn echo_config<T: Serialize>(dir: &Path, config: &T) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.toml"), toml::to_string(config)?)?;
    Ok(())
}

fn load_topology(path: Option<&Path>) -> Result<Topology> {
    match path {
        None => Ok(internet2_fixture()),
        Some(p) => read_topology_file(p).with_context(|| format!("reading topology {}", p.display())),
    }
}

fn load_topologies(path: Option<&Path>) -> Result<Vec<Topology>> {
    match path {
        Some(p) if TopologyPool::is_pool_dir(p) => Ok(TopologyPool::load(p)
            .with_context(|| format!("reading pool {}", p.display()))?
            .variants),
        other => Ok(vec![load_topology(other)?]),
    }
}

fn load_pool(path: &Path) -> Result<TopologyPool> {
    TopologyPool::load(path).with_context(|| format!("reading pool {}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = match path {
        None => ExperimentConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
    };
    config.validate()?;
    Ok(config)
}

fn summarize(t: &Topology) -> String {
    format!(
        "N={} |E|={} |M|={} connected={}",
        t.node_count(),
        t.edges().len(),
        t.instances().len(),
        t.is_connected()
    )
}

fn requests_over(
    topologies: &[Topology],
    count: usize,
    chain: std::ops::RangeInclusive<usize>,
    seed: u64,
) -> Result<Vec<(usize, SfcRequest)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let tid = i % topologies.len();
        out.push((tid, generate_requests(&topologies[tid], 1, chain.clone(), &mut rng)?.remove(0)));
    }
    Ok(out)
}

// ----------------------------------------------------------------- commands

fn cmd_fixture(a: FixtureArgs) -> Result<()> {
    let t = internet2_fixture();
    echo_config(&a.out, &a)?;
    write_topology_file(&t, &a.out.join("fixture.json"))?;
    println!("fixture: {}", summarize(&t));
    Ok(())
}

fn cmd_mutate(a: MutateArgs) -> Result<()> {
    let base = load_topology(a.input.as_deref())?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let t = mutate(&base, a.strategy, &mut rng, &MutationParams::default());
    echo_config(&a.out, &a)?;
    write_topology_file(&t, &a.out.join("topology.json"))?;
    println!("base:    {}", summarize(&base));
    println!("mutated: {}", summarize(&t));
    Ok(())
}

fn cmd_pool(a: PoolArgs) -> Result<()> {
    let base = load_topology(a.input.as_deref())?;
    let pool = generate_pool_with(&base, a.strategy, a.count, a.seed, &MutationParams::default())?;
    echo_config(&a.out, &a)?;
    pool.save(&a.out)?;
    for (i, t) in pool.variants.iter().enumerate() {
        println!("topo_{i:03}: {}", summarize(t));
    }
    println!("wrote {} {} topologies to {}", pool.variants.len(), a.strategy, a.out.display());
    Ok(())
}

fn cmd_dataset(a: DatasetArgs) -> Result<()> {
    if a.min_chain > a.max_chain {
        bail!("--min-chain {} exceeds --max-chain {}", a.min_chain, a.max_chain);
    }
    let topologies = load_topologies(a.topology.as_deref())?;
    let requests = requests_over(&topologies, a.count, a.min_chain..=a.max_chain, a.seed)?;
    let ds = label_dataset(&topologies, &requests)?;
    echo_config(&a.out, &a)?;
    write_dataset(&ds.entries, &a.out.join("dataset.jsonl"))?;
    println!("labeled {} requests, dropped {} infeasible", ds.entries.len(), ds.dropped);
    Ok(())
}

fn cmd_train_sl(a: TrainSlArgs) -> Result<()> {
    let config = load_config(a.config.as_deref())?;
    let fixture = load_topology(a.topology.as_deref())?;
    let sl = pretrain_sl(&fixture, &config)?;
    echo_config(&a.out, &config)?;
    Checkpoint::new(CheckpointMeta::new(sl.model.config(), config.seed, "sl"), sl.params)
        .save(&a.out.join("checkpoint.json"))?;
    write_history(fs::File::create(a.out.join("history.csv"))?, &sl.history.rows())?;
    let last = sl.history.heldout_failure.last().copied().flatten();
    println!(
        "SL: {} labels ({} dropped), {} epochs, held-out failure {}",
        sl.dataset.entries.len(),
        sl.dataset.dropped,
        sl.history.epoch_loss.len(),
        last.map(|f| format!("{f:.4}")).unwrap_or_else(|| "-".into())
    );
    Ok(())
}

fn cmd_train_rl(a: TrainRlArgs) -> Result<()> {
    let mut config = load_config(a.config.as_deref())?;
    if let Some(l) = a.lambda {
        config.training.lambda = l;
    }
    config.lambdas = vec![config.training.lambda];
    config.validate()?;
    let fixture = load_topology(a.topology.as_deref())?;
    let model = model_for(&fixture, &config)?;
    let init = match &a.init {
        Some(path) => {
            let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            ckpt.expect_config(model.config())
                .with_context(|| format!("{} does not match the config", path.display()))?;
            ckpt.params
        }
        None => model.init_params(config.sub_seed(5)),
    };
    let (pool, topology) = match &a.pool {
        Some(dir) => {
            let p = load_pool(dir)?;
            (p.variants, TrainingTopology::Pool(p.strategy))
        }
        None => (vec![fixture], TrainingTopology::Original),
    };
    let lambda = config.training.lambda;
    let v = train_variant(&model, &init, &pool, topology, lambda, &config)?;
    echo_config(&a.out, &config)?;
    Checkpoint::new(CheckpointMeta::new(model.config(), config.seed, file_stem(&v.name)), v.params)
        .save(&a.out.join("checkpoint.json"))?;
    write_history(fs::File::create(a.out.join("history.csv"))?, &v.history.rows(100))?;
    println!(
        "{}: {} episodes on {} topologies, final rolling success {:.3}, {} skipped updates",
        v.name,
        v.history.episodes.len(),
        pool.len(),
        v.history.rolling_success.last().copied().unwrap_or(0.0),
        v.history.skipped_updates
    );
    Ok(())
}

fn parse_checkpoint_arg(arg: &str) -> (Option<String>, PathBuf) {
    match arg.split_once('=') {
        Some((label, path)) => (Some(label.to_string()), PathBuf::from(path)),
        None => (None, PathBuf::from(arg)),
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    if a.min_chain > a.max_chain {
        bail!("--min-chain {} exceeds --max-chain {}", a.min_chain, a.max_chain);
    }
    let fixture = load_topology(a.topology.as_deref())?;
    let pool = a.pool.as_deref().map(load_pool).transpose()?;
    let suite = TestSuite::build(
        &fixture,
        pool.as_ref().map(|p| p.variants.as_slice()),
        a.count,
        a.min_chain..=a.max_chain,
        a.seed,
    )?;
    let mut loaded = Vec::new();
    for arg in &a.checkpoints {
        let (label, path) = parse_checkpoint_arg(arg);
        let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
        let model = ckpt.model().with_context(|| format!("checkpoint {}", path.display()))?;
        let label = label.unwrap_or_else(|| ckpt.meta.training_stage.clone());
        loaded.push((label, model, ckpt.params));
    }
    let generators: Vec<PolicyGenerator> = loaded.iter().map(|(_, m, p)| PolicyGenerator::new(m, p)).collect();
    let approaches: Vec<(&str, &dyn PathGenerator)> = loaded
        .iter()
        .zip(&generators)
        .map(|((label, _, _), g)| (label.as_str(), g as &dyn PathGenerator))
        .collect();
    let rows = run_experiment(&approaches, &suite)?;
    let mut csv = Vec::new();
    write_report_csv(&mut csv, &rows)?;
    if let Some(out) = &a.out {
        echo_config(out, &a)?;
        fs::write(out.join("report.csv"), &csv)?;
        fs::write(out.join("report.txt"), format_report_table(&rows))?;
    }
    print!("{}", String::from_utf8(csv)?);
    println!();
    print!("{}", format_report_table(&rows));
    Ok(())
}

fn cmd_solve(a: SolveArgs) -> Result<()> {
    let t = load_topology(a.topology.as_deref())?;
    let chain = a
        .chain
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<usize>().with_context(|| format!("bad VNF type `{s}`")))
        .collect::<Result<Vec<_>>>()?;
    let req = SfcRequest::new(a.source, a.destination, chain);
    req.validate(&t)?;
    match solve_optimal(&t, &req)? {
        OracleResult::Infeasible => println!("infeasible"),
        OracleResult::Feasible(sol) => {
            let mut nodes = vec![a.source.to_string()];
            for act in &sol.actions {
                nodes.push(format!("{}{}", act.next_node, if act.process { "*" } else { "" }));
            }
            println!("path: {}", nodes.join(" -> "));
            println!("delay: {}", sol.delay());
        }
    }
    Ok(())
}

fn cmd_table1(a: Table1Args) -> Result<()> {
    let config = load_config(a.config.as_deref())?;
    let fixture = load_topology(a.topology.as_deref())?;
    let table = run_table1(&fixture, &config)?;
    echo_config(&a.out, &config)?;
    table.write(&a.out)?;
    print!("{}", table.report_table());
    for v in &table.variants {
        let reached = v.history.first_reaching(0.95);
        log::info!(
            "{}: rolling success >= 0.95 first at {}",
            v.name,
            reached.map(|e| e.to_string()).unwrap_or_else(|| "never".into())
        );
    }
    Ok(())
}
