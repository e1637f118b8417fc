//! The full results-table pipeline: fixture, pools, oracle labels, SL
//! pre-training, six RL variants, and the three-test evaluation.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::environment::generate_requests;
use crate::error::{Error, Result};
use crate::evaluation::{
    format_report_table, run_experiment, write_report_csv, MetricsReport, PathGenerator,
    PolicyGenerator, TestSuite,
};
use crate::neuralnet::ParamSet;
use crate::oracle::{label_dataset, LabeledDataset};
use crate::policy::{GgRnn, ModelConfig};
use crate::topology::{generate_pool, ChangeStrategy, Topology, DEFAULT_POOL_SIZE};
use crate::training::{train_rl, train_sl, write_history, HyperParams, RlHistory, SlHistory};

/// RL step size for the desk-scale pipeline. With plain SGD and a 10⁴
/// terminal reward, the 1e-5 default moves weights by about their own
/// magnitude in a single update and the policy collapses.
pub const DESK_ALPHA_RL: f64 = 3e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub pool_size: usize,
    pub sl_requests: usize,
    pub sl_heldout: usize,
    pub test_requests: usize,
    /// λ values; each is trained on the plain fixture, a CS1 pool and a
    /// CS2 pool.
    pub lambdas: Vec<f64>,
    pub model: ModelConfig,
    pub training: HyperParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            pool_size: DEFAULT_POOL_SIZE,
            sl_requests: 2000,
            sl_heldout: 500,
            test_requests: 1000,
            lambdas: vec![0.0, 1.0],
            model: ModelConfig::default(),
            training: HyperParams {
                alpha_rl: DESK_ALPHA_RL,
                ..HyperParams::default()
            },
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        if self.pool_size == 0 || self.sl_requests == 0 || self.test_requests == 0 {
            return Err(Error::InvalidArgument(
                "pool_size, sl_requests and test_requests must be positive".into(),
            ));
        }
        GgRnn::new(self.model).map(|_| ())
    }

    /// Every artifact draws from its own stream derived from the one seed:
    /// 1-3 pools, 4 SL requests, 5 initial weights, 6 RL, 7 test suite.
    pub fn sub_seed(&self, stream: u64) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(stream)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainingTopology {
    Original,
    Pool(ChangeStrategy),
}

#[derive(Clone, Debug)]
pub struct TrainedVariant {
    pub name: String,
    pub lambda: f64,
    pub topology: TrainingTopology,
    pub params: ParamSet,
    pub history: RlHistory,
}

pub struct Table1 {
    pub config: ExperimentConfig,
    pub model: GgRnn,
    pub dataset: LabeledDataset,
    pub sl_params: ParamSet,
    pub sl_history: SlHistory,
    pub variants: Vec<TrainedVariant>,
    pub suite: TestSuite,
    pub rows: Vec<MetricsReport>,
}

fn lambda_label(l: f64) -> String {
    if l.fract() == 0.0 {
        format!("{l:.0}")
    } else {
        format!("{l}")
    }
}

pub fn variant_name(lambda: f64, topology: &TrainingTopology) -> String {
    let base = format!("RL(λ={})", lambda_label(lambda));
    match topology {
        TrainingTopology::Original => base,
        TrainingTopology::Pool(ChangeStrategy::Cs1) => format!("{base}+CS1"),
        TrainingTopology::Pool(ChangeStrategy::Cs2) => format!("{base}+CS2"),
    }
}

/// Output of SL pre-training on the fixture.
pub struct SlStage {
    pub model: GgRnn,
    pub dataset: LabeledDataset,
    pub params: ParamSet,
    pub history: SlHistory,
}

/// The model with `vnf_types` taken from the fixture.
pub fn model_for(fixture: &Topology, config: &ExperimentConfig) -> Result<GgRnn> {
    GgRnn::new(ModelConfig {
        vnf_types: fixture.vnf_type_count(),
        ..config.model
    })
}

/// Labels `sl_requests` fixture requests with the oracle and trains from
/// freshly initialized weights, tracking failure on `sl_heldout` requests.
pub fn pretrain_sl(fixture: &Topology, config: &ExperimentConfig) -> Result<SlStage> {
    config.validate()?;
    let model = model_for(fixture, config)?;
    let chain_len = config.training.chain_len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.sub_seed(4));
    let mut on_fixture = |count| -> Result<Vec<_>> {
        Ok(generate_requests(fixture, count, chain_len.clone(), &mut rng)?
            .into_iter()
            .map(|r| (0, r))
            .collect())
    };
    let sl_requests = on_fixture(config.sl_requests)?;
    let heldout = on_fixture(config.sl_heldout)?;
    let fixture_only = [fixture.clone()];
    let dataset = label_dataset(&fixture_only, &sl_requests)?;
    log::info!("labeled {} requests, dropped {}", dataset.entries.len(), dataset.dropped);

    let mut params = model.init_params(config.sub_seed(5));
    let history = train_sl(&model, &mut params, &fixture_only, &dataset, &heldout, &config.training)?;
    Ok(SlStage {
        model,
        dataset,
        params,
        history,
    })
}

/// One RL variant trained from `init` on `pool` with the given λ.
pub fn train_variant(
    model: &GgRnn,
    init: &ParamSet,
    pool: &[Topology],
    topology: TrainingTopology,
    lambda: f64,
    config: &ExperimentConfig,
) -> Result<TrainedVariant> {
    let hp = HyperParams {
        lambda,
        seed: config.sub_seed(6),
        ..config.training.clone()
    };
    let mut params = init.clone();
    let history = train_rl(model, &mut params, pool, &hp)?;
    Ok(TrainedVariant {
        name: variant_name(lambda, &topology),
        lambda,
        topology,
        params,
        history,
    })
}

pub fn run_table1(fixture: &Topology, config: &ExperimentConfig) -> Result<Table1> {
    config.validate()?;
    let cs1_train = generate_pool(fixture, ChangeStrategy::Cs1, config.pool_size, config.sub_seed(1))?;
    let cs2_train = generate_pool(fixture, ChangeStrategy::Cs2, config.pool_size, config.sub_seed(2))?;
    let cs1_test = generate_pool(fixture, ChangeStrategy::Cs1, config.pool_size, config.sub_seed(3))?;

    let SlStage {
        model,
        dataset,
        params: sl_params,
        history: sl_history,
    } = pretrain_sl(fixture, config)?;

    let fixture_only = [fixture.clone()];
    let mut jobs = Vec::new();
    for topology in [
        TrainingTopology::Original,
        TrainingTopology::Pool(ChangeStrategy::Cs1),
        TrainingTopology::Pool(ChangeStrategy::Cs2),
    ] {
        for &lambda in &config.lambdas {
            jobs.push((lambda, topology.clone()));
        }
    }
    let variants = jobs
        .into_par_iter()
        .map(|(lambda, topology)| {
            let pool: &[Topology] = match &topology {
                TrainingTopology::Original => &fixture_only,
                TrainingTopology::Pool(ChangeStrategy::Cs1) => &cs1_train.variants,
                TrainingTopology::Pool(ChangeStrategy::Cs2) => &cs2_train.variants,
            };
            train_variant(&model, &sl_params, pool, topology, lambda, config)
        })
        .collect::<Result<Vec<_>>>()?;

    let suite = TestSuite::build(
        fixture,
        Some(&cs1_test.variants),
        config.test_requests,
        config.training.chain_len(),
        config.sub_seed(7),
    )?;
    let sl_policy = PolicyGenerator::new(&model, &sl_params);
    let policies: Vec<PolicyGenerator> = variants
        .iter()
        .map(|v| PolicyGenerator::new(&model, &v.params))
        .collect();
    let mut approaches: Vec<(&str, &dyn PathGenerator)> = vec![("SL", &sl_policy)];
    for (v, p) in variants.iter().zip(&policies) {
        approaches.push((v.name.as_str(), p));
    }
    let rows = run_experiment(&approaches, &suite)?;

    Ok(Table1 {
        config: config.clone(),
        model,
        dataset,
        sl_params,
        sl_history,
        variants,
        suite,
        rows,
    })
}

/// Lower-case ASCII file name for an approach label.
pub fn file_stem(name: &str) -> String {
    name.chars()
        .filter_map(|c| match c {
            'λ' => Some('l'),
            c if c.is_ascii_alphanumeric() => Some(c.to_ascii_lowercase()),
            '+' | '=' => Some('_'),
            _ => None,
        })
        .collect()
}

impl Table1 {
    pub fn report_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &self.rows)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn report_table(&self) -> String {
        format_report_table(&self.rows)
    }

    /// Writes `report.csv`, `report.txt`, checkpoints and training
    /// histories under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("checkpoints"))?;
        fs::create_dir_all(dir.join("history"))?;
        fs::write(dir.join("report.csv"), self.report_csv()?)?;
        fs::write(dir.join("report.txt"), self.report_table())?;
        let cfg = self.model.config();
        Checkpoint::new(CheckpointMeta::new(cfg, self.config.seed, "sl"), self.sl_params.clone())
            .save(&dir.join("checkpoints/sl.json"))?;
        write_history(fs::File::create(dir.join("history/sl.csv"))?, &self.sl_history.rows())?;
        for v in &self.variants {
            let stem = file_stem(&v.name);
            Checkpoint::new(CheckpointMeta::new(cfg, self.config.seed, stem.clone()), v.params.clone())
                .save(&dir.join(format!("checkpoints/{stem}.json")))?;
            write_history(
                fs::File::create(dir.join(format!("history/{stem}.csv")))?,
                &v.history.rows(100),
            )?;
        }
        Ok(())
    }
}
