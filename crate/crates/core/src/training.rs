//! Supervised pre-training on oracle labels and REINFORCE fine-tuning.

use std::collections::VecDeque;
use std::io::Write;
use std::ops::RangeInclusive;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{generate_requests, Environment, RewardConfig, SfcRequest, DEFAULT_CHAIN_LEN};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_policy, failure_ratio, PolicyGenerator};
use crate::neuralnet::{sgd_update, Direction, ParamSet};
use crate::oracle::LabeledDataset;
use crate::policy::{rollout, EpisodeTrace, GgRnn, RolloutMode};
use crate::topology::{Delay, Topology};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub alpha_sl: f64,
    pub alpha_rl: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub episodes: usize,
    pub sl_epochs: usize,
    pub seed: u64,
    /// Divide returns by the success reward before the update.
    pub normalize_returns: bool,
    /// Rolling window for the RL success rate.
    pub success_window: usize,
    pub min_chain_len: usize,
    pub max_chain_len: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            alpha_sl: 0.001,
            alpha_rl: 1e-5,
            gamma: 0.999,
            epsilon: 0.01,
            lambda: 0.0,
            episodes: 5000,
            sl_epochs: 30,
            seed: 0,
            normalize_returns: false,
            success_window: 100,
            min_chain_len: *DEFAULT_CHAIN_LEN.start(),
            max_chain_len: *DEFAULT_CHAIN_LEN.end(),
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.alpha_sl) || !positive(self.alpha_rl) {
            return bad("learning rates must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} is outside (0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon {} is outside [0, 1]", self.epsilon));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return bad(format!("lambda {} must be finite and non-negative", self.lambda));
        }
        if self.success_window == 0 {
            return bad("success_window must be at least 1".into());
        }
        if self.min_chain_len == 0 || self.min_chain_len > self.max_chain_len {
            return bad(format!(
                "chain length range {}..={} is invalid",
                self.min_chain_len, self.max_chain_len
            ));
        }
        Ok(())
    }

    pub fn reward(&self) -> RewardConfig {
        RewardConfig::with_lambda(self.lambda)
    }

    pub fn chain_len(&self) -> RangeInclusive<usize> {
        self.min_chain_len..=self.max_chain_len
    }
}

/// `G_t = r_t + γ·G_{t+1}`, computed from the last step backwards.
pub fn compute_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = 0.0;
    for (i, &r) in rewards.iter().enumerate().rev() {
        g = r + gamma * g;
        out[i] = g;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateOutcome {
    Applied,
    /// Every return was zero, so the gradient is zero.
    ZeroReturns,
    /// The gradient had a NaN or infinity; parameters were left alone.
    NonFinite,
}

/// One REINFORCE step, `θ ← θ + α Σ_t G_t ∇ log π(a_t|s_t)`, from a trace
/// recorded with the current parameters.
pub fn reinforce_update(
    model: &GgRnn,
    params: &mut ParamSet,
    env: &Environment<'_>,
    trace: &EpisodeTrace,
    hp: &HyperParams,
) -> Result<UpdateOutcome> {
    let mut returns = compute_returns(&trace.rewards(), hp.gamma);
    if returns.iter().all(|&g| g == 0.0) {
        return Ok(UpdateOutcome::ZeroReturns);
    }
    if hp.normalize_returns {
        let scale = env.reward_config().success_base;
        returns.iter_mut().for_each(|g| *g /= scale);
    }
    let run = model.replay(params, env, &trace.actions())?;
    let grads = model.backward(params, &run, &returns)?;
    match sgd_update(params, &grads, hp.alpha_rl, Direction::Ascend) {
        Ok(()) => Ok(UpdateOutcome::Applied),
        Err(Error::NonFinite(_)) => {
            warn!("skipping update with a non-finite gradient");
            Ok(UpdateOutcome::NonFinite)
        }
        Err(e) => Err(e),
    }
}

/// One row of a training history CSV. Columns that do not apply to a
/// stage are left empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub success_rate: Option<f64>,
    pub mean_delay: Option<f64>,
    pub loss: Option<f64>,
}

pub fn write_history<W: Write>(out: W, rows: &[HistoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SlHistory {
    /// Per epoch: mean over items of `−Σ_t log π(label_t)`.
    pub epoch_loss: Vec<f64>,
    /// Per epoch: greedy failure ratio on the held-out requests, if any.
    pub heldout_failure: Vec<Option<f64>>,
    pub skipped_updates: usize,
}

impl SlHistory {
    pub fn rows(&self) -> Vec<HistoryRow> {
        self.epoch_loss
            .iter()
            .zip(&self.heldout_failure)
            .enumerate()
            .map(|(i, (&loss, fr))| HistoryRow {
                step: i + 1,
                success_rate: fr.map(|f| 1.0 - f),
                mean_delay: None,
                loss: Some(loss),
            })
            .collect()
    }
}

/// Teacher-forced SL: per labeled item, one descent step on
/// `−Σ_t log π(label action_t | label prefix)`, items shuffled each epoch.
pub fn train_sl(
    model: &GgRnn,
    params: &mut ParamSet,
    topologies: &[Topology],
    dataset: &LabeledDataset,
    heldout: &[(usize, SfcRequest)],
    hp: &HyperParams,
) -> Result<SlHistory> {
    hp.validate()?;
    if dataset.entries.is_empty() && hp.sl_epochs > 0 {
        return Err(Error::InvalidArgument("SL dataset is empty".into()));
    }
    let reward = hp.reward();
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut order: Vec<usize> = (0..dataset.entries.len()).collect();
    let mut history = SlHistory::default();
    for epoch in 0..hp.sl_epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        for &i in &order {
            let entry = &dataset.entries[i];
            let t = topologies.get(entry.topology_id).ok_or_else(|| {
                Error::InvalidArgument(format!("label refers to missing topology {}", entry.topology_id))
            })?;
            let env = Environment::with_default_budget(t, entry.request.clone(), reward)?;
            let run = model.replay(params, &env, &entry.action_sequence)?;
            total_loss -= run.log_probs.iter().sum::<f64>();
            let grads = model.backward(params, &run, &vec![1.0; run.actions.len()])?;
            // ascending Σ log π is descending the loss
            match sgd_update(params, &grads, hp.alpha_sl, Direction::Ascend) {
                Ok(()) => {}
                Err(Error::NonFinite(_)) => {
                    warn!("epoch {epoch}: skipping update with a non-finite gradient");
                    history.skipped_updates += 1;
                }
                Err(e) => return Err(e),
            }
        }
        let loss = total_loss / dataset.entries.len() as f64;
        let fr = if heldout.is_empty() {
            None
        } else {
            let policy = PolicyGenerator::new(model, params);
            let outcomes = evaluate_policy(&policy, topologies, heldout, reward)?;
            Some(failure_ratio(&outcomes)?)
        };
        log::info!(
            "sl epoch {}: loss {loss:.4}{}",
            epoch + 1,
            fr.map(|f| format!(", held-out failure {f:.4}")).unwrap_or_default()
        );
        history.epoch_loss.push(loss);
        history.heldout_failure.push(fr);
    }
    Ok(history)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStat {
    pub topology_id: usize,
    pub success: bool,
    pub delay: Delay,
    pub steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RlHistory {
    pub window: usize,
    pub episodes: Vec<EpisodeStat>,
    /// Rolling success rate after each episode (over at most `window`
    /// most recent episodes).
    pub rolling_success: Vec<f64>,
    pub skipped_updates: usize,
}

impl RlHistory {
    /// First episode (1-based) after which a full window has success rate
    /// at least `target`.
    pub fn first_reaching(&self, target: f64) -> Option<usize> {
        self.rolling_success
            .iter()
            .enumerate()
            .skip(self.window.saturating_sub(1))
            .find(|(_, &r)| r >= target)
            .map(|(i, _)| i + 1)
    }

    /// Rows every `every` episodes, plus the last one.
    pub fn rows(&self, every: usize) -> Vec<HistoryRow> {
        let every = every.max(1);
        let n = self.episodes.len();
        (1..=n)
            .filter(|&e| e % every == 0 || e == n)
            .map(|e| {
                let recent = &self.episodes[e.saturating_sub(self.window)..e];
                let delays: Vec<f64> = recent.iter().filter(|s| s.success).map(|s| s.delay as f64).collect();
                HistoryRow {
                    step: e,
                    success_rate: Some(self.rolling_success[e - 1]),
                    mean_delay: (!delays.is_empty()).then(|| delays.iter().sum::<f64>() / delays.len() as f64),
                    loss: None,
                }
            })
            .collect()
    }
}

/// REINFORCE over a topology pool: each episode draws a topology uniformly,
/// a fresh request on it, rolls out ε-greedy and updates.
pub fn train_rl(
    model: &GgRnn,
    params: &mut ParamSet,
    pool: &[Topology],
    hp: &HyperParams,
) -> Result<RlHistory> {
    hp.validate()?;
    if pool.is_empty() {
        return Err(Error::InvalidArgument("RL topology pool is empty".into()));
    }
    let reward = hp.reward();
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut history = RlHistory {
        window: hp.success_window,
        ..Default::default()
    };
    let mut window: VecDeque<bool> = VecDeque::with_capacity(hp.success_window);
    let mut successes = 0usize;
    for episode in 0..hp.episodes {
        let tid = rng.gen_range(0..pool.len());
        let t = &pool[tid];
        let req = generate_requests(t, 1, hp.chain_len(), &mut rng)?.remove(0);
        let env = Environment::with_default_budget(t, req, reward)?;
        let trace = rollout(model, params, &env, RolloutMode::EpsilonGreedy(hp.epsilon), &mut rng)?;
        if reinforce_update(model, params, &env, &trace, hp)? == UpdateOutcome::NonFinite {
            history.skipped_updates += 1;
        }

        let success = trace.success();
        window.push_back(success);
        successes += success as usize;
        if window.len() > hp.success_window {
            successes -= window.pop_front().expect("nonempty") as usize;
        }
        let rate = successes as f64 / window.len() as f64;
        history.rolling_success.push(rate);
        history.episodes.push(EpisodeStat {
            topology_id: tid,
            success,
            delay: trace.path.total_delay,
            steps: trace.steps.len(),
        });
        if (episode + 1) % 500 == 0 {
            log::info!("rl episode {}: rolling success {rate:.3}", episode + 1);
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::Action;
    use crate::neuralnet::{finite_diff_check, GradSet};
    use crate::oracle::{label_dataset, LabeledEntry};
    use crate::policy::ModelConfig;
    use crate::topology::{internet2_fixture, Edge, VnfInstance};

    #[test]
    fn returns_examples() {
        assert_eq!(compute_returns(&[0.0, 0.0, 10000.0], 1.0), vec![10000.0; 3]);
        let g = compute_returns(&[0.0, 10000.0], 0.999);
        assert!((g[0] - 9990.0).abs() < 1e-9 && g[1] == 10000.0);
        assert_eq!(compute_returns(&[0.0; 4], 0.5), vec![0.0; 4]);
        assert!(compute_returns(&[], 0.9).is_empty());
    }

    fn tiny() -> Topology {
        Topology::new(
            4,
            vec![
                Edge { u: 0, v: 1, delay: 1 },
                Edge { u: 1, v: 2, delay: 2 },
                Edge { u: 2, v: 3, delay: 1 },
                Edge { u: 0, v: 3, delay: 5 },
            ],
            vec![
                VnfInstance { node: 1, vnf_type: 0, proc_delay: 1 },
                VnfInstance { node: 3, vnf_type: 1, proc_delay: 2 },
            ],
            2,
        )
        .unwrap()
    }

    fn model() -> GgRnn {
        GgRnn::new(ModelConfig {
            hidden_dim: 8,
            prop_steps: 2,
            vnf_types: 2,
        })
        .unwrap()
    }

    #[test]
    fn failure_leaves_params_unchanged() {
        let t = tiny();
        let m = model();
        let mut p = m.init_params(0);
        let before = p.clone();
        let env = Environment::new(&t, SfcRequest::new(0, 2, vec![0, 1]), RewardConfig::default(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let trace = rollout(&m, &p, &env, RolloutMode::Greedy, &mut rng).unwrap();
        assert!(!trace.success());
        let hp = HyperParams { gamma: 0.7, ..Default::default() };
        assert_eq!(reinforce_update(&m, &mut p, &env, &trace, &hp).unwrap(), UpdateOutcome::ZeroReturns);
        assert_eq!(p, before);
    }

    #[test]
    fn single_step_update_matches_scaled_finite_difference() {
        let t = tiny();
        let m = model();
        let p0 = m.init_params(3);
        let req = SfcRequest::new(0, 1, vec![0]);
        let env = Environment::with_default_budget(&t, req, RewardConfig::default()).unwrap();
        let actions = [Action::process_at(1)];
        let run = m.replay(&p0, &env, &actions).unwrap();
        let trace = EpisodeTrace {
            request: env.request().clone(),
            steps: vec![crate::policy::TraceStep {
                node: 0,
                chain_index: 0,
                action: actions[0],
                reward: run.rewards[0],
                log_prob: run.log_probs[0],
            }],
            path: run.path(),
        };
        assert!(trace.success());
        let g = trace.rewards()[0];
        assert_eq!(g, 10000.0 - 0.0);

        let hp = HyperParams::default();
        let mut p = p0.clone();
        assert_eq!(reinforce_update(&m, &mut p, &env, &trace, &hp).unwrap(), UpdateOutcome::Applied);
        // delta / (α·G) is the analytic ∇ log π; compare with finite differences
        let mut delta = GradSet::zeros_like(&p0);
        for (name, t) in p.iter() {
            delta.accumulate(name, &((t - p0.get(name)) / (hp.alpha_rl * g)));
        }
        let f = |q: &ParamSet| m.sequence_log_prob(q, &env, &actions).unwrap();
        let report = finite_diff_check(f, &p0, &delta, 1e-5, 1e-5).unwrap();
        assert!(report.passed(), "{:?}", report.worst());

        let mut again = p0.clone();
        reinforce_update(&m, &mut again, &env, &trace, &hp).unwrap();
        assert_eq!(again, p);
    }

    #[test]
    fn replayed_log_probs_match_rollout() {
        let f = internet2_fixture();
        let m = GgRnn::new(ModelConfig::default()).unwrap();
        let p = m.init_params(5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for req in generate_requests(&f, 5, 1..=3, &mut rng).unwrap() {
            let env = Environment::with_default_budget(&f, req, RewardConfig::default()).unwrap();
            let trace = rollout(&m, &p, &env, RolloutMode::Sample, &mut rng).unwrap();
            let run = m.replay(&p, &env, &trace.actions()).unwrap();
            for (s, lp) in trace.steps.iter().zip(&run.log_probs) {
                assert!((s.log_prob - lp).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_epochs_and_zero_episodes_are_noops() {
        let t = tiny();
        let m = model();
        let mut p = m.init_params(1);
        let before = p.clone();
        let hp = HyperParams { sl_epochs: 0, episodes: 0, ..Default::default() };
        let h = train_sl(&m, &mut p, std::slice::from_ref(&t), &LabeledDataset::default(), &[], &hp).unwrap();
        assert!(h.epoch_loss.is_empty());
        let h = train_rl(&m, &mut p, &[t], &hp).unwrap();
        assert!(h.episodes.is_empty());
        assert_eq!(p, before);
    }

    #[test]
    fn sl_overfits_one_label() {
        let t = tiny();
        let m = model();
        let mut p = m.init_params(2);
        let req = SfcRequest::new(0, 3, vec![0, 1]);
        let ds = label_dataset(std::slice::from_ref(&t), &[(0, req.clone())]).unwrap();
        let LabeledEntry { action_sequence, .. } = ds.entries[0].clone();
        let hp = HyperParams { sl_epochs: 200, alpha_sl: 0.05, ..Default::default() };
        let h = train_sl(&m, &mut p, std::slice::from_ref(&t), &ds, &[(0, req.clone())], &hp).unwrap();
        assert_eq!(h.heldout_failure.last().unwrap().unwrap(), 0.0);
        let env = Environment::with_default_budget(&t, req, RewardConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let trace = rollout(&m, &p, &env, RolloutMode::Greedy, &mut rng).unwrap();
        assert_eq!(trace.actions(), action_sequence);
    }

    #[test]
    fn sl_loss_decreases_on_fixture() {
        let f = internet2_fixture();
        let m = GgRnn::new(ModelConfig::default()).unwrap();
        let mut p = m.init_params(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let reqs: Vec<_> = generate_requests(&f, 40, 1..=3, &mut rng)
            .unwrap()
            .into_iter()
            .map(|r| (0, r))
            .collect();
        let ds = label_dataset(std::slice::from_ref(&f), &reqs).unwrap();
        let hp = HyperParams { sl_epochs: 20, ..Default::default() };
        let h = train_sl(&m, &mut p, &[f], &ds, &[], &hp).unwrap();
        assert!(h.epoch_loss[0] >= *h.epoch_loss.last().unwrap(), "{:?}", h.epoch_loss);
    }

    #[test]
    fn rl_history_and_determinism() {
        let t = tiny();
        let m = model();
        let hp = HyperParams { episodes: 60, success_window: 10, seed: 9, ..Default::default() };
        let mut a = m.init_params(6);
        let mut b = a.clone();
        let ha = train_rl(&m, &mut a, std::slice::from_ref(&t), &hp).unwrap();
        let hb = train_rl(&m, &mut b, &[t], &hp).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert_eq!(ha.rolling_success.len(), 60);
        let rows = ha.rows(25);
        assert_eq!(rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![25, 50, 60]);
        let mut buf = Vec::new();
        write_history(&mut buf, &rows).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("step,success_rate,mean_delay,loss\n"));
    }

    #[test]
    fn hyperparams_validate() {
        assert!(HyperParams::default().validate().is_ok());
        assert!(HyperParams { gamma: 0.0, ..Default::default() }.validate().is_err());
        assert!(HyperParams { epsilon: 1.5, ..Default::default() }.validate().is_err());
        assert!(HyperParams { alpha_rl: 0.0, ..Default::default() }.validate().is_err());
        let parsed: HyperParams = serde_json::from_str(r#"{"lambda": 1.0, "episodes": 10}"#).unwrap();
        assert_eq!(parsed.lambda, 1.0);
        assert_eq!(parsed.gamma, 0.999);
    }
}
