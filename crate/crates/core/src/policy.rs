//! The GG-RNN policy: a gated graph neural network encoder over the
//! topology and a recurrent decoder that emits, per step, a distribution
//! over the next node and the probability of processing the top-priority
//! VNF there.
//!
//! Encoder: node states start as the zero-padded annotations, then for
//! `prop_steps` rounds every node sums its neighbors' states through the
//! adjacency matrix and updates through a shared GRU cell.
//!
//! Decoder: a GRU over `[V_all, V_now, h_current]` advances the decoder
//! state; every node is then scored with shared weights,
//! `j_u = tanh(h_u·W_node + d·W_dec + b)`, `logit_u = j_u·v`,
//! `process_u = σ(j_u·p + c)`. Scores are masked to the current node's
//! neighbors. Since no weight depends on the node count, one set of
//! parameters runs on topologies of any size.

use ndarray::{concatenate, s, Array1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{Action, EnvState, Environment, PathResult, SfcRequest};
use crate::error::{Error, Result};
use crate::neuralnet::{
    init_uniform, log_softmax_grad, masked_softmax, sigmoid, GradSet, GruCache, GruCell, ParamSet,
    Tensor,
};
use crate::topology::{NodeId, Topology};

pub const SCORER_VARIANT: &str = "additive-tanh";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of node embeddings and of the decoder state.
    pub hidden_dim: usize,
    /// Message-passing rounds in the encoder.
    pub prop_steps: usize,
    /// Number of VNF types `K` the model was built for.
    pub vnf_types: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 32,
            prop_steps: 5,
            vnf_types: 5,
        }
    }
}

impl ModelConfig {
    /// Annotation features before padding: K availability bits, source,
    /// destination, hosts-V_now.
    pub fn feature_width(&self) -> usize {
        self.vnf_types + 3
    }
}

/// Per-node annotations (`N × hidden_dim`), zero-padded past the features.
pub fn annotate(
    t: &Topology,
    req: &SfcRequest,
    chain_index: usize,
    hidden_dim: usize,
) -> Result<Tensor> {
    let k = t.vnf_type_count();
    if k + 3 > hidden_dim {
        return Err(Error::Shape(format!(
            "{} annotation features do not fit hidden width {hidden_dim}",
            k + 3
        )));
    }
    let mut a = Tensor::zeros((t.node_count(), hidden_dim));
    for m in t.instances() {
        a[[m.node, m.vnf_type]] = 1.0;
    }
    a[[req.source, k]] = 1.0;
    a[[req.destination, k + 1]] = 1.0;
    if let Some(&v_now) = req.chain.get(chain_index) {
        for m in t.instances().iter().filter(|m| m.vnf_type == v_now) {
            a[[m.node, k + 2]] = 1.0;
        }
    }
    Ok(a)
}

pub fn adjacency_tensor(t: &Topology) -> Tensor {
    let n = t.node_count();
    let mut a = Tensor::zeros((n, n));
    for e in t.edges() {
        a[[e.u, e.v]] = 1.0;
        a[[e.v, e.u]] = 1.0;
    }
    a
}

/// Final node embeddings, one row per node.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput(pub Tensor);

#[derive(Clone, Debug)]
pub struct EncodeCache {
    adjacency: Tensor,
    steps: Vec<GruCache>,
}

/// Which actions are allowed: moves to `node[u]`, processing at `process[u]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionMask {
    pub node: Vec<bool>,
    pub process: Vec<bool>,
}

impl ActionMask {
    pub fn from_actions(node_count: usize, actions: &[Action]) -> Self {
        let mut mask = ActionMask {
            node: vec![false; node_count],
            process: vec![false; node_count],
        };
        for a in actions {
            mask.node[a.next_node] = true;
            if a.process {
                mask.process[a.next_node] = true;
            }
        }
        mask
    }

    pub fn allows(&self, a: Action) -> bool {
        self.node.get(a.next_node).copied().unwrap_or(false)
            && (!a.process || self.process[a.next_node])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderContext {
    pub hidden: Tensor,
    /// Multi-hot of the unprocessed chain types.
    pub v_all: Vec<f64>,
    /// One-hot of the top-priority type; all zero once the chain is done.
    pub v_now: Vec<f64>,
    /// Node whose embedding is the third decoder input.
    pub current: NodeId,
}

impl DecoderContext {
    pub fn new(hidden: Tensor, req: &SfcRequest, chain_index: usize, current: NodeId, k: usize) -> Self {
        let mut v_all = vec![0.0; k];
        for &t in &req.chain[chain_index.min(req.chain.len())..] {
            v_all[t] = 1.0;
        }
        let mut v_now = vec![0.0; k];
        if let Some(&t) = req.chain.get(chain_index) {
            v_now[t] = 1.0;
        }
        DecoderContext {
            hidden,
            v_all,
            v_now,
            current,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution {
    pub node_probs: Vec<f64>,
    /// Zero wherever processing is not allowed.
    pub process_prob: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DecodeCache {
    gru: GruCache,
    hidden: Tensor,
    joint: Tensor,
    current: NodeId,
}

/// `log P(node) + log P(process flag | node)`.
pub fn action_log_prob(dist: &ActionDistribution, a: Action) -> Result<f64> {
    let p_node = dist.node_probs.get(a.next_node).copied().unwrap_or(0.0);
    let p_proc = dist.process_prob.get(a.next_node).copied().unwrap_or(0.0);
    if p_node <= 0.0 || (a.process && p_proc <= 0.0) {
        return Err(Error::InvalidAction {
            node: a.next_node,
            action: format!("{a} (masked)"),
        });
    }
    let flag = if a.process { p_proc } else { 1.0 - p_proc };
    Ok(p_node.ln() + flag.ln())
}

#[derive(Clone, Debug)]
pub struct GgRnn {
    config: ModelConfig,
    encoder: GruCell,
    decoder: GruCell,
}

const W_NODE: &str = "score.w_node";
const W_DEC: &str = "score.w_dec";
const B_JOINT: &str = "score.b";
const V_NODE: &str = "score.v";
const V_PROC: &str = "process.v";
const B_PROC: &str = "process.b";

impl GgRnn {
    pub fn new(config: ModelConfig) -> Result<Self> {
        if config.feature_width() > config.hidden_dim {
            return Err(Error::InvalidArgument(format!(
                "hidden_dim {} is smaller than the {} annotation features",
                config.hidden_dim,
                config.feature_width()
            )));
        }
        let d = config.hidden_dim;
        Ok(GgRnn {
            config,
            encoder: GruCell::new("encoder.gru", d, d),
            decoder: GruCell::new("decoder.gru", 2 * config.vnf_types + d, d),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_shapes(&self) -> Vec<(String, (usize, usize))> {
        let d = self.config.hidden_dim;
        let mut shapes = self.encoder.shapes();
        shapes.extend(self.decoder.shapes());
        shapes.extend([
            (W_NODE.to_string(), (d, d)),
            (W_DEC.to_string(), (d, d)),
            (B_JOINT.to_string(), (1, d)),
            (V_NODE.to_string(), (d, 1)),
            (V_PROC.to_string(), (d, 1)),
            (B_PROC.to_string(), (1, 1)),
        ]);
        shapes
    }

    /// Weights uniform in ±1/√fan_in, biases zero.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        for (name, (r, c)) in self.param_shapes() {
            let is_bias = name.contains(".b");
            let t = if is_bias {
                Tensor::zeros((r, c))
            } else {
                init_uniform(r, c, &mut rng)
            };
            p.insert(name, t).expect("parameter names are unique");
        }
        p
    }

    /// Checks that `p` has exactly this model's parameters.
    pub fn check_params(&self, p: &ParamSet) -> Result<()> {
        let shapes = self.param_shapes();
        if p.len() != shapes.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, found {}",
                shapes.len(),
                p.len()
            )));
        }
        for (name, shape) in shapes {
            match p.try_get(&name) {
                Some(t) if t.dim() == shape => {}
                Some(t) => {
                    return Err(Error::Shape(format!(
                        "`{name}` should be {shape:?}, found {:?}",
                        t.dim()
                    )))
                }
                None => return Err(Error::Shape(format!("missing parameter `{name}`"))),
            }
        }
        Ok(())
    }

    pub fn check_topology(&self, t: &Topology) -> Result<()> {
        if t.vnf_type_count() != self.config.vnf_types {
            return Err(Error::InvalidArgument(format!(
                "model expects {} VNF types, topology has {}",
                self.config.vnf_types,
                t.vnf_type_count()
            )));
        }
        Ok(())
    }

    pub fn encode(
        &self,
        p: &ParamSet,
        annotations: &Tensor,
        adjacency: &Tensor,
    ) -> Result<(EncoderOutput, EncodeCache)> {
        let n = annotations.nrows();
        if adjacency.dim() != (n, n) {
            return Err(Error::Shape(format!(
                "{n} annotations but adjacency is {:?}",
                adjacency.dim()
            )));
        }
        if annotations.ncols() != self.config.hidden_dim {
            return Err(Error::Shape(format!(
                "annotation width {} != hidden_dim {}",
                annotations.ncols(),
                self.config.hidden_dim
            )));
        }
        let mut h = annotations.clone();
        let mut steps = Vec::with_capacity(self.config.prop_steps);
        for _ in 0..self.config.prop_steps {
            let incoming = adjacency.t().dot(&h);
            let (next, cache) = self.encoder.forward(p, &h, &incoming)?;
            steps.push(cache);
            h = next;
        }
        Ok((
            EncoderOutput(h),
            EncodeCache {
                adjacency: adjacency.clone(),
                steps,
            },
        ))
    }

    /// Backward through the encoder; returns the gradient w.r.t. the
    /// annotations.
    pub fn encode_backward(
        &self,
        p: &ParamSet,
        cache: &EncodeCache,
        d_out: &Tensor,
        grads: &mut GradSet,
    ) -> Tensor {
        let mut dh = d_out.clone();
        for step in cache.steps.iter().rev() {
            let (dh_prev, d_in) = self.encoder.backward(p, step, &dh, grads);
            dh = dh_prev + cache.adjacency.dot(&d_in);
        }
        dh
    }

    pub fn initial_hidden(&self) -> Tensor {
        Tensor::zeros((1, self.config.hidden_dim))
    }

    pub fn decode_step(
        &self,
        p: &ParamSet,
        enc: &EncoderOutput,
        ctx: &DecoderContext,
        mask: &ActionMask,
    ) -> Result<(ActionDistribution, Tensor, DecodeCache)> {
        let emb = &enc.0;
        let n = emb.nrows();
        if mask.node.len() != n || mask.process.len() != n {
            return Err(Error::Shape(format!(
                "mask covers {} nodes, encoder output has {n}",
                mask.node.len()
            )));
        }
        let k = self.config.vnf_types;
        if ctx.v_all.len() != k || ctx.v_now.len() != k {
            return Err(Error::Shape(format!("decoder context is not sized for {k} types")));
        }
        let x = concatenate![
            Axis(1),
            Array1::from(ctx.v_all.clone()).insert_axis(Axis(0)),
            Array1::from(ctx.v_now.clone()).insert_axis(Axis(0)),
            emb.slice(s![ctx.current..ctx.current + 1, ..])
        ];
        let (hidden, gru) = self.decoder.forward(p, &ctx.hidden, &x)?;

        let mut joint = emb.dot(p.get(W_NODE)) + hidden.dot(p.get(W_DEC)) + p.get(B_JOINT);
        joint.mapv_inplace(f64::tanh);
        let logits = joint.dot(p.get(V_NODE)).column(0).to_vec();
        let proc_logits = (joint.dot(p.get(V_PROC)) + p.get(B_PROC)).column(0).to_vec();

        let node_probs = masked_softmax(&logits, &mask.node)?;
        let process_prob = proc_logits
            .iter()
            .zip(&mask.process)
            .map(|(&l, &ok)| if ok { sigmoid(l) } else { 0.0 })
            .collect();
        Ok((
            ActionDistribution {
                node_probs,
                process_prob,
            },
            hidden.clone(),
            DecodeCache {
                gru,
                hidden,
                joint,
                current: ctx.current,
            },
        ))
    }

    /// Backward through one decode step.
    ///
    /// `d_logits`/`d_proc_logits` are the objective's gradients w.r.t. the
    /// node and process logits, `d_hidden` the gradient arriving at this
    /// step's output state from later steps. Accumulates into `grads` and
    /// `d_enc`; returns the gradient w.r.t. the incoming decoder state.
    #[allow(clippy::too_many_arguments)]
    pub fn decode_step_backward(
        &self,
        p: &ParamSet,
        enc: &EncoderOutput,
        cache: &DecodeCache,
        d_logits: &[f64],
        d_proc_logits: &[f64],
        d_hidden: &Tensor,
        grads: &mut GradSet,
        d_enc: &mut Tensor,
    ) -> Tensor {
        let n = enc.0.nrows();
        let d = self.config.hidden_dim;
        let dl = Tensor::from_shape_vec((n, 1), d_logits.to_vec()).expect("n logits");
        let dpl = Tensor::from_shape_vec((n, 1), d_proc_logits.to_vec()).expect("n logits");
        let joint = &cache.joint;

        grads.accumulate(V_NODE, &joint.t().dot(&dl));
        grads.accumulate(V_PROC, &joint.t().dot(&dpl));
        grads.accumulate(B_PROC, &dpl.sum_axis(Axis(0)).insert_axis(Axis(0)));
        let d_joint = dl.dot(&p.get(V_NODE).t()) + dpl.dot(&p.get(V_PROC).t());
        let d_pre = d_joint * &joint.mapv(|j| 1.0 - j * j);
        let d_pre_sum = d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));

        grads.accumulate(W_NODE, &enc.0.t().dot(&d_pre));
        grads.accumulate(W_DEC, &cache.hidden.t().dot(&d_pre_sum));
        grads.accumulate(B_JOINT, &d_pre_sum);
        *d_enc += &d_pre.dot(&p.get(W_NODE).t());
        let d_h = d_pre_sum.dot(&p.get(W_DEC).t()) + d_hidden;

        let (d_prev, dx) = self.decoder.backward(p, &cache.gru, &d_h, grads);
        let k2 = 2 * self.config.vnf_types;
        let mut row = d_enc.slice_mut(s![cache.current..cache.current + 1, ..]);
        row += &dx.slice(s![.., k2..k2 + d]);
        d_prev
    }

    /// Runs one episode, asking `choose` for each action. With
    /// `record = true` the returned run carries the tape needed for
    /// [`GgRnn::backward`].
    pub fn run_episode<F>(
        &self,
        p: &ParamSet,
        env: &Environment<'_>,
        record: bool,
        mut choose: F,
    ) -> Result<EpisodeRun>
    where
        F: FnMut(usize, &ActionDistribution, &[Action]) -> Result<Option<Action>>,
    {
        let t = env.topology();
        self.check_topology(t)?;
        let req = env.request();
        let adjacency = adjacency_tensor(t);
        let mut state = env.reset();
        let mut hidden = self.initial_hidden();
        let mut stage: Option<(usize, EncoderOutput)> = None;
        let mut run = EpisodeRun {
            tape: record.then(EpisodeTape::default),
            ..Default::default()
        };
        while !state.done {
            let stale = stage.as_ref().is_none_or(|(ci, _)| *ci != state.chain_index);
            if stale {
                let ann = annotate(t, req, state.chain_index, self.config.hidden_dim)?;
                let (enc, cache) = self.encode(p, &ann, &adjacency)?;
                if let Some(tape) = run.tape.as_mut() {
                    tape.stages.push(StageRecord {
                        enc: enc.clone(),
                        cache,
                    });
                }
                stage = Some((state.chain_index, enc));
            }
            let enc = &stage.as_ref().expect("stage set above").1;
            let valid = env.valid_actions(&state)?;
            let mask = ActionMask::from_actions(t.node_count(), &valid);
            let ctx = DecoderContext::new(hidden, req, state.chain_index, state.current_node, self.config.vnf_types);
            let (dist, next_hidden, cache) = self.decode_step(p, enc, &ctx, &mask)?;
            let Some(action) = choose(run.actions.len(), &dist, &valid)? else {
                break;
            };
            let log_prob = action_log_prob(&dist, action)?;
            let tr = env.step(&state, action)?;
            run.inputs.push((state.current_node, state.chain_index));
            run.actions.push(action);
            run.log_probs.push(log_prob);
            run.rewards.push(tr.reward);
            if let Some(tape) = run.tape.as_mut() {
                tape.steps.push(StepRecord {
                    stage: tape.stages.len() - 1,
                    action,
                    dist,
                    cache,
                });
            }
            hidden = next_hidden;
            state = tr.state;
        }
        run.final_state = Some(state);
        Ok(run)
    }

    /// Teacher-forced pass over a fixed action sequence.
    pub fn replay(&self, p: &ParamSet, env: &Environment<'_>, actions: &[Action]) -> Result<EpisodeRun> {
        self.run_episode(p, env, true, |i, _, _| Ok(actions.get(i).copied()))
    }

    /// Gradient of `Σ_t weights[t] · log π(a_t | s_t)` over a recorded run.
    pub fn backward(&self, p: &ParamSet, run: &EpisodeRun, weights: &[f64]) -> Result<GradSet> {
        let tape = run
            .tape
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("episode was run without a tape".into()))?;
        if weights.len() != tape.steps.len() {
            return Err(Error::Shape(format!(
                "{} weights for {} steps",
                weights.len(),
                tape.steps.len()
            )));
        }
        let mut grads = GradSet::zeros_like(p);
        let mut d_enc: Vec<Tensor> = tape
            .stages
            .iter()
            .map(|s| Tensor::zeros(s.enc.0.raw_dim()))
            .collect();
        let mut d_hidden = self.initial_hidden();
        for (step, &w) in tape.steps.iter().zip(weights).rev() {
            let n = step.dist.node_probs.len();
            let a = step.action.next_node;
            let d_logits: Vec<f64> = log_softmax_grad(&step.dist.node_probs, a)
                .into_iter()
                .map(|g| g * w)
                .collect();
            let mut d_proc = vec![0.0; n];
            let q = step.dist.process_prob[a];
            if q > 0.0 {
                d_proc[a] = if step.action.process { w * (1.0 - q) } else { -w * q };
            }
            d_hidden = self.decode_step_backward(
                p,
                &tape.stages[step.stage].enc,
                &step.cache,
                &d_logits,
                &d_proc,
                &d_hidden,
                &mut grads,
                &mut d_enc[step.stage],
            );
        }
        for (stage, d) in tape.stages.iter().zip(&d_enc) {
            self.encode_backward(p, &stage.cache, d, &mut grads);
        }
        Ok(grads)
    }

    /// Sum of action log-probabilities of a fixed sequence; the scalar whose
    /// gradient [`GgRnn::backward`] computes with unit weights.
    pub fn sequence_log_prob(&self, p: &ParamSet, env: &Environment<'_>, actions: &[Action]) -> Result<f64> {
        let run = self.run_episode(p, env, false, |i, _, _| Ok(actions.get(i).copied()))?;
        Ok(run.log_probs.iter().sum())
    }
}

#[derive(Clone, Debug)]
struct StageRecord {
    enc: EncoderOutput,
    cache: EncodeCache,
}

#[derive(Clone, Debug)]
struct StepRecord {
    stage: usize,
    action: Action,
    dist: ActionDistribution,
    cache: DecodeCache,
}

/// Forward caches of a whole episode.
#[derive(Clone, Debug, Default)]
pub struct EpisodeTape {
    stages: Vec<StageRecord>,
    steps: Vec<StepRecord>,
}

impl EpisodeTape {
    /// Number of encoder passes (one per chain stage visited).
    pub fn encoder_passes(&self) -> usize {
        self.stages.len()
    }
}

#[derive(Clone, Debug, Default)]
pub struct EpisodeRun {
    /// `(current node, chain index)` before each action.
    pub inputs: Vec<(NodeId, usize)>,
    pub actions: Vec<Action>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub final_state: Option<EnvState>,
    pub tape: Option<EpisodeTape>,
}

impl EpisodeRun {
    pub fn path(&self) -> PathResult {
        self.final_state
            .as_ref()
            .map(|s| s.path.clone())
            .unwrap_or_default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RolloutMode {
    Greedy,
    Sample,
    EpsilonGreedy(f64),
}

/// Highest node probability (lowest id on ties), processing iff its
/// probability is at least one half.
pub fn greedy_action(dist: &ActionDistribution) -> Action {
    let mut best = 0;
    for (i, &p) in dist.node_probs.iter().enumerate() {
        if p > dist.node_probs[best] {
            best = i;
        }
    }
    Action {
        next_node: best,
        process: dist.process_prob[best] >= 0.5,
    }
}

pub fn choose_action<R: Rng + ?Sized>(
    dist: &ActionDistribution,
    valid: &[Action],
    mode: RolloutMode,
    rng: &mut R,
) -> Action {
    match mode {
        RolloutMode::Greedy => greedy_action(dist),
        RolloutMode::EpsilonGreedy(eps) => {
            if rng.gen::<f64>() < eps {
                valid[rng.gen_range(0..valid.len())]
            } else {
                greedy_action(dist)
            }
        }
        RolloutMode::Sample => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut node = None;
            for (i, &p) in dist.node_probs.iter().enumerate() {
                if p > 0.0 {
                    acc += p;
                    node = Some(i);
                    if u < acc {
                        break;
                    }
                }
            }
            let next_node = node.expect("distribution has support");
            let q = dist.process_prob[next_node];
            Action {
                next_node,
                process: q > 0.0 && rng.gen::<f64>() < q,
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub node: NodeId,
    pub chain_index: usize,
    pub action: Action,
    pub reward: f64,
    pub log_prob: f64,
}

/// A recorded episode: per-step inputs, actions, rewards and log-probs,
/// plus the final path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub request: SfcRequest,
    pub steps: Vec<TraceStep>,
    pub path: PathResult,
}

impl EpisodeTrace {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }

    pub fn success(&self) -> bool {
        self.path.success
    }
}

pub fn rollout<R: Rng + ?Sized>(
    model: &GgRnn,
    p: &ParamSet,
    env: &Environment<'_>,
    mode: RolloutMode,
    rng: &mut R,
) -> Result<EpisodeTrace> {
    let run = model.run_episode(p, env, false, |_, dist, valid| {
        Ok(Some(choose_action(dist, valid, mode, rng)))
    })?;
    let steps = run
        .inputs
        .iter()
        .zip(&run.actions)
        .zip(run.rewards.iter().zip(&run.log_probs))
        .map(|((&(node, chain_index), &action), (&reward, &log_prob))| TraceStep {
            node,
            chain_index,
            action,
            reward,
            log_prob,
        })
        .collect();
    Ok(EpisodeTrace {
        request: env.request().clone(),
        steps,
        path: run.path(),
    })
}
