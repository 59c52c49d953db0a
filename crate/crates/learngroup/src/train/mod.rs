//! Masked-network training on the toy multi-agent task.
//!
//! The policy network is a stack of masked layers sharing one group count:
//! every layer owns a [`GroupingPair`] whose mask gates its weights on each
//! forward pass. Stored weights keep their values while masked; their
//! gradients are exactly zero for as long as the mask hides them, and the
//! grouping matrices receive straight-through gradients so the mask itself
//! learns. Masks are regenerated from the updated grouping matrices every
//! iteration.
//!
//! Agents share the network. An optional communication layer mixes the mean
//! of the per-agent hidden states back into every agent (a stand-in for a
//! recurrent communication cell, which is out of scope here). Training is
//! REINFORCE with a moving-average baseline over episode returns, optimized
//! by RMSprop. Everything runs in `f64`, which keeps finite-difference
//! gradient checks tight.

pub mod env;
pub mod rmsprop;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::flgw::{
    apply_mask, grouping_gradients, mask_gradient, weight_gradient, GroupingPair, MaskMatrix,
    SelectionMatrix,
};
use crate::matrix::Matrix;
use crate::rng;

use env::{Action, ToyEnv, ACTION_COUNT, OBS_DIM};
use rmsprop::{rmsprop_step, RmspropParams, RmspropState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative given pre- and post-activation values.
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - post * post,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One trainable layer: dense weights gated by the grouping mask.
#[derive(Debug, Clone)]
pub struct MaskedLayer {
    w: Matrix,
    bias: Vec<f64>,
    grouping: GroupingPair,
    activation: Activation,
    mask: MaskMatrix,
}

impl MaskedLayer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        groups: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        let grouping = GroupingPair::init(in_dim, out_dim, groups, rng::derive(seed, &[1]))?;
        let mut wrng = rng::rng_from_seed(rng::derive(seed, &[2]));
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w = Matrix::from_fn(in_dim, out_dim, |_, _| {
            (wrng.random::<f64>() * 2.0 - 1.0) * limit
        });
        let mask = grouping.mask();
        Ok(MaskedLayer {
            w,
            bias: vec![0.0; out_dim],
            grouping,
            activation,
            mask,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.w
    }

    /// Overwrite one stored weight (gradient-check perturbations).
    pub fn set_weight(&mut self, r: usize, c: usize, v: f64) {
        self.w.set(r, c, v);
    }

    pub fn mask(&self) -> &MaskMatrix {
        &self.mask
    }

    pub fn grouping(&self) -> &GroupingPair {
        &self.grouping
    }

    /// Regenerate the mask from the current grouping matrices.
    pub fn refresh_mask(&mut self) {
        self.mask = self.grouping.mask();
    }

    pub fn effective_weights(&self) -> Matrix {
        apply_mask(&self.w, &self.mask).expect("mask tracks weight shape")
    }

    /// Forward one layer: `act(input * (w ⊙ mask) + bias)`. Returns
    /// (pre-activation, post-activation).
    fn forward(&self, input: &Matrix) -> Result<(Matrix, Matrix)> {
        let eff = self.effective_weights();
        let mut pre = input.matmul(&eff)?;
        for r in 0..pre.rows() {
            for c in 0..pre.cols() {
                pre.set(r, c, pre.get(r, c) + self.bias[c]);
            }
        }
        let post = Matrix::from_fn(pre.rows(), pre.cols(), |r, c| {
            self.activation.apply(pre.get(r, c))
        });
        Ok((pre, post))
    }

    /// Forward a single vector through the simulated core pipeline instead
    /// of the tensor path. Cross-check hook.
    pub fn forward_vec_via_simulator(
        &self,
        x: &[f64],
        cores: usize,
        config: &crate::vpu::CoreConfig,
        params: &crate::osel::CycleParams,
    ) -> Result<Vec<f64>> {
        let (y, _) = crate::vpu::spmv(&self.w, &self.grouping, x, cores, config, params)?;
        Ok(y.iter()
            .zip(&self.bias)
            .map(|(&v, &b)| self.activation.apply(v + b))
            .collect())
    }
}

/// Policy network shared by all agents.
#[derive(Debug, Clone)]
pub struct MaskedNetwork {
    pub layers: Vec<MaskedLayer>,
    /// Mean-pooled hidden-state mixing layer, applied after the first layer.
    pub comm: Option<MaskedLayer>,
}

impl MaskedNetwork {
    /// Three masked layers (tanh, tanh, identity head) plus the optional
    /// communication layer, all sharing one group count.
    pub fn policy(
        obs_dim: usize,
        hidden: usize,
        actions: usize,
        groups: usize,
        use_comm: bool,
        seed: u64,
    ) -> Result<Self> {
        let layers = vec![
            MaskedLayer::new(
                obs_dim,
                hidden,
                groups.min(obs_dim).min(hidden),
                Activation::Tanh,
                rng::derive(seed, &[10]),
            )?,
            MaskedLayer::new(hidden, hidden, groups, Activation::Tanh, rng::derive(seed, &[11]))?,
            MaskedLayer::new(
                hidden,
                actions,
                groups.min(actions).min(hidden),
                Activation::Identity,
                rng::derive(seed, &[12]),
            )?,
        ];
        let comm = if use_comm {
            Some(MaskedLayer::new(
                hidden,
                hidden,
                groups,
                Activation::Identity,
                rng::derive(seed, &[13]),
            )?)
        } else {
            None
        };
        Ok(MaskedNetwork { layers, comm })
    }

    pub fn refresh_masks(&mut self) {
        for layer in &mut self.layers {
            layer.refresh_mask();
        }
        if let Some(comm) = &mut self.comm {
            comm.refresh_mask();
        }
    }

    /// Mean mask density over all masked layers.
    pub fn mean_density(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for layer in self.layers.iter().chain(self.comm.iter()) {
            total += layer.mask().density();
            count += 1;
        }
        total / count.max(1) as f64
    }

    /// Order-sensitive hash of all current masks; changes whenever any mask
    /// row flips.
    pub fn mask_fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut feed = |byte: u64| {
            h ^= byte;
            h = h.wrapping_mul(0x1000_0000_01b3);
        };
        for layer in self.layers.iter().chain(self.comm.iter()) {
            for row in layer.mask().rows() {
                for pos in row.ones_positions() {
                    feed(pos as u64 + 1);
                }
                feed(0);
            }
        }
        h
    }

    /// Forward all agents at once (`obs` is agents x obs_dim). Returns the
    /// per-agent action distributions and the trace backward needs.
    pub fn forward(&self, obs: &Matrix) -> Result<(Matrix, ForwardTrace)> {
        if obs.cols() != self.layers[0].in_dim() {
            return Err(Error::ShapeMismatch {
                what: "network input",
                expected: (obs.rows(), self.layers[0].in_dim()),
                got: obs.shape(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut posts = Vec::with_capacity(self.layers.len());
        let mut comm_trace = None;

        let mut current = obs.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            inputs.push(current.clone());
            let (pre, post) = layer.forward(&current)?;
            current = post.clone();
            if l == 0 {
                if let Some(comm) = &self.comm {
                    let agents = post.rows();
                    let mean: Vec<f64> = (0..post.cols())
                        .map(|c| (0..agents).map(|r| post.get(r, c)).sum::<f64>() / agents as f64)
                        .collect();
                    let mean_mat = Matrix::from_vec(1, mean.len(), mean.clone())?;
                    let (cpre, cpost) = comm.forward(&mean_mat)?;
                    current = Matrix::from_fn(post.rows(), post.cols(), |r, c| {
                        post.get(r, c) + cpost.get(0, c)
                    });
                    comm_trace = Some(CommTrace {
                        mean: mean_mat,
                        pre: cpre,
                        post: cpost,
                    });
                }
            }
            pres.push(pre);
            posts.push(post);
        }
        let logits = current;
        let probs = softmax_rows(&logits);
        let trace = ForwardTrace {
            inputs,
            pres,
            posts,
            comm: comm_trace,
            logits,
            probs: probs.clone(),
        };
        Ok((probs, trace))
    }

    /// Backpropagate a gradient on the logits through every layer.
    /// Weight gradients come out pre-masked (masked weights get exactly
    /// zero) and each layer's grouping matrices receive straight-through
    /// gradients. Aborts on non-finite values.
    pub fn backward(&self, trace: &ForwardTrace, dlogits: &Matrix) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(trace, dlogits, &mut grads)?;
        grads.check_finite()?;
        Ok(grads)
    }

    /// Accumulating variant of [`backward`](MaskedNetwork::backward);
    /// finiteness is checked by the caller once per batch.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        dlogits: &Matrix,
        grads: &mut Gradients,
    ) -> Result<()> {
        let last = self.layers.len() - 1;
        if dlogits.shape() != trace.pres[last].shape() {
            return Err(Error::ShapeMismatch {
                what: "logit gradient",
                expected: trace.pres[last].shape(),
                got: dlogits.shape(),
            });
        }
        let mut dpost = dlogits.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let pre = &trace.pres[l];
            let post = &trace.posts[l];
            // through the activation
            let dpre = Matrix::from_fn(dpost.rows(), dpost.cols(), |r, c| {
                dpost.get(r, c) * layer.activation.derivative(pre.get(r, c), post.get(r, c))
            });
            accumulate_layer(layer, &trace.inputs[l], &dpre, &mut grads.layers[l])?;
            if l == 0 {
                break;
            }
            let mut dinput = dpre.matmul(&layer.effective_weights().transpose())?;
            if l == 1 {
                if let (Some(comm), Some(ct)) = (&self.comm, &trace.comm) {
                    // mixed = post0 + broadcast(comm(mean(post0)))
                    let agents = dinput.rows() as f64;
                    let dcpost = Matrix::from_fn(1, dinput.cols(), |_, c| {
                        (0..dinput.rows()).map(|r| dinput.get(r, c)).sum()
                    });
                    let dcpre = Matrix::from_fn(1, dcpost.cols(), |_, c| {
                        dcpost.get(0, c)
                            * comm.activation.derivative(ct.pre.get(0, c), ct.post.get(0, c))
                    });
                    let comm_grads = grads.comm.as_mut().expect("comm grads allocated");
                    accumulate_layer(comm, &ct.mean, &dcpre, comm_grads)?;
                    let dmean = dcpre.matmul(&comm.effective_weights().transpose())?;
                    dinput = Matrix::from_fn(dinput.rows(), dinput.cols(), |r, c| {
                        dinput.get(r, c) + dmean.get(0, c) / agents
                    });
                }
            }
            dpost = dinput;
        }
        Ok(())
    }
}

fn accumulate_layer(
    layer: &MaskedLayer,
    input: &Matrix,
    dpre: &Matrix,
    out: &mut LayerGrads,
) -> Result<()> {
    let dw_eff = input.transpose().matmul(dpre)?;
    let dw = weight_gradient(&dw_eff, &layer.mask)?;
    let dmask = mask_gradient(&layer.w, &dw_eff)?;
    let input_sel = SelectionMatrix::from_input_grouping(layer.grouping.ig());
    let output_sel = SelectionMatrix::from_output_grouping(layer.grouping.og());
    let (dig, dog) = grouping_gradients(&dmask, &input_sel, &output_sel)?;
    out.dw.add_assign(&dw)?;
    out.dig.add_assign(&dig)?;
    out.dog.add_assign(&dog)?;
    for (b, c) in out.dbias.iter_mut().zip(0..dpre.cols()) {
        *b += (0..dpre.rows()).map(|r| dpre.get(r, c)).sum::<f64>();
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct CommTrace {
    mean: Matrix,
    pre: Matrix,
    post: Matrix,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    inputs: Vec<Matrix>,
    pres: Vec<Matrix>,
    posts: Vec<Matrix>,
    comm: Option<CommTrace>,
    pub logits: Matrix,
    pub probs: Matrix,
}

/// Gradients for one layer's parameters.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub dw: Matrix,
    pub dbias: Vec<f64>,
    pub dig: Matrix,
    pub dog: Matrix,
}

impl LayerGrads {
    fn zeros_like(layer: &MaskedLayer) -> Self {
        LayerGrads {
            dw: Matrix::zeros(layer.in_dim(), layer.out_dim()),
            dbias: vec![0.0; layer.out_dim()],
            dig: Matrix::zeros(layer.in_dim(), layer.grouping.groups()),
            dog: Matrix::zeros(layer.grouping.groups(), layer.out_dim()),
        }
    }

    fn is_finite(&self) -> bool {
        self.dw.iter().all(f64::is_finite)
            && self.dbias.iter().all(|v| v.is_finite())
            && self.dig.iter().all(f64::is_finite)
            && self.dog.iter().all(f64::is_finite)
    }
}

/// Gradients for the whole network.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
    pub comm: Option<LayerGrads>,
}

impl Gradients {
    pub fn zeros_like(net: &MaskedNetwork) -> Self {
        Gradients {
            layers: net.layers.iter().map(LayerGrads::zeros_like).collect(),
            comm: net.comm.as_ref().map(LayerGrads::zeros_like),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        let ok = self.layers.iter().all(LayerGrads::is_finite)
            && self.comm.as_ref().is_none_or(LayerGrads::is_finite);
        if ok {
            Ok(())
        } else {
            Err(Error::Numeric(
                "non-finite gradient; aborting update".into(),
            ))
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &v in row {
            denom += (v - max).exp();
        }
        for c in 0..logits.cols() {
            out.set(r, c, (logits.get(r, c) - max).exp() / denom);
        }
    }
    out
}

/// One scored decision: the observations seen, the actions taken, and the
/// advantage credited to them.
#[derive(Debug, Clone)]
pub struct ScoredStep {
    pub obs: Matrix,
    pub actions: Vec<usize>,
    pub advantage: f64,
}

/// REINFORCE surrogate `-(1/(K*A)) * sum_k adv_k * sum_a ln pi(a_k | s_k)`
/// over a fixed batch. The finite-difference tests differentiate this.
pub fn surrogate_loss(net: &MaskedNetwork, batch: &[ScoredStep]) -> Result<f64> {
    let mut loss = 0.0;
    let mut samples = 0usize;
    for step in batch {
        let (probs, _) = net.forward(&step.obs)?;
        for (agent, &action) in step.actions.iter().enumerate() {
            loss -= step.advantage * probs.get(agent, action).max(1e-300).ln();
            samples += 1;
        }
    }
    Ok(loss / samples.max(1) as f64)
}

/// Analytic gradients of [`surrogate_loss`]:
/// `dlogits = (adv/(K*A)) * (pi - onehot(action))` per scored agent row.
pub fn surrogate_gradients(net: &MaskedNetwork, batch: &[ScoredStep]) -> Result<Gradients> {
    let mut grads = Gradients::zeros_like(net);
    let samples: usize = batch.iter().map(|s| s.actions.len()).sum();
    let norm = samples.max(1) as f64;
    for step in batch {
        let (probs, trace) = net.forward(&step.obs)?;
        let mut dlogits = Matrix::zeros(probs.rows(), probs.cols());
        for (agent, &action) in step.actions.iter().enumerate() {
            for c in 0..probs.cols() {
                let indicator = if c == action { 1.0 } else { 0.0 };
                dlogits.set(
                    agent,
                    c,
                    step.advantage * (probs.get(agent, c) - indicator) / norm,
                );
            }
        }
        net.backward_into(&trace, &dlogits, &mut grads)?;
    }
    grads.check_finite()?;
    Ok(grads)
}

/// RMSprop state for every tensor in the network.
pub struct NetworkOptimizer {
    params: RmspropParams,
    layer_states: Vec<[RmspropState; 4]>,
    comm_state: Option<[RmspropState; 4]>,
}

impl NetworkOptimizer {
    pub fn new(net: &MaskedNetwork, params: RmspropParams) -> Self {
        let state_for = |layer: &MaskedLayer| {
            [
                RmspropState::zeros(layer.in_dim() * layer.out_dim()),
                RmspropState::zeros(layer.out_dim()),
                RmspropState::zeros(layer.in_dim() * layer.grouping.groups()),
                RmspropState::zeros(layer.grouping.groups() * layer.out_dim()),
            ]
        };
        NetworkOptimizer {
            params,
            layer_states: net.layers.iter().map(state_for).collect(),
            comm_state: net.comm.as_ref().map(state_for),
        }
    }

    pub fn step(&mut self, net: &mut MaskedNetwork, grads: &Gradients) -> Result<()> {
        for (i, layer) in net.layers.iter_mut().enumerate() {
            apply_layer_step(layer, &grads.layers[i], &mut self.layer_states[i], &self.params)?;
        }
        if let (Some(comm), Some(cg), Some(cs)) =
            (net.comm.as_mut(), grads.comm.as_ref(), self.comm_state.as_mut())
        {
            apply_layer_step(comm, cg, cs, &self.params)?;
        }
        Ok(())
    }
}

fn apply_layer_step(
    layer: &mut MaskedLayer,
    grads: &LayerGrads,
    states: &mut [RmspropState; 4],
    params: &RmspropParams,
) -> Result<()> {
    rmsprop_step(
        layer.w.as_mut_slice(),
        grads.dw.as_slice(),
        &mut states[0],
        params,
    )?;
    rmsprop_step(&mut layer.bias, &grads.dbias, &mut states[1], params)?;
    rmsprop_step(
        layer.grouping.ig_mut().as_mut_slice(),
        grads.dig.as_slice(),
        &mut states[2],
        params,
    )?;
    rmsprop_step(
        layer.grouping.og_mut().as_mut_slice(),
        grads.dog.as_slice(),
        &mut states[3],
        params,
    )?;
    Ok(())
}

/// Knobs of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub agents: usize,
    pub grid: usize,
    pub horizon: usize,
    pub hidden: usize,
    pub groups: usize,
    /// Episodes per weight update (the small-batch regime).
    pub batch_episodes: usize,
    pub iterations: usize,
    pub seed: u64,
    pub use_comm: bool,
    pub rmsprop: RmspropParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            agents: 2,
            grid: 5,
            horizon: 20,
            hidden: 32,
            groups: 1,
            batch_episodes: 16,
            iterations: 300,
            seed: 1,
            use_comm: true,
            rmsprop: RmspropParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.agents == 0
            || self.grid < 2
            || self.horizon == 0
            || self.hidden == 0
            || self.batch_episodes == 0
        {
            return Err(Error::Config("degenerate training config".into()));
        }
        if self.groups == 0 || self.groups > crate::flgw::MAX_GROUPS {
            return Err(Error::InvalidGroupCount {
                groups: self.groups,
                max: crate::flgw::MAX_GROUPS,
            });
        }
        Ok(())
    }
}

/// Per-iteration training metrics. The timeline CSV carries the first four
/// fields; the fingerprint backs the mask-learnability checks.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// Percentage of the batch's episodes that caught the prey.
    pub success_rate: f64,
    pub mean_reward: f64,
    pub density: f64,
    pub mask_fingerprint: u64,
}

pub type Timeline = Vec<IterationMetrics>;

/// Timeline CSV: `iteration,success_rate,mean_reward,density`.
pub fn timeline_to_csv(timeline: &Timeline) -> String {
    let mut out = String::from("iteration,success_rate,mean_reward,density\n");
    for m in timeline {
        out.push_str(&format!(
            "{},{},{},{}\n",
            m.iteration, m.success_rate, m.mean_reward, m.density
        ));
    }
    out
}

struct EpisodeRecord {
    steps: Vec<(Matrix, Vec<usize>, f64)>,
    total_reward: f64,
    caught: bool,
}

fn observations(env: &ToyEnv) -> Matrix {
    Matrix::from_fn(env.agent_count(), OBS_DIM, |a, c| env.observation(a)[c])
}

fn sample_action(probs: &[f64], rng: &mut rng::Rng) -> usize {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if r < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn rollout(net: &MaskedNetwork, cfg: &TrainConfig, rng: &mut rng::Rng) -> Result<EpisodeRecord> {
    let mut env = ToyEnv::reset(cfg.grid, cfg.agents, cfg.horizon, rng);
    let mut steps = Vec::new();
    let mut total_reward = 0.0;
    while !env.done() {
        let obs = observations(&env);
        let (probs, _) = net.forward(&obs)?;
        let actions: Vec<usize> = (0..cfg.agents)
            .map(|a| sample_action(probs.row(a), rng))
            .collect();
        let reward = env.step(&actions.iter().map(|&i| Action::from_index(i)).collect::<Vec<_>>());
        total_reward += reward;
        steps.push((obs, actions, reward));
    }
    Ok(EpisodeRecord {
        steps,
        total_reward,
        caught: env.caught(),
    })
}

/// Success rate (%) of the uniform-random policy, the reference the trained
/// policy must beat.
pub fn random_policy_success(cfg: &TrainConfig, episodes: usize, seed: u64) -> f64 {
    let mut rng = rng::rng_from_seed(seed);
    let mut caught = 0usize;
    for _ in 0..episodes {
        let mut env = ToyEnv::reset(cfg.grid, cfg.agents, cfg.horizon, &mut rng);
        while !env.done() {
            let actions: Vec<Action> = (0..cfg.agents)
                .map(|_| Action::from_index(rng.random_range(0..ACTION_COUNT)))
                .collect();
            env.step(&actions);
        }
        caught += env.caught() as usize;
    }
    caught as f64 / episodes.max(1) as f64 * 100.0
}

/// Full training run: REINFORCE with a moving-average baseline, RMSprop
/// updates on weights, biases, and grouping matrices, and masks regenerated
/// every iteration. Reproducible per seed.
pub fn train_loop(cfg: &TrainConfig) -> Result<Timeline> {
    cfg.validate()?;
    let mut net = MaskedNetwork::policy(
        OBS_DIM,
        cfg.hidden,
        ACTION_COUNT,
        cfg.groups,
        cfg.use_comm,
        rng::derive(cfg.seed, &[100]),
    )?;
    let mut opt = NetworkOptimizer::new(&net, cfg.rmsprop);
    let mut baseline = 0.0f64;
    let mut timeline = Vec::with_capacity(cfg.iterations);

    for iteration in 0..cfg.iterations {
        let mut rollout_rng = rng::rng_from_seed(rng::derive(cfg.seed, &[200, iteration as u64]));
        let episodes: Vec<EpisodeRecord> = (0..cfg.batch_episodes)
            .map(|_| rollout(&net, cfg, &mut rollout_rng))
            .collect::<Result<_>>()?;

        let mean_reward = episodes.iter().map(|e| e.total_reward).sum::<f64>()
            / cfg.batch_episodes as f64;
        let success_rate = episodes.iter().filter(|e| e.caught).count() as f64
            / cfg.batch_episodes as f64
            * 100.0;

        // returns-to-go against the running baseline
        let mut batch = Vec::new();
        for ep in &episodes {
            let mut to_go = ep.total_reward;
            for (obs, actions, reward) in &ep.steps {
                batch.push(ScoredStep {
                    obs: obs.clone(),
                    actions: actions.clone(),
                    advantage: to_go - baseline,
                });
                to_go -= reward;
            }
        }
        let grads = surrogate_gradients(&net, &batch)?;
        opt.step(&mut net, &grads)?;
        baseline = 0.9 * baseline + 0.1 * mean_reward;

        timeline.push(IterationMetrics {
            iteration,
            success_rate,
            mean_reward,
            density: net.mean_density(),
            mask_fingerprint: net.mask_fingerprint(),
        });
        net.refresh_masks();
    }
    Ok(timeline)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_net(groups: usize, seed: u64) -> MaskedNetwork {
        MaskedNetwork::policy(OBS_DIM, 8, ACTION_COUNT, groups, true, seed).unwrap()
    }

    fn random_obs(agents: usize, seed: u64) -> Matrix {
        let mut rng = rng::rng_from_seed(seed);
        Matrix::from_fn(agents, OBS_DIM, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    /// Straight-line reference forward pass, written independently of the
    /// layered implementation.
    fn reference_forward(net: &MaskedNetwork, obs: &Matrix) -> Matrix {
        let agents = obs.rows();
        let dense = |layer: &MaskedLayer, input: &Matrix| -> Matrix {
            let eff = layer.effective_weights();
            let mut out = Matrix::zeros(input.rows(), eff.cols());
            for r in 0..input.rows() {
                for c in 0..eff.cols() {
                    let mut acc = layer.bias[c];
                    for k in 0..eff.rows() {
                        acc += input.get(r, k) * eff.get(k, c);
                    }
                    out.set(r, c, layer.activation.apply(acc));
                }
            }
            out
        };
        let h0 = dense(&net.layers[0], obs);
        let mixed = if let Some(comm) = &net.comm {
            let mean = Matrix::from_fn(1, h0.cols(), |_, c| {
                (0..agents).map(|r| h0.get(r, c)).sum::<f64>() / agents as f64
            });
            let c = dense(comm, &mean);
            Matrix::from_fn(h0.rows(), h0.cols(), |r, cc| h0.get(r, cc) + c.get(0, cc))
        } else {
            h0
        };
        let h1 = dense(&net.layers[1], &mixed);
        let logits = dense(&net.layers[2], &h1);
        softmax_rows(&logits)
    }

    #[test]
    fn zero_weights_give_uniform_distribution() {
        let mut net = small_net(1, 3);
        for layer in net.layers.iter_mut().chain(net.comm.iter_mut()) {
            layer.w = Matrix::zeros(layer.in_dim(), layer.out_dim());
        }
        let (probs, _) = net.forward(&random_obs(2, 4)).unwrap();
        for r in 0..2 {
            for c in 0..ACTION_COUNT {
                assert!((probs.get(r, c) - 0.2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn g1_matches_unmasked_reference() {
        // G=1 masks nothing, so the network equals a plain dense net with
        // the same weights
        let net = small_net(1, 5);
        assert_eq!(net.mean_density(), 1.0);
        let obs = random_obs(3, 6);
        let (probs, _) = net.forward(&obs).unwrap();
        let expect = reference_forward(&net, &obs);
        for r in 0..3 {
            for c in 0..ACTION_COUNT {
                assert!((probs.get(r, c) - expect.get(r, c)).abs() < 1e-12);
            }
        }
    }

    proptest! {
        /// The layered forward pass matches the straight-line reference for
        /// any group count and agent count.
        #[test]
        fn forward_matches_reference(
            seed in 0u64..200,
            groups in 1usize..5,
            agents in 1usize..4,
        ) {
            let net = small_net(groups, seed);
            let obs = random_obs(agents, seed ^ 0xf00);
            let (probs, _) = net.forward(&obs).unwrap();
            let expect = reference_forward(&net, &obs);
            for r in 0..agents {
                let mut row_sum = 0.0;
                for c in 0..ACTION_COUNT {
                    prop_assert!((probs.get(r, c) - expect.get(r, c)).abs() < 1e-10);
                    row_sum += probs.get(r, c);
                }
                prop_assert!((row_sum - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_advantage_gives_zero_gradients() {
        let net = small_net(2, 7);
        let batch = vec![ScoredStep {
            obs: random_obs(2, 8),
            actions: vec![0, 3],
            advantage: 0.0,
        }];
        let grads = surrogate_gradients(&net, &batch).unwrap();
        for lg in grads.layers.iter().chain(grads.comm.iter()) {
            assert!(lg.dw.iter().all(|v| v == 0.0));
            assert!(lg.dbias.iter().all(|&v| v == 0.0));
            assert!(lg.dig.iter().all(|v| v == 0.0));
            assert!(lg.dog.iter().all(|v| v == 0.0));
        }
    }

    #[test]
    fn single_step_softmax_gradient_closed_form() {
        // zero the head so probs are uniform; the head bias gradient of
        // -adv*ln pi(a) is adv*(pi - onehot)
        let mut net = small_net(1, 9);
        net.layers[2].w = Matrix::zeros(net.layers[2].in_dim(), ACTION_COUNT);
        let batch = vec![ScoredStep {
            obs: random_obs(1, 10),
            actions: vec![2],
            advantage: 1.5,
        }];
        let grads = surrogate_gradients(&net, &batch).unwrap();
        for c in 0..ACTION_COUNT {
            let indicator = if c == 2 { 1.0 } else { 0.0 };
            let expect = 1.5 * (0.2 - indicator);
            assert!(
                (grads.layers[2].dbias[c] - expect).abs() < 1e-12,
                "bias grad {c}: {} vs {expect}",
                grads.layers[2].dbias[c]
            );
        }
    }

    /// Central finite differences over every weight of a 3-layer masked
    /// network (plus comm): unmasked entries match to 1e-4 relative;
    /// masked entries get exactly zero.
    #[test]
    fn gradients_match_finite_differences() {
        let net = small_net(2, 11);
        let batch = vec![
            ScoredStep {
                obs: random_obs(2, 12),
                actions: vec![1, 4],
                advantage: 0.8,
            },
            ScoredStep {
                obs: random_obs(2, 13),
                actions: vec![0, 2],
                advantage: -0.6,
            },
        ];
        let grads = surrogate_gradients(&net, &batch).unwrap();
        let h = 1e-6;
        let layer_count = net.layers.len();
        for l in 0..=layer_count {
            let get_layer = |n: &MaskedNetwork, l: usize| -> MaskedLayer {
                if l < layer_count {
                    n.layers[l].clone()
                } else {
                    n.comm.as_ref().unwrap().clone()
                }
            };
            let layer = get_layer(&net, l);
            let lg = if l < layer_count {
                &grads.layers[l]
            } else {
                grads.comm.as_ref().unwrap()
            };
            for r in 0..layer.in_dim() {
                for c in 0..layer.out_dim() {
                    let masked = !layer.mask().get(r, c);
                    if masked {
                        assert_eq!(lg.dw.get(r, c), 0.0, "masked weight grad must be zero");
                        continue;
                    }
                    let mut plus = net.clone();
                    let mut minus = net.clone();
                    fn target(n: &mut MaskedNetwork, l: usize) -> &mut MaskedLayer {
                        if l < n.layers.len() {
                            &mut n.layers[l]
                        } else {
                            n.comm.as_mut().unwrap()
                        }
                    }
                    let w = target(&mut plus, l).w.get(r, c);
                    target(&mut plus, l).w.set(r, c, w + h);
                    target(&mut minus, l).w.set(r, c, w - h);
                    let fd = (surrogate_loss(&plus, &batch).unwrap()
                        - surrogate_loss(&minus, &batch).unwrap())
                        / (2.0 * h);
                    let analytic = lg.dw.get(r, c);
                    let denom = fd.abs().max(analytic.abs()).max(1e-6);
                    assert!(
                        (fd - analytic).abs() / denom < 1e-4,
                        "layer {l} w({r},{c}): fd {fd} vs {analytic}"
                    );
                }
            }
        }
    }

    #[test]
    fn masked_weights_stay_bit_identical_through_updates() {
        let cfg = TrainConfig {
            iterations: 3,
            batch_episodes: 4,
            groups: 2,
            hidden: 8,
            ..TrainConfig::default()
        };
        let mut net = MaskedNetwork::policy(
            OBS_DIM,
            cfg.hidden,
            ACTION_COUNT,
            cfg.groups,
            true,
            rng::derive(cfg.seed, &[100]),
        )
        .unwrap();
        let mut opt = NetworkOptimizer::new(&net, cfg.rmsprop);
        let mut rng = rng::rng_from_seed(44);
        for _ in 0..3 {
            let masked_before: Vec<f64> = net.layers[1]
                .w
                .as_slice()
                .iter()
                .enumerate()
                .filter(|&(i, _)| {
                    !net.layers[1].mask().get(i / cfg.hidden, i % cfg.hidden)
                })
                .map(|(_, &v)| v)
                .collect();
            let episodes: Vec<EpisodeRecord> = (0..4)
                .map(|_| rollout(&net, &cfg, &mut rng).unwrap())
                .collect();
            let mut batch = Vec::new();
            for ep in &episodes {
                let mut to_go = ep.total_reward;
                for (obs, actions, reward) in &ep.steps {
                    batch.push(ScoredStep {
                        obs: obs.clone(),
                        actions: actions.clone(),
                        advantage: to_go,
                    });
                    to_go -= reward;
                }
            }
            let grads = surrogate_gradients(&net, &batch).unwrap();
            opt.step(&mut net, &grads).unwrap();
            let masked_after: Vec<f64> = net.layers[1]
                .w
                .as_slice()
                .iter()
                .enumerate()
                .filter(|&(i, _)| {
                    !net.layers[1].mask().get(i / cfg.hidden, i % cfg.hidden)
                })
                .map(|(_, &v)| v)
                .collect();
            assert_eq!(masked_before, masked_after);
        }
    }

    #[test]
    fn non_finite_gradients_abort_with_error() {
        let mut net = small_net(1, 21);
        net.layers[0].w.set(0, 0, f64::NAN);
        let batch = vec![ScoredStep {
            obs: random_obs(2, 22),
            actions: vec![0, 1],
            advantage: 1.0,
        }];
        assert!(matches!(
            surrogate_gradients(&net, &batch),
            Err(crate::error::Error::Numeric(_))
        ));
    }

    #[test]
    fn empty_timeline_for_zero_iterations() {
        let cfg = TrainConfig {
            iterations: 0,
            ..TrainConfig::default()
        };
        assert!(train_loop(&cfg).unwrap().is_empty());
    }

    #[test]
    fn train_loop_is_deterministic() {
        let cfg = TrainConfig {
            iterations: 5,
            batch_episodes: 4,
            hidden: 8,
            groups: 2,
            seed: 13,
            ..TrainConfig::default()
        };
        let a = train_loop(&cfg).unwrap();
        let b = train_loop(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(timeline_to_csv(&a), timeline_to_csv(&b));
    }

    #[test]
    fn spmv_cross_check_matches_tensor_path() {
        let net = small_net(2, 15);
        let layer = &net.layers[1];
        let mut rng = rng::rng_from_seed(16);
        let x: Vec<f64> = (0..layer.in_dim()).map(|_| rng.random::<f64>() - 0.5).collect();
        let via_sim = layer
            .forward_vec_via_simulator(
                &x,
                3,
                &crate::vpu::CoreConfig {
                    precision: crate::vpu::Precision::Fp32,
                    ..Default::default()
                },
                &crate::osel::CycleParams::default(),
            )
            .unwrap();
        let xm = Matrix::from_vec(1, x.len(), x).unwrap();
        let (pre, post) = layer.forward(&xm).unwrap();
        let _ = pre;
        for c in 0..layer.out_dim() {
            assert!(
                (via_sim[c] - post.get(0, c)).abs() < 1e-4,
                "col {c}: {} vs {}",
                via_sim[c],
                post.get(0, c)
            );
        }
    }

    #[test]
    fn timeline_csv_shape() {
        let cfg = TrainConfig {
            iterations: 2,
            batch_episodes: 2,
            hidden: 8,
            ..TrainConfig::default()
        };
        let timeline = train_loop(&cfg).unwrap();
        let csv = timeline_to_csv(&timeline);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "iteration,success_rate,mean_reward,density");
        assert_eq!(lines.len(), 3);
        for m in &timeline {
            assert!(m.success_rate >= 0.0 && m.success_rate <= 100.0);
            assert!(m.mean_reward >= 0.0);
        }
    }
}
