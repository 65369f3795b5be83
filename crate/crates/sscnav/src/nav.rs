//! Navigation policy machinery: state assembly per ablation variant,
//! spatial-action-map Q networks, action selection and execution, rewards,
//! replay, and the double-DQN update.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensor_nn::{LayerSpec, Network, NetworkSpec, Optimizer, Tape, Tensor, UpdateRule};

use crate::completion::{complete, estimate_confidence};
use crate::episodes::{adjudicate_success, stop_check, EpisodeSampler};
use crate::error::{Result, SscError};
use crate::perception::{
    ego_cell_world_point, project_history, raycast_observe, EgoSemMap, MapParams,
    ObservationHistory, SensorParams,
};
use crate::world::{Pose, World, NUM_CATEGORIES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfidenceMode {
    Learned,
    BinaryVisibility,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    /// one action per map pixel
    Spatial,
    /// 8 discrete 45-degree turn-and-step actions
    Sparse8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariantConfig {
    pub use_completion: bool,
    pub confidence_mode: ConfidenceMode,
    pub action_mode: ActionMode,
}

/// The full system and its four ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    /// -CF: raw observation instead of completion, no confidence
    NoCompletionNoConfidence,
    /// -F: completion but zeroed confidence
    NoConfidence,
    /// /BC: observed mask as a binary confidence channel
    BinaryConfidence,
    /// /SA: full state, 8-way action head
    SparseAction,
}

impl Variant {
    pub fn config(self) -> VariantConfig {
        match self {
            Variant::Full => VariantConfig {
                use_completion: true,
                confidence_mode: ConfidenceMode::Learned,
                action_mode: ActionMode::Spatial,
            },
            Variant::NoCompletionNoConfidence => VariantConfig {
                use_completion: false,
                confidence_mode: ConfidenceMode::None,
                action_mode: ActionMode::Spatial,
            },
            Variant::NoConfidence => VariantConfig {
                use_completion: true,
                confidence_mode: ConfidenceMode::None,
                action_mode: ActionMode::Spatial,
            },
            Variant::BinaryConfidence => VariantConfig {
                use_completion: true,
                confidence_mode: ConfidenceMode::BinaryVisibility,
                action_mode: ActionMode::Spatial,
            },
            Variant::SparseAction => VariantConfig {
                use_completion: true,
                confidence_mode: ConfidenceMode::Learned,
                action_mode: ActionMode::Sparse8,
            },
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "full" => Ok(Variant::Full),
            "-cf" => Ok(Variant::NoCompletionNoConfidence),
            "-f" => Ok(Variant::NoConfidence),
            "/bc" => Ok(Variant::BinaryConfidence),
            "/sa" => Ok(Variant::SparseAction),
            other => Err(SscError::Config(format!(
                "unknown variant {other:?}; expected full, -cf, -f, /bc or /sa"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCompletionNoConfidence => "-cf",
            Variant::NoConfidence => "-f",
            Variant::BinaryConfidence => "/bc",
            Variant::SparseAction => "/sa",
        }
    }
}

/// Channel count of the assembled state: map (N+1) + confidence 1 +
/// tiled goal one-hot (N+1).
pub const STATE_CHANNELS: usize = 2 * (NUM_CATEGORIES + 1) + 1;

/// Everything needed to turn a raw observation map into a Q-network input.
/// The completion and confidence networks are frozen here; they are only
/// consulted, never trained.
pub struct NavContext<'a> {
    pub variant: VariantConfig,
    pub completion: Option<&'a Network>,
    pub confidence: Option<&'a Network>,
}

impl NavContext<'_> {
    /// Stacks the state channels. The map block uses the completion softmax
    /// on unobserved cells (input one-hot pasted back on observed ones), or
    /// the raw observation when the variant disables completion.
    pub fn assemble(&self, o: &EgoSemMap, goal: u8) -> Result<Tensor> {
        let r = o.cells();
        let hw = r * r;
        let ch = NUM_CATEGORIES + 1;
        let mut data = vec![0.0f32; STATE_CHANNELS * hw];

        if self.variant.use_completion {
            let net = self.completion.ok_or_else(|| {
                SscError::Config("variant needs a completion network".into())
            })?;
            let completed = complete(net, o)?;
            let probs = completed.probs.data();
            for c in 0..ch {
                for i in 0..hw {
                    data[c * hw + i] = if o.observed()[i] {
                        (o.labels()[i] as usize == c) as u8 as f32
                    } else {
                        probs[c * hw + i]
                    };
                }
            }
            match self.variant.confidence_mode {
                ConfidenceMode::Learned => {
                    let cnet = self.confidence.ok_or_else(|| {
                        SscError::Config("variant needs a confidence network".into())
                    })?;
                    let conf = estimate_confidence(cnet, o, &completed)?;
                    data[ch * hw..(ch + 1) * hw].copy_from_slice(&conf.values);
                }
                ConfidenceMode::BinaryVisibility => {
                    for i in 0..hw {
                        data[ch * hw + i] = o.observed()[i] as u8 as f32;
                    }
                }
                ConfidenceMode::None => {}
            }
        } else {
            for (i, &l) in o.labels().iter().enumerate() {
                data[l as usize * hw + i] = 1.0;
            }
            if self.variant.confidence_mode == ConfidenceMode::BinaryVisibility {
                for i in 0..hw {
                    data[ch * hw + i] = o.observed()[i] as u8 as f32;
                }
            }
        }

        let goal_ch = ch + 1 + goal as usize;
        data[goal_ch * hw..(goal_ch + 1) * hw].fill(1.0);
        Ok(Tensor::from_vec(&[STATE_CHANNELS, r, r], data)?)
    }
}

/// Q network over the assembled state: the spatial head mirrors the
/// completion topology with a 1-channel output, the sparse head pools the
/// encoder into 8 action values.
pub fn q_net_spec(widths: &[usize], action_mode: ActionMode) -> NetworkSpec {
    match action_mode {
        ActionMode::Spatial => NetworkSpec::encoder_decoder(STATE_CHANNELS, widths, 1),
        ActionMode::Sparse8 => {
            let mut layers = vec![
                LayerSpec::Conv { in_c: STATE_CHANNELS, out_c: widths[0], kernel: 3, stride: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
            ];
            for i in 1..widths.len() {
                layers.push(LayerSpec::DownBlock { in_c: widths[i - 1], out_c: widths[i] });
            }
            layers.push(LayerSpec::GlobalAvgPoolLinear {
                in_c: *widths.last().unwrap(),
                out: 8,
            });
            NetworkSpec { input_channels: STATE_CHANNELS, layers }
        }
    }
}

/// Greedy pixel with probability 1 - epsilon (ties to the lowest row-major
/// index), uniform random pixel otherwise.
pub fn select_action(q: &[f32], epsilon: f32, rng: &mut ChaCha8Rng) -> usize {
    if epsilon > 0.0 && rng.gen::<f32>() < epsilon {
        return rng.gen_range(0..q.len());
    }
    argmax(q)
}

/// Lowest row-major index among the maxima.
pub fn argmax(q: &[f32]) -> usize {
    let mut best = 0usize;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Forward sweep from a pose: moves up to `max_step` meters along
/// `heading`, truncated before the first non-navigable cell. Returns the
/// new position and realized length.
pub fn move_forward(w: &World, x: f32, y: f32, heading: f32, max_step: f32) -> (f32, f32, f32) {
    let (s, c) = heading.sin_cos();
    let inc = w.resolution() / 4.0;
    let mut reach = 0.0f32;
    let mut t = inc;
    while t <= max_step + 1e-6 {
        if w.navigable_at(x + t * c, y + t * s) {
            reach = t;
            t += inc;
        } else {
            break;
        }
    }
    (x + reach * c, y + reach * s, reach)
}

pub const MAX_STEP_M: f32 = 0.25;
pub const COLLISION_STEP_M: f32 = 0.125;

/// Turns toward the world point under the chosen map pixel and steps
/// forward at most 0.25 m, truncated at obstacles. A step shorter than
/// 0.125 m counts as a collision; the center pixel is a defined degenerate
/// zero-length action.
pub fn execute_action(w: &World, pose: Pose, pixel: usize, map: &MapParams) -> (Pose, f32, bool) {
    let r = map.cells;
    let (row, col) = (pixel / r, pixel % r);
    if row == r / 2 && col == r / 2 {
        return (pose, 0.0, true);
    }
    let (tx, ty) = ego_cell_world_point(map, pose, row, col);
    let (dx, dy) = (tx - pose.x, ty - pose.y);
    let heading = dy.atan2(dx);
    let intended = (dx * dx + dy * dy).sqrt().min(MAX_STEP_M);
    let (nx, ny, step) = move_forward(w, pose.x, pose.y, heading, intended);
    (Pose { x: nx, y: ny, heading }, step, step < COLLISION_STEP_M)
}

/// /SA action: turn right k * 45 degrees, then step forward up to 0.25 m.
pub fn sparse8_execute(w: &World, pose: Pose, k: usize, _map: &MapParams) -> (Pose, f32, bool) {
    assert!(k < 8, "sparse action id out of range");
    let heading = pose.heading - k as f32 * std::f32::consts::FRAC_PI_4;
    let (nx, ny, step) = move_forward(w, pose.x, pose.y, heading, MAX_STEP_M);
    (Pose { x: nx, y: ny, heading }, step, step < COLLISION_STEP_M)
}

/// r = -0.01 + k * (prev - new geodesic meters) - 0.25 [step < 0.125 m]
/// + 10 [success], with k = 1.0 per meter.
pub fn compute_reward(prev_geo: f32, new_geo: f32, step_length: f32, success: bool) -> f32 {
    let mut r = -0.01 + (prev_geo - new_geo);
    if step_length < COLLISION_STEP_M {
        r -= 0.25;
    }
    if success {
        r += 10.0;
    }
    r
}

/// One replay item. States are stored as raw observation maps and
/// re-assembled through the frozen nets at update time, which keeps the
/// buffer small and the assembled channels consistent.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: EgoSemMap,
    pub action: usize,
    pub reward: f32,
    pub next: EgoSemMap,
    pub done: bool,
    pub goal: u8,
}

#[derive(Debug)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    cap: usize,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(cap: usize) -> ReplayBuffer {
        assert!(cap > 0);
        ReplayBuffer { items: Vec::with_capacity(cap.min(4096)), cap, cursor: 0 }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.cap {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
            self.cursor = (self.cursor + 1) % self.cap;
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sample<'a>(&'a self, n: usize, rng: &mut ChaCha8Rng) -> Vec<&'a Transition> {
        (0..n).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect()
    }
}

/// Double-DQN step on a batch: the online network picks the bootstrap
/// action, the frozen target network evaluates it, and the absolute error
/// |y - Q(s, a)| is minimized. Returns the mean absolute error.
pub fn dqn_update(
    qnet: &mut Network,
    opt: &mut Optimizer,
    target_net: &Network,
    ctx: &NavContext,
    batch: &[&Transition],
    gamma: f32,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(SscError::Argument("empty batch".into()));
    }
    qnet.params.zero_grad();
    let mut loss_sum = 0.0f64;
    for t in batch {
        let s = ctx.assemble(&t.state, t.goal)?;
        let y = if t.done {
            t.reward
        } else {
            let s2 = ctx.assemble(&t.next, t.goal)?;
            let online = qnet.infer(&s2)?;
            let a2 = argmax(online.data());
            let boot = target_net.infer(&s2)?;
            t.reward + gamma * boot.data()[a2]
        };
        let mut tape = Tape::new();
        let x = tape.input(s);
        let out = qnet.forward(&mut tape, x)?;
        let qa = tape.select_pixel(out, t.action)?;
        let loss = tape.l1_to_const(qa, y)?;
        loss_sum += tape.scalar_f64(loss);
        tape.backward(loss, &mut qnet.params)?;
    }
    qnet.params.scale_grads(1.0 / batch.len() as f32);
    opt.step(&mut qnet.params);
    Ok(loss_sum / batch.len() as f64)
}

/// Linear epsilon decay from `start` to `end` over the first
/// `frac * total` steps.
pub fn epsilon_at(step: usize, total: usize, start: f32, end: f32, frac: f32) -> f32 {
    let horizon = (total as f32 * frac).max(1.0);
    let p = step as f32 / horizon;
    if p >= 1.0 {
        end
    } else {
        start + (end - start) * p
    }
}

/// Maps an observation to an action id.
pub trait Policy {
    fn act(&mut self, o: &EgoSemMap, goal: u8) -> Result<usize>;
}

/// Uniform over the action set; the no-learning baseline.
pub struct RandomPolicy {
    pub actions: usize,
    pub rng: ChaCha8Rng,
}

impl Policy for RandomPolicy {
    fn act(&mut self, _o: &EgoSemMap, _goal: u8) -> Result<usize> {
        Ok(self.rng.gen_range(0..self.actions))
    }
}

/// Epsilon-greedy over a trained Q network.
pub struct QPolicy<'a> {
    pub qnet: &'a Network,
    pub ctx: NavContext<'a>,
    pub epsilon: f32,
    pub rng: ChaCha8Rng,
}

impl Policy for QPolicy<'_> {
    fn act(&mut self, o: &EgoSemMap, goal: u8) -> Result<usize> {
        let s = self.ctx.assemble(o, goal)?;
        let q = self.qnet.infer(&s)?;
        Ok(select_action(q.data(), self.epsilon, &mut self.rng))
    }
}

#[derive(Debug, Clone)]
pub struct NavTrainConfig {
    pub total_steps: usize,
    pub gamma: f32,
    pub buffer: usize,
    pub batch: usize,
    /// env steps collected before the first gradient update
    pub learn_start: usize,
    /// target-network sync period, in env steps
    pub sync_every: usize,
    pub eps_start: f32,
    pub eps_end: f32,
    /// fraction of total steps over which epsilon decays
    pub eps_frac: f32,
    pub lr: f32,
    pub widths: Vec<usize>,
    pub seed: u64,
    pub max_episode_steps: usize,
    /// stop-checker threshold fraction
    pub tau: f32,
}

impl Default for NavTrainConfig {
    fn default() -> NavTrainConfig {
        NavTrainConfig {
            total_steps: 20_000,
            gamma: 0.99,
            buffer: 20_000,
            batch: 16,
            learn_start: 200,
            sync_every: 500,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_frac: 0.5,
            lr: 1e-4,
            widths: vec![16, 32, 64],
            seed: 0,
            max_episode_steps: 500,
            tau: 0.03,
        }
    }
}

/// One env step of the training log.
#[derive(Debug, Clone, Copy)]
pub struct StepLog {
    pub step: usize,
    pub episode: usize,
    pub reward: f32,
    pub epsilon: f32,
    /// batch loss when an update ran at this step
    pub loss: Option<f64>,
    pub done: bool,
    pub success: bool,
}

/// Trains the Q network with the double-DQN update over episodes sampled
/// from `worlds`. The completion and confidence networks inside `ctx` stay
/// frozen; replay stores raw observation maps and states are re-assembled
/// through them at update time.
pub fn train_nav(
    worlds: &[World],
    ctx: &NavContext,
    sensor: &SensorParams,
    map: &MapParams,
    cfg: &NavTrainConfig,
) -> Result<(Network, Vec<StepLog>)> {
    if worlds.is_empty() {
        return Err(SscError::Argument("no training worlds".into()));
    }
    let samplers: Vec<EpisodeSampler> = worlds.iter().map(EpisodeSampler::new).collect();
    let spec = q_net_spec(&cfg.widths, ctx.variant.action_mode);
    let mut qnet = Network::new(spec.clone(), cfg.seed)?;
    let mut target = Network::new(spec, cfg.seed)?;
    let mut opt = Optimizer::new(UpdateRule::adam(cfg.lr), &qnet.params);
    let mut buffer = ReplayBuffer::new(cfg.buffer);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut logs = Vec::with_capacity(cfg.total_steps);

    let mut episode = 0usize;
    let mut fresh = true;
    let mut widx = 0usize;
    let mut goal = 0u8;
    let mut pose = Pose { x: 0.0, y: 0.0, heading: 0.0 };
    let mut hist = ObservationHistory::default();
    let mut o = EgoSemMap::unknown(map.cells);
    let mut geo = 0.0f32;
    let mut ep_steps = 0usize;

    for step in 1..=cfg.total_steps {
        if fresh {
            widx = rng.gen_range(0..worlds.len());
            let spec = samplers[widx].sample(&mut rng)?;
            goal = spec.goal;
            pose = spec.start;
            geo = spec.shortest_path;
            hist.clear();
            hist.push(raycast_observe(&worlds[widx], pose, sensor, None));
            o = project_history(&hist, &worlds[widx], map)?;
            ep_steps = 0;
            episode += 1;
            fresh = false;
        }
        let w = &worlds[widx];
        let sampler = &samplers[widx];

        let epsilon = epsilon_at(step, cfg.total_steps, cfg.eps_start, cfg.eps_end, cfg.eps_frac);
        let s = ctx.assemble(&o, goal)?;
        let q = qnet.infer(&s)?;
        let action = select_action(q.data(), epsilon, &mut rng);
        let (new_pose, step_len, _collided) = match ctx.variant.action_mode {
            ActionMode::Spatial => execute_action(w, pose, action, map),
            ActionMode::Sparse8 => sparse8_execute(w, pose, action, map),
        };
        hist.push(raycast_observe(w, new_pose, sensor, None));
        let o2 = project_history(&hist, w, map)?;
        ep_steps += 1;

        let stopped = stop_check(w, new_pose, goal, sensor, cfg.tau);
        let success = adjudicate_success(w, new_pose, goal, stopped, sensor);
        let new_geo = sampler.goal_distance(goal, new_pose.x, new_pose.y).unwrap_or(geo);
        let reward = compute_reward(geo, new_geo, step_len, success);
        let done = stopped || ep_steps >= cfg.max_episode_steps;

        buffer.push(Transition {
            state: o.clone(),
            action,
            reward,
            next: o2.clone(),
            done,
            goal,
        });

        let loss = if step >= cfg.learn_start && buffer.len() >= cfg.batch {
            let batch = buffer.sample(cfg.batch, &mut rng);
            Some(dqn_update(&mut qnet, &mut opt, &target, ctx, &batch, cfg.gamma)?)
        } else {
            None
        };
        if step % cfg.sync_every == 0 {
            target.params = qnet.params.clone();
        }

        logs.push(StepLog { step, episode, reward, epsilon, loss, done, success });

        pose = new_pose;
        o = o2;
        geo = new_geo;
        if done {
            fresh = true;
        }
    }
    Ok((qnet, logs))
}
