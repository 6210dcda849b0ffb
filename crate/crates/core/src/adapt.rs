//! Configuration-adaptation environment and training.
//!
//! Each decision step consumes one frame and one network-trace sample. The
//! agent picks a ⟨resolution, QP⟩ pair for the frame's important tiles; the
//! reward is the per-step QoE decomposition
//! `alpha * P_t - beta * (8 * Q_t / B_t)`, whose episode sum telescopes to
//! the QoE objective in [`crate::codec`]. Tile importance comes from a live
//! [`TileStream`] running the buffered online-learning workflow against a
//! seeded synthetic frame source, so the SLAM-performance proxy `P_t`
//! reflects how well the online predictor currently tracks the oracle.

use serde::{Deserialize, Serialize};

use crate::codec::{data_size, slam_perf, ConfigAction, QoeWeights, ACTION_COUNT};
use crate::error::{Error, Result};
use crate::neural::{
    parallel_train, ActorCritic, Environment, EpisodeReport, Mlp, NetSpec, StepOutcome,
    TrainOptions,
};
use crate::rng::{self, Stream};
use crate::tilesense::{
    fast_corners, oracle_from_corners, SynthSpec, SynthStream, TileReport, TileStream,
    TileStreamConfig,
};
use crate::traces::{FrameTrace, NetworkTrace};

/// Throughput normalization for the state encoding (bits/second).
pub const THROUGHPUT_NORM: f64 = 1e7;
/// Latency normalization for the state encoding (seconds).
pub const LATENCY_NORM: f64 = 1.0;

/// Agent-visible state: importance summary, link history windows, last
/// action. Histories hold raw units and are zero-padded until `k`
/// observations exist; [`AdaptState::to_vector`] normalizes.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptState {
    /// Fraction of tiles predicted important in the pending frame.
    pub important_fraction: f64,
    /// Last `k` observed throughputs (bits/second), oldest first.
    pub b_vec: Vec<f64>,
    /// Last `k` observed latencies (seconds), oldest first.
    pub l_vec: Vec<f64>,
    pub last_action: ConfigAction,
}

impl AdaptState {
    /// `[e, b_norm x k, l_norm x k, res, qp_norm]`; length `2k + 3`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.b_vec.len() + 3);
        v.push(self.important_fraction);
        v.extend(self.b_vec.iter().map(|b| b / THROUGHPUT_NORM));
        v.extend(self.l_vec.iter().map(|l| l / LATENCY_NORM));
        v.push(self.last_action.res);
        v.push((self.last_action.qp as f64 - 20.0) / 16.0);
        v
    }

    pub fn dim(history_len: usize) -> usize {
        2 * history_len + 3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    /// Link-history window length `k`.
    pub history_len: usize,
    pub weights: QoeWeights,
    /// Floor configuration applied to unimportant tiles.
    pub floor: ConfigAction,
    pub stream: TileStreamConfig,
    /// Template for the per-episode synthetic frame source (seed is
    /// overridden per episode).
    pub synth: SynthSpec,
    /// Frames per episode cap; the effective episode length is
    /// `min(frames, trace length)`.
    pub frames_per_episode: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            history_len: 8,
            weights: QoeWeights::default(),
            floor: ConfigAction::COARSEST,
            stream: TileStreamConfig::default(),
            synth: SynthSpec::default(),
            frames_per_episode: 250,
        }
    }
}

/// Per-step reward breakdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptStepInfo {
    pub perf: f64,
    pub size_bytes: f64,
    pub bandwidth: f64,
    pub tx_time: f64,
}

#[derive(Debug, Clone)]
pub struct AdaptStepResult {
    pub state: AdaptState,
    pub reward: f64,
    pub done: bool,
    pub info: AdaptStepInfo,
}

struct PendingFrame {
    predicted: TileReport,
    oracle: TileReport,
    raw_size: f64,
}

/// Single-owner episode environment.
pub struct AdaptEnv {
    config: AdaptConfig,
    frames: FrameTrace,
    trace: NetworkTrace,
    stream: TileStream,
    synth: SynthStream,
    episode_len: usize,
    step_idx: usize,
    state: AdaptState,
    pending: Option<PendingFrame>,
    done: bool,
    // Episode sequences for the QoE telescoping identity and metrics.
    perf_seq: Vec<f64>,
    size_seq: Vec<f64>,
    bandwidth_seq: Vec<f64>,
    tx_seq: Vec<f64>,
}

impl AdaptEnv {
    /// Builds and resets an episode (histories zeroed, identity last
    /// action, fresh tile stream).
    pub fn new(
        frames: FrameTrace,
        trace: NetworkTrace,
        config: AdaptConfig,
        seed: u64,
    ) -> Result<Self> {
        if frames.is_empty() || trace.is_empty() {
            return Err(Error::argument("frame and network traces must be non-empty"));
        }
        let episode_len = frames
            .len()
            .min(trace.len())
            .min(config.frames_per_episode);
        let mut stream_config = config.stream;
        stream_config.seed = rng::derive(seed, Stream::NetInit, 100);
        let mut synth_spec = config.synth.clone();
        synth_spec.seed = rng::derive(seed, Stream::FrameGen, 200);
        let stream = TileStream::new(stream_config)?;
        let synth = SynthStream::new(synth_spec)?;
        let state = AdaptState {
            important_fraction: 0.0,
            b_vec: vec![0.0; config.history_len],
            l_vec: vec![0.0; config.history_len],
            last_action: ConfigAction::IDENTITY,
        };
        let mut env = AdaptEnv {
            config,
            frames,
            trace,
            stream,
            synth,
            episode_len,
            step_idx: 0,
            state,
            pending: None,
            done: false,
            perf_seq: Vec::new(),
            size_seq: Vec::new(),
            bandwidth_seq: Vec::new(),
            tx_seq: Vec::new(),
        };
        env.prepare_frame()?;
        Ok(env)
    }

    fn prepare_frame(&mut self) -> Result<()> {
        let frame = self.synth.frame(self.step_idx);
        let detector = self.config.stream.detector;
        let corners = fast_corners(&frame, detector.threshold, detector.arc_length)?;
        let step = self.stream.step_with_corners(&frame, &corners)?;
        let grid = self.stream.grid().expect("grid exists after first step");
        let oracle = oracle_from_corners(&corners, grid, detector.min_corners)?;
        self.state.important_fraction = step.report.important_fraction();
        self.pending = Some(PendingFrame {
            predicted: step.report,
            oracle,
            raw_size: self.frames.frames[self.step_idx].raw_size as f64,
        });
        Ok(())
    }

    pub fn state(&self) -> &AdaptState {
        &self.state
    }

    pub fn episode_len(&self) -> usize {
        self.episode_len
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Episode sequences `(P_i, Q_i, B_i)` collected so far.
    pub fn sequences(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.perf_seq, &self.size_seq, &self.bandwidth_seq)
    }

    /// Applies an action to the pending frame and advances one step.
    pub fn step(&mut self, action: &ConfigAction) -> Result<AdaptStepResult> {
        if self.done {
            return Err(Error::state("episode is done"));
        }
        let pending = self
            .pending
            .as_ref()
            .expect("pending frame exists while not done");
        let perf = slam_perf(&pending.predicted, &pending.oracle)?;
        let size = data_size(
            pending.raw_size,
            &pending.predicted,
            action,
            &self.config.floor,
        )?;
        let sample = self.trace.samples[self.step_idx];
        let bandwidth = sample.throughput;
        let tx_time = 8.0 * size / bandwidth;
        let weights = &self.config.weights;
        let reward = weights.alpha * perf - weights.beta * tx_time;

        self.perf_seq.push(perf);
        self.size_seq.push(size);
        self.bandwidth_seq.push(bandwidth);
        self.tx_seq.push(tx_time);

        // Histories slide by one: the just-observed link sample enters.
        self.state.b_vec.rotate_left(1);
        *self.state.b_vec.last_mut().unwrap() = sample.throughput;
        self.state.l_vec.rotate_left(1);
        *self.state.l_vec.last_mut().unwrap() = sample.latency;
        self.state.last_action = *action;

        self.step_idx += 1;
        self.done = self.step_idx >= self.episode_len;
        if self.done {
            self.pending = None;
        } else {
            self.prepare_frame()?;
        }

        Ok(AdaptStepResult {
            state: self.state.clone(),
            reward,
            done: self.done,
            info: AdaptStepInfo {
                perf,
                size_bytes: size,
                bandwidth,
                tx_time,
            },
        })
    }
}

impl Environment for AdaptEnv {
    fn state_dim(&self) -> usize {
        AdaptState::dim(self.config.history_len)
    }

    fn action_count(&self) -> usize {
        ACTION_COUNT
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        // Environments are built per episode; reset just reports the
        // initial state.
        if self.step_idx != 0 {
            return Err(Error::state("AdaptEnv cannot be reset mid-episode"));
        }
        Ok(self.state.to_vector())
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let config = ConfigAction::from_index(action)?;
        let result = AdaptEnv::step(self, &config)?;
        Ok(StepOutcome {
            state: result.state.to_vector(),
            reward: result.reward,
            done: result.done,
        })
    }

    fn episode_extras(&self) -> Vec<(&'static str, f64)> {
        let n = self.perf_seq.len().max(1) as f64;
        vec![
            ("mean_P", self.perf_seq.iter().sum::<f64>() / n),
            ("mean_tx_time", self.tx_seq.iter().sum::<f64>() / n),
        ]
    }
}

/// Training input: network traces are drawn round-robin by episode index;
/// every episode gets its own synthetic frame stream seed.
pub struct AdaptTrainSetup {
    pub traces: Vec<NetworkTrace>,
    pub frames: FrameTrace,
    pub config: AdaptConfig,
}

impl AdaptTrainSetup {
    pub fn make_env(&self, episode_seed: u64, episode_index: usize) -> Result<AdaptEnv> {
        let trace = self.traces[episode_index % self.traces.len()].clone();
        AdaptEnv::new(self.frames.clone(), trace, self.config.clone(), episode_seed)
    }
}

/// Trains the adaptation agent with the shared actor-critic core.
pub fn train_adapt(
    setup: &AdaptTrainSetup,
    spec: &NetSpec,
    workers: usize,
    episodes: usize,
    seed: u64,
) -> Result<(ActorCritic, Vec<EpisodeReport>)> {
    if setup.traces.is_empty() {
        return Err(Error::argument("need at least one training trace"));
    }
    let state_dim = AdaptState::dim(setup.config.history_len);
    let mut ac = ActorCritic::new(state_dim, state_dim, ACTION_COUNT, spec, seed)?;
    let opts = TrainOptions {
        workers,
        episodes,
        seed,
        max_steps: 0,
    };
    let reports = parallel_train(
        |_worker, episode, env_seed| setup.make_env(env_seed, episode),
        &mut ac,
        &opts,
    )?;
    Ok((ac, reports))
}

/// Learning-curve CSV (`episode,mean_reward,mean_P,mean_tx_time`).
pub fn learning_curve_csv(reports: &[EpisodeReport]) -> String {
    let mut out = String::from("episode,mean_reward,mean_P,mean_tx_time\n");
    for r in reports {
        let get = |name: &str| {
            r.extras
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, v)| *v)
                .unwrap_or(f64::NAN)
        };
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            r.episode,
            r.mean_reward,
            get("mean_P"),
            get("mean_tx_time")
        ));
    }
    out
}

/// Evaluation policies for held-out traces.
pub enum AdaptPolicy<'a> {
    /// Argmax of a trained policy network.
    Greedy(&'a Mlp),
    /// One fixed action for every step.
    Fixed(usize),
    /// Uniform random action per step.
    Random(u64),
}

/// Rolls one episode under a policy and returns its QoE (Eq.-style episode
/// objective, the sum of per-step rewards).
pub fn rollout_adapt(env: &mut AdaptEnv, policy: &AdaptPolicy, episode: usize) -> Result<f64> {
    let mut action_rng = rng::rng(
        match policy {
            AdaptPolicy::Random(seed) => *seed,
            _ => 0,
        },
        Stream::Action,
        episode as u64,
    );
    use rand::Rng;
    let mut total = 0.0;
    loop {
        let action_index = match policy {
            AdaptPolicy::Greedy(net) => {
                let probs = net.forward(&env.state().to_vector())?;
                probs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap()
            }
            AdaptPolicy::Fixed(i) => *i,
            AdaptPolicy::Random(_) => action_rng.gen_range(0..ACTION_COUNT),
        };
        let result = env.step(&ConfigAction::from_index(action_index)?)?;
        total += result.reward;
        if result.done {
            return Ok(total);
        }
    }
}

/// Mean per-episode QoE of a policy over a set of held-out traces.
pub fn evaluate_adapt(
    setup: &AdaptTrainSetup,
    policy: &AdaptPolicy,
    eval_seed: u64,
) -> Result<f64> {
    let mut total = 0.0;
    for (i, trace) in setup.traces.iter().enumerate() {
        let env_seed = rng::derive(eval_seed, Stream::Env, i as u64);
        let mut env = AdaptEnv::new(
            setup.frames.clone(),
            trace.clone(),
            setup.config.clone(),
            env_seed,
        )?;
        total += rollout_adapt(&mut env, policy, i)?;
    }
    Ok(total / setup.traces.len() as f64)
}
