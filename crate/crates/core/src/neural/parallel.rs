//! Synchronous parallel actor-critic training.
//!
//! Workers each own an independent, distinctly seeded environment. Every
//! round, each worker rolls out one episode against a read-only snapshot of
//! the current parameters and submits its trajectory gradients; the central
//! learner averages them, applies one clipped optimizer step per network,
//! and the next round starts from the fresh parameters. Rounds are
//! deterministic for any worker count because worker results are consumed
//! in worker order; with a single worker the whole run is bit-reproducible.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

use super::{
    advantage, critic_batch_gradient, policy_batch_gradient, ActorCritic, MlpGrads, Transition,
};

/// Step result handed back by an environment.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// A single-owner episodic environment driven by integer actions.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn action_count(&self) -> usize;
    /// Starts a new episode and returns the initial state.
    fn reset(&mut self) -> Result<Vec<f64>>;
    fn step(&mut self, action: usize) -> Result<StepOutcome>;
    /// Environment-specific per-episode metrics, collected after the
    /// episode ends (name, value) pairs.
    fn episode_extras(&self) -> Vec<(&'static str, f64)> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub workers: usize,
    pub episodes: usize,
    pub seed: u64,
    /// Hard cap on steps per episode; 0 means run until `done`.
    pub max_steps: usize,
}

/// Per-episode training metrics emitted by the learner.
#[derive(Debug, Clone)]
pub struct EpisodeReport {
    pub episode: usize,
    pub worker: usize,
    pub env_seed: u64,
    pub steps: usize,
    pub total_reward: f64,
    pub mean_reward: f64,
    pub extras: Vec<(&'static str, f64)>,
}

/// Deterministic env seed for a global episode index.
pub fn episode_env_seed(base_seed: u64, episode: usize) -> u64 {
    rng::derive(base_seed, Stream::Env, episode as u64)
}

/// Samples an action index from a probability simplex.
pub fn sample_action(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let draw: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Gradient sums for one episode plus rollout statistics.
pub struct WorkerYield<P> {
    pub policy_grads: MlpGrads,
    pub critic_grads: MlpGrads,
    pub report: EpisodeReport,
    pub payload: P,
}

/// Runs one synchronous round: each slot in `episodes` is processed by its
/// own worker thread against the shared read-only snapshot. Results come
/// back in slot order.
pub fn run_round<P, F>(
    snapshot: &ActorCritic,
    episodes: &[(usize, u64)],
    worker_fn: F,
) -> Result<Vec<WorkerYield<P>>>
where
    P: Send,
    F: Fn(usize, usize, u64, &ActorCritic) -> Result<WorkerYield<P>> + Sync,
{
    if episodes.len() == 1 {
        // Single worker: run inline, no thread overhead.
        let (episode, seed) = episodes[0];
        return Ok(vec![worker_fn(0, episode, seed, snapshot)?]);
    }
    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(episodes.len());
        for (slot, &(episode, seed)) in episodes.iter().enumerate() {
            let worker_fn = &worker_fn;
            handles.push(scope.spawn(move || worker_fn(slot, episode, seed, snapshot)));
        }
        let mut yields = Vec::with_capacity(handles.len());
        for (slot, handle) in handles.into_iter().enumerate() {
            let result = handle.join().map_err(|_| {
                Error::Worker {
                    worker: slot,
                    source: Box::new(Error::training("worker thread panicked")),
                }
            })?;
            yields.push(result.map_err(|e| Error::Worker {
                worker: slot,
                source: Box::new(e),
            })?);
        }
        Ok(yields)
    })
}

/// Averages worker gradients and applies one clipped update per network.
pub fn apply_round(ac: &mut ActorCritic, yields: &mut [WorkerYield<impl Sized>]) -> Result<()> {
    let n = yields.len() as f64;
    let mut policy_sum = MlpGrads::zeros_like(&ac.policy);
    let mut critic_sum = MlpGrads::zeros_like(&ac.critic);
    for y in yields.iter() {
        policy_sum.add_assign(&y.policy_grads);
        critic_sum.add_assign(&y.critic_grads);
    }
    policy_sum.scale(1.0 / n);
    critic_sum.scale(1.0 / n);
    for (grads, what) in [(&mut policy_sum, "policy"), (&mut critic_sum, "critic")] {
        if !grads.is_finite() {
            return Err(Error::training(format!(
                "{what} round gradient is non-finite"
            )));
        }
        if let Some(max) = ac.clip_norm {
            grads.clip_global_norm(max);
        }
    }
    ac.policy_opt.step(&mut ac.policy, &policy_sum);
    ac.critic_opt.step(&mut ac.critic, &critic_sum);
    if !ac.policy.params_finite() || !ac.critic.params_finite() {
        return Err(Error::training("parameters non-finite after round update"));
    }
    Ok(())
}

/// Rolls one episode with sampled actions and returns the transitions.
pub fn rollout<E: Environment>(
    env: &mut E,
    ac: &ActorCritic,
    action_rng: &mut ChaCha8Rng,
    max_steps: usize,
) -> Result<Vec<Transition>> {
    let mut state = env.reset()?;
    let mut transitions = Vec::new();
    loop {
        let probs = ac.policy.forward(&state)?;
        let action = sample_action(&probs, action_rng);
        let outcome = env.step(action)?;
        transitions.push(Transition {
            state: state.clone(),
            action,
            reward: outcome.reward,
            next_state: outcome.state.clone(),
            terminal: outcome.done,
        });
        state = outcome.state;
        if outcome.done || (max_steps > 0 && transitions.len() >= max_steps) {
            return Ok(transitions);
        }
    }
}

/// Standard worker: rollout, one-step advantages against the critic
/// snapshot, per-episode gradient sums.
fn standard_worker<E: Environment>(
    env: &mut E,
    worker: usize,
    episode: usize,
    env_seed: u64,
    base_seed: u64,
    snapshot: &ActorCritic,
    max_steps: usize,
) -> Result<WorkerYield<()>> {
    let mut action_rng = rng::rng(base_seed, Stream::Action, episode as u64);
    let transitions = rollout(env, snapshot, &mut action_rng, max_steps)?;
    let mut policy_items = Vec::with_capacity(transitions.len());
    let mut critic_items = Vec::with_capacity(transitions.len());
    for t in &transitions {
        let adv = advantage(t, &snapshot.critic, snapshot.gamma)?;
        policy_items.push((t.state.as_slice(), t.action, adv));
        let v_next = if t.terminal {
            0.0
        } else {
            snapshot.critic.forward(&t.next_state)?[0]
        };
        critic_items.push((t.state.as_slice(), t.reward + snapshot.gamma * v_next));
    }
    let (policy_grads, _) =
        policy_batch_gradient(&snapshot.policy, &policy_items, snapshot.entropy_weight)?;
    let (critic_grads, _) = critic_batch_gradient(&snapshot.critic, &critic_items)?;
    let total_reward: f64 = transitions.iter().map(|t| t.reward).sum();
    let steps = transitions.len();
    Ok(WorkerYield {
        policy_grads,
        critic_grads,
        report: EpisodeReport {
            episode,
            worker,
            env_seed,
            steps,
            total_reward,
            mean_reward: total_reward / steps.max(1) as f64,
            extras: env.episode_extras(),
        },
        payload: (),
    })
}

/// Trains an actor-critic over factory-built environments.
///
/// `factory(worker_id, episode_index, env_seed)` must build an independent
/// environment; the env seed schedule is a pure function of `opts.seed` and
/// the global episode index, so two runs with the same options see
/// identical inputs.
pub fn parallel_train<E, F>(
    factory: F,
    ac: &mut ActorCritic,
    opts: &TrainOptions,
) -> Result<Vec<EpisodeReport>>
where
    E: Environment,
    F: Fn(usize, usize, u64) -> Result<E> + Sync,
{
    if opts.workers == 0 {
        return Err(Error::argument("workers must be >= 1"));
    }
    if opts.episodes == 0 {
        return Err(Error::argument("episodes must be >= 1"));
    }
    let mut reports = Vec::with_capacity(opts.episodes);
    let mut episode = 0;
    while episode < opts.episodes {
        let round: Vec<(usize, u64)> = (episode..opts.episodes.min(episode + opts.workers))
            .map(|e| (e, episode_env_seed(opts.seed, e)))
            .collect();
        let snapshot = ac.clone();
        let factory = &factory;
        let base_seed = opts.seed;
        let max_steps = opts.max_steps;
        let mut yields = run_round(&snapshot, &round, move |worker, ep, env_seed, snap| {
            let mut env = factory(worker, ep, env_seed)?;
            standard_worker(&mut env, worker, ep, env_seed, base_seed, snap, max_steps)
        })?;
        apply_round(ac, &mut yields)?;
        for y in yields {
            reports.push(y.report);
        }
        episode += round.len();
    }
    Ok(reports)
}
