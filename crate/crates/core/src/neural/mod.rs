//! Actor-critic training core.
//!
//! Two networks: a softmax policy and a scalar critic. The policy ascends
//! `sum_t grad log pi(a_t|s_t) * A(s_t, a_t)` with the one-step advantage
//! `A = r + gamma * V(s') - V(s)`; the critic descends the squared TD error
//! with the target held constant (semi-gradient). Both updates run through a
//! configurable optimizer with global-norm gradient clipping.

pub mod mlp;
pub mod optim;
pub mod parallel;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use mlp::{log_softmax, softmax, ForwardCache, Mlp, MlpGrads, OutputKind};
pub use optim::{Optimizer, OptimizerSpec};
pub use parallel::{parallel_train, EpisodeReport, Environment, StepOutcome, TrainOptions};

/// Default clip threshold for the global gradient norm; protects the
/// exp-based penalty rewards from blowing up an update.
pub const DEFAULT_CLIP_NORM: f64 = 5.0;

/// One environment interaction used as a training tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Policy + critic pair with their optimizers and shared hyperparameters.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub policy: Mlp,
    pub critic: Mlp,
    pub gamma: f64,
    pub policy_opt: Optimizer,
    pub critic_opt: Optimizer,
    /// Entropy bonus weight added to the policy objective; 0 disables it.
    pub entropy_weight: f64,
    /// Global-norm clip applied to both gradient sums before stepping.
    pub clip_norm: Option<f64>,
}

/// Architecture + hyperparameters from which an [`ActorCritic`] is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    /// Hidden layer widths shared by policy and critic.
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub lr: f64,
    #[serde(default)]
    pub entropy_weight: f64,
}

impl Default for NetSpec {
    fn default() -> Self {
        NetSpec {
            hidden: vec![128, 128],
            gamma: 0.99,
            lr: 1e-3,
            entropy_weight: 0.0,
        }
    }
}

impl ActorCritic {
    /// Builds policy `[state, hidden.., actions]` (softmax) and critic
    /// `[critic_input, hidden.., 1]` (linear), Adam on both.
    pub fn new(
        state_dim: usize,
        critic_input_dim: usize,
        actions: usize,
        spec: &NetSpec,
        seed: u64,
    ) -> Result<Self> {
        if !(spec.gamma > 0.0 && spec.gamma <= 1.0) {
            return Err(Error::argument("gamma must lie in (0, 1]"));
        }
        if !(spec.lr > 0.0) {
            return Err(Error::argument("learning rate must be > 0"));
        }
        let mut policy_dims = vec![state_dim];
        policy_dims.extend_from_slice(&spec.hidden);
        policy_dims.push(actions);
        let mut critic_dims = vec![critic_input_dim];
        critic_dims.extend_from_slice(&spec.hidden);
        critic_dims.push(1);
        Ok(ActorCritic {
            policy: Mlp::new(&policy_dims, OutputKind::Softmax, seed)?,
            critic: Mlp::new(&critic_dims, OutputKind::Linear, seed.wrapping_add(1))?,
            gamma: spec.gamma,
            policy_opt: Optimizer::adam(spec.lr),
            critic_opt: Optimizer::adam(spec.lr),
            entropy_weight: spec.entropy_weight,
            clip_norm: Some(DEFAULT_CLIP_NORM),
        })
    }

    pub fn action_count(&self) -> usize {
        self.policy.output_dim()
    }

    /// Critic value of a state.
    pub fn value(&self, state: &[f64]) -> Result<f64> {
        Ok(self.critic.forward(state)?[0])
    }
}

/// One-step advantage `r + gamma * V(s') - V(s)`; terminal transitions use
/// `V(s') = 0`.
pub fn advantage(transition: &Transition, critic: &Mlp, gamma: f64) -> Result<f64> {
    let v_s = critic.forward(&transition.state)?[0];
    let v_next = if transition.terminal {
        0.0
    } else {
        critic.forward(&transition.next_state)?[0]
    };
    Ok(transition.reward + gamma * v_next - v_s)
}

/// Report returned by the gradient-applying steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// True when the clip threshold rescaled the gradient.
    pub clipped: bool,
    /// Batch loss (squared TD error sum for the critic; negative policy
    /// objective for the policy).
    pub loss: f64,
}

/// Gradient of the policy loss
/// `-(sum_t log pi(a_t|s_t) * A_t + entropy_weight * H(pi(s_t)))`
/// over explicit `(state, action, advantage)` items.
///
/// Advantages are treated as constants; descending this loss is exactly the
/// ascent update on the expected return.
pub fn policy_batch_gradient(
    policy: &Mlp,
    items: &[(&[f64], usize, f64)],
    entropy_weight: f64,
) -> Result<(MlpGrads, f64)> {
    if items.is_empty() {
        return Err(Error::argument("policy batch must be non-empty"));
    }
    let mut grads = MlpGrads::zeros_like(policy);
    let mut loss = 0.0;
    let n_actions = policy.output_dim();
    for &(state, action, adv) in items {
        if action >= n_actions {
            return Err(Error::argument(format!(
                "action {action} outside policy arity {n_actions}"
            )));
        }
        let cache = policy.forward_cached(state)?;
        let probs = cache.output();
        let logp = log_softmax(cache.logits());
        loss -= logp[action] * adv;
        let mut entropy = 0.0;
        if entropy_weight != 0.0 {
            entropy = -probs.iter().zip(&logp).map(|(p, lp)| p * lp).sum::<f64>();
            loss -= entropy_weight * entropy;
        }
        // d(-logpi*A)/dlogit_k = -A * (1[k=a] - pi_k);
        // d(-w*H)/dlogit_k = w * pi_k * (log pi_k + H).
        let mut logit_grad = vec![0.0; n_actions];
        for k in 0..n_actions {
            let indicator = if k == action { 1.0 } else { 0.0 };
            logit_grad[k] = -adv * (indicator - probs[k]);
            if entropy_weight != 0.0 {
                logit_grad[k] += entropy_weight * probs[k] * (logp[k] + entropy);
            }
        }
        grads.add_assign(&policy.backprop(&cache, &logit_grad));
    }
    Ok((grads, loss))
}

/// Gradient of the semi-gradient critic loss `sum_t (target_t - V(s_t))^2`
/// over explicit `(state, target)` items; targets are constants.
pub fn critic_batch_gradient(critic: &Mlp, items: &[(&[f64], f64)]) -> Result<(MlpGrads, f64)> {
    if items.is_empty() {
        return Err(Error::argument("critic batch must be non-empty"));
    }
    let mut grads = MlpGrads::zeros_like(critic);
    let mut loss = 0.0;
    for &(state, target) in items {
        let cache = critic.forward_cached(state)?;
        let v = cache.output()[0];
        let err = target - v;
        loss += err * err;
        // dL/dV = -2 * (target - V)
        grads.add_assign(&critic.backprop(&cache, &[-2.0 * err]));
    }
    Ok((grads, loss))
}

fn check_and_clip(grads: &mut MlpGrads, clip: Option<f64>, what: &str) -> Result<(f64, bool)> {
    if !grads.is_finite() {
        return Err(Error::training(format!(
            "{what} gradient is non-finite (norm {})",
            grads.global_norm()
        )));
    }
    let norm = grads.global_norm();
    let mut clipped = false;
    if let Some(max) = clip {
        if norm > max {
            grads.clip_global_norm(max);
            clipped = true;
        }
    }
    Ok((norm, clipped))
}

/// Policy update over a batch of transitions: computes one-step advantages
/// with the current critic, then ascends the policy objective.
pub fn policy_step(ac: &mut ActorCritic, batch: &[Transition]) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::argument("policy_step needs a non-empty batch"));
    }
    let mut items = Vec::with_capacity(batch.len());
    for t in batch {
        let adv = advantage(t, &ac.critic, ac.gamma)?;
        items.push((t.state.as_slice(), t.action, adv));
    }
    let (mut grads, loss) = policy_batch_gradient(&ac.policy, &items, ac.entropy_weight)?;
    let (grad_norm, clipped) = check_and_clip(&mut grads, ac.clip_norm, "policy")?;
    ac.policy_opt.step(&mut ac.policy, &grads);
    if !ac.policy.params_finite() {
        return Err(Error::training(
            "policy parameters became non-finite after update",
        ));
    }
    Ok(StepReport {
        grad_norm,
        clipped,
        loss,
    })
}

/// Critic update over a batch of transitions (semi-gradient TD).
pub fn critic_step(ac: &mut ActorCritic, batch: &[Transition]) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::argument("critic_step needs a non-empty batch"));
    }
    let mut items = Vec::with_capacity(batch.len());
    for t in batch {
        let v_next = if t.terminal {
            0.0
        } else {
            ac.critic.forward(&t.next_state)?[0]
        };
        items.push((t.state.as_slice(), t.reward + ac.gamma * v_next));
    }
    let (mut grads, loss) = critic_batch_gradient(&ac.critic, &items)?;
    let (grad_norm, clipped) = check_and_clip(&mut grads, ac.clip_norm, "critic")?;
    ac.critic_opt.step(&mut ac.critic, &grads);
    if !ac.critic.params_finite() {
        return Err(Error::training(
            "critic parameters became non-finite after update",
        ));
    }
    Ok(StepReport {
        grad_norm,
        clipped,
        loss,
    })
}

/// Versioned checkpoint of an actor-critic pair. Layer weights are stored
/// row-major; the format is stable for reload across runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub gamma: f64,
    pub policy: Mlp,
    pub critic: Mlp,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn from_actor_critic(ac: &ActorCritic) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            gamma: ac.gamma,
            policy: ac.policy.clone(),
            critic: ac.critic.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)
            .map_err(|e| Error::validation(format!("corrupt checkpoint: {e}")))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::validation(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    /// Rebuilds a trainable pair (fresh optimizer state) from the snapshot.
    pub fn into_actor_critic(self, lr: f64) -> ActorCritic {
        ActorCritic {
            policy: self.policy,
            critic: self.critic,
            gamma: self.gamma,
            policy_opt: Optimizer::adam(lr),
            critic_opt: Optimizer::adam(lr),
            entropy_weight: 0.0,
            clip_norm: Some(DEFAULT_CLIP_NORM),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_ac(seed: u64) -> ActorCritic {
        let spec = NetSpec {
            hidden: vec![6],
            gamma: 0.99,
            lr: 1e-3,
            entropy_weight: 0.0,
        };
        ActorCritic::new(4, 4, 3, &spec, seed).unwrap()
    }

    fn random_transition(rng: &mut impl Rng, actions: usize) -> Transition {
        Transition {
            state: (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            action: rng.gen_range(0..actions),
            reward: rng.gen_range(-1.0..1.0),
            next_state: (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            terminal: rng.gen_bool(0.1),
        }
    }

    #[test]
    fn advantage_hand_values() {
        // Critic forced to V(s) = s[0] so targets are easy to stage.
        let mut critic = Mlp::new(&[1, 1], OutputKind::Linear, 0).unwrap();
        critic.set_params(&[1.0, 0.0]).unwrap();
        let t = Transition {
            state: vec![1.0],
            action: 0,
            reward: 1.0,
            next_state: vec![2.0],
            terminal: false,
        };
        let a = advantage(&t, &critic, 0.99).unwrap();
        assert!((a - 1.98).abs() < 1e-12);

        let t_terminal = Transition {
            terminal: true,
            ..t.clone()
        };
        assert!((advantage(&t_terminal, &critic, 0.99).unwrap() - 0.0).abs() < 1e-12);

        let zero = Transition {
            state: vec![0.0],
            action: 0,
            reward: 0.0,
            next_state: vec![0.0],
            terminal: false,
        };
        assert_eq!(advantage(&zero, &critic, 0.99).unwrap(), 0.0);
    }

    #[test]
    fn zero_advantage_batch_leaves_policy_unchanged() {
        let mut ac = tiny_ac(5);
        // Make the critic exactly fit r + gamma*V(s') = V(s) by using zero
        // rewards and a zero critic.
        let zeros = vec![0.0; ac.critic.param_count()];
        ac.critic.set_params(&zeros).unwrap();
        let before = ac.policy.flatten_params();
        let batch = vec![Transition {
            state: vec![0.1, 0.2, -0.3, 0.4],
            action: 1,
            reward: 0.0,
            next_state: vec![0.0, 0.0, 0.0, 0.0],
            terminal: false,
        }];
        policy_step(&mut ac, &batch).unwrap();
        assert_eq!(ac.policy.flatten_params(), before);
    }

    /// Single transition, single-weight policy: the update must equal the
    /// hand-derived `lr * d log pi / d w * A` (SGD, no clipping).
    #[test]
    fn one_weight_policy_update_matches_hand_gradient() {
        let mut ac = tiny_ac(0);
        ac.policy = Mlp::new(&[1, 2], OutputKind::Softmax, 7).unwrap();
        ac.policy_opt = Optimizer::sgd(0.1);
        ac.clip_norm = None;
        ac.critic = Mlp::new(&[1, 1], OutputKind::Linear, 0).unwrap();
        ac.critic.set_params(&[0.0, 0.0]).unwrap();
        // Policy params: w = [[w0],[w1]], b = [b0, b1]; logits = [w0*x+b0, w1*x+b1].
        ac.policy.set_params(&[0.5, -0.25, 0.0, 0.0]).unwrap();

        let x = 2.0;
        let t = Transition {
            state: vec![x],
            action: 0,
            reward: 1.5, // advantage = 1.5 with the zero critic
            next_state: vec![0.0],
            terminal: true,
        };
        let params_before = ac.policy.flatten_params();
        policy_step(&mut ac, &[t]).unwrap();
        let params_after = ac.policy.flatten_params();

        // By hand: pi0 = sigma((w0-w1)x + b0-b1); d log pi0/dw0 = (1-pi0)*x.
        let z = (0.5 - (-0.25)) * x;
        let pi0 = 1.0 / (1.0 + (-z).exp());
        let adv = 1.5;
        let lr = 0.1;
        let expect_dw0 = lr * adv * (1.0 - pi0) * x;
        let expect_dw1 = lr * adv * (0.0 - (1.0 - pi0)) * x;
        assert!((params_after[0] - (params_before[0] + expect_dw0)).abs() < 1e-12);
        assert!((params_after[1] - (params_before[1] + expect_dw1)).abs() < 1e-12);
    }

    /// Single transition, single-weight linear critic: semi-gradient update
    /// matches the hand derivation.
    #[test]
    fn one_weight_critic_update_matches_hand_gradient() {
        let mut ac = tiny_ac(0);
        ac.critic = Mlp::new(&[1, 1], OutputKind::Linear, 3).unwrap();
        ac.critic.set_params(&[0.5, 0.0]).unwrap();
        ac.critic_opt = Optimizer::sgd(0.01);
        ac.clip_norm = None;

        let t = Transition {
            state: vec![2.0],
            action: 0,
            reward: 1.0,
            next_state: vec![1.0],
            terminal: false,
        };
        // V(s)=0.5*2=1.0, V(s')=0.5, target = 1 + 0.99*0.5 = 1.495.
        // dL/dw = -2*(target - V(s))*x = -2*0.495*2 = -1.98; dL/db = -0.99.
        critic_step(&mut ac, &[t]).unwrap();
        let params = ac.critic.flatten_params();
        assert!((params[0] - (0.5 + 0.01 * 1.98)).abs() < 1e-12);
        assert!((params[1] - 0.01 * 0.99).abs() < 1e-12);
    }

    #[test]
    fn fitted_critic_has_zero_loss_and_no_update() {
        let mut ac = tiny_ac(9);
        let zeros = vec![0.0; ac.critic.param_count()];
        ac.critic.set_params(&zeros).unwrap();
        let batch = vec![Transition {
            state: vec![0.5, -0.5, 0.25, 0.0],
            action: 0,
            reward: 0.0,
            next_state: vec![0.1, 0.1, 0.1, 0.1],
            terminal: false,
        }];
        let report = critic_step(&mut ac, &batch).unwrap();
        assert_eq!(report.loss, 0.0);
        assert_eq!(ac.critic.flatten_params(), zeros);
    }

    #[test]
    fn critic_loss_decreases_over_repeated_steps() {
        let mut ac = tiny_ac(11);
        ac.critic_opt = Optimizer::sgd(1e-3);
        let mut rng = crate::rng::rng(11, crate::rng::Stream::Env, 0);
        let batch: Vec<Transition> = (0..8).map(|_| random_transition(&mut rng, 3)).collect();
        let first = critic_step(&mut ac, &batch).unwrap().loss;
        let mut last = first;
        for _ in 0..99 {
            last = critic_step(&mut ac, &batch).unwrap().loss;
        }
        assert!(
            last < first,
            "critic loss did not decrease: {first} -> {last}"
        );
    }

    /// Central finite differences over every parameter as the gradient
    /// oracle (h = 1e-5, relative tolerance 1e-3).
    fn check_gradient(analytic: &MlpGrads, net: &Mlp, objective: impl Fn(&Mlp) -> f64) {
        let h = 1e-5;
        let flat_analytic: Vec<f64> = analytic
            .w
            .iter()
            .zip(&analytic.b)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied().collect::<Vec<_>>())
            .collect();
        let base = net.flatten_params();
        let mut probe = net.clone();
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            probe.set_params(&plus).unwrap();
            let f_plus = objective(&probe);
            let mut minus = base.clone();
            minus[i] -= h;
            probe.set_params(&minus).unwrap();
            let f_minus = objective(&probe);
            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = flat_analytic[i];
            let denom = a.abs().max(numeric.abs()).max(1e-4);
            assert!(
                (a - numeric).abs() / denom < 1e-3,
                "param {i}: analytic {a} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let mut rng = crate::rng::rng(21, crate::rng::Stream::Env, 1);
        for seed in 0..5u64 {
            let net = Mlp::new(&[4, 6, 3], OutputKind::Softmax, seed).unwrap();
            let states: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let items: Vec<(&[f64], usize, f64)> = states
                .iter()
                .enumerate()
                .map(|(i, s)| (s.as_slice(), i % 3, [0.5, -1.0, 2.0][i % 3]))
                .collect();
            let (grads, _) = policy_batch_gradient(&net, &items, 0.0).unwrap();
            check_gradient(&grads, &net, |n| {
                -items
                    .iter()
                    .map(|&(s, a, adv)| {
                        let cache = n.forward_cached(s).unwrap();
                        log_softmax(cache.logits())[a] * adv
                    })
                    .sum::<f64>()
            });
        }
    }

    #[test]
    fn policy_gradient_with_entropy_matches_finite_differences() {
        let net = Mlp::new(&[3, 5, 4], OutputKind::Softmax, 31).unwrap();
        let state = vec![0.2, -0.7, 1.1];
        let items: Vec<(&[f64], usize, f64)> = vec![(state.as_slice(), 2, 0.8)];
        let w = 0.05;
        let (grads, _) = policy_batch_gradient(&net, &items, w).unwrap();
        check_gradient(&grads, &net, |n| {
            let cache = n.forward_cached(&state).unwrap();
            let logp = log_softmax(cache.logits());
            let probs = cache.output();
            let entropy = -probs.iter().zip(&logp).map(|(p, lp)| p * lp).sum::<f64>();
            -(logp[2] * 0.8 + w * entropy)
        });
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut rng = crate::rng::rng(22, crate::rng::Stream::Env, 2);
        for seed in 0..5u64 {
            let net = Mlp::new(&[4, 5, 1], OutputKind::Linear, seed).unwrap();
            let states: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let targets = [0.3, -0.4, 1.2, 0.0];
            let items: Vec<(&[f64], f64)> = states
                .iter()
                .zip(targets)
                .map(|(s, t)| (s.as_slice(), t))
                .collect();
            let (grads, _) = critic_batch_gradient(&net, &items).unwrap();
            check_gradient(&grads, &net, |n| {
                items
                    .iter()
                    .map(|&(s, t)| {
                        let v = n.forward(s).unwrap()[0];
                        (t - v) * (t - v)
                    })
                    .sum::<f64>()
            });
        }
    }

    #[test]
    fn parameters_stay_finite_across_many_updates() {
        let mut ac = tiny_ac(13);
        let mut rng = crate::rng::rng(13, crate::rng::Stream::Env, 3);
        for i in 0..10_000 {
            let batch: Vec<Transition> = (0..4).map(|_| random_transition(&mut rng, 3)).collect();
            policy_step(&mut ac, &batch).unwrap();
            critic_step(&mut ac, &batch).unwrap();
            if i % 2_500 == 0 {
                assert!(ac.policy.params_finite() && ac.critic.params_finite());
            }
        }
        assert!(ac.policy.params_finite() && ac.critic.params_finite());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let ac = tiny_ac(17);
        let json = Checkpoint::from_actor_critic(&ac).to_json().unwrap();
        let restored = Checkpoint::from_json(&json).unwrap();
        assert_eq!(restored.policy, ac.policy);
        assert_eq!(restored.critic, ac.critic);
        assert!(Checkpoint::from_json("{\"version\":99}").is_err());
        assert!(Checkpoint::from_json("not json").is_err());
    }
}
