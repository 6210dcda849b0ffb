//! Gradient-descent optimizers over [`MlpGrads`]-shaped parameters.

use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpGrads};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerSpec {
    Sgd { lr: f64 },
    Adam { lr: f64 },
}

impl OptimizerSpec {
    pub fn lr(&self) -> f64 {
        match self {
            OptimizerSpec::Sgd { lr } | OptimizerSpec::Adam { lr } => *lr,
        }
    }
}

fn adam_update(g: &[f64], m: &mut [f64], v: &mut [f64], d: &mut [f64], config: (f64, f64, f64, f64, f64, f64)) {
    let (lr, beta1, beta2, eps, bc1, bc2) = config;
    for i in 0..g.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        d[i] = lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Stateful optimizer; Adam keeps first/second moment estimates shaped like
/// the network it steps.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: u64,
        m: Option<MlpGrads>,
        v: Option<MlpGrads>,
    },
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    /// Adam with the conventional moment defaults.
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: None,
            v: None,
        }
    }

    pub fn from_spec(spec: OptimizerSpec) -> Self {
        match spec {
            OptimizerSpec::Sgd { lr } => Optimizer::sgd(lr),
            OptimizerSpec::Adam { lr } => Optimizer::adam(lr),
        }
    }

    /// Descends `net` along `grads` (gradients of a loss to minimize).
    pub fn step(&mut self, net: &mut Mlp, grads: &MlpGrads) {
        match self {
            Optimizer::Sgd { lr } => {
                let mut delta = grads.clone();
                delta.scale(*lr);
                net.apply_update(&delta);
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                t,
                m,
                v,
            } => {
                let m = m.get_or_insert_with(|| MlpGrads::zeros_like(net));
                let v = v.get_or_insert_with(|| MlpGrads::zeros_like(net));
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t as i32);
                let bc2 = 1.0 - beta2.powi(*t as i32);
                let config = (*lr, *beta1, *beta2, *eps, bc1, bc2);
                let mut delta = MlpGrads::zeros_like(net);
                for li in 0..grads.w.len() {
                    adam_update(&grads.w[li], &mut m.w[li], &mut v.w[li], &mut delta.w[li], config);
                    adam_update(&grads.b[li], &mut m.b[li], &mut v.b[li], &mut delta.b[li], config);
                }
                net.apply_update(&delta);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::mlp::OutputKind;

    #[test]
    fn sgd_step_is_lr_times_gradient() {
        let mut net = Mlp::new(&[2, 1], OutputKind::Linear, 1).unwrap();
        let before = net.flatten_params();
        let mut grads = MlpGrads::zeros_like(&net);
        grads.w[0][0] = 2.0;
        grads.b[0][0] = -1.0;
        let mut opt = Optimizer::sgd(0.1);
        opt.step(&mut net, &grads);
        let after = net.flatten_params();
        assert!((after[0] - (before[0] - 0.2)).abs() < 1e-15);
        assert!((after[1] - before[1]).abs() < 1e-15);
        assert!((after[2] - (before[2] + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut net = Mlp::new(&[3, 2], OutputKind::Linear, 2).unwrap();
        let before = net.flatten_params();
        let grads = MlpGrads::zeros_like(&net);
        let mut opt = Optimizer::adam(1e-3);
        for _ in 0..5 {
            opt.step(&mut net, &grads);
        }
        assert_eq!(net.flatten_params(), before);
    }

    #[test]
    fn adam_first_step_moves_by_lr_in_gradient_sign() {
        let mut net = Mlp::new(&[1, 1], OutputKind::Linear, 3).unwrap();
        let before = net.flatten_params();
        let mut grads = MlpGrads::zeros_like(&net);
        grads.w[0][0] = 0.5;
        let mut opt = Optimizer::adam(1e-3);
        opt.step(&mut net, &grads);
        let after = net.flatten_params();
        // With bias correction the first Adam step is lr * g/|g| (up to eps).
        assert!((after[0] - (before[0] - 1e-3)).abs() < 1e-6);
    }
}
