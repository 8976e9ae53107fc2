//! Adam parameter updates.

use super::network::{Gradients, Network};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    m_weights: Vec<Vec<f64>>,
    v_weights: Vec<Vec<f64>>,
    m_bias: Vec<Vec<f64>>,
    v_bias: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(net: &Network) -> Self {
        let zero_w: Vec<Vec<f64>> = net
            .nodes()
            .iter()
            .map(|n| vec![0.0; n.weights.len()])
            .collect();
        let zero_b: Vec<Vec<f64>> = net.nodes().iter().map(|n| vec![0.0; n.bias.len()]).collect();
        AdamState {
            step: 0,
            m_weights: zero_w.clone(),
            v_weights: zero_w,
            m_bias: zero_b.clone(),
            v_bias: zero_b,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    bias_corr1: f64,
    bias_corr2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = m[i] / bias_corr1;
        let v_hat = v[i] / bias_corr2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
    }
}

/// One in-place Adam step over every trainable parameter. Deterministic:
/// identical (net, grads, state, lr) sequences keep two networks
/// bit-identical.
pub fn sgd_adam_step(net: &mut Network, grads: &Gradients, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let bias_corr1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let bias_corr2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    for id in 0..net.num_nodes() {
        if net.node(id).weights.is_empty() {
            continue;
        }
        adam_update(
            net.weights_mut(id),
            grads.weights(id),
            &mut state.m_weights[id],
            &mut state.v_weights[id],
            lr,
            bias_corr1,
            bias_corr2,
        );
        adam_update(
            net.bias_mut(id),
            grads.bias(id),
            &mut state.m_bias[id],
            &mut state.v_bias[id],
            lr,
            bias_corr1,
            bias_corr2,
        );
    }
}
