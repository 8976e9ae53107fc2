//! Finite-difference verification of the reverse-mode gradients.
//!
//! Every parameter (and every input element) is perturbed by ±h and the
//! central difference of the scalar objective is compared against the
//! analytic gradient. Gradients at least 1e-3 in magnitude must agree to
//! the relative tolerance; smaller ones to the absolute floor.

use super::network::{Gradients, Network};
use super::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const REL_TOLERANCE: f64 = 1e-5;
pub const ABS_FLOOR: f64 = 1e-8;
const SMALL_GRAD: f64 = 1e-3;

/// Summary of one finite-difference sweep.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheckOutcome {
    pub checked: usize,
    pub failures: usize,
    /// Worst relative disagreement among gradients above the small-gradient
    /// cutoff.
    pub max_rel_error: f64,
    /// Worst absolute disagreement among gradients below the cutoff.
    pub max_abs_error: f64,
}

impl GradCheckOutcome {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.failures == 0
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        self.checked += 1;
        let diff = (analytic - numeric).abs();
        let magnitude = analytic.abs().max(numeric.abs());
        if magnitude >= SMALL_GRAD {
            let rel = diff / magnitude;
            self.max_rel_error = self.max_rel_error.max(rel);
            if rel > REL_TOLERANCE {
                self.failures += 1;
            }
        } else {
            self.max_abs_error = self.max_abs_error.max(diff);
            if diff > ABS_FLOOR {
                self.failures += 1;
            }
        }
    }
}

/// Objective for structure checks: a fixed random weighting of the final
/// node's outputs. Exercises every layer without needing a loss head.
fn weighted_output(net: &Network, input: &Tensor, coeffs: &[f64]) -> f64 {
    let outputs = net.forward_tensor(input).expect("gradcheck networks are well-formed");
    outputs
        .last()
        .unwrap()
        .values()
        .iter()
        .zip(coeffs)
        .map(|(o, c)| o * c)
        .sum()
}

fn analytic_gradients(net: &Network, input: &Tensor, coeffs: &[f64]) -> (Gradients, Tensor) {
    let outputs = net.forward_tensor(input).expect("gradcheck networks are well-formed");
    let shape = outputs.last().unwrap().shape();
    let seed = Tensor::from_values(shape, coeffs.to_vec());
    net.backward_seeded(&outputs, &seed).expect("gradcheck networks are well-formed")
}

/// Checks d(weighted output)/d(parameters) and d(weighted output)/d(input)
/// against central differences with step `h`.
pub fn check_output_gradients(
    net: &mut Network,
    input: &Tensor,
    coeff_seed: u64,
    h: f64,
) -> GradCheckOutcome {
    let out_len = net.output_shape().element_count();
    let mut rng = ChaCha8Rng::seed_from_u64(coeff_seed);
    let coeffs: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let (grads, input_grad) = analytic_gradients(net, input, &coeffs);
    let mut outcome = GradCheckOutcome::default();

    for id in 0..net.num_nodes() {
        for slot in [0usize, 1] {
            let len = if slot == 0 {
                net.node(id).weights.len()
            } else {
                net.node(id).bias.len()
            };
            for k in 0..len {
                let params = if slot == 0 { net.weights_mut(id) } else { net.bias_mut(id) };
                let original = params[k];
                params[k] = original + h;
                let plus = weighted_output(net, input, &coeffs);
                let params = if slot == 0 { net.weights_mut(id) } else { net.bias_mut(id) };
                params[k] = original - h;
                let minus = weighted_output(net, input, &coeffs);
                let params = if slot == 0 { net.weights_mut(id) } else { net.bias_mut(id) };
                params[k] = original;

                let numeric = (plus - minus) / (2.0 * h);
                let analytic = if slot == 0 {
                    grads.weights(id)[k]
                } else {
                    grads.bias(id)[k]
                };
                outcome.record(analytic, numeric);
            }
        }
    }

    let mut probe = input.clone();
    for k in 0..probe.len() {
        let original = probe.values()[k];
        probe.values_mut()[k] = original + h;
        let plus = weighted_output(net, &probe, &coeffs);
        probe.values_mut()[k] = original - h;
        let minus = weighted_output(net, &probe, &coeffs);
        probe.values_mut()[k] = original;
        let numeric = (plus - minus) / (2.0 * h);
        outcome.record(input_grad.values()[k], numeric);
    }

    outcome
}

fn cross_entropy(net: &Network, input: &Tensor, label: u8) -> f64 {
    let outputs = net.forward_tensor(input).expect("gradcheck networks are well-formed");
    let p = outputs.last().unwrap().values()[label as usize].max(1e-300);
    -p.ln()
}

/// Checks d(cross-entropy)/d(parameters) against central differences for a
/// classifier network ending in softmax.
pub fn check_loss_gradients(
    net: &mut Network,
    input: &Tensor,
    label: u8,
    h: f64,
) -> GradCheckOutcome {
    let outputs = net.forward_tensor(input).expect("gradcheck networks are well-formed");
    let probs = outputs.last().unwrap();
    let p = probs.values()[label as usize].max(1e-300);
    let mut seed = Tensor::zeros(probs.shape());
    seed.values_mut()[label as usize] = -1.0 / p;
    let (grads, _) = net
        .backward_seeded(&outputs, &seed)
        .expect("gradcheck networks are well-formed");

    let mut outcome = GradCheckOutcome::default();
    for id in 0..net.num_nodes() {
        for slot in [0usize, 1] {
            let len = if slot == 0 {
                net.node(id).weights.len()
            } else {
                net.node(id).bias.len()
            };
            for k in 0..len {
                let params = if slot == 0 { net.weights_mut(id) } else { net.bias_mut(id) };
                let original = params[k];
                params[k] = original + h;
                let plus = cross_entropy(net, input, label);
                let params = if slot == 0 { net.weights_mut(id) } else { net.bias_mut(id) };
                params[k] = original - h;
                let minus = cross_entropy(net, input, label);
                let params = if slot == 0 { net.weights_mut(id) } else { net.bias_mut(id) };
                params[k] = original;

                let numeric = (plus - minus) / (2.0 * h);
                let analytic = if slot == 0 {
                    grads.weights(id)[k]
                } else {
                    grads.bias(id)[k]
                };
                outcome.record(analytic, numeric);
            }
        }
    }
    outcome
}
