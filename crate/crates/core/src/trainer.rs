//! Mini-batch training loop with early stopping, plus evaluation metrics.

use crate::dataset::{DatasetSplit, LabeledImage};
use crate::tensornet::{sgd_adam_step, AdamState, Gradients, Network, NetworkError, TensorShape};
use std::fmt;
use std::io::{self, Write};
use std::time::Instant;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Upper bound on epochs; zero is a no-op that returns the initial net.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Shuffling seed. Together with the net's init seed it pins the run.
    pub seed: u64,
    /// Epochs without a validation-accuracy improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            patience: 5,
        }
    }
}

/// Per-epoch metrics, in epoch order.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// 2x2 counts indexed `[actual][predicted]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 2]; 2],
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Correct predictions (the diagonal).
    pub fn trace(&self) -> usize {
        self.counts[0][0] + self.counts[1][1]
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.trace() as f64 / self.total() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    pub wall_time_s: f64,
    pub test_accuracy: f64,
    pub confusion: ConfusionMatrix,
    /// Epoch whose weights were returned (best validation accuracy).
    pub best_epoch: Option<usize>,
}

impl TrainReport {
    /// CSV export (`epoch,train_loss,train_acc,val_loss,val_acc`) for
    /// re-plotting loss and accuracy trends.
    pub fn write_csv(&self, out: &mut dyn Write) -> io::Result<()> {
        writeln!(out, "epoch,train_loss,train_acc,val_loss,val_acc")?;
        for (epoch, s) in self.history.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{}",
                epoch, s.train_loss, s.train_accuracy, s.val_loss, s.val_accuracy
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    /// Loss became non-finite.
    Diverged { epoch: usize, batch: usize },
    EmptySplit(&'static str),
    BadConfig(String),
    WrongHead(String),
    Network(NetworkError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Diverged { epoch, batch } => {
                write!(f, "training diverged at epoch {epoch}, batch {batch}")
            }
            TrainError::EmptySplit(which) => write!(f, "{which} split is empty"),
            TrainError::BadConfig(msg) => write!(f, "bad training config: {msg}"),
            TrainError::WrongHead(msg) => write!(f, "unsupported network: {msg}"),
            TrainError::Network(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<NetworkError> for TrainError {
    fn from(e: NetworkError) -> Self {
        TrainError::Network(e)
    }
}

/// Argmax accuracy and confusion counts over a labeled set. Ties between
/// the two class probabilities resolve to label 0. Order-independent.
pub fn evaluate(net: &Network, images: &[LabeledImage]) -> Result<(f64, ConfusionMatrix), TrainError> {
    if images.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let mut confusion = ConfusionMatrix::default();
    for item in images {
        let pred = net.forward(&item.image)?.predicted_label();
        confusion.counts[item.label as usize][pred as usize] += 1;
    }
    Ok((confusion.accuracy(), confusion))
}

fn mean_loss(net: &Network, images: &[LabeledImage]) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for item in images {
        let p = net.forward(&item.image)?.probabilities[item.label as usize];
        total += if p.is_finite() { -(p.max(1e-300)).ln() } else { f64::NAN };
    }
    Ok(total / images.len() as f64)
}

/// Mini-batch Adam on cross-entropy. Deterministic given (net, split, cfg);
/// returns the weights of the best validation-accuracy epoch together with
/// the per-epoch report.
pub fn train(
    mut net: Network,
    split: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<(Network, TrainReport), TrainError> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    if split.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if split.validation.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    if split.test.is_empty() {
        return Err(TrainError::EmptySplit("test"));
    }
    if cfg.batch_size == 0 || cfg.batch_size > split.train.len() {
        return Err(TrainError::BadConfig(format!(
            "batch_size {} must be in 1..={}",
            cfg.batch_size,
            split.train.len()
        )));
    }
    if !(cfg.learning_rate > 0.0) || cfg.patience == 0 {
        return Err(TrainError::BadConfig(
            "learning_rate and patience must be positive".into(),
        ));
    }
    if net.output_shape() != (TensorShape::Vector { len: 2 }) {
        return Err(TrainError::WrongHead(
            "classifier must end in a two-class softmax".into(),
        ));
    }

    let started = Instant::now();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(&net);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Network)> = None;
    let mut stale_epochs = 0usize;

    let mut order: Vec<usize> = (0..split.train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0usize;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = Gradients::zeros_like(&net);
            let mut batch_loss = 0.0;
            for &i in batch {
                let item = &split.train[i];
                let (loss, sample_grads) = net.backward(&item.image, item.label)?;
                batch_loss += loss;
                grads.accumulate(&sample_grads);
                let pred = net.forward(&item.image)?.predicted_label();
                if pred == item.label {
                    epoch_correct += 1;
                }
            }
            batch_loss /= batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    batch: batch_idx,
                });
            }
            epoch_loss += batch_loss * batch.len() as f64;
            grads.scale(1.0 / batch.len() as f64);
            sgd_adam_step(&mut net, &grads, &mut state, cfg.learning_rate);
        }

        let train_loss = epoch_loss / split.train.len() as f64;
        let train_accuracy = epoch_correct as f64 / split.train.len() as f64;
        let (val_accuracy, _) = evaluate(&net, &split.validation)?;
        let val_loss = mean_loss(&net, &split.validation)?;
        if !val_loss.is_finite() {
            return Err(TrainError::Diverged { epoch, batch: 0 });
        }
        history.push(EpochStats {
            train_loss,
            train_accuracy,
            val_loss,
            val_accuracy,
        });
        log::info!(
            "epoch {epoch}: train loss {train_loss:.4} acc {train_accuracy:.4}, \
             val loss {val_loss:.4} acc {val_accuracy:.4}"
        );

        let improved = best.as_ref().is_none_or(|(_, acc, _)| val_accuracy > *acc);
        if improved {
            best = Some((epoch, val_accuracy, net.clone()));
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }

    let (best_epoch, final_net) = match best {
        Some((epoch, _, n)) => (Some(epoch), n),
        None => (None, net),
    };
    let (test_accuracy, confusion) = evaluate(&final_net, &split.test)?;
    let report = TrainReport {
        history,
        wall_time_s: started.elapsed().as_secs_f64(),
        test_accuracy,
        confusion,
        best_epoch,
    };
    Ok((final_net, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{split, window_and_label, FAULT, NORMAL};
    use crate::signal::{simulate_trace, FaultSpec, MotorProfile};
    use crate::tensornet::{build_toy_resnet_seeded, NetworkBuilder, Padding};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn small_split(seed: u64) -> DatasetSplit {
        let profile = MotorProfile::default();
        let mut images = Vec::new();
        for s in 0..3u64 {
            let fault = FaultSpec {
                onset_time: 1.0,
                ..FaultSpec::default()
            };
            let trace = simulate_trace(&profile, 8.0, Some(&fault), 100 + s).unwrap();
            images.extend(window_and_label(&trace, 256).unwrap().0);
            let trace = simulate_trace(&profile, 8.0, None, 200 + s).unwrap();
            images.extend(window_and_label(&trace, 256).unwrap().0);
        }
        split(&images, seed).unwrap()
    }

    fn report_core(r: &TrainReport) -> (Vec<EpochStats>, f64, ConfusionMatrix, Option<usize>) {
        (r.history.clone(), r.test_accuracy, r.confusion, r.best_epoch)
    }

    #[test]
    fn zero_epochs_returns_initial_net() {
        let split = small_split(1);
        let net = build_toy_resnet_seeded(2);
        let cfg = TrainConfig {
            epochs: 0,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let (trained, report) = train(net.clone(), &split, &cfg).unwrap();
        assert!(report.history.is_empty());
        assert_eq!(report.best_epoch, None);
        for id in 0..net.num_nodes() {
            assert_eq!(net.node(id).weights, trained.node(id).weights);
            assert_eq!(net.node(id).bias, trained.node(id).bias);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let split = small_split(3);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            seed: 5,
            ..TrainConfig::default()
        };
        let (net_a, rep_a) = train(build_toy_resnet_seeded(7), &split, &cfg).unwrap();
        let (net_b, rep_b) = train(build_toy_resnet_seeded(7), &split, &cfg).unwrap();
        // Bit-identical apart from wall time.
        assert_eq!(report_core(&rep_a), report_core(&rep_b));
        for id in 0..net_a.num_nodes() {
            assert_eq!(net_a.node(id).weights, net_b.node(id).weights);
        }
    }

    #[test]
    fn quick_training_separates_the_classes() {
        let split = small_split(4);
        let cfg = TrainConfig {
            epochs: 6,
            batch_size: 16,
            seed: 6,
            ..TrainConfig::default()
        };
        let (_, report) = train(build_toy_resnet_seeded(8), &split, &cfg).unwrap();
        assert!(
            report.test_accuracy >= 0.9,
            "test accuracy {}",
            report.test_accuracy
        );
        assert_eq!(report.confusion.total(), split.test.len());
    }

    #[test]
    fn divergence_is_reported_not_masked() {
        let split = small_split(5);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            learning_rate: 1e150,
            ..TrainConfig::default()
        };
        let err = train(build_toy_resnet_seeded(9), &split, &cfg).unwrap_err();
        assert!(matches!(err, TrainError::Diverged { .. }), "{err:?}");
    }

    #[test]
    fn evaluate_tie_rule_favors_label_zero() {
        // Zeroed head outputs exactly (0.5, 0.5) for every image.
        let mut net = build_toy_resnet_seeded(10);
        net.weights_mut(21).fill(0.0);
        net.bias_mut(21).fill(0.0);
        let zeros: Vec<LabeledImage> = small_split(6)
            .train
            .into_iter()
            .filter(|i| i.label == NORMAL)
            .take(20)
            .collect();
        let (acc, confusion) = evaluate(&net, &zeros).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(confusion.counts[0][0], zeros.len());
    }

    #[test]
    fn confusion_trace_over_total_equals_accuracy() {
        let split = small_split(7);
        let net = build_toy_resnet_seeded(11);
        let (acc, confusion) = evaluate(&net, &split.test).unwrap();
        assert_eq!(acc, confusion.trace() as f64 / confusion.total() as f64);
    }

    #[test]
    fn evaluate_matches_per_item_recount() {
        let split = small_split(8);
        let net = build_toy_resnet_seeded(12);
        let (acc, _) = evaluate(&net, &split.validation).unwrap();
        let mut correct = 0usize;
        for item in &split.validation {
            if net.forward(&item.image).unwrap().predicted_label() == item.label {
                correct += 1;
            }
        }
        assert_eq!(acc, correct as f64 / split.validation.len() as f64);
    }

    #[test]
    fn evaluate_is_permutation_invariant() {
        let split = small_split(9);
        let net = build_toy_resnet_seeded(13);
        let (acc, confusion) = evaluate(&net, &split.train).unwrap();
        let mut shuffled = split.train.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(99));
        let (acc2, confusion2) = evaluate(&net, &shuffled).unwrap();
        assert_eq!(acc, acc2);
        assert_eq!(confusion, confusion2);
    }

    #[test]
    fn running_best_val_loss_is_non_increasing() {
        let split = small_split(10);
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let (_, report) = train(build_toy_resnet_seeded(14), &split, &cfg).unwrap();
        let mut best = f64::INFINITY;
        let mut prev_best = f64::INFINITY;
        for s in &report.history {
            best = best.min(s.val_loss);
            assert!(best <= prev_best);
            prev_best = best;
        }
    }

    #[test]
    fn csv_export_has_one_row_per_epoch() {
        let split = small_split(11);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let (_, report) = train(build_toy_resnet_seeded(15), &split, &cfg).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,train_loss,train_acc,val_loss,val_acc");
        assert_eq!(lines.len(), report.history.len() + 1);
    }

    #[test]
    fn wrong_head_is_rejected() {
        let mut b = NetworkBuilder::new();
        let i = b.input(3, 32, 32);
        let c = b.conv(i, 4, Padding::Valid);
        let g = b.global_avg_pool(c);
        let d = b.dense(g, 3);
        b.softmax(d);
        let net = b.build(0);
        let err = train(net, &small_split(12), &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, TrainError::WrongHead(_)));
    }

    #[test]
    fn batch_size_larger_than_train_set_is_rejected() {
        let split = small_split(13);
        let cfg = TrainConfig {
            batch_size: split.train.len() + 1,
            ..TrainConfig::default()
        };
        let err = train(build_toy_resnet_seeded(16), &split, &cfg).unwrap_err();
        assert!(matches!(err, TrainError::BadConfig(_)));
    }

    // Fault labels exist in the fixture (guards against silent labeling
    // regressions that would trivialize the accuracy tests).
    #[test]
    fn fixture_has_both_classes() {
        let split = small_split(14);
        let has = |items: &[LabeledImage], label| items.iter().any(|i| i.label == label);
        assert!(has(&split.train, FAULT) && has(&split.train, NORMAL));
    }
}
