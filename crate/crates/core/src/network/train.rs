use std::fmt::Write as _;

use crate::data::LabeledDataset;
use crate::error::{NusaError, Result};
use crate::nusa::{NusaConfig, ObjectiveEvaluator};
use crate::rng::Rng;

use super::{adam_step, AdamState, Gradients, Network};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Stop after this many epochs without improving the epoch objective;
    /// 0 disables early stopping.
    pub early_stop_patience: usize,
    pub rng_seed: u64,
    pub nusa: NusaConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 25,
            learning_rate: 0.01,
            epochs: 200,
            early_stop_patience: 10,
            rng_seed: 0,
            nusa: NusaConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(NusaError::invalid("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NusaError::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        self.nusa.validate()
    }
}

/// Sample-weighted means over one epoch, measured before each batch update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Full training objective.
    pub loss: f64,
    pub class_loss: f64,
    pub accuracy: f64,
    pub mean_nusa: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }

    /// `epoch,loss,accuracy,mean_nusa` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,accuracy,mean_nusa\n");
        for e in &self.epochs {
            writeln!(out, "{},{},{},{}", e.epoch, e.loss, e.accuracy, e.mean_nusa).unwrap();
        }
        out
    }
}

fn check_data(net: &Network, data: &LabeledDataset) -> Result<()> {
    if data.is_empty() {
        return Err(NusaError::EmptyDataset);
    }
    if data.dim() != net.input_dim() {
        return Err(NusaError::DimensionMismatch {
            expected: net.input_dim(),
            actual: data.dim(),
        });
    }
    if let Some(&bad) = data.labels().iter().find(|&&l| l >= net.num_classes()) {
        return Err(NusaError::LabelOutOfRange {
            label: bad,
            num_classes: net.num_classes(),
        });
    }
    Ok(())
}

/// Mini-batch Adam on cross-entropy plus the signed, λ-weighted NuSA term.
/// Batches come from a seeded shuffle each epoch; the last partial batch is
/// kept.
pub fn train(
    mut net: Network,
    data: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(Network, TrainHistory)> {
    cfg.validate()?;
    check_data(&net, data)?;
    let mut rng = Rng::new(cfg.rng_seed);
    let mut adam = AdamState::new(&net, cfg.learning_rate);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut best = f64::INFINITY;
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let (mut loss, mut class_loss, mut nusa, mut correct) = (0.0, 0.0, 0.0, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = Gradients::zeros_like(&net);
            {
                let eval = ObjectiveEvaluator::new(&net, &cfg.nusa)?;
                for &i in batch {
                    let label = data.labels()[i];
                    let (trace, obj) = eval.evaluate(&data.features()[i], label)?;
                    if !obj.objective.is_finite() {
                        return Err(NusaError::Numeric(format!(
                            "non-finite objective at epoch {epoch}, batch {b}, sample {i}"
                        )));
                    }
                    loss += obj.objective;
                    class_loss += obj.class_loss;
                    nusa += obj.nusa_term;
                    if super::argmax(trace.output.as_slice()) == label {
                        correct += 1;
                    }
                    grads.add_scaled(&obj.gradients, 1.0);
                }
            }
            grads.scale(1.0 / batch.len() as f64);
            adam_step(&mut net, &grads, &mut adam)?;
        }
        let n = data.len() as f64;
        let stats = EpochStats {
            epoch,
            loss: loss / n,
            class_loss: class_loss / n,
            accuracy: correct as f64 / n,
            mean_nusa: nusa / n,
        };
        log::debug!(
            "epoch {epoch}: loss {:.6} acc {:.4} nusa {:.4}",
            stats.loss,
            stats.accuracy,
            stats.mean_nusa
        );
        history.epochs.push(stats);

        if stats.loss < best - 1e-6 {
            best = stats.loss;
            stale = 0;
        } else {
            stale += 1;
            if cfg.early_stop_patience > 0 && stale >= cfg.early_stop_patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    Ok((net, history))
}

/// Fraction of samples whose arg-max prediction equals the label.
pub fn accuracy(net: &Network, data: &LabeledDataset) -> Result<f64> {
    check_data(net, data)?;
    let mut correct = 0;
    for (x, &y) in data.features().iter().zip(data.labels()) {
        if net.predict(x)?.0 == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
