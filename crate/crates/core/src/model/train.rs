use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{probabilities, stream_inputs, ChannelStats, Checkpoint, GrNet, InputNorm, ModelConfig, StreamInputs};
use crate::afm::{stream_weights, StreamWeights};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{argmax, Metrics};
use crate::synth::derive_seed;
use crate::tensor::{Adam, Tape};

/// Training statistics of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean total loss (fused + both auxiliary losses).
    pub loss: f64,
    pub fused_loss: f64,
    /// Mean auxiliary losses of the spatial and residual streams.
    pub stream_losses: [f64; 2],
    pub train_accuracy: f64,
    pub learning_rate: f64,
    /// Weights used for fusion during this epoch.
    pub weights: StreamWeights,
}

/// Metrics of the detector and of each auxiliary head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub fused: Metrics,
    pub rgb: Metrics,
    pub gr: Metrics,
}

/// Standardization statistics of both streams over `inputs`.
pub fn input_norm(inputs: &[StreamInputs]) -> Result<InputNorm> {
    Ok(InputNorm {
        rgb: ChannelStats::fit(inputs.iter().map(|s| &s.rgb))?,
        gr: ChannelStats::fit(inputs.iter().map(|s| &s.gr))?,
    })
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(Error::InvalidLabel { label, classes }),
        None => Ok(()),
    }
}

/// Trains a fresh model on prepared stream inputs.
///
/// Every sample contributes the sum of the fused and both auxiliary
/// cross-entropies; gradients are averaged over each mini-batch. Stream
/// weights start at `(0.5, 0.5)` and are recomputed after every epoch from
/// that epoch's mean auxiliary losses. The learning rate decays by the
/// optimizer's `gamma` after every epoch.
pub fn train_inputs(config: ModelConfig, inputs: &[StreamInputs], labels: &[usize]) -> Result<Checkpoint> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if inputs.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} samples for {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    check_labels(labels, config.n_classes)?;
    let mut model = GrNet::new(config)?;
    model.norm = input_norm(inputs)?;
    let mut opt = Adam::new(model.config.optimizer);
    let mut history = Vec::with_capacity(model.config.epochs);
    let batch_size = model.config.batch_size;

    for epoch in 0..model.config.epochs {
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(model.config.seed, epoch as u64)));
        let weights = model.weights;
        let (mut sum_total, mut sum_fused, mut sum_rgb, mut sum_gr) = (0.0, 0.0, 0.0, 0.0);
        let mut hits = 0usize;

        for (batch, chunk) in order.chunks(batch_size).enumerate() {
            for p in model.parameters_mut() {
                p.zero_grad();
            }
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let mut tape = Tape::new();
                let params = model.register(&mut tape);
                let (rgb, gr) = model.normalize(&inputs[i]);
                let (rgb, gr) = (tape.constant(&rgb), tape.constant(&gr));
                let label = [labels[i]];
                let step = |tape: &mut Tape| -> Result<_> {
                    let out = model.forward_on(tape, &params, rgb, gr, &weights)?;
                    let l_fused = tape.cross_entropy(out.fused, &label)?;
                    let l_rgb = tape.cross_entropy(out.rgb, &label)?;
                    let l_gr = tape.cross_entropy(out.gr, &label)?;
                    let partial = tape.add(l_fused, l_rgb)?;
                    Ok((out, l_fused, l_rgb, l_gr, tape.add(partial, l_gr)?))
                };
                let (out, l_fused, l_rgb, l_gr, total) = match step(&mut tape) {
                    Err(Error::NonFinite(_)) => {
                        return Err(Error::Diverged {
                            epoch,
                            batch,
                            loss: f64::NAN,
                        })
                    }
                    r => r?,
                };
                let loss = tape.value(total).item();
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, batch, loss });
                }
                sum_total += loss;
                sum_fused += tape.value(l_fused).item();
                sum_rgb += tape.value(l_rgb).item();
                sum_gr += tape.value(l_gr).item();
                if argmax(tape.value(out.fused).data()) == labels[i] {
                    hits += 1;
                }
                tape.backward(total)?;
                for (p, v) in model.parameters_mut().into_iter().zip(&params) {
                    if let Some(g) = tape.grad(*v) {
                        p.accumulate_grad(g, scale);
                    }
                }
            }
            opt.step(model.parameters_mut());
        }

        let n = inputs.len() as f64;
        let stream_losses = [sum_rgb / n, sum_gr / n];
        history.push(EpochRecord {
            epoch,
            loss: sum_total / n,
            fused_loss: sum_fused / n,
            stream_losses,
            train_accuracy: hits as f64 / n,
            learning_rate: opt.learning_rate(),
            weights,
        });
        let mut next = stream_weights(stream_losses[0], stream_losses[1])?;
        next.epoch = epoch + 1;
        model.weights = next;
        opt.decay();
    }
    for p in model.parameters_mut() {
        p.set_requires_grad(false);
    }
    Ok(Checkpoint { model, history })
}

/// Trains on labelled images, deriving stream inputs per the config.
pub fn train(config: ModelConfig, data: &[(Image, usize)]) -> Result<Checkpoint> {
    let inputs = data
        .iter()
        .map(|(img, _)| stream_inputs(img, &config))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = data.iter().map(|(_, l)| *l).collect();
    train_inputs(config, &inputs, &labels)
}

pub fn evaluate_inputs(model: &GrNet, inputs: &[StreamInputs], labels: &[usize]) -> Result<Evaluation> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if inputs.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} samples for {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    let classes = model.config.n_classes;
    check_labels(labels, classes)?;
    let mut probs = [Vec::new(), Vec::new(), Vec::new()];
    for s in inputs {
        let out = model.forward_inputs(s)?;
        probs[0].push(probabilities(&out.fused));
        probs[1].push(probabilities(&out.rgb));
        probs[2].push(probabilities(&out.gr));
    }
    Ok(Evaluation {
        fused: Metrics::from_probabilities(&probs[0], labels, classes)?,
        rgb: Metrics::from_probabilities(&probs[1], labels, classes)?,
        gr: Metrics::from_probabilities(&probs[2], labels, classes)?,
    })
}

pub fn evaluate(model: &GrNet, data: &[(Image, usize)]) -> Result<Evaluation> {
    let inputs = data
        .iter()
        .map(|(img, _)| stream_inputs(img, &model.config))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = data.iter().map(|(_, l)| *l).collect();
    evaluate_inputs(model, &inputs, &labels)
}
