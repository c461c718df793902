//! Stitch training. Sender and receiver stay frozen (running statistics
//! included); only the stitch's conv weight and bias move.

use std::time::Instant;

use log::info;

use super::{lr_at, mix_seed, Hyperparams, Sgd, TrainReport, TrainingRegime};
use crate::data::{augment, BatchOrder, DatasetSplit, ImageBatch};
use crate::error::{Error, Result};
use crate::nn::ops::{mse_loss, softmax_cross_entropy};
use crate::scalar::Scalar;
use crate::stitching::StitchedNetwork;
use crate::tensor::Tensor;
use crate::zoo::{evaluate_with, Exit, NormMode};

/// Loss and gradient w.r.t. the provided representation for one batch.
type LossFn<'a, S> =
    dyn FnMut(&StitchedNetwork<S>, &Tensor<S>, &ImageBatch<S>) -> Result<(f64, Tensor<S>)> + 'a;

fn task_loss<S: Scalar>(
    net: &StitchedNetwork<S>,
    provided: &Tensor<S>,
    batch: &ImageBatch<S>,
) -> Result<(f64, Tensor<S>)> {
    let receiver = &net.receiver().net;
    let (logits, trace) = receiver.trace_span(
        provided,
        net.receiver_entry(),
        Exit::Logits,
        NormMode::Frozen,
    )?;
    let (loss, dlogits) = softmax_cross_entropy(&logits, batch.labels());
    let dprovided = receiver
        .backward(&trace, &dlogits, None, true)
        .expect("input gradient requested");
    Ok((loss, dprovided))
}

fn similarity_loss<S: Scalar>(
    net: &StitchedNetwork<S>,
    provided: &Tensor<S>,
    batch: &ImageBatch<S>,
) -> Result<(f64, Tensor<S>)> {
    let expected = net.expected(batch.images())?;
    Ok(mse_loss(provided, &expected))
}

/// Mean squared error between provided and expected representations on
/// one batch of images.
pub fn similarity_loss_on_batch<S: Scalar>(
    net: &StitchedNetwork<S>,
    images: &Tensor<S>,
) -> Result<f64> {
    Ok(mse_loss(&net.provided(images)?, &net.expected(images)?).0)
}

fn fit<S: Scalar>(
    mut net: StitchedNetwork<S>,
    train: &DatasetSplit,
    test: &DatasetSplit,
    hp: &Hyperparams,
    regime: TrainingRegime,
    loss_fn: &mut LossFn<'_, S>,
) -> Result<(StitchedNetwork<S>, TrainReport)> {
    hp.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("empty training split".into()));
    }
    let started = Instant::now();
    let before = net.frozen_digest();
    let steps_per_epoch = train.num_batches(hp.batch_size);
    let total = steps_per_epoch * hp.epochs;
    let decay = net.stitch.params().decay_mask().to_vec();
    let mut opt = Sgd::<S>::new(hp);
    let mut step = 0;
    let mut epoch_loss = Vec::with_capacity(hp.epochs);
    let mut epoch_accuracy = Vec::with_capacity(hp.epochs);
    for epoch in 0..hp.epochs {
        let order = BatchOrder::Shuffled {
            seed: hp.seed,
            epoch: epoch as u64,
        };
        let mut loss_sum = 0.0;
        for (b, batch) in train.batches::<S>(hp.batch_size, order).enumerate() {
            let batch = augment(
                batch,
                hp.augment,
                mix_seed(&[hp.seed, epoch as u64, b as u64]),
            );
            let activation = net.sender_activation(batch.images())?;
            let provided = net.stitch.forward(&activation)?;
            let (loss, dprovided) = loss_fn(&net, &provided, &batch)?;
            if !loss.is_finite() {
                return Err(Error::TrainingFailure { step, loss });
            }
            let g = net.stitch.backward(&activation, &dprovided, false)?;
            let lr = lr_at(step, total, hp)?;
            opt.step(
                net.stitch.params_mut().tensors_mut(),
                &[g.weight, g.bias],
                &decay,
                lr,
            );
            loss_sum += loss;
            step += 1;
        }
        if !net.stitch.params().all_finite() {
            return Err(Error::TrainingFailure {
                step,
                loss: f64::NAN,
            });
        }
        let acc = evaluate_with(test, |x| net.forward(x))?;
        let mean_loss = loss_sum / steps_per_epoch as f64;
        info!(
            "stitch {}:{} -> {}:{:?} ({regime:?}) epoch {}/{}: loss {mean_loss:.5}, accuracy {acc:.4}",
            net.sender().label(),
            net.sender_index(),
            net.receiver().label(),
            net.receiver_index(),
            epoch + 1,
            hp.epochs
        );
        epoch_loss.push(mean_loss);
        epoch_accuracy.push(acc);
    }
    let after = net.frozen_digest();
    if after != before {
        return Err(Error::InvariantViolation(format!(
            "frozen digest changed during training: {before} -> {after}"
        )));
    }
    let report = TrainReport {
        regime,
        epoch_loss,
        epoch_accuracy,
        steps: step,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        seed: hp.seed,
        hyperparams: hp.clone(),
        final_digest: net.stitch().digest(),
    };
    Ok((net, report))
}

/// Vanilla stitch: cross-entropy backpropagated through the frozen
/// receiver suffix. The last entry of `epoch_accuracy` is the similarity
/// value for this layer pair.
pub fn train_stitch_task<S: Scalar>(
    net: StitchedNetwork<S>,
    train: &DatasetSplit,
    test: &DatasetSplit,
    hp: &Hyperparams,
) -> Result<(StitchedNetwork<S>, TrainReport)> {
    fit(net, train, test, hp, TrainingRegime::Task, &mut task_loss)
}

/// Similarity-trained stitch: MSE between the stitch output and the
/// receiver's own activation at `j` on the same (augmented) images.
/// `test` is only used to log task accuracy per epoch.
pub fn train_stitch_similarity<S: Scalar>(
    net: StitchedNetwork<S>,
    train: &DatasetSplit,
    test: &DatasetSplit,
    hp: &Hyperparams,
) -> Result<(StitchedNetwork<S>, TrainReport)> {
    fit(
        net,
        train,
        test,
        hp,
        TrainingRegime::Similarity,
        &mut similarity_loss,
    )
}
