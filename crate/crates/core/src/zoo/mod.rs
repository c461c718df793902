//! The Small-ResNet family: construction, training, evaluation, slicing
//! and persistence.

mod arch;
mod resnet;

use std::path::Path;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use arch::{
    enumerate_archs, stitch_points, ArchSpec, StitchPoint, TensorShape, BASE_CHANNELS, INPUT_SIDE,
    NUM_STAGES,
};
pub use resnet::{Entry, Exit, NormMode, ResNet, Trace};

use crate::checkpoint::{self, CheckpointWriter, TensorEntry, SCHEMA_VERSION};
use crate::data::{
    augment, BatchOrder, DataSource, DatasetSplit, Normalization, CIFAR10_NORMALIZATION,
};
use crate::error::{Error, Result};
use crate::nn::ops::softmax_cross_entropy;
use crate::params::hex_digest;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::training::{lr_at, mix_seed, Hyperparams, Sgd, TrainReport, TrainingRegime};

pub const EVAL_BATCH: usize = 250;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Trained,
    /// Randomly initialized and never optimized.
    RandomControl,
}

/// Facts about the data a zoo network was trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataRecord {
    pub source: DataSource,
    pub train_examples: usize,
    pub test_examples: usize,
}

/// A network plus the metadata that travels with its checkpoint.
#[derive(Clone, Debug)]
pub struct ModelHandle<S> {
    pub net: ResNet<S>,
    pub provenance: Provenance,
    pub seed: u64,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub normalization: Normalization,
    pub training: Option<TrainReport>,
    pub data: Option<DataRecord>,
}

/// Fresh random network; a random control until trained.
pub fn build_model<S: Scalar>(arch: ArchSpec, seed: u64) -> ModelHandle<S> {
    ModelHandle {
        net: ResNet::new(arch, seed),
        provenance: Provenance::RandomControl,
        seed,
        train_accuracy: None,
        test_accuracy: None,
        normalization: CIFAR10_NORMALIZATION,
        training: None,
        data: None,
    }
}

impl<S: Scalar> ModelHandle<S> {
    pub fn arch(&self) -> ArchSpec {
        self.net.arch()
    }

    /// `"R1111_s0"`-style identifier.
    pub fn label(&self) -> String {
        format!("{}_s{}", self.arch(), self.seed)
    }

    pub fn stitch_points(&self) -> Vec<StitchPoint> {
        stitch_points(&self.arch())
    }

    /// SHA-256 over every parameter and running statistic.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        self.net.hash_into(&mut h);
        hex_digest(h)
    }
}

/// `A_{<=i}`: images to the activation at stitch point `i`.
pub fn forward_prefix<S: Scalar>(
    model: &ModelHandle<S>,
    i: usize,
    images: &Tensor<S>,
) -> Result<Tensor<S>> {
    model.net.forward_span(images, Entry::Input, Exit::Point(i))
}

/// `B_{j<}`: activation at stitch point `j` to logits.
pub fn forward_suffix<S: Scalar>(
    model: &ModelHandle<S>,
    j: usize,
    activation: &Tensor<S>,
) -> Result<Tensor<S>> {
    model
        .net
        .forward_span(activation, Entry::After(j), Exit::Logits)
}

/// Fraction of argmax-correct predictions, without augmentation.
pub fn evaluate<S: Scalar>(model: &ModelHandle<S>, split: &DatasetSplit) -> Result<f64> {
    evaluate_with(split, |images| model.net.forward(images))
}

/// Accuracy of an arbitrary images-to-logits function over a split.
pub fn evaluate_with<S: Scalar>(
    split: &DatasetSplit,
    mut logits_of: impl FnMut(&Tensor<S>) -> Result<Tensor<S>>,
) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::Argument("cannot evaluate on an empty split".into()));
    }
    let mut correct = 0usize;
    for batch in split.batches::<S>(EVAL_BATCH, BatchOrder::Sequential) {
        let logits = logits_of(batch.images())?;
        correct += logits
            .argmax_rows()
            .iter()
            .zip(batch.labels())
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct as f64 / split.len() as f64)
}

/// Trains every parameter with cross-entropy and batch-statistics
/// normalization.
pub fn train_network<S: Scalar>(
    mut model: ModelHandle<S>,
    train: &DatasetSplit,
    test: &DatasetSplit,
    hp: &Hyperparams,
) -> Result<ModelHandle<S>> {
    hp.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("empty training split".into()));
    }
    let started = Instant::now();
    let steps_per_epoch = train.num_batches(hp.batch_size);
    let total = steps_per_epoch * hp.epochs;
    let decay = model.net.params().decay_mask().to_vec();
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
            let (logits, trace) = model.net.trace_span(
                batch.images(),
                Entry::Input,
                Exit::Logits,
                NormMode::Batch,
            )?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, batch.labels());
            if !loss.is_finite() {
                return Err(Error::TrainingFailure { step, loss });
            }
            let mut grads = model.net.params().zeros_like();
            model
                .net
                .backward(&trace, &dlogits, Some(&mut grads), false);
            model.net.commit_running_stats(&trace);
            let lr = lr_at(step, total, hp)?;
            opt.step(
                model.net.params_mut().tensors_mut(),
                grads.tensors(),
                &decay,
                lr,
            );
            loss_sum += loss;
            step += 1;
        }
        if !model.net.params().all_finite() {
            return Err(Error::TrainingFailure {
                step,
                loss: f64::NAN,
            });
        }
        let acc = evaluate(&model, test)?;
        let mean_loss = loss_sum / steps_per_epoch as f64;
        info!(
            "{} epoch {}/{}: loss {mean_loss:.4}, test accuracy {acc:.4}",
            model.label(),
            epoch + 1,
            hp.epochs
        );
        epoch_loss.push(mean_loss);
        epoch_accuracy.push(acc);
    }
    model.provenance = Provenance::Trained;
    model.test_accuracy = epoch_accuracy.last().copied();
    model.train_accuracy = Some(evaluate(&model, train)?);
    model.data = Some(DataRecord {
        source: train.source(),
        train_examples: train.len(),
        test_examples: test.len(),
    });
    model.training = Some(TrainReport {
        regime: TrainingRegime::Zoo,
        epoch_loss,
        epoch_accuracy,
        steps: step,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        seed: hp.seed,
        hyperparams: hp.clone(),
        final_digest: model.digest(),
    });
    Ok(model)
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    schema_version: u32,
    kind: String,
    arch: ArchSpec,
    seed: u64,
    provenance: Provenance,
    scalar: String,
    digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    train_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_accuracy: Option<f64>,
    normalization: Normalization,
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<DataRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    training: Option<TrainReport>,
    params: Vec<TensorEntry>,
    buffers: Vec<TensorEntry>,
}

pub const MODEL_KIND: &str = "model";

/// Writes `model` as a checkpoint directory at `path`, replacing any
/// previous one. Tensors are stored as `f32`.
pub fn save_checkpoint<S: Scalar>(model: &ModelHandle<S>, path: &Path) -> Result<()> {
    let writer = CheckpointWriter::new(path)?;
    let params = writer.store("params", model.net.params())?;
    let buffers = writer.store("buffers", model.net.buffers())?;
    let manifest = ModelManifest {
        schema_version: SCHEMA_VERSION,
        kind: MODEL_KIND.into(),
        arch: model.arch(),
        seed: model.seed,
        provenance: model.provenance,
        scalar: S::NAME.into(),
        digest: model.digest(),
        train_accuracy: model.train_accuracy,
        test_accuracy: model.test_accuracy,
        normalization: model.normalization,
        data: model.data.clone(),
        training: model.training.clone(),
        params,
        buffers,
    };
    writer.commit(&manifest)
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<ModelHandle<S>> {
    let manifest: ModelManifest = checkpoint::read_manifest(path)?;
    if manifest.kind != MODEL_KIND {
        return Err(Error::Argument(format!(
            "{} holds a {:?} checkpoint, not a model",
            path.display(),
            manifest.kind
        )));
    }
    let mut model = build_model::<S>(manifest.arch, manifest.seed);
    checkpoint::fill_store(path, model.net.params_mut(), &manifest.params)?;
    checkpoint::fill_store(path, model.net.buffers_mut(), &manifest.buffers)?;
    model.provenance = manifest.provenance;
    model.train_accuracy = manifest.train_accuracy;
    model.test_accuracy = manifest.test_accuracy;
    model.normalization = manifest.normalization;
    model.training = manifest.training;
    model.data = manifest.data;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn r(name: &str) -> ArchSpec {
        name.parse().unwrap()
    }

    #[test]
    fn build_is_deterministic() {
        let a = build_model::<f32>(r("R1111"), 4);
        let b = build_model::<f32>(r("R1111"), 4);
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.provenance, Provenance::RandomControl);
        assert_eq!(a.stitch_points().len(), 5);
        assert_eq!(build_model::<f32>(r("R2222"), 4).stitch_points().len(), 9);
    }

    #[test]
    fn prefix_suffix_composition_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for arch in [r("R1111"), r("R2112")] {
            let m = build_model::<f32>(arch, 2);
            let x = Tensor::<f32>::randn(&[1, 3, 32, 32], 1.0, &mut rng);
            let full = m.net.forward(&x).unwrap();
            for p in m.stitch_points() {
                let a = forward_prefix(&m, p.index, &x).unwrap();
                assert_eq!(
                    forward_suffix(&m, p.index, &a).unwrap(),
                    full,
                    "{arch} at {}",
                    p.index
                );
            }
        }
        let m = build_model::<f32>(r("R1111"), 0);
        let x = Tensor::<f32>::zeros(&[2, 3, 32, 32]);
        assert_eq!(forward_prefix(&m, 0, &x).unwrap().shape(), &[2, 64, 32, 32]);
        let bad = Tensor::<f32>::zeros(&[2, 32, 32, 32]);
        assert!(matches!(
            forward_suffix(&m, 0, &bad),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn evaluate_contracts() {
        let m = build_model::<f32>(r("R1111"), 1);
        let split = make_synthetic(20, 1).unwrap();
        let a = evaluate(&m, &split).unwrap();
        assert_eq!(a, evaluate(&m, &split).unwrap());
        assert!(evaluate(&m, &split.take(0)).is_err());
        // A constant predictor scores the frequency of its class.
        let acc = evaluate_with::<f32>(&split, |x| {
            let n = x.shape()[0];
            let mut t = Tensor::zeros(&[n, 10]);
            for r in 0..n {
                t.data_mut()[r * 10 + 3] = 1.0;
            }
            Ok(t)
        })
        .unwrap();
        assert_eq!(acc, split.class_counts()[3] as f64 / 20.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = build_model::<f32>(r("R1211"), 9);
        m.test_accuracy = Some(0.125);
        let path = dir.path().join("ckpt");
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(back.net.params(), m.net.params());
        assert_eq!(back.net.buffers(), m.net.buffers());
        assert_eq!(back.digest(), m.digest());
        assert_eq!(
            (back.seed, back.provenance, back.test_accuracy),
            (9, Provenance::RandomControl, Some(0.125))
        );
        let split = make_synthetic(10, 2).unwrap();
        assert_eq!(
            evaluate(&back, &split).unwrap(),
            evaluate(&m, &split).unwrap()
        );
        assert!(load_checkpoint::<f32>(&dir.path().join("missing")).is_err());
    }

    #[test]
    fn checkpoint_version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        save_checkpoint(&build_model::<f32>(r("R1111"), 0), &path).unwrap();
        let manifest = path.join(checkpoint::MANIFEST_FILE);
        let text = std::fs::read_to_string(&manifest)
            .unwrap()
            .replace("schema_version = 1", "schema_version = 7");
        std::fs::write(&manifest, text).unwrap();
        let err = load_checkpoint::<f32>(&path).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Incompatible {
                    found: 7,
                    expected: 1,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn random_controls_score_near_chance() {
        let split = make_synthetic(300, 21).unwrap();
        for seed in 0..3 {
            let acc = evaluate(&build_model::<f32>(r("R1111"), seed), &split).unwrap();
            assert!((0.05..=0.15).contains(&acc), "seed {seed}: {acc}");
        }
    }
}
