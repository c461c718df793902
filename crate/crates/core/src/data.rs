//! CIFAR-10 ingestion, a deterministic synthetic stand-in, batching and
//! augmentation.
//!
//! Splits keep raw `u8` pixels in CHW order; normalization to network
//! units happens when a batch is materialized.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;
pub const IMAGE_SIDE: usize = 32;
pub const PIXELS: usize = CHANNELS * IMAGE_SIDE * IMAGE_SIDE;
pub const RECORD_BYTES: usize = PIXELS + 1;
pub const NUM_CLASSES: usize = 10;
pub const RECORDS_PER_FILE: usize = 10_000;

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

/// Per-channel affine normalization `(pixel / 255 - mean) / std`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// Published CIFAR-10 training-set channel statistics.
pub const CIFAR10_NORMALIZATION: Normalization = Normalization {
    mean: [0.4914, 0.4822, 0.4465],
    std: [0.2470, 0.2435, 0.2616],
};

impl Normalization {
    pub fn apply(&self, channel: usize, pixel: u8) -> f64 {
        (pixel as f64 / 255.0 - self.mean[channel]) / self.std[channel]
    }

    pub fn invert(&self, channel: usize, value: f64) -> u8 {
        let v = (value * self.std[channel] + self.mean[channel]) * 255.0;
        v.round().clamp(0.0, 255.0) as u8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Cifar10,
    Synthetic,
}

/// A normalized `(batch, 3, 32, 32)` image tensor with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch<S> {
    images: Tensor<S>,
    labels: Vec<usize>,
}

impl<S: Scalar> ImageBatch<S> {
    pub fn new(images: Tensor<S>, labels: Vec<usize>) -> Result<Self> {
        let shape = images.shape();
        if shape.len() != 4 || shape[1..] != [CHANNELS, IMAGE_SIDE, IMAGE_SIDE] {
            return Err(Error::shape("ImageBatch", "(batch, 3, 32, 32)", shape));
        }
        if shape[0] != labels.len() {
            return Err(Error::shape("ImageBatch labels", shape[0], labels.len()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::Argument(format!(
                "label {bad} outside [0, {NUM_CLASSES})"
            )));
        }
        Ok(Self { images, labels })
    }

    pub fn images(&self) -> &Tensor<S> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn into_parts(self) -> (Tensor<S>, Vec<usize>) {
        (self.images, self.labels)
    }
}

/// Immutable set of labelled images. Cloning shares the pixel buffer.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    role: SplitRole,
    source: DataSource,
    pixels: Arc<[u8]>,
    labels: Arc<[u8]>,
    normalization: Normalization,
}

/// Order in which a split is cut into batches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchOrder {
    Sequential,
    /// A permutation that depends only on `(seed, epoch)`.
    Shuffled {
        seed: u64,
        epoch: u64,
    },
}

impl DatasetSplit {
    fn from_parts(role: SplitRole, source: DataSource, pixels: Vec<u8>, labels: Vec<u8>) -> Self {
        debug_assert_eq!(pixels.len(), labels.len() * PIXELS);
        Self {
            role,
            source,
            pixels: pixels.into(),
            labels: labels.into(),
            normalization: CIFAR10_NORMALIZATION,
        }
    }

    pub fn role(&self) -> SplitRole {
        self.role
    }

    pub fn source(&self) -> DataSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index] as usize
    }

    pub fn raw_image(&self, index: usize) -> &[u8] {
        &self.pixels[index * PIXELS..(index + 1) * PIXELS]
    }

    pub fn with_role(mut self, role: SplitRole) -> Self {
        self.role = role;
        self
    }

    /// The first `n` examples (all of them if `n >= len`).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            role: self.role,
            source: self.source,
            pixels: self.pixels[..n * PIXELS].into(),
            labels: self.labels[..n].into(),
            normalization: self.normalization,
        }
    }

    /// The first `round(fraction * len)` examples, at least one.
    pub fn fraction(&self, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Argument(format!(
                "data fraction {fraction} outside (0, 1]"
            )));
        }
        let n = ((self.len() as f64 * fraction).round() as usize).max(1);
        Ok(self.take(n))
    }

    /// Materializes the given examples as a normalized batch.
    pub fn batch<S: Scalar>(&self, indices: &[usize]) -> ImageBatch<S> {
        let mut data = Vec::with_capacity(indices.len() * PIXELS);
        let plane = IMAGE_SIDE * IMAGE_SIDE;
        for &i in indices {
            let raw = self.raw_image(i);
            for (q, &px) in raw.iter().enumerate() {
                data.push(S::lit(self.normalization.apply(q / plane, px)));
            }
        }
        let images = Tensor::from_vec(&[indices.len(), CHANNELS, IMAGE_SIDE, IMAGE_SIDE], data)
            .expect("batch shape");
        let labels = indices.iter().map(|&i| self.label(i)).collect();
        ImageBatch { images, labels }
    }

    pub fn order(&self, order: BatchOrder) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        if let BatchOrder::Shuffled { seed, epoch } = order {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(epoch);
            idx.shuffle(&mut rng);
        }
        idx
    }

    /// Consecutive batches of at most `batch_size` examples.
    pub fn batches<S: Scalar>(
        &self,
        batch_size: usize,
        order: BatchOrder,
    ) -> impl Iterator<Item = ImageBatch<S>> + '_ {
        assert!(batch_size > 0, "batch size must be positive");
        let idx = self.order(order);
        let chunks: Vec<Vec<usize>> = idx.chunks(batch_size).map(<[usize]>::to_vec).collect();
        chunks.into_iter().map(move |c| self.batch(&c))
    }

    pub fn num_batches(&self, batch_size: usize) -> usize {
        self.len().div_ceil(batch_size)
    }

    /// Per-class example counts.
    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &l in self.labels.iter() {
            counts[l as usize] += 1;
        }
        counts
    }
}

fn locate(root: &Path, name: &str) -> PathBuf {
    let nested = root.join("cifar-10-batches-bin").join(name);
    if nested.exists() {
        nested
    } else {
        root.join(name)
    }
}

fn read_batch_file(path: &Path, pixels: &mut Vec<u8>, labels: &mut Vec<u8>) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::CorruptRecord {
            path: path.to_path_buf(),
            record: bytes.len() / RECORD_BYTES,
            reason: format!(
                "truncated record: {} trailing bytes of {RECORD_BYTES}",
                bytes.len() % RECORD_BYTES
            ),
        });
    }
    if bytes.len() != RECORDS_PER_FILE * RECORD_BYTES {
        return Err(Error::Ingestion {
            path: path.to_path_buf(),
            reason: format!(
                "expected {} bytes, found {}",
                RECORDS_PER_FILE * RECORD_BYTES,
                bytes.len()
            ),
        });
    }
    for (r, record) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = record[0];
        if label as usize >= NUM_CLASSES {
            return Err(Error::CorruptRecord {
                path: path.to_path_buf(),
                record: r,
                reason: format!("label byte {label} >= {NUM_CLASSES}"),
            });
        }
        labels.push(label);
        pixels.extend_from_slice(&record[1..]);
    }
    Ok(())
}

/// Reads the standard CIFAR-10 binary distribution from `root` (or from
/// `root/cifar-10-batches-bin`).
pub fn load_cifar10(root: &Path, role: SplitRole) -> Result<DatasetSplit> {
    let files: Vec<&str> = match role {
        SplitRole::Train => TRAIN_FILES.to_vec(),
        SplitRole::Test => vec![TEST_FILE],
    };
    let mut pixels = Vec::with_capacity(files.len() * RECORDS_PER_FILE * PIXELS);
    let mut labels = Vec::with_capacity(files.len() * RECORDS_PER_FILE);
    for name in files {
        read_batch_file(&locate(root, name), &mut pixels, &mut labels)?;
    }
    Ok(DatasetSplit::from_parts(
        role,
        DataSource::Cifar10,
        pixels,
        labels,
    ))
}

/// Seed of the class prototypes; fixed so the label function never changes.
const PROTOTYPE_SEED: u64 = 0x5717_c4ed;
const SYNTHETIC_NOISE: f64 = 24.0;

fn prototypes() -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(PROTOTYPE_SEED);
    let side = IMAGE_SIDE as f64;
    (0..NUM_CLASSES)
        .map(|_| {
            let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(48.0..208.0));
            let fx: f64 = rng.random_range(0.5..3.0);
            let fy: f64 = rng.random_range(0.5..3.0);
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let amp: [f64; 3] = std::array::from_fn(|_| rng.random_range(-40.0..40.0));
            let mut img = Vec::with_capacity(PIXELS);
            for (&base, &a) in color.iter().zip(&amp) {
                for y in 0..IMAGE_SIDE {
                    for x in 0..IMAGE_SIDE {
                        let t = std::f64::consts::TAU
                            * (fx * x as f64 / side + fy * y as f64 / side)
                            + phase;
                        img.push(base + a * t.sin());
                    }
                }
            }
            img
        })
        .collect()
}

/// Label of a raw image: index of the nearest class prototype.
pub fn synthetic_label(raw: &[u8], protos: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, p) in protos.iter().enumerate() {
        let d: f64 = raw
            .iter()
            .zip(p)
            .map(|(&v, &q)| (v as f64 - q).powi(2))
            .sum();
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Deterministic pseudo-random 32x32 RGB images whose labels are a fixed
/// function of their content.
pub fn make_synthetic(n: usize, seed: u64) -> Result<DatasetSplit> {
    if n == 0 {
        return Err(Error::Argument(
            "synthetic split needs at least one example".into(),
        ));
    }
    let protos = prototypes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, SYNTHETIC_NOISE).expect("valid normal");
    let mut pixels = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.random_range(0..NUM_CLASSES);
        let start = pixels.len();
        for &v in &protos[class] {
            let px = (v + noise.sample(&mut rng)).round().clamp(0.0, 255.0);
            pixels.push(px as u8);
        }
        labels.push(synthetic_label(&pixels[start..], &protos) as u8);
    }
    Ok(DatasetSplit::from_parts(
        SplitRole::Train,
        DataSource::Synthetic,
        pixels,
        labels,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentPolicy {
    None,
    /// Zero-pad by 4, random 32x32 crop, random horizontal flip.
    CropFlip,
}

pub const CROP_PAD: usize = 4;

pub fn augment<S: Scalar>(batch: ImageBatch<S>, policy: AugmentPolicy, seed: u64) -> ImageBatch<S> {
    match policy {
        AugmentPolicy::None => batch,
        AugmentPolicy::CropFlip => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (images, labels) = batch.into_parts();
            let mut out = Tensor::zeros(images.shape());
            let side = IMAGE_SIDE as isize;
            for b in 0..labels.len() {
                let dy = rng.random_range(0..=2 * CROP_PAD) as isize - CROP_PAD as isize;
                let dx = rng.random_range(0..=2 * CROP_PAD) as isize - CROP_PAD as isize;
                let flip = rng.random_bool(0.5);
                let src = images.item(b);
                let dst = out.item_mut(b);
                for c in 0..CHANNELS {
                    let plane = c * IMAGE_SIDE * IMAGE_SIDE;
                    for y in 0..side {
                        let sy = y + dy;
                        if sy < 0 || sy >= side {
                            continue;
                        }
                        for x in 0..side {
                            let tx = if flip { side - 1 - x } else { x };
                            let sx = tx + dx;
                            if sx < 0 || sx >= side {
                                continue;
                            }
                            dst[plane + (y * side + x) as usize] =
                                src[plane + (sy * side + sx) as usize];
                        }
                    }
                }
            }
            ImageBatch {
                images: out,
                labels,
            }
        }
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Writes a CIFAR-style batch file with `records` records.
    pub fn write_batch_file(path: &Path, records: usize, label_of: impl Fn(usize) -> u8) {
        let mut bytes = Vec::with_capacity(records * RECORD_BYTES);
        for r in 0..records {
            bytes.push(label_of(r));
            bytes.extend((0..PIXELS).map(|q| ((r * 31 + q * 7) % 256) as u8));
        }
        fs::write(path, bytes).unwrap();
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::write_batch_file;
    use super::*;

    #[test]
    fn loads_test_split() {
        let dir = tempfile::tempdir().unwrap();
        write_batch_file(&dir.path().join(TEST_FILE), RECORDS_PER_FILE, |r| {
            (r % 10) as u8
        });
        let split = load_cifar10(dir.path(), SplitRole::Test).unwrap();
        assert_eq!(split.len(), 10_000);
        assert_eq!(split.label(13), 3);
        assert_eq!(split.raw_image(1)[0], 31);
        let again = load_cifar10(dir.path(), SplitRole::Test).unwrap();
        let a: ImageBatch<f32> = split.batch(&[0, 5, 9999]);
        let b: ImageBatch<f32> = again.batch(&[0, 5, 9999]);
        assert_eq!(a, b);
    }

    #[test]
    fn loads_train_split_from_nested_dir() {
        let dir = tempfile::tempdir().unwrap();
        let nested = dir.path().join("cifar-10-batches-bin");
        fs::create_dir(&nested).unwrap();
        for name in TRAIN_FILES {
            write_batch_file(&nested.join(name), RECORDS_PER_FILE, |r| (r % 10) as u8);
        }
        let split = load_cifar10(dir.path(), SplitRole::Train).unwrap();
        assert_eq!(split.len(), 50_000);
        assert_eq!(split.role(), SplitRole::Train);
    }

    #[test]
    fn missing_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_cifar10(dir.path(), SplitRole::Test).unwrap_err();
        assert!(matches!(err, Error::Ingestion { .. }));
        assert!(err.to_string().contains(TEST_FILE));
    }

    #[test]
    fn truncated_record_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(TEST_FILE);
        write_batch_file(&path, 2, |_| 1);
        let mut bytes = fs::read(&path).unwrap();
        bytes.extend(std::iter::repeat_n(0u8, PIXELS));
        fs::write(&path, bytes).unwrap();
        let err = load_cifar10(dir.path(), SplitRole::Test).unwrap_err();
        assert!(
            matches!(err, Error::CorruptRecord { record: 2, .. }),
            "{err}"
        );
    }

    #[test]
    fn bad_label_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        write_batch_file(&dir.path().join(TEST_FILE), RECORDS_PER_FILE, |r| {
            if r == 77 {
                10
            } else {
                0
            }
        });
        let err = load_cifar10(dir.path(), SplitRole::Test).unwrap_err();
        assert!(
            matches!(err, Error::CorruptRecord { record: 77, .. }),
            "{err}"
        );
    }

    #[test]
    fn synthetic_is_deterministic_and_seed_sensitive() {
        let a = make_synthetic(64, 7).unwrap();
        let b = make_synthetic(64, 7).unwrap();
        let c = make_synthetic(64, 8).unwrap();
        let idx: Vec<usize> = (0..64).collect();
        assert_eq!(a.batch::<f32>(&idx), b.batch::<f32>(&idx));
        assert_ne!(a.batch::<f32>(&idx), c.batch::<f32>(&idx));
        assert!(make_synthetic(0, 1).is_err());
        let one = make_synthetic(1, 0).unwrap();
        assert_eq!(one.batch::<f32>(&[0]).images().shape(), &[1, 3, 32, 32]);
    }

    #[test]
    fn synthetic_labels_follow_content_and_are_balanced() {
        let split = make_synthetic(1000, 11).unwrap();
        let protos = prototypes();
        for i in 0..split.len() {
            assert_eq!(split.label(i), synthetic_label(split.raw_image(i), &protos));
        }
        for count in split.class_counts() {
            assert!((80..=120).contains(&count), "{:?}", split.class_counts());
        }
    }

    #[test]
    fn augmentation_contracts() {
        let split = make_synthetic(8, 3).unwrap();
        let batch: ImageBatch<f32> = split.batch(&(0..8).collect::<Vec<_>>());
        assert_eq!(augment(batch.clone(), AugmentPolicy::None, 5), batch);
        let a = augment(batch.clone(), AugmentPolicy::CropFlip, 5);
        let b = augment(batch.clone(), AugmentPolicy::CropFlip, 5);
        assert_eq!(a.images().shape(), &[8, 3, 32, 32]);
        assert_eq!(a, b);
        assert_eq!(a.labels(), batch.labels());
        assert_ne!(a.images(), batch.images());
    }

    #[test]
    fn shuffled_order_depends_on_seed_and_epoch() {
        let split = make_synthetic(50, 1).unwrap();
        let o1 = split.order(BatchOrder::Shuffled { seed: 3, epoch: 0 });
        let o2 = split.order(BatchOrder::Shuffled { seed: 3, epoch: 0 });
        let o3 = split.order(BatchOrder::Shuffled { seed: 3, epoch: 1 });
        assert_eq!(o1, o2);
        assert_ne!(o1, o3);
        let mut sorted = o3.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        let sizes: Vec<usize> = split
            .batches::<f32>(16, BatchOrder::Sequential)
            .map(|b| b.len())
            .collect();
        assert_eq!(sizes, vec![16, 16, 16, 2]);
    }

    #[test]
    fn batch_validation() {
        let images = Tensor::<f32>::zeros(&[1, 3, 16, 16]);
        assert!(ImageBatch::new(images, vec![0]).is_err());
        let images = Tensor::<f32>::zeros(&[1, 3, 32, 32]);
        assert!(ImageBatch::new(images.clone(), vec![10]).is_err());
        assert!(ImageBatch::new(images, vec![9]).is_ok());
    }
}
