//! Image generation: stitch a sender's intermediate activation into its own
//! raw input and look at what the stitch produces.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{Rgb, RgbImage};

use crate::data::{DatasetSplit, Normalization, CHANNELS, IMAGE_SIDE};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stitching::{
    assemble_into_input, build_stitch, plan_stitch, StitchedNetwork, INPUT_SHAPE,
};
use crate::training::{mix_seed, train_stitch_task, Hyperparams, TrainReport};
use crate::zoo::ModelHandle;

/// Raw `CHW` bytes of a generated image and the image it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImagePair {
    pub generated: Vec<u8>,
    pub original: Vec<u8>,
    pub label: usize,
}

impl ImagePair {
    /// `64 x 32` picture, generated image on the left.
    pub fn to_image(&self) -> RgbImage {
        let side = IMAGE_SIDE as u32;
        let plane = IMAGE_SIDE * IMAGE_SIDE;
        RgbImage::from_fn(2 * side, side, |x, y| {
            let (src, x) = if x < side {
                (&self.generated, x)
            } else {
                (&self.original, x - side)
            };
            let p = y as usize * IMAGE_SIDE + x as usize;
            Rgb([src[p], src[plane + p], src[2 * plane + p]])
        })
    }
}

/// Trains a task-loss stitch from stitch point `i` of `sender` into the
/// sender's own input, then renders the first `count` examples of `show`.
pub fn generate_images<S: Scalar>(
    sender: Arc<ModelHandle<S>>,
    i: usize,
    train: &DatasetSplit,
    show: &DatasetSplit,
    hp: &Hyperparams,
    count: usize,
) -> Result<(Vec<ImagePair>, StitchedNetwork<S>, TrainReport)> {
    let shape = sender.arch().point_shape(i)?;
    let spec = plan_stitch(shape, INPUT_SHAPE)?;
    let stitch = build_stitch(spec, mix_seed(&[hp.seed, i as u64, 0x1a6e]));
    let net = assemble_into_input(sender.clone(), i, sender, stitch)?;
    let (net, report) = train_stitch_task(net, train, show, hp)?;
    let pairs = render_pairs(&net, show, count)?;
    Ok((pairs, net, report))
}

/// Generated/original pairs for the first `count` examples of `data`.
pub fn render_pairs<S: Scalar>(
    net: &StitchedNetwork<S>,
    data: &DatasetSplit,
    count: usize,
) -> Result<Vec<ImagePair>> {
    if net.receiver_index().is_some() {
        return Err(Error::Argument(
            "image rendering needs a stitch into the input space".into(),
        ));
    }
    let count = count.min(data.len());
    let indices: Vec<usize> = (0..count).collect();
    let batch = data.batch::<S>(&indices);
    let generated = net.provided(batch.images())?;
    let norm: Normalization = data.normalization();
    let plane = IMAGE_SIDE * IMAGE_SIDE;
    Ok(indices
        .iter()
        .map(|&n| {
            let values = generated.item(n);
            let bytes = (0..CHANNELS * plane)
                .map(|k| norm.invert(k / plane, values[k].to_f64_lossy()))
                .collect();
            ImagePair {
                generated: bytes,
                original: data.raw_image(n).to_vec(),
                label: data.label(n),
            }
        })
        .collect())
}

/// Writes `images/<sender>_<i>_<n>.png` files under `dir`.
pub fn write_pairs(
    dir: &Path,
    sender: &str,
    i: usize,
    pairs: &[ImagePair],
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(Error::io(format!("creating {}", dir.display())))?;
    pairs
        .iter()
        .enumerate()
        .map(|(n, p)| {
            let path = dir.join(format!("{sender}_{i}_{n}.png"));
            let mut bytes = Vec::new();
            p.to_image().write_to(
                &mut std::io::Cursor::new(&mut bytes),
                image::ImageFormat::Png,
            )?;
            crate::checkpoint::write_atomic(&path, &bytes)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, AugmentPolicy};
    use crate::stitching::StitchKind;
    use crate::zoo::build_model;

    #[test]
    fn generated_images_have_input_shape() {
        let m = Arc::new(build_model::<f32>("R1111".parse().unwrap(), 0));
        let data = make_synthetic(8, 1).unwrap();
        let hp = Hyperparams::vanilla_stitch()
            .with_epochs(1)
            .with_batch_size(8)
            .with_augment(AugmentPolicy::None);
        for i in [0, 4] {
            let (pairs, net, report) = generate_images(m.clone(), i, &data, &data, &hp, 3).unwrap();
            assert_eq!(pairs.len(), 3);
            assert_eq!(pairs[0].generated.len(), 3 * 32 * 32);
            assert_eq!(pairs[1].original, data.raw_image(1));
            assert_eq!(report.steps, 1);
            let spec = net.stitch().spec();
            assert_eq!(spec.out_shape, INPUT_SHAPE);
            if i == 4 {
                assert_eq!((spec.kind, spec.factor), (StitchKind::UpsampleProject, 8));
            }
            let img = pairs[0].to_image();
            assert_eq!(img.dimensions(), (64, 32));
        }
    }

    #[test]
    fn pair_layout_left_generated() {
        let pair = ImagePair {
            generated: vec![10; 3072],
            original: vec![200; 3072],
            label: 0,
        };
        let img = pair.to_image();
        assert_eq!(img.get_pixel(0, 0).0, [10, 10, 10]);
        assert_eq!(img.get_pixel(40, 5).0, [200, 200, 200]);
        let dir = tempfile::tempdir().unwrap();
        let paths = write_pairs(dir.path(), "R1111_s0", 2, &[pair.clone(), pair]).unwrap();
        assert!(paths[1].ends_with("R1111_s0_2_1.png"));
        assert!(std::fs::metadata(&paths[0]).unwrap().len() > 0);
    }
}
