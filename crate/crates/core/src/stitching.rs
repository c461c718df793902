//! Stitch layers between arbitrary stitch points, and stitched networks
//! `B_{j<}(S(A_{<=i}(x)))` built from two frozen models.
//!
//! A stitch is a single convolution with bias. Equal spatial sizes use a
//! 1x1 projection; a larger sender uses a `k x k` stride-`k` convolution;
//! a smaller sender is nearest-upsampled by `k` and then projected 1x1.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::CHANNELS;
use crate::error::{Error, Result};
use crate::nn::{
    conv2d_backward, conv2d_forward, nearest_upsample, nearest_upsample_backward, ConvGeom,
};
use crate::params::{hex_digest, TensorId, TensorStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::zoo::{Entry, Exit, ModelHandle, TensorShape, INPUT_SIDE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StitchKind {
    Project1x1,
    DownsampleConv,
    UpsampleProject,
}

impl fmt::Display for StitchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StitchKind::Project1x1 => "project_1x1",
            StitchKind::DownsampleConv => "downsample_conv",
            StitchKind::UpsampleProject => "upsample_project",
        })
    }
}

/// Planned transform from a sender activation shape to a receiver one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StitchSpec {
    pub kind: StitchKind,
    /// Spatial ratio between the larger and smaller side; 1 for projections.
    pub factor: usize,
    pub in_shape: TensorShape,
    pub out_shape: TensorShape,
}

impl StitchSpec {
    pub fn in_channels(&self) -> usize {
        self.in_shape.channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_shape.channels
    }

    pub fn conv_geom(&self) -> ConvGeom {
        match self.kind {
            StitchKind::DownsampleConv => ConvGeom::new(
                self.in_channels(),
                self.out_channels(),
                self.factor,
                self.factor,
                0,
            ),
            StitchKind::Project1x1 | StitchKind::UpsampleProject => {
                ConvGeom::new(self.in_channels(), self.out_channels(), 1, 1, 0)
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        let g = self.conv_geom();
        g.out_channels * g.in_channels * g.kernel * g.kernel + g.out_channels
    }

    /// Checks the kind/factor/shape relations a spec must satisfy.
    pub fn validate(&self) -> Result<()> {
        let planned = plan_stitch(self.in_shape, self.out_shape)?;
        if planned != *self {
            return Err(Error::UnsupportedGeometry(format!(
                "inconsistent spec {self:?}, expected {planned:?}"
            )));
        }
        Ok(())
    }
}

fn side_ratio(big: usize, small: usize) -> Option<usize> {
    (small > 0 && big % small == 0).then(|| big / small)
}

/// The unique stitch between two activation shapes.
pub fn plan_stitch(sender: TensorShape, receiver: TensorShape) -> Result<StitchSpec> {
    for s in [sender, receiver] {
        if !s.height.is_power_of_two() || !s.width.is_power_of_two() || s.channels == 0 {
            return Err(Error::UnsupportedGeometry(format!(
                "spatial dims of {s} are not powers of two"
            )));
        }
    }
    let spec = |kind, factor| StitchSpec {
        kind,
        factor,
        in_shape: sender,
        out_shape: receiver,
    };
    if sender.height == receiver.height && sender.width == receiver.width {
        return Ok(spec(StitchKind::Project1x1, 1));
    }
    let down = (
        side_ratio(sender.height, receiver.height),
        side_ratio(sender.width, receiver.width),
    );
    if let (Some(kh), Some(kw)) = down {
        if kh == kw {
            return Ok(spec(StitchKind::DownsampleConv, kh));
        }
    }
    let up = (
        side_ratio(receiver.height, sender.height),
        side_ratio(receiver.width, sender.width),
    );
    if let (Some(kh), Some(kw)) = up {
        if kh == kw {
            return Ok(spec(StitchKind::UpsampleProject, kh));
        }
    }
    Err(Error::UnsupportedGeometry(format!(
        "no uniform spatial ratio between {sender} and {receiver}"
    )))
}

/// A trainable stitch: conv weight and bias, nothing else.
#[derive(Clone, Debug, PartialEq)]
pub struct Stitch<S> {
    spec: StitchSpec,
    params: TensorStore<S>,
    weight: TensorId,
    bias: TensorId,
}

/// Gradients of a stitch w.r.t. its parameters (and optionally its input).
pub struct StitchGrads<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    pub input: Option<Tensor<S>>,
}

/// Identity 1x1 projection when channel counts match, Kaiming fan-out
/// normal otherwise. Bias starts at zero.
pub fn build_stitch<S: Scalar>(spec: StitchSpec, seed: u64) -> Stitch<S> {
    let geom = spec.conv_geom();
    let shape = geom.weight_shape();
    let weight = if geom.kernel == 1 && geom.in_channels == geom.out_channels {
        let mut w = Tensor::zeros(&shape);
        for c in 0..geom.out_channels {
            w.data_mut()[c * geom.in_channels + c] = S::one();
        }
        w
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_out = geom.out_channels * geom.kernel * geom.kernel;
        Tensor::randn(&shape, (2.0 / fan_out as f64).sqrt(), &mut rng)
    };
    let mut params = TensorStore::new();
    let weight = params.push("weight", weight, true);
    let bias = params.push("bias", Tensor::zeros(&[geom.out_channels]), false);
    Stitch {
        spec,
        params,
        weight,
        bias,
    }
}

impl<S: Scalar> Stitch<S> {
    pub fn spec(&self) -> &StitchSpec {
        &self.spec
    }

    pub fn params(&self) -> &TensorStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut TensorStore<S> {
        &mut self.params
    }

    pub fn weight(&self) -> &Tensor<S> {
        self.params.get(self.weight)
    }

    pub fn bias(&self) -> &Tensor<S> {
        self.params.get(self.bias)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        self.params.hash_into(&mut h);
        hex_digest(h)
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<()> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1..] != self.spec.in_shape.dims() {
            return Err(Error::shape(
                "stitch input",
                self.spec.in_shape.with_batch(0),
                shape,
            ));
        }
        Ok(())
    }

    fn conv_input(&self, x: &Tensor<S>) -> Tensor<S> {
        match self.spec.kind {
            StitchKind::UpsampleProject => nearest_upsample(x, self.spec.factor),
            _ => x.clone(),
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_input(x)?;
        let z = self.conv_input(x);
        Ok(conv2d_forward(
            &self.spec.conv_geom(),
            &z,
            self.weight(),
            Some(self.bias()),
        ))
    }

    /// Gradients for upstream gradient `dy` at input `x`.
    pub fn backward(
        &self,
        x: &Tensor<S>,
        dy: &Tensor<S>,
        need_input: bool,
    ) -> Result<StitchGrads<S>> {
        self.check_input(x)?;
        let z = self.conv_input(x);
        let g = conv2d_backward(
            &self.spec.conv_geom(),
            &z,
            self.weight(),
            dy,
            need_input,
            true,
            true,
        );
        let input = g.input.map(|dz| match self.spec.kind {
            StitchKind::UpsampleProject => nearest_upsample_backward(&dz, self.spec.factor),
            _ => dz,
        });
        Ok(StitchGrads {
            weight: g.weight.expect("weight grad"),
            bias: g.bias.expect("bias grad"),
            input,
        })
    }

    pub(crate) fn from_params(spec: StitchSpec, params: TensorStore<S>) -> Result<Self> {
        let template = build_stitch::<S>(spec, 0);
        if params.shapes() != template.params.shapes() {
            return Err(Error::shape(
                "stitch parameters",
                template.params.shapes(),
                params.shapes(),
            ));
        }
        Ok(Self {
            spec,
            weight: template.weight,
            bias: template.bias,
            params,
        })
    }
}

/// Frozen sender prefix, trainable stitch, frozen receiver suffix.
#[derive(Clone, Debug)]
pub struct StitchedNetwork<S> {
    sender: Arc<ModelHandle<S>>,
    sender_index: usize,
    receiver: Arc<ModelHandle<S>>,
    receiver_entry: Entry,
    pub(crate) stitch: Stitch<S>,
}

/// Digest over both frozen networks' parameters and running statistics.
pub fn frozen_digest<S: Scalar>(sender: &ModelHandle<S>, receiver: &ModelHandle<S>) -> String {
    let mut h = Sha256::new();
    sender.net.hash_into(&mut h);
    receiver.net.hash_into(&mut h);
    hex_digest(h)
}

/// Connects sender stitch point `i` to receiver stitch point `j`.
pub fn assemble<S: Scalar>(
    sender: Arc<ModelHandle<S>>,
    i: usize,
    receiver: Arc<ModelHandle<S>>,
    j: usize,
    stitch: Stitch<S>,
) -> Result<StitchedNetwork<S>> {
    assemble_at(sender, i, receiver, Entry::After(j), stitch)
}

/// Connects sender stitch point `i` to the receiver's raw input, so the
/// stitch produces images.
pub fn assemble_into_input<S: Scalar>(
    sender: Arc<ModelHandle<S>>,
    i: usize,
    receiver: Arc<ModelHandle<S>>,
    stitch: Stitch<S>,
) -> Result<StitchedNetwork<S>> {
    assemble_at(sender, i, receiver, Entry::Input, stitch)
}

pub const INPUT_SHAPE: TensorShape = TensorShape::new(CHANNELS, INPUT_SIDE, INPUT_SIDE);

fn assemble_at<S: Scalar>(
    sender: Arc<ModelHandle<S>>,
    i: usize,
    receiver: Arc<ModelHandle<S>>,
    entry: Entry,
    stitch: Stitch<S>,
) -> Result<StitchedNetwork<S>> {
    let sender_shape = sender
        .arch()
        .point_shape(i)
        .map_err(|e| Error::Assembly(format!("sender index: {e}")))?;
    let receiver_shape = match entry {
        Entry::Input => INPUT_SHAPE,
        Entry::After(j) => receiver
            .arch()
            .point_shape(j)
            .map_err(|e| Error::Assembly(format!("receiver index: {e}")))?,
    };
    let spec = stitch.spec();
    if spec.in_shape != sender_shape || spec.out_shape != receiver_shape {
        return Err(Error::Assembly(format!(
            "stitch maps {} -> {} but the cut needs {} -> {}",
            spec.in_shape, spec.out_shape, sender_shape, receiver_shape
        )));
    }
    spec.validate()
        .map_err(|e| Error::Assembly(e.to_string()))?;
    Ok(StitchedNetwork {
        sender,
        sender_index: i,
        receiver,
        receiver_entry: entry,
        stitch,
    })
}

impl<S: Scalar> StitchedNetwork<S> {
    pub fn sender(&self) -> &Arc<ModelHandle<S>> {
        &self.sender
    }

    pub fn receiver(&self) -> &Arc<ModelHandle<S>> {
        &self.receiver
    }

    pub fn sender_index(&self) -> usize {
        self.sender_index
    }

    pub fn receiver_entry(&self) -> Entry {
        self.receiver_entry
    }

    /// Receiver stitch index, `None` when stitching into the raw input.
    pub fn receiver_index(&self) -> Option<usize> {
        match self.receiver_entry {
            Entry::After(j) => Some(j),
            Entry::Input => None,
        }
    }

    pub fn stitch(&self) -> &Stitch<S> {
        &self.stitch
    }

    pub fn into_stitch(self) -> Stitch<S> {
        self.stitch
    }

    /// Digest of both frozen networks, parameters and running statistics.
    /// Hashes every tensor, so callers should not poll it per step.
    pub fn frozen_digest(&self) -> String {
        frozen_digest(&self.sender, &self.receiver)
    }

    /// `A_{<=i}(x)`.
    pub fn sender_activation(&self, images: &Tensor<S>) -> Result<Tensor<S>> {
        self.sender
            .net
            .forward_span(images, Entry::Input, Exit::Point(self.sender_index))
    }

    /// The provided representation `S(A_{<=i}(x))`.
    pub fn provided(&self, images: &Tensor<S>) -> Result<Tensor<S>> {
        self.stitch.forward(&self.sender_activation(images)?)
    }

    /// The expected representation `B_{<=j}(x)`; the images themselves when
    /// stitching into the input.
    pub fn expected(&self, images: &Tensor<S>) -> Result<Tensor<S>> {
        match self.receiver_entry {
            Entry::After(j) => self
                .receiver
                .net
                .forward_span(images, Entry::Input, Exit::Point(j)),
            Entry::Input => Ok(images.clone()),
        }
    }

    /// Receiver logits from a provided representation.
    pub fn logits_from_provided(&self, provided: &Tensor<S>) -> Result<Tensor<S>> {
        self.receiver
            .net
            .forward_span(provided, self.receiver_entry, Exit::Logits)
    }

    pub fn forward(&self, images: &Tensor<S>) -> Result<Tensor<S>> {
        self.logits_from_provided(&self.provided(images)?)
    }
}
