//! CIFAR-layout Small ResNet with sliceable forward and backward passes.
//!
//! The network is a sequence of units: the stem (3x3 conv, BN, ReLU), one
//! unit per residual block, and the head (global average pool, linear).
//! Stitch point `k` is the output of unit `k`, so any contiguous run of
//! units can be executed on its own and the runs compose exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::Sha256;

use super::arch::{ArchSpec, TensorShape, BASE_CHANNELS, INPUT_SIDE};
use crate::data::{CHANNELS, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::nn::norm::{self, BnCache};
use crate::nn::{conv2d_backward, conv2d_forward, ops, ConvGeom};
use crate::params::{TensorId, TensorStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How batch-normalization layers behave during a pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Running statistics; the network is a fixed function.
    Frozen,
    /// Batch statistics, as in training.
    Batch,
}

/// Where a partial pass starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Entry {
    /// Raw normalized images.
    Input,
    /// The activation at stitch point `j`; the pass starts with the unit after it.
    After(usize),
}

/// Where a partial pass stops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exit {
    /// The activation at stitch point `i`, inclusive.
    Point(usize),
    Logits,
}

#[derive(Clone, Debug)]
struct ConvBn {
    geom: ConvGeom,
    weight: TensorId,
    gamma: TensorId,
    beta: TensorId,
    mean: TensorId,
    var: TensorId,
}

#[derive(Clone, Debug)]
struct Block {
    conv1: ConvBn,
    conv2: ConvBn,
    shortcut: Option<ConvBn>,
}

struct ConvBnTape<S> {
    cache: Option<BnCache<S>>,
}

enum UnitTape<S> {
    Stem {
        input: Tensor<S>,
        bn: ConvBnTape<S>,
        out: Tensor<S>,
    },
    Block {
        input: Tensor<S>,
        c1: ConvBnTape<S>,
        mid: Tensor<S>,
        c2: ConvBnTape<S>,
        sc: Option<ConvBnTape<S>>,
        out: Tensor<S>,
    },
    Head {
        pooled: Tensor<S>,
        h: usize,
        w: usize,
    },
}

struct BatchStat<S> {
    mean_id: TensorId,
    var_id: TensorId,
    mean: Vec<S>,
    var: Vec<S>,
}

/// Everything a backward pass over a span needs.
pub struct Trace<S> {
    start: usize,
    mode: NormMode,
    units: Vec<UnitTape<S>>,
    stats: Vec<BatchStat<S>>,
}

impl<S> Trace<S> {
    pub fn mode(&self) -> NormMode {
        self.mode
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct ResNet<S> {
    arch: ArchSpec,
    stem: ConvBn,
    blocks: Vec<Block>,
    fc_weight: TensorId,
    fc_bias: TensorId,
    params: TensorStore<S>,
    buffers: TensorStore<S>,
}

struct Builder<'a, S> {
    params: TensorStore<S>,
    buffers: TensorStore<S>,
    rng: &'a mut ChaCha8Rng,
}

impl<S: Scalar> Builder<'_, S> {
    fn conv_bn(&mut self, prefix: &str, conv_name: &str, bn_name: &str, geom: ConvGeom) -> ConvBn {
        // Kaiming normal, fan-out mode.
        let fan_out = geom.out_channels * geom.kernel * geom.kernel;
        let std = (2.0 / fan_out as f64).sqrt();
        let weight = self.params.push(
            format!("{prefix}.{conv_name}.weight"),
            Tensor::randn(&geom.weight_shape(), std, self.rng),
            true,
        );
        let c = geom.out_channels;
        let gamma = self.params.push(
            format!("{prefix}.{bn_name}.weight"),
            Tensor::full(&[c], S::one()),
            false,
        );
        let beta = self.params.push(
            format!("{prefix}.{bn_name}.bias"),
            Tensor::zeros(&[c]),
            false,
        );
        let mean = self.buffers.push(
            format!("{prefix}.{bn_name}.running_mean"),
            Tensor::zeros(&[c]),
            false,
        );
        let var = self.buffers.push(
            format!("{prefix}.{bn_name}.running_var"),
            Tensor::full(&[c], S::one()),
            false,
        );
        ConvBn {
            geom,
            weight,
            gamma,
            beta,
            mean,
            var,
        }
    }
}

impl<S: Scalar> ResNet<S> {
    /// Randomly initialized network; identical for identical `(arch, seed)`.
    pub fn new(arch: ArchSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            params: TensorStore::new(),
            buffers: TensorStore::new(),
            rng: &mut rng,
        };
        let stem = b.conv_bn(
            "stem",
            "conv",
            "bn",
            ConvGeom::new(CHANNELS, BASE_CHANNELS, 3, 1, 1),
        );
        let mut blocks = Vec::with_capacity(arch.total_blocks());
        let mut in_c = BASE_CHANNELS;
        for k in 1..=arch.total_blocks() {
            let out_c = ArchSpec::stage_shape(arch.stage_of_block(k)).channels;
            let stride = if arch.block_downsamples(k) { 2 } else { 1 };
            let prefix = format!("block{k}");
            let conv1 = b.conv_bn(
                &prefix,
                "conv1",
                "bn1",
                ConvGeom::new(in_c, out_c, 3, stride, 1),
            );
            let conv2 = b.conv_bn(
                &prefix,
                "conv2",
                "bn2",
                ConvGeom::new(out_c, out_c, 3, 1, 1),
            );
            let shortcut = (stride != 1 || in_c != out_c).then(|| {
                b.conv_bn(
                    &prefix,
                    "shortcut.conv",
                    "shortcut.bn",
                    ConvGeom::new(in_c, out_c, 1, stride, 0),
                )
            });
            blocks.push(Block {
                conv1,
                conv2,
                shortcut,
            });
            in_c = out_c;
        }
        let bound = 1.0 / (in_c as f64).sqrt();
        let fc_w: Vec<S> = (0..NUM_CLASSES * in_c)
            .map(|_| S::lit(b.rng.random_range(-bound..bound)))
            .collect();
        let fc_b: Vec<S> = (0..NUM_CLASSES)
            .map(|_| S::lit(b.rng.random_range(-bound..bound)))
            .collect();
        let fc_weight = b.params.push(
            "fc.weight",
            Tensor::from_vec(&[NUM_CLASSES, in_c], fc_w).expect("fc shape"),
            true,
        );
        let fc_bias = b.params.push(
            "fc.bias",
            Tensor::from_vec(&[NUM_CLASSES], fc_b).expect("fc shape"),
            false,
        );
        Self {
            arch,
            stem,
            blocks,
            fc_weight,
            fc_bias,
            params: b.params,
            buffers: b.buffers,
        }
    }

    pub fn arch(&self) -> ArchSpec {
        self.arch
    }

    pub fn params(&self) -> &TensorStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut TensorStore<S> {
        &mut self.params
    }

    pub fn buffers(&self) -> &TensorStore<S> {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut TensorStore<S> {
        &mut self.buffers
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn hash_into(&self, hasher: &mut Sha256) {
        self.params.hash_into(hasher);
        self.buffers.hash_into(hasher);
    }

    fn head_unit(&self) -> usize {
        self.blocks.len() + 1
    }

    fn span(&self, entry: Entry, exit: Exit) -> Result<(usize, usize)> {
        let n = self.blocks.len();
        let start = match entry {
            Entry::Input => 0,
            Entry::After(j) if j <= n => j + 1,
            Entry::After(j) => {
                return Err(Error::Argument(format!(
                    "entry index {j} out of range for {} (max {n})",
                    self.arch
                )))
            }
        };
        let end = match exit {
            Exit::Point(i) if i <= n => i + 1,
            Exit::Point(i) => {
                return Err(Error::Argument(format!(
                    "exit index {i} out of range for {} (max {n})",
                    self.arch
                )))
            }
            Exit::Logits => n + 2,
        };
        if end < start {
            return Err(Error::Argument(format!("empty span {entry:?} -> {exit:?}")));
        }
        Ok((start, end))
    }

    /// Per-example shape expected at `entry`.
    pub fn entry_shape(&self, entry: Entry) -> Result<TensorShape> {
        match entry {
            Entry::Input => Ok(TensorShape::new(CHANNELS, INPUT_SIDE, INPUT_SIDE)),
            Entry::After(j) => self.arch.point_shape(j),
        }
    }

    fn check_input(&self, entry: Entry, x: &Tensor<S>) -> Result<()> {
        let want = self.entry_shape(entry)?;
        let shape = x.shape();
        if shape.len() != 4 || shape[1..] != want.dims() {
            return Err(Error::shape(
                format!("{} input at {entry:?}", self.arch),
                ["N", &want.to_string()],
                shape,
            ));
        }
        Ok(())
    }

    /// Runs the units between `entry` and `exit` with frozen normalization.
    pub fn forward_span(&self, x: &Tensor<S>, entry: Entry, exit: Exit) -> Result<Tensor<S>> {
        self.check_input(entry, x)?;
        let (start, end) = self.span(entry, exit)?;
        let mut h = x.clone();
        for u in start..end {
            h = self.unit_forward(u, h, NormMode::Frozen, None, &mut Vec::new());
        }
        Ok(h)
    }

    /// Like [`forward_span`](Self::forward_span) but records a [`Trace`]
    /// for [`backward`](Self::backward).
    pub fn trace_span(
        &self,
        x: &Tensor<S>,
        entry: Entry,
        exit: Exit,
        mode: NormMode,
    ) -> Result<(Tensor<S>, Trace<S>)> {
        self.check_input(entry, x)?;
        let (start, end) = self.span(entry, exit)?;
        let mut units = Vec::with_capacity(end - start);
        let mut stats = Vec::new();
        let mut h = x.clone();
        for u in start..end {
            let mut tape = None;
            h = self.unit_forward(u, h, mode, Some(&mut tape), &mut stats);
            units.push(tape.expect("tape recorded"));
        }
        Ok((
            h,
            Trace {
                start,
                mode,
                units,
                stats,
            },
        ))
    }

    /// Logits for a batch of images.
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.forward_span(x, Entry::Input, Exit::Logits)
    }

    /// Folds the batch statistics of a `Batch`-mode trace into the running
    /// statistics.
    pub fn commit_running_stats(&mut self, trace: &Trace<S>) {
        for st in &trace.stats {
            norm::update_running(self.buffers.get_mut(st.mean_id).data_mut(), &st.mean);
            norm::update_running(self.buffers.get_mut(st.var_id).data_mut(), &st.var);
        }
    }

    fn conv_bn_forward(
        &self,
        cb: &ConvBn,
        x: &Tensor<S>,
        mode: NormMode,
        stats: &mut Vec<BatchStat<S>>,
    ) -> (Tensor<S>, ConvBnTape<S>) {
        let z = conv2d_forward(&cb.geom, x, self.params.get(cb.weight), None);
        let gamma = self.params.get(cb.gamma).data();
        let beta = self.params.get(cb.beta).data();
        match mode {
            NormMode::Frozen => {
                let y = norm::bn_forward_eval(
                    &z,
                    gamma,
                    beta,
                    self.buffers.get(cb.mean).data(),
                    self.buffers.get(cb.var).data(),
                );
                (y, ConvBnTape { cache: None })
            }
            NormMode::Batch => {
                let (y, cache, mean, var) = norm::bn_forward_train(&z, gamma, beta);
                stats.push(BatchStat {
                    mean_id: cb.mean,
                    var_id: cb.var,
                    mean,
                    var,
                });
                (y, ConvBnTape { cache: Some(cache) })
            }
        }
    }

    fn conv_bn_backward(
        &self,
        cb: &ConvBn,
        x: &Tensor<S>,
        tape: &ConvBnTape<S>,
        dy: &Tensor<S>,
        grads: Option<&mut TensorStore<S>>,
        need_input: bool,
    ) -> Option<Tensor<S>> {
        let gamma = self.params.get(cb.gamma).data();
        let (dz, bn_grads) = match &tape.cache {
            Some(cache) => {
                let (dz, dg, db) = norm::bn_backward_train(cache, gamma, dy);
                (dz, Some((dg, db)))
            }
            None => (
                norm::bn_backward_eval(gamma, self.buffers.get(cb.var).data(), dy),
                None,
            ),
        };
        let need_params = grads.is_some();
        let cg = conv2d_backward(
            &cb.geom,
            x,
            self.params.get(cb.weight),
            &dz,
            need_input,
            need_params,
            false,
        );
        if let Some(g) = grads {
            g.get_mut(cb.weight)
                .add_assign(cg.weight.as_ref().expect("weight grad"));
            if let Some((dg, db)) = bn_grads {
                for (a, b) in g.get_mut(cb.gamma).data_mut().iter_mut().zip(dg) {
                    *a += b;
                }
                for (a, b) in g.get_mut(cb.beta).data_mut().iter_mut().zip(db) {
                    *a += b;
                }
            }
        }
        cg.input
    }

    fn unit_forward(
        &self,
        u: usize,
        x: Tensor<S>,
        mode: NormMode,
        tape: Option<&mut Option<UnitTape<S>>>,
        stats: &mut Vec<BatchStat<S>>,
    ) -> Tensor<S> {
        if u == 0 {
            let (mut y, bn) = self.conv_bn_forward(&self.stem, &x, mode, stats);
            ops::relu_inplace(&mut y);
            if let Some(t) = tape {
                *t = Some(UnitTape::Stem {
                    input: x,
                    bn,
                    out: y.clone(),
                });
            }
            y
        } else if u == self.head_unit() {
            let (_, _, h, w) = x.dims4();
            let pooled = ops::global_avg_pool(&x);
            let logits = ops::linear_forward(
                &pooled,
                self.params.get(self.fc_weight),
                self.params.get(self.fc_bias),
            );
            if let Some(t) = tape {
                *t = Some(UnitTape::Head { pooled, h, w });
            }
            logits
        } else {
            let block = &self.blocks[u - 1];
            let (mut mid, c1) = self.conv_bn_forward(&block.conv1, &x, mode, stats);
            ops::relu_inplace(&mut mid);
            let (mut out, c2) = self.conv_bn_forward(&block.conv2, &mid, mode, stats);
            let sc = match &block.shortcut {
                Some(cb) => {
                    let (s, t) = self.conv_bn_forward(cb, &x, mode, stats);
                    out.add_assign(&s);
                    Some(t)
                }
                None => {
                    out.add_assign(&x);
                    None
                }
            };
            ops::relu_inplace(&mut out);
            if let Some(t) = tape {
                *t = Some(UnitTape::Block {
                    input: x,
                    c1,
                    mid,
                    c2,
                    sc,
                    out: out.clone(),
                });
            }
            out
        }
    }

    /// Backpropagates `dy` (gradient w.r.t. the span's output) through a
    /// trace.
    ///
    /// Parameter gradients are accumulated into `grads` when given (a store
    /// from [`TensorStore::zeros_like`] on [`params`](Self::params)). The
    /// gradient w.r.t. the span's input is returned when `need_input`.
    pub fn backward(
        &self,
        trace: &Trace<S>,
        dy: &Tensor<S>,
        mut grads: Option<&mut TensorStore<S>>,
        need_input: bool,
    ) -> Option<Tensor<S>> {
        debug_assert!(
            grads.is_none() || trace.mode == NormMode::Batch,
            "parameter gradients need batch-mode normalization"
        );
        let mut d = dy.clone();
        for (offset, tape) in trace.units.iter().enumerate().rev() {
            let first = offset == 0;
            let want_dx = !first || need_input;
            let u = trace.start + offset;
            let next = match tape {
                UnitTape::Head { pooled, h, w } => {
                    let (dpooled, params) = ops::linear_backward(
                        pooled,
                        self.params.get(self.fc_weight),
                        &d,
                        true,
                        grads.is_some(),
                    );
                    if let (Some(g), Some((dw, db))) = (grads.as_deref_mut(), params) {
                        g.get_mut(self.fc_weight).add_assign(&dw);
                        g.get_mut(self.fc_bias).add_assign(&db);
                    }
                    want_dx.then(|| {
                        ops::global_avg_pool_backward(&dpooled.expect("pool grad"), *h, *w)
                    })
                }
                UnitTape::Stem { input, bn, out } => {
                    let dz = ops::relu_backward(out, &d);
                    self.conv_bn_backward(&self.stem, input, bn, &dz, grads.as_deref_mut(), want_dx)
                }
                UnitTape::Block {
                    input,
                    c1,
                    mid,
                    c2,
                    sc,
                    out,
                } => {
                    let block = &self.blocks[u - 1];
                    let dsum = ops::relu_backward(out, &d);
                    let dmid = self
                        .conv_bn_backward(&block.conv2, mid, c2, &dsum, grads.as_deref_mut(), true)
                        .expect("mid grad");
                    let dmid = ops::relu_backward(mid, &dmid);
                    let dx_main = self.conv_bn_backward(
                        &block.conv1,
                        input,
                        c1,
                        &dmid,
                        grads.as_deref_mut(),
                        want_dx,
                    );
                    let dx_short = match (&block.shortcut, sc) {
                        (Some(cb), Some(t)) => self.conv_bn_backward(
                            cb,
                            input,
                            t,
                            &dsum,
                            grads.as_deref_mut(),
                            want_dx,
                        ),
                        _ => want_dx.then(|| dsum.clone()),
                    };
                    match (dx_main, dx_short) {
                        (Some(mut a), Some(b)) => {
                            a.add_assign(&b);
                            Some(a)
                        }
                        _ => None,
                    }
                }
            };
            match next {
                Some(n) => d = n,
                None => return None,
            }
        }
        need_input.then_some(d)
    }
}
