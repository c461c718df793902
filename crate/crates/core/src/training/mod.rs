//! Optimization: hyperparameters, the warmup-cosine schedule, momentum SGD,
//! and the two stitch-training regimes.

mod gradcheck;
mod stitch;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::AugmentPolicy;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use gradcheck::{finite_difference_check, finite_difference_check_with, FdReport};
pub use stitch::{similarity_loss_on_batch, train_stitch_similarity, train_stitch_task};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fraction of all steps spent in linear warmup.
    pub warmup_fraction: f64,
    pub seed: u64,
    pub augment: AugmentPolicy,
}

impl Hyperparams {
    pub const VANILLA_EPOCHS: usize = 4;
    pub const SIMILARITY_EPOCHS: usize = 30;
    pub const DEFAULT_WARMUP: f64 = 0.05;

    /// Task-loss stitch recipe: 4 epochs of momentum SGD.
    pub fn vanilla_stitch() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.01,
            batch_size: 256,
            epochs: Self::VANILLA_EPOCHS,
            warmup_fraction: Self::DEFAULT_WARMUP,
            seed: 0,
            augment: AugmentPolicy::CropFlip,
        }
    }

    /// Same optimizer, 30 epochs, for stitches trained on representation MSE.
    pub fn similarity_stitch() -> Self {
        Self {
            epochs: Self::SIMILARITY_EPOCHS,
            ..Self::vanilla_stitch()
        }
    }

    /// Zoo networks reuse the stitch optimizer with their own epoch budget.
    pub fn zoo(epochs: usize) -> Self {
        Self {
            epochs,
            ..Self::vanilla_stitch()
        }
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_augment(mut self, augment: AugmentPolicy) -> Self {
        self.augment = augment;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Argument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Argument(
                "epochs and batch size must be at least 1".into(),
            ));
        }
        if !(0.0..=0.5).contains(&self.warmup_fraction) {
            return Err(Error::Argument(format!(
                "warmup fraction {} outside [0, 0.5]",
                self.warmup_fraction
            )));
        }
        Ok(())
    }

    pub fn warmup_steps(&self, total_steps: usize) -> usize {
        (self.warmup_fraction * total_steps as f64).round() as usize
    }
}

/// Combines seed components into one well-mixed 64-bit seed (SplitMix64).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        state ^= p;
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        state = z ^ (z >> 31);
    }
    state
}

/// Learning rate at `step` of `total_steps`: linear warmup from 0 to the
/// peak, then a half-cosine decay towards 0.
pub fn lr_at(step: usize, total_steps: usize, hp: &Hyperparams) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Argument("total_steps must be positive".into()));
    }
    if step >= total_steps {
        return Err(Error::Argument(format!(
            "step {step} outside [0, {total_steps})"
        )));
    }
    let peak = hp.learning_rate;
    let warmup = hp.warmup_steps(total_steps);
    if step < warmup {
        return Ok(peak * step as f64 / warmup as f64);
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    Ok(peak * (1.0 + (std::f64::consts::PI * progress).cos()) / 2.0)
}

/// Momentum SGD with coupled L2 weight decay on flagged tensors.
#[derive(Clone, Debug)]
pub struct Sgd<S> {
    momentum: f64,
    weight_decay: f64,
    velocity: Vec<Tensor<S>>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(hp: &Hyperparams) -> Self {
        Self {
            momentum: hp.momentum,
            weight_decay: hp.weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor<S>], grads: &[Tensor<S>], decay: &[bool], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), decay.len());
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        let (mu, wd, lr) = (S::lit(self.momentum), S::lit(self.weight_decay), S::lit(lr));
        for (((p, g), v), &d) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.velocity)
            .zip(decay)
        {
            for ((w, &gr), vel) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                let g_eff = if d { gr + wd * *w } else { gr };
                *vel = mu * *vel + g_eff;
                *w -= lr * *vel;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingRegime {
    Zoo,
    /// Cross-entropy through the frozen receiver ("vanilla").
    Task,
    /// MSE against the receiver's own representation.
    Similarity,
}

/// Per-run log. Accuracies are measured on the evaluation split after each
/// epoch without augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub regime: TrainingRegime,
    pub epoch_loss: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
    pub steps: usize,
    pub wall_clock_secs: f64,
    pub seed: u64,
    pub hyperparams: Hyperparams,
    /// Digest of the trained parameters when training finished.
    pub final_digest: String,
}

impl TrainReport {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.epoch_accuracy.last().copied()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::InvariantViolation(format!("report serialization: {e}")))?;
        crate::checkpoint::write_atomic(path, text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(Error::io(format!("reading {}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            what: path.display().to_string(),
            line: 0,
            reason: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(warmup: f64) -> Hyperparams {
        Hyperparams {
            warmup_fraction: warmup,
            ..Hyperparams::vanilla_stitch()
        }
    }

    #[test]
    fn recipe_values() {
        let h = Hyperparams::vanilla_stitch();
        assert_eq!(
            (
                h.learning_rate,
                h.momentum,
                h.weight_decay,
                h.batch_size,
                h.epochs
            ),
            (0.01, 0.9, 0.01, 256, 4)
        );
        assert_eq!(Hyperparams::similarity_stitch().epochs, 30);
        h.validate().unwrap();
        assert!(hp(0.6).validate().is_err());
        assert!(h.clone().with_epochs(0).validate().is_err());
    }

    #[test]
    fn schedule_endpoints() {
        let h = hp(0.05);
        let total = 1000;
        let w = h.warmup_steps(total);
        assert_eq!(w, 50);
        assert_eq!(lr_at(w, total, &h).unwrap(), 0.01);
        assert_eq!(lr_at(0, total, &h).unwrap(), 0.0);
        assert!(lr_at(total - 1, total, &h).unwrap() < 1e-7);
        assert_eq!(lr_at(0, total, &hp(0.0)).unwrap(), 0.01);
        assert!(lr_at(0, 0, &h).is_err());
        assert!(lr_at(total, total, &h).is_err());
    }

    #[test]
    fn schedule_continuous_and_monotone_after_warmup() {
        for (warmup, total) in [(0.05, 1000), (0.1, 37), (0.5, 10), (0.0, 5)] {
            let h = hp(warmup);
            let w = h.warmup_steps(total);
            let lrs: Vec<f64> = (0..total).map(|s| lr_at(s, total, &h).unwrap()).collect();
            for s in w..total - 1 {
                assert!(lrs[s + 1] <= lrs[s], "increase at {s}");
            }
            if w > 0 {
                // The last warmup step is one ramp increment below the peak.
                assert!((lrs[w] - lrs[w - 1] - h.learning_rate / w as f64).abs() < 1e-12);
            }
            for s in 1..=w {
                assert!(lrs[s] >= lrs[s - 1]);
            }
        }
    }

    #[test]
    fn sgd_matches_hand_computation() {
        let h = Hyperparams::vanilla_stitch();
        let mut opt = Sgd::<f64>::new(&h);
        let mut p = vec![Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap()];
        let g = vec![Tensor::from_vec(&[2], vec![0.5, -1.0]).unwrap()];
        opt.step(&mut p, &g, &[true], 0.1);
        // v = g + wd * w ; w -= lr * v
        assert!((p[0].data()[0] - (1.0 - 0.1 * (0.5 + 0.01))).abs() < 1e-15);
        let w1 = p[0].data()[0];
        opt.step(&mut p, &g, &[true], 0.1);
        let v2 = 0.9 * (0.5 + 0.01) + 0.5 + 0.01 * w1;
        assert!((p[0].data()[0] - (w1 - 0.1 * v2)).abs() < 1e-15);
        let mut q = vec![Tensor::from_vec(&[1], vec![3.0]).unwrap()];
        Sgd::<f64>::new(&h).step(
            &mut q,
            &[Tensor::from_vec(&[1], vec![0.0]).unwrap()],
            &[false],
            1.0,
        );
        assert_eq!(q[0].data()[0], 3.0);
    }
}
