//! Central-difference check of stitch gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::stitching::{Stitch, StitchGrads};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdReport {
    pub passed: bool,
    pub max_rel_err: f64,
    /// Number of scalar partial derivatives compared.
    pub checked: usize,
}

/// Relative errors are measured against at least this magnitude so that
/// near-zero partials don't dominate.
const REL_FLOOR: f64 = 1e-3;

/// Checks the stitch's analytic gradients w.r.t. weight, bias and input.
pub fn finite_difference_check<S: Scalar>(
    stitch: &Stitch<S>,
    activation: &Tensor<S>,
    tolerance: f64,
) -> Result<FdReport> {
    finite_difference_check_with(stitch, activation, tolerance, |s, x, dy| {
        s.backward(x, dy, true)
    })
}

/// As [`finite_difference_check`] with a caller-supplied analytic gradient.
///
/// The probe loss is `L(y) = sum(r * y) + sum(y^2) / 2` for a fixed random
/// `r`, so `dL/dy = r + y`. A stitch is affine in each of its inputs, which
/// makes `L` quadratic along every coordinate and the central difference
/// exact up to rounding.
pub fn finite_difference_check_with<S: Scalar>(
    stitch: &Stitch<S>,
    activation: &Tensor<S>,
    tolerance: f64,
    analytic: impl Fn(&Stitch<S>, &Tensor<S>, &Tensor<S>) -> Result<StitchGrads<S>>,
) -> Result<FdReport> {
    let y = stitch.forward(activation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d5);
    let r = Tensor::<S>::randn(y.shape(), 1.0, &mut rng);
    let loss = |s: &Stitch<S>, x: &Tensor<S>| -> Result<f64> {
        let y = s.forward(x)?;
        Ok(y.data()
            .iter()
            .zip(r.data())
            .map(|(&v, &rv)| {
                let v = v.to_f64_lossy();
                rv.to_f64_lossy() * v + 0.5 * v * v
            })
            .sum())
    };
    let mut dy = y.clone();
    for (d, &rv) in dy.data_mut().iter_mut().zip(r.data()) {
        *d += rv;
    }
    let grads = analytic(stitch, activation, &dy)?;
    let h = if S::epsilon().to_f64_lossy() > 1e-10 {
        1e-2
    } else {
        1e-5
    };

    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    let mut compare = |a: f64, n: f64| {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR);
        max_rel = if rel.is_nan() {
            f64::INFINITY
        } else {
            max_rel.max(rel)
        };
        checked += 1;
    };

    let mut probe = stitch.clone();
    let analytic_params = [&grads.weight, &grads.bias];
    for (t, g) in analytic_params.iter().enumerate() {
        for k in 0..g.len() {
            let orig = probe.params().tensors()[t].data()[k];
            probe.params_mut().tensors_mut()[t].data_mut()[k] = orig + S::lit(h);
            let up = loss(&probe, activation)?;
            probe.params_mut().tensors_mut()[t].data_mut()[k] = orig - S::lit(h);
            let down = loss(&probe, activation)?;
            probe.params_mut().tensors_mut()[t].data_mut()[k] = orig;
            compare(g.data()[k].to_f64_lossy(), (up - down) / (2.0 * h));
        }
    }
    if let Some(gx) = &grads.input {
        let mut x = activation.clone();
        for k in 0..x.len() {
            let orig = x.data()[k];
            x.data_mut()[k] = orig + S::lit(h);
            let up = loss(stitch, &x)?;
            x.data_mut()[k] = orig - S::lit(h);
            let down = loss(stitch, &x)?;
            x.data_mut()[k] = orig;
            compare(gx.data()[k].to_f64_lossy(), (up - down) / (2.0 * h));
        }
    }
    Ok(FdReport {
        passed: max_rel < tolerance,
        max_rel_err: max_rel,
        checked,
    })
}
