//! Parameter-free layers, the classifier head and losses.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relu_inplace<S: Scalar>(x: &mut Tensor<S>) {
    for v in x.data_mut() {
        if !(*v > S::zero()) {
            *v = S::zero();
        }
    }
}

/// Masks `dy` by the positive entries of the ReLU output.
pub fn relu_backward<S: Scalar>(out: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    let mut dx = dy.clone();
    for (g, &o) in dx.data_mut().iter_mut().zip(out.data()) {
        if !(o > S::zero()) {
            *g = S::zero();
        }
    }
    dx
}

/// `(n, c, h, w) -> (n, c)` mean over spatial positions.
pub fn global_avg_pool<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (n, c, h, w) = x.dims4();
    let p = h * w;
    let inv = S::lit(1.0 / p as f64);
    let data = x
        .data()
        .chunks(p)
        .map(|plane| plane.iter().copied().sum::<S>() * inv)
        .collect();
    Tensor::from_vec(&[n, c], data).expect("pool shape")
}

pub fn global_avg_pool_backward<S: Scalar>(dy: &Tensor<S>, h: usize, w: usize) -> Tensor<S> {
    let (n, c) = dy.dims2();
    let p = h * w;
    let inv = S::lit(1.0 / p as f64);
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    for (plane, &g) in dx.data_mut().chunks_mut(p).zip(dy.data()) {
        plane.iter_mut().for_each(|v| *v = g * inv);
    }
    dx
}

/// `y = x W^T + b` with `W` of shape `(out, in)`.
pub fn linear_forward<S: Scalar>(x: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Tensor<S> {
    let (n, fin) = x.dims2();
    let (fout, win) = weight.dims2();
    assert_eq!(fin, win, "linear input features");
    let mut y = Tensor::zeros(&[n, fout]);
    for row in y.data_mut().chunks_mut(fout) {
        row.copy_from_slice(bias.data());
    }
    S::gemm(
        n,
        fin,
        fout,
        S::one(),
        x.data(),
        (fin as isize, 1),
        weight.data(),
        (1, fin as isize),
        S::one(),
        y.data_mut(),
        (fout as isize, 1),
    );
    y
}

/// Returns `(dx, dW, db)`; `dx` only when requested.
pub fn linear_backward<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    dy: &Tensor<S>,
    need_input: bool,
    need_params: bool,
) -> (Option<Tensor<S>>, Option<(Tensor<S>, Tensor<S>)>) {
    let (n, fin) = x.dims2();
    let (_, fout) = dy.dims2();
    let dx = need_input.then(|| {
        let mut dx = Tensor::zeros(&[n, fin]);
        S::gemm(
            n,
            fout,
            fin,
            S::one(),
            dy.data(),
            (fout as isize, 1),
            weight.data(),
            (fin as isize, 1),
            S::zero(),
            dx.data_mut(),
            (fin as isize, 1),
        );
        dx
    });
    let params = need_params.then(|| {
        let mut dw = Tensor::zeros(&[fout, fin]);
        S::gemm(
            fout,
            n,
            fin,
            S::one(),
            dy.data(),
            (1, fout as isize),
            x.data(),
            (fin as isize, 1),
            S::zero(),
            dw.data_mut(),
            (fin as isize, 1),
        );
        let mut db = Tensor::zeros(&[fout]);
        for row in dy.data().chunks(fout) {
            for (d, &g) in db.data_mut().iter_mut().zip(row) {
                *d += g;
            }
        }
        (dw, db)
    });
    (dx, params)
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.
pub fn softmax_cross_entropy<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> (f64, Tensor<S>) {
    let (n, k) = logits.dims2();
    assert_eq!(n, labels.len(), "one label per row");
    let mut grad = Tensor::zeros(&[n, k]);
    let mut total = 0.0f64;
    let inv_n = 1.0 / n as f64;
    for (r, (row, &label)) in logits.data().chunks(k).zip(labels).enumerate() {
        let max = row
            .iter()
            .fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64_lossy()));
        let exps: Vec<f64> = row.iter().map(|v| (v.to_f64_lossy() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        total += z.ln() + max - row[label].to_f64_lossy();
        let g = &mut grad.data_mut()[r * k..(r + 1) * k];
        for (c, e) in exps.iter().enumerate() {
            let p = e / z - if c == label { 1.0 } else { 0.0 };
            g[c] = S::lit(p * inv_n);
        }
    }
    (total * inv_n, grad)
}

/// Mean over every element of `(a - b)^2` and its gradient w.r.t. `a`.
pub fn mse_loss<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> (f64, Tensor<S>) {
    assert_eq!(a.shape(), b.shape(), "mse operands");
    let count = a.len() as f64;
    let scale = S::lit(2.0 / count);
    let mut grad = Tensor::zeros(a.shape());
    let mut total = 0.0f64;
    for ((g, &x), &y) in grad.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        let d = x - y;
        total += d.to_f64_lossy() * d.to_f64_lossy();
        *g = d * scale;
    }
    (total / count, grad)
}

/// Per-item mean squared difference, accumulated in `f64` in storage order.
pub fn mse_per_item<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Vec<f64> {
    assert_eq!(a.shape(), b.shape(), "mse operands");
    let n = a.shape()[0];
    (0..n)
        .map(|i| {
            let (x, y) = (a.item(i), b.item(i));
            let mut acc = 0.0f64;
            for (p, q) in x.iter().zip(y) {
                let d = p.to_f64_lossy() - q.to_f64_lossy();
                acc += d * d;
            }
            acc / x.len() as f64
        })
        .collect()
}

/// Nearest-neighbour upsampling: every element becomes a `k x k` block.
pub fn nearest_upsample<S: Scalar>(x: &Tensor<S>, k: usize) -> Tensor<S> {
    assert!(
        k.is_power_of_two(),
        "upsample factor must be a power of two"
    );
    if k == 1 {
        return x.clone();
    }
    let (n, c, h, w) = x.dims4();
    let (oh, ow) = (h * k, w * k);
    let mut y = Tensor::zeros(&[n, c, oh, ow]);
    for (src, dst) in x.data().chunks(h * w).zip(y.data_mut().chunks_mut(oh * ow)) {
        for oy in 0..oh {
            let srow = &src[(oy / k) * w..(oy / k + 1) * w];
            for (ox, v) in dst[oy * ow..(oy + 1) * ow].iter_mut().enumerate() {
                *v = srow[ox / k];
            }
        }
    }
    y
}

/// Adjoint of [`nearest_upsample`]: sums each `k x k` block.
pub fn nearest_upsample_backward<S: Scalar>(dy: &Tensor<S>, k: usize) -> Tensor<S> {
    if k == 1 {
        return dy.clone();
    }
    let (n, c, oh, ow) = dy.dims4();
    let (h, w) = (oh / k, ow / k);
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    for (src, dst) in dy
        .data()
        .chunks(oh * ow)
        .zip(dx.data_mut().chunks_mut(h * w))
    {
        for oy in 0..oh {
            for ox in 0..ow {
                dst[(oy / k) * w + ox / k] += src[oy * ow + ox];
            }
        }
    }
    dx
}

fn pairwise_sum<S: Scalar>(buf: &mut [S]) -> S {
    let mut len = buf.len();
    if len == 0 {
        return S::zero();
    }
    while len > 1 {
        let half = len / 2;
        for i in 0..half {
            buf[i] = buf[2 * i] + buf[2 * i + 1];
        }
        if len % 2 == 1 {
            buf[half] = buf[len - 1];
            len = half + 1;
        } else {
            len = half;
        }
    }
    buf[0]
}

/// Non-overlapping `k x k` mean pooling.
///
/// Block sums use a balanced pairwise reduction, so a block of `k^2` equal
/// values (with `k` a power of two) averages back to that value exactly.
pub fn mean_pool<S: Scalar>(x: &Tensor<S>, k: usize) -> Tensor<S> {
    let (n, c, h, w) = x.dims4();
    assert!(
        h % k == 0 && w % k == 0,
        "pool factor must divide spatial dims"
    );
    let (oh, ow) = (h / k, w / k);
    let inv = S::lit(1.0 / (k * k) as f64);
    let mut y = Tensor::zeros(&[n, c, oh, ow]);
    let mut buf = vec![S::zero(); k * k];
    for (src, dst) in x.data().chunks(h * w).zip(y.data_mut().chunks_mut(oh * ow)) {
        for oy in 0..oh {
            for ox in 0..ow {
                for dy in 0..k {
                    for dx in 0..k {
                        buf[dy * k + dx] = src[(oy * k + dy) * w + ox * k + dx];
                    }
                }
                dst[oy * ow + ox] = pairwise_sum(&mut buf) * inv;
            }
        }
    }
    y
}
