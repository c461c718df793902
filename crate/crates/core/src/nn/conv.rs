//! 2D convolution via per-image im2col and GEMM.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Static geometry of a square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        assert!(kernel >= 1 && stride >= 1);
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel,
            self.kernel,
        ]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Gradients produced by [`conv2d_backward`].
pub struct ConvGrads<S> {
    pub input: Option<Tensor<S>>,
    pub weight: Option<Tensor<S>>,
    pub bias: Option<Tensor<S>>,
}

fn im2col<S: Scalar>(
    geom: &ConvGeom,
    x: &[S],
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    cols: &mut [S],
) {
    let k = geom.kernel;
    let s = geom.stride;
    let pad = geom.padding as isize;
    let p = oh * ow;
    for c in 0..geom.in_channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - pad;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out_row.iter_mut().for_each(|v| *v = S::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - pad;
                        *v = if ix < 0 || ix >= w as isize {
                            S::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<S: Scalar>(
    geom: &ConvGeom,
    cols: &[S],
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    dx: &mut [S],
) {
    let k = geom.kernel;
    let s = geom.stride;
    let pad = geom.padding as isize;
    let p = oh * ow;
    for c in 0..geom.in_channels {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * s + kx) as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution of an NCHW batch.
pub fn conv2d_forward<S: Scalar>(
    geom: &ConvGeom,
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
) -> Tensor<S> {
    let (n, c, h, w) = x.dims4();
    assert_eq!(c, geom.in_channels, "conv input channels");
    assert_eq!(
        weight.shape(),
        &geom.weight_shape()[..],
        "conv weight shape"
    );
    let (oh, ow) = geom.output_hw(h, w);
    let p = oh * ow;
    let kk = geom.patch_len();
    let o = geom.out_channels;
    let mut y = Tensor::zeros(&[n, o, oh, ow]);
    let mut cols = if geom.is_pointwise() {
        Vec::new()
    } else {
        vec![S::zero(); kk * p]
    };
    for b in 0..n {
        let xb = x.item(b);
        let src: &[S] = if geom.is_pointwise() {
            xb
        } else {
            im2col(geom, xb, h, w, oh, ow, &mut cols);
            &cols
        };
        let yb = y.item_mut(b);
        S::gemm(
            o,
            kk,
            p,
            S::one(),
            weight.data(),
            (kk as isize, 1),
            src,
            (p as isize, 1),
            S::zero(),
            yb,
            (p as isize, 1),
        );
        if let Some(bias) = bias {
            for (oc, plane) in yb.chunks_mut(p).enumerate() {
                let bv = bias.data()[oc];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    y
}

/// Backward convolution. Only the requested gradients are computed.
pub fn conv2d_backward<S: Scalar>(
    geom: &ConvGeom,
    x: &Tensor<S>,
    weight: &Tensor<S>,
    dy: &Tensor<S>,
    need_input: bool,
    need_params: bool,
    has_bias: bool,
) -> ConvGrads<S> {
    let (n, _, h, w) = x.dims4();
    let (_, o, oh, ow) = dy.dims4();
    let p = oh * ow;
    let kk = geom.patch_len();
    let mut dx = need_input.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_params.then(|| Tensor::zeros(&geom.weight_shape()));
    let mut db = (need_params && has_bias).then(|| Tensor::zeros(&[o]));
    let pointwise = geom.is_pointwise();
    let mut cols = if pointwise {
        Vec::new()
    } else {
        vec![S::zero(); kk * p]
    };
    let mut dcols = if pointwise || !need_input {
        Vec::new()
    } else {
        vec![S::zero(); kk * p]
    };
    for b in 0..n {
        let dyb = dy.item(b);
        if let Some(dw) = dw.as_mut() {
            let src: &[S] = if pointwise {
                x.item(b)
            } else {
                im2col(geom, x.item(b), h, w, oh, ow, &mut cols);
                &cols
            };
            // dW (o x kk) += dY (o x p) * cols^T (p x kk)
            S::gemm(
                o,
                p,
                kk,
                S::one(),
                dyb,
                (p as isize, 1),
                src,
                (1, p as isize),
                S::one(),
                dw.data_mut(),
                (kk as isize, 1),
            );
        }
        if let Some(db) = db.as_mut() {
            for (oc, plane) in dyb.chunks(p).enumerate() {
                db.data_mut()[oc] += plane.iter().copied().sum::<S>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            // dcols (kk x p) = W^T (kk x o) * dY (o x p)
            if pointwise {
                S::gemm(
                    kk,
                    o,
                    p,
                    S::one(),
                    weight.data(),
                    (1, kk as isize),
                    dyb,
                    (p as isize, 1),
                    S::zero(),
                    dx.item_mut(b),
                    (p as isize, 1),
                );
            } else {
                S::gemm(
                    kk,
                    o,
                    p,
                    S::one(),
                    weight.data(),
                    (1, kk as isize),
                    dyb,
                    (p as isize, 1),
                    S::zero(),
                    &mut dcols,
                    (p as isize, 1),
                );
                col2im(geom, &dcols, h, w, oh, ow, dx.item_mut(b));
            }
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}
