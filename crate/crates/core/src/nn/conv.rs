//! 2-D convolution and transposed convolution via im2col + GEMM.

use ndarray::{Array1, Array2, Axis};

use super::init::Initializer;
use super::Feature;
use crate::scalar::Scalar;

/// Spatial geometry of a convolution mapping an `in_h×in_w` map to
/// `out_h×out_w` with a square `kernel` and `stride`.
///
/// Padding follows the "same" convention: `out = ceil(in / stride)` and any
/// odd padding remainder goes to the bottom/right edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl Geometry {
    pub fn same(in_h: usize, in_w: usize, kernel: usize, stride: usize) -> Self {
        let out_h = in_h.div_ceil(stride);
        let out_w = in_w.div_ceil(stride);
        let pad_h = ((out_h - 1) * stride + kernel).saturating_sub(in_h);
        let pad_w = ((out_w - 1) * stride + kernel).saturating_sub(in_w);
        Geometry {
            in_h,
            in_w,
            out_h,
            out_w,
            kernel,
            stride,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
        }
    }

    /// Taps `k` of output position `o` that land inside `0..limit`, and the
    /// input index of the first one.
    #[inline]
    fn taps(&self, o: usize, pad: usize, limit: usize) -> (usize, usize, usize) {
        let base = o * self.stride;
        let k0 = pad.saturating_sub(base);
        let k1 = (limit + pad).saturating_sub(base).min(self.kernel);
        (k0, k1.max(k0), (base + k0).saturating_sub(pad))
    }
}

/// Gathers `k×k×c` patches of a channels-last map into rows of
/// `[n*out_h*out_w, k*k*c]`. Column order is `(ky, kx, channel)`.
pub fn im2col<T: Scalar>(x: &[T], n: usize, c: usize, g: &Geometry) -> Array2<T> {
    let k = g.kernel;
    let width = k * k * c;
    let rows = n * g.out_h * g.out_w;
    let mut cols = vec![T::zero(); rows * width];
    for b in 0..n {
        for oy in 0..g.out_h {
            let (ky0, ky1, iy0) = g.taps(oy, g.pad_top, g.in_h);
            for ox in 0..g.out_w {
                let (kx0, kx1, ix0) = g.taps(ox, g.pad_left, g.in_w);
                let run = (kx1 - kx0) * c;
                let row = ((b * g.out_h + oy) * g.out_w + ox) * width;
                for (dy, ky) in (ky0..ky1).enumerate() {
                    let src = ((b * g.in_h + iy0 + dy) * g.in_w + ix0) * c;
                    let dst = row + (ky * k + kx0) * c;
                    cols[dst..dst + run].copy_from_slice(&x[src..src + run]);
                }
            }
        }
    }
    Array2::from_shape_vec((rows, width), cols).expect("im2col shape")
}

/// Adjoint of [`im2col`]: scatter-adds patch rows back onto an
/// `[n*in_h*in_w, c]` map.
pub fn col2im<T: Scalar>(cols: &Array2<T>, n: usize, c: usize, g: &Geometry) -> Array2<T> {
    let k = g.kernel;
    let width = k * k * c;
    debug_assert_eq!(cols.ncols(), width);
    let cols = cols.as_standard_layout();
    let src_all = cols.as_slice().expect("standard layout");
    let mut out = vec![T::zero(); n * g.in_h * g.in_w * c];
    for b in 0..n {
        for oy in 0..g.out_h {
            let (ky0, ky1, iy0) = g.taps(oy, g.pad_top, g.in_h);
            for ox in 0..g.out_w {
                let (kx0, kx1, ix0) = g.taps(ox, g.pad_left, g.in_w);
                let run = (kx1 - kx0) * c;
                let row = ((b * g.out_h + oy) * g.out_w + ox) * width;
                for (dy, ky) in (ky0..ky1).enumerate() {
                    let dst = ((b * g.in_h + iy0 + dy) * g.in_w + ix0) * c;
                    let src = row + (ky * k + kx0) * c;
                    for (o, &v) in out[dst..dst + run].iter_mut().zip(&src_all[src..src + run]) {
                        *o += v;
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((n * g.in_h * g.in_w, c), out).expect("col2im shape")
}

/// Cached forward state needed by a convolution backward pass.
#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    /// im2col patches of the layer input (conv) or the layer input itself (transposed conv).
    pub(crate) saved: Array2<T>,
    pub(crate) n: usize,
}

/// Convolution with weights `[k*k*in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Array2<T>,
    pub bias: Option<Array1<T>>,
    pub kernel: usize,
    pub stride: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn init(
        init: &mut Initializer,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    ) -> Self {
        let fan_in = kernel * kernel * cin;
        let fan_out = kernel * kernel * cout;
        Conv2d {
            weight: init.glorot(fan_in, cout, fan_in, fan_out),
            bias: bias.then(|| Array1::zeros(cout)),
            kernel,
            stride,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Conv2d {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: self.bias.as_ref().map(|b| Array1::zeros(b.len())),
            kernel: self.kernel,
            stride: self.stride,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.nrows() / (self.kernel * self.kernel)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.ncols()
    }

    pub fn geometry(&self, h: usize, w: usize) -> Geometry {
        Geometry::same(h, w, self.kernel, self.stride)
    }

    pub fn forward(&self, x: &Feature<T>) -> (Feature<T>, ConvCache<T>) {
        let g = self.geometry(x.h, x.w);
        let xs = x.data.as_standard_layout();
        let cols = im2col(xs.as_slice().expect("standard"), x.n, x.channels(), &g);
        let mut y = cols.dot(&self.weight);
        if let Some(b) = &self.bias {
            y += b;
        }
        (
            Feature::new(y, x.n, g.out_h, g.out_w),
            ConvCache {
                saved: cols,
                n: x.n,
            },
        )
    }

    /// Gradient with respect to the input map of spatial size `h×w`.
    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        h: usize,
        w: usize,
        dy: &Array2<T>,
        grads: Option<&mut Conv2d<T>>,
    ) -> Feature<T> {
        let g = self.geometry(h, w);
        if let Some(gr) = grads {
            gr.weight += &cache.saved.t().dot(dy);
            if let Some(gb) = gr.bias.as_mut() {
                *gb += &dy.sum_axis(Axis(0));
            }
        }
        let dcols = dy.dot(&self.weight.t());
        let dx = col2im(&dcols, cache.n, self.in_channels(), &g);
        Feature::new(dx, cache.n, h, w)
    }
}

/// Transposed convolution (the adjoint of a strided "same" convolution) with
/// weights `[k*k*out, in]`; maps `h×w` to `(h*stride)×(w*stride)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d<T> {
    pub weight: Array2<T>,
    pub bias: Option<Array1<T>>,
    pub kernel: usize,
    pub stride: usize,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn init(
        init: &mut Initializer,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    ) -> Self {
        let fan_in = kernel * kernel * cin;
        let fan_out = kernel * kernel * cout;
        ConvTranspose2d {
            weight: init.glorot(kernel * kernel * cout, cin, fan_in, fan_out),
            bias: bias.then(|| Array1::zeros(cout)),
            kernel,
            stride,
        }
    }

    pub fn zeros_like(&self) -> Self {
        ConvTranspose2d {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: self.bias.as_ref().map(|b| Array1::zeros(b.len())),
            kernel: self.kernel,
            stride: self.stride,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_channels(&self) -> usize {
        self.weight.nrows() / (self.kernel * self.kernel)
    }

    /// Geometry of the adjoint convolution (large map → small map).
    pub fn geometry(&self, h: usize, w: usize) -> Geometry {
        Geometry::same(h * self.stride, w * self.stride, self.kernel, self.stride)
    }

    pub fn forward(&self, x: &Feature<T>) -> (Feature<T>, ConvCache<T>) {
        let g = self.geometry(x.h, x.w);
        let cols = x.data.dot(&self.weight.t());
        let mut y = col2im(&cols, x.n, self.out_channels(), &g);
        if let Some(b) = &self.bias {
            y += b;
        }
        (
            Feature::new(y, x.n, g.in_h, g.in_w),
            ConvCache {
                saved: x.data.clone(),
                n: x.n,
            },
        )
    }

    /// Gradient with respect to the `h×w` input map.
    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        h: usize,
        w: usize,
        dy: &Array2<T>,
        grads: Option<&mut ConvTranspose2d<T>>,
    ) -> Feature<T> {
        let g = self.geometry(h, w);
        let dys = dy.as_standard_layout();
        let dcols = im2col(
            dys.as_slice().expect("standard"),
            cache.n,
            self.out_channels(),
            &g,
        );
        if let Some(gr) = grads {
            gr.weight += &dcols.t().dot(&cache.saved);
            if let Some(gb) = gr.bias.as_mut() {
                *gb += &dy.sum_axis(Axis(0));
            }
        }
        let dx = dcols.dot(&self.weight);
        Feature::new(dx, cache.n, h, w)
    }
}
