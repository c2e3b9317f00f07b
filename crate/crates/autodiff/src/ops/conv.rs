use crate::error::{Result, TensorError};
use crate::graph::{Grads, Graph, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::{fmt_shape, Tensor};

#[derive(Clone, Copy)]
struct ConvGeom {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(xs: &[usize], ws: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let err = |why: &str| {
            TensorError::shape(
                "conv2d",
                format!("{why}: input {} kernel {}", fmt_shape(xs), fmt_shape(ws)),
            )
        };
        if xs.len() != 4 || ws.len() != 4 {
            return Err(err("expected rank-4 input and kernel"));
        }
        if xs[1] != ws[1] {
            return Err(err("input channels differ from kernel channels"));
        }
        if stride == 0 {
            return Err(err("stride must be positive"));
        }
        let (h, w, kh, kw) = (xs[2], xs[3], ws[2], ws[3]);
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(err("kernel larger than padded input"));
        }
        Ok(ConvGeom {
            batch: xs[0],
            c_in: xs[1],
            h,
            w,
            c_out: ws[0],
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn k(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Unfolds one image `[c_in, h, w]` into `[c_in*kh*kw, oh*ow]`.
    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let p = self.p();
        for c in 0..self.c_in {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-adds columns into an image.
    fn col2im<T: Scalar>(&self, cols: &[T], x: &mut [T]) {
        let p = self.p();
        for c in 0..self.c_in {
            let plane = &mut x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Graph<T> {
    /// 2-D cross-correlation with zero padding.
    ///
    /// `x: [b, c_in, h, w]`, `w: [c_out, c_in, kh, kw]`, `bias: [c_out]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let geo = ConvGeom::new(self.shape(x), self.shape(w), stride, pad)?;
        if let Some(b) = bias {
            if self.shape(b) != [geo.c_out] {
                return Err(TensorError::shape(
                    "conv2d",
                    format!(
                        "bias {} does not match {} output channels",
                        fmt_shape(self.shape(b)),
                        geo.c_out
                    ),
                ));
            }
        }
        let (k, p, c_out) = (geo.k(), geo.p(), geo.c_out);
        let in_len = geo.c_in * geo.h * geo.w;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![T::zero(); geo.batch * c_out * p];
        let mut cols = if geo.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); k * p]
        };
        for n in 0..geo.batch {
            let img = &xv[n * in_len..(n + 1) * in_len];
            let src: &[T] = if geo.is_pointwise() {
                img
            } else {
                geo.im2col(img, &mut cols);
                &cols
            };
            let dst = &mut out[n * c_out * p..(n + 1) * c_out * p];
            if let Some(b) = bias {
                let bv = self.value(b).data();
                for (o, row) in dst.chunks_mut(p).enumerate() {
                    row.fill(bv[o]);
                }
            }
            let beta = if bias.is_some() { T::one() } else { T::zero() };
            T::gemm(
                c_out, k, p, T::one(), wv, k as isize, 1, src, p as isize, 1, beta, dst,
                p as isize, 1,
            );
        }
        let value = Tensor::new(&[geo.batch, c_out, geo.oh, geo.ow], out)?;
        self.push(
            value,
            Op::Conv2d {
                x,
                w,
                bias,
                stride,
                pad,
            },
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn conv2d_backward(
        &self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
        gout: &Tensor<T>,
        grads: &mut Grads<T>,
    ) {
        let geo = ConvGeom::new(self.shape(x), self.shape(w), stride, pad)
            .expect("geometry validated in forward");
        let (k, p, c_out) = (geo.k(), geo.p(), geo.c_out);
        let in_len = geo.c_in * geo.h * geo.w;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let gs = gout.data();
        let need_x = self.requires_grad(x);
        let need_w = self.requires_grad(w);

        if let Some(b) = bias {
            if self.requires_grad(b) {
                let mut gb = vec![T::zero(); c_out];
                for n in 0..geo.batch {
                    for (o, acc) in gb.iter_mut().enumerate() {
                        let off = (n * c_out + o) * p;
                        *acc += gs[off..off + p].iter().copied().sum::<T>();
                    }
                }
                grads.add(self, b, Tensor::new(&[c_out], gb).expect("bias grad"));
            }
        }
        if !need_x && !need_w {
            return;
        }
        let mut gw = if need_w { vec![T::zero(); c_out * k] } else { Vec::new() };
        let mut gx = if need_x { vec![T::zero(); xv.len()] } else { Vec::new() };
        let mut cols = vec![T::zero(); k * p];
        for n in 0..geo.batch {
            let img = &xv[n * in_len..(n + 1) * in_len];
            let dy = &gs[n * c_out * p..(n + 1) * c_out * p];
            if need_w {
                let src: &[T] = if geo.is_pointwise() {
                    img
                } else {
                    geo.im2col(img, &mut cols);
                    &cols
                };
                // dW += dY · colsᵀ
                T::gemm(
                    c_out, p, k, T::one(), dy, p as isize, 1, src, 1, p as isize, T::one(),
                    &mut gw, k as isize, 1,
                );
            }
            if need_x {
                let gimg = &mut gx[n * in_len..(n + 1) * in_len];
                if geo.is_pointwise() {
                    // dX += Wᵀ · dY directly in image layout
                    T::gemm(
                        k, c_out, p, T::one(), wv, 1, k as isize, dy, p as isize, 1, T::one(),
                        gimg, p as isize, 1,
                    );
                } else {
                    T::gemm(
                        k, c_out, p, T::one(), wv, 1, k as isize, dy, p as isize, 1, T::zero(),
                        &mut cols, p as isize, 1,
                    );
                    geo.col2im(&cols, gimg);
                }
            }
        }
        if need_w {
            grads.add(self, w, Tensor::new(self.shape(w), gw).expect("kernel grad"));
        }
        if need_x {
            grads.add(self, x, Tensor::new(self.shape(x), gx).expect("input grad"));
        }
    }

    /// 2×2 max pooling with stride 2 (trailing odd row/column dropped).
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return Err(TensorError::shape(
                "maxpool2",
                format!("needs [b,c,h>=2,w>=2], got {}", fmt_shape(&s)),
            ));
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for pl in 0..planes {
            let base = pl * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xv[idx] > xv[best] {
                            best = idx;
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let value = Tensor::new(&[s[0], s[1], oh, ow], out)?;
        self.push(value, Op::MaxPool2 { x, argmax })
    }

    pub(crate) fn maxpool2_backward(
        &self,
        x: Var,
        argmax: &[u32],
        gout: &Tensor<T>,
        grads: &mut Grads<T>,
    ) {
        let mut gx = vec![T::zero(); self.value(x).numel()];
        for (&src, &g) in argmax.iter().zip(gout.data()) {
            gx[src as usize] += g;
        }
        grads.add(self, x, Tensor::new(self.shape(x), gx).expect("pool grad"));
    }
}
