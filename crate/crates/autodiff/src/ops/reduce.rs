use crate::error::{Result, TensorError};
use crate::graph::{Grads, Graph, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::{fmt_shape, Tensor};

/// Sum of each length-`k` window along a line ("valid" placement).
fn window_sums<T: Scalar>(line: impl Fn(usize) -> T, len: usize, k: usize, out: &mut [T]) {
    for (i, o) in out.iter_mut().enumerate().take(len + 1 - k) {
        *o = (i..i + k).map(&line).sum();
    }
}

/// Adjoint of [`window_sums`]: each input collects every window covering it.
fn window_sums_adjoint<T: Scalar>(g: impl Fn(usize) -> T, len: usize, k: usize, out: &mut [T]) {
    let n_out = len + 1 - k;
    for (r, o) in out.iter_mut().enumerate().take(len) {
        let lo = (r + 1).saturating_sub(k);
        let hi = r.min(n_out - 1);
        *o = (lo..=hi).map(&g).sum();
    }
}

impl<T: Scalar> Graph<T> {
    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum { x })
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = T::from_usize(self.value(x).numel()).expect("count fits scalar");
        let s = self.sum(x)?;
        self.scale(s, T::one() / n)
    }

    pub(crate) fn sum_backward(&self, x: Var, gout: &Tensor<T>, grads: &mut Grads<T>) {
        grads.add(self, x, Tensor::full(self.shape(x), gout.item()));
    }

    /// Sum over `axis`, keeping it as a length-1 axis.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::shape(
                "sum_axis",
                format!("axis {axis} out of range for {}", fmt_shape(&shape)),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let len = shape[axis];
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let src = &xv[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = 1;
        let value = Tensor::new(&out_shape, out)?;
        self.push(value, Op::SumAxis { x, axis })
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| TensorError::shape("mean_axis", format!("axis {axis} out of range")))?;
        let s = self.sum_axis(x, axis)?;
        self.scale(s, T::one() / T::from_usize(len).expect("extent fits scalar"))
    }

    pub(crate) fn sum_axis_backward(
        &self,
        x: Var,
        axis: usize,
        gout: &Tensor<T>,
        grads: &mut Grads<T>,
    ) {
        let shape = self.shape(x);
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let len = shape[axis];
        let gv = gout.data();
        let mut gx = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            for _ in 0..len {
                gx.extend_from_slice(&gv[o * inner..(o + 1) * inner]);
            }
        }
        grads.add(self, x, Tensor::new(shape, gx).expect("sum_axis grad"));
    }

    /// Uniform `k×k` window mean over the trailing two axes, evaluated at
    /// every fully-contained window position (stride 1, no padding).
    pub fn box_mean(&mut self, x: Var, k: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let r = shape.len();
        if r < 2 || k == 0 || shape[r - 2] < k || shape[r - 1] < k {
            return Err(TensorError::shape(
                "box_mean",
                format!("{k}x{k} window does not fit {}", fmt_shape(&shape)),
            ));
        }
        let (h, w) = (shape[r - 2], shape[r - 1]);
        let (oh, ow) = (h + 1 - k, w + 1 - k);
        let planes: usize = shape[..r - 2].iter().product();
        let norm = T::one() / T::from_usize(k * k).expect("window fits scalar");
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); planes * oh * ow];
        let mut tmp = vec![T::zero(); h * ow];
        let mut col = vec![T::zero(); oh];
        for p in 0..planes {
            let src = &xv[p * h * w..(p + 1) * h * w];
            for y in 0..h {
                window_sums(|i| src[y * w + i], w, k, &mut tmp[y * ow..(y + 1) * ow]);
            }
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for j in 0..ow {
                window_sums(|i| tmp[i * ow + j], h, k, &mut col);
                for i in 0..oh {
                    dst[i * ow + j] = col[i] * norm;
                }
            }
        }
        let mut out_shape = shape[..r - 2].to_vec();
        out_shape.extend([oh, ow]);
        let value = Tensor::new(&out_shape, out)?;
        self.push(value, Op::BoxMean { x, k })
    }

    pub(crate) fn box_mean_backward(
        &self,
        x: Var,
        k: usize,
        gout: &Tensor<T>,
        grads: &mut Grads<T>,
    ) {
        let shape = self.shape(x);
        let r = shape.len();
        let (h, w) = (shape[r - 2], shape[r - 1]);
        let (oh, ow) = (h + 1 - k, w + 1 - k);
        let planes: usize = shape[..r - 2].iter().product();
        let norm = T::one() / T::from_usize(k * k).expect("window fits scalar");
        let gv = gout.data();
        let mut gx = vec![T::zero(); planes * h * w];
        let mut tmp = vec![T::zero(); h * ow];
        let mut col = vec![T::zero(); h];
        for p in 0..planes {
            let g = &gv[p * oh * ow..(p + 1) * oh * ow];
            for j in 0..ow {
                window_sums_adjoint(|i| g[i * ow + j], h, k, &mut col);
                for y in 0..h {
                    tmp[y * ow + j] = col[y];
                }
            }
            let dst = &mut gx[p * h * w..(p + 1) * h * w];
            for y in 0..h {
                window_sums_adjoint(|i| tmp[y * ow + i], w, k, &mut dst[y * w..(y + 1) * w]);
            }
            for v in dst.iter_mut() {
                *v *= norm;
            }
        }
        grads.add(self, x, Tensor::new(shape, gx).expect("box_mean grad"));
    }

    /// Elementwise `mask ? a : b`. The mask is a constant: no gradient flows
    /// through the choice itself, only into the selected operand.
    pub fn select(&mut self, mask: &[bool], a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) || mask.len() != self.value(a).numel() {
            return Err(TensorError::shape(
                "select",
                format!(
                    "operands {} / {} with mask of {}",
                    fmt_shape(self.shape(a)),
                    fmt_shape(self.shape(b)),
                    mask.len()
                ),
            ));
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let out = mask
            .iter()
            .zip(va.iter().zip(vb))
            .map(|(&m, (&x, &y))| if m { x } else { y })
            .collect();
        let value = Tensor::new(self.shape(a), out)?;
        self.push(
            value,
            Op::Select {
                mask: mask.to_vec(),
                a,
                b,
            },
        )
    }

    pub(crate) fn select_backward(
        &self,
        mask: &[bool],
        a: Var,
        b: Var,
        gout: &Tensor<T>,
        grads: &mut Grads<T>,
    ) {
        let gv = gout.data();
        let pick = |take: bool| -> Vec<T> {
            mask.iter()
                .zip(gv)
                .map(|(&m, &g)| if m == take { g } else { T::zero() })
                .collect()
        };
        if self.requires_grad(a) {
            grads.add(self, a, Tensor::new(gout.shape(), pick(true)).expect("select grad"));
        }
        if self.requires_grad(b) {
            grads.add(self, b, Tensor::new(gout.shape(), pick(false)).expect("select grad"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_mean_matches_direct_windows() {
        let mut g = Graph::<f64>::new();
        let t = Tensor::from_fn(&[1, 5, 6], |i| ((i * 7) % 11) as f64);
        let x = g.constant(t.clone());
        let y = g.box_mean(x, 3).unwrap();
        assert_eq!(g.shape(y), &[1, 3, 4]);
        for i in 0..3 {
            for j in 0..4 {
                let mut s = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        s += t.at(&[0, i + a, j + b]);
                    }
                }
                assert!((g.value(y).at(&[0, i, j]) - s / 9.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn window_larger_than_image_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones(&[1, 1, 4, 4]));
        assert!(g.box_mean(x, 5).is_err());
    }

    #[test]
    fn select_routes_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::ones(&[3]));
        let b = g.param(Tensor::ones(&[3]));
        let s = g.select(&[true, false, true], a, b).unwrap();
        let l = g.sum(s).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[1.0, 0.0, 1.0]);
        assert_eq!(g.grad(b).unwrap().data(), &[0.0, 1.0, 0.0]);
    }
}
