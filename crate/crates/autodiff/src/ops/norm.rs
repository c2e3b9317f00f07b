use crate::error::{Result, TensorError};
use crate::graph::{Grads, Graph, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::{fmt_shape, Tensor};

/// (outer, axis length, inner) decomposition around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Graph<T> {
    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::shape(
                "softmax",
                format!("axis {axis} out of range for {}", fmt_shape(&shape)),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).fold(T::neg_infinity(), |m, j| m.max(xv[at(j)]));
                let mut total = T::zero();
                for j in 0..len {
                    let e = (xv[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] /= total;
                }
            }
        }
        let value = Tensor::new(&shape, out)?;
        self.push(value, Op::Softmax { x, axis })
    }

    pub(crate) fn softmax_backward(
        &self,
        x: Var,
        axis: usize,
        out: &Tensor<T>,
        gout: &Tensor<T>,
        grads: &mut Grads<T>,
    ) {
        let (outer, len, inner) = split_axis(out.shape(), axis);
        let (y, gy) = (out.data(), gout.data());
        let mut gx = vec![T::zero(); y.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let dot: T = (0..len).map(|j| gy[at(j)] * y[at(j)]).sum();
                for j in 0..len {
                    gx[at(j)] = y[at(j)] * (gy[at(j)] - dot);
                }
            }
        }
        grads.add(self, x, Tensor::new(out.shape(), gx).expect("softmax grad"));
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let e = *shape.last().ok_or_else(|| TensorError::shape("layer_norm", "rank-0 input"))?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [e] {
                return Err(TensorError::shape(
                    "layer_norm",
                    format!(
                        "{name} {} does not match embedding width of {}",
                        fmt_shape(self.shape(v)),
                        fmt_shape(&shape)
                    ),
                ));
            }
        }
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xv.len() / e;
        let n = T::from_usize(e).expect("width fits scalar");
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv[r * e..(r + 1) * e];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..e {
                let h = (row[j] - mean) * rs;
                xhat[r * e + j] = h;
                out[r * e + j] = h * gv[j] + bv[j];
            }
        }
        let value = Tensor::new(&shape, out)?;
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn layer_norm_backward(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: &[T],
        rstd: &[T],
        gout: &Tensor<T>,
        grads: &mut Grads<T>,
    ) {
        let e = self.shape(gamma)[0];
        let rows = rstd.len();
        let gv = self.value(gamma).data();
        let gy = gout.data();
        let n = T::from_usize(e).expect("width fits scalar");
        if self.requires_grad(gamma) || self.requires_grad(beta) {
            let mut gg = vec![T::zero(); e];
            let mut gb = vec![T::zero(); e];
            for r in 0..rows {
                for j in 0..e {
                    gg[j] += gy[r * e + j] * xhat[r * e + j];
                    gb[j] += gy[r * e + j];
                }
            }
            grads.add(self, gamma, Tensor::new(&[e], gg).expect("gamma grad"));
            grads.add(self, beta, Tensor::new(&[e], gb).expect("beta grad"));
        }
        if self.requires_grad(x) {
            let mut gx = vec![T::zero(); gy.len()];
            for r in 0..rows {
                let base = r * e;
                let mut mean_d = T::zero();
                let mut mean_dh = T::zero();
                for j in 0..e {
                    let d = gy[base + j] * gv[j];
                    mean_d += d;
                    mean_dh += d * xhat[base + j];
                }
                mean_d /= n;
                mean_dh /= n;
                for j in 0..e {
                    let d = gy[base + j] * gv[j];
                    gx[base + j] = rstd[r] * (d - mean_d - xhat[base + j] * mean_dh);
                }
            }
            grads.add(self, x, Tensor::new(self.shape(x), gx).expect("x grad"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_closed_forms() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[2, 2], &[0.0, 3f64.ln(), 5.0, 5.0]).unwrap());
        let y = g.softmax(x, 1).unwrap();
        let v = g.value(y).data();
        assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] - 0.75).abs() < 1e-15);
        assert_eq!(&v[2..], &[0.5, 0.5]);
    }

    #[test]
    fn softmax_leading_axis() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[3, 2], |i| i as f64 * 0.7));
        let y = g.softmax(x, 0).unwrap();
        let v = g.value(y);
        for col in 0..2 {
            let s: f64 = (0..3).map(|r| v.at(&[r, col])).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_constant_token_maps_to_beta() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[1, 4], 7.0));
        let gamma = g.constant(Tensor::ones(&[4]));
        let beta = g.constant(Tensor::zeros(&[4]));
        let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[0.0; 4]);
    }
}
