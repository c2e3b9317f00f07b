use crate::error::{Result, TensorError};
use crate::graph::{Grads, Graph, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::{fmt_shape, strides_of, Tensor};

fn permute_data<T: Scalar>(src: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let shape = src.shape();
    let in_strides = strides_of(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let gather: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = out_shape.len();
    let data = src.data();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let inner = out_shape[rank - 1];
    let inner_stride = gather[rank - 1];
    while out.len() < data.len() {
        let base: usize = (0..rank - 1).map(|d| idx[d] * gather[d]).sum();
        out.extend((0..inner).map(|j| data[base + j * inner_stride]));
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::new(&out_shape, out).expect("permutation preserves size")
}

impl<T: Scalar> Graph<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push(value, Op::Reshape { x })
    }

    pub(crate) fn reshape_backward(&self, x: Var, gout: &Tensor<T>, grads: &mut Grads<T>) {
        let g = gout.clone().reshape(self.shape(x)).expect("reshape grad");
        grads.add(self, x, g);
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let rank = self.shape(x).len();
        let mut seen = vec![false; rank];
        let valid = perm.len() == rank
            && perm.iter().all(|&p| p < rank && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(TensorError::shape(
                "permute",
                format!(
                    "{perm:?} is not a permutation of the axes of {}",
                    fmt_shape(self.shape(x))
                ),
            ));
        }
        let value = permute_data(self.value(x), perm);
        self.push(
            value,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
        )
    }

    pub(crate) fn permute_backward(
        &self,
        x: Var,
        perm: &[usize],
        gout: &Tensor<T>,
        grads: &mut Grads<T>,
    ) {
        let mut inverse = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        grads.add(self, x, permute_data(gout, &inverse));
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&mut self, x: Var) -> Result<Var> {
        let rank = self.shape(x).len();
        if rank < 2 {
            return Err(TensorError::shape("transpose", "rank below 2"));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(x, &perm)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*xs.first().ok_or_else(|| TensorError::shape("concat", "no inputs"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(TensorError::shape("concat", format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::shape(
                    "concat",
                    format!(
                        "{} does not stack with {} along axis {axis}",
                        fmt_shape(s),
                        fmt_shape(&first)
                    ),
                ));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::new(&shape, out)?;
        self.push(
            value,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
        )
    }

    pub(crate) fn concat_backward(
        &self,
        xs: &[Var],
        axis: usize,
        gout: &Tensor<T>,
        grads: &mut Grads<T>,
    ) {
        let shape = gout.shape();
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let row = shape[axis] * inner;
        let mut offset = 0;
        for &v in xs {
            let len = self.shape(v)[axis] * inner;
            if self.requires_grad(v) {
                let mut part = Vec::with_capacity(outer * len);
                for o in 0..outer {
                    let start = o * row + offset;
                    part.extend_from_slice(&gout.data()[start..start + len]);
                }
                grads.add(self, v, Tensor::new(self.shape(v), part).expect("concat grad"));
            }
            offset += len;
        }
    }

    /// `[b, c, h, w]` → `[b, (h/p)(w/p), c·p·p]`, tokens in row-major tile order.
    pub fn patchify(&mut self, x: Var, p: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || p == 0 || s[2] % p != 0 || s[3] % p != 0 {
            return Err(TensorError::shape(
                "patchify",
                format!("{} is not tiled by {p}x{p} patches", fmt_shape(&s)),
            ));
        }
        let (b, c, hp, wp) = (s[0], s[1], s[2] / p, s[3] / p);
        let t = self.reshape(x, &[b, c, hp, p, wp, p])?;
        let t = self.permute(t, &[0, 2, 4, 1, 3, 5])?;
        self.reshape(t, &[b, hp * wp, c * p * p])
    }

    /// Inverse of [`patchify`](Self::patchify) for a `hp × wp` tile grid.
    pub fn unpatchify(&mut self, x: Var, channels: usize, hp: usize, wp: usize, p: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s[1] != hp * wp || s[2] != channels * p * p {
            return Err(TensorError::shape(
                "unpatchify",
                format!(
                    "{} does not hold {hp}x{wp} tiles of {channels}x{p}x{p}",
                    fmt_shape(&s)
                ),
            ));
        }
        let b = s[0];
        let t = self.reshape(x, &[b, hp, wp, channels, p, p])?;
        let t = self.permute(t, &[0, 3, 1, 4, 2, 5])?;
        self.reshape(t, &[b, channels, hp * p, wp * p])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patchify_round_trip() {
        let mut g = Graph::<f64>::new();
        let t = Tensor::from_fn(&[1, 1, 4, 4], |i| i as f64);
        let x = g.constant(t.clone());
        let p = g.patchify(x, 2).unwrap();
        assert_eq!(g.shape(p), &[1, 4, 4]);
        // first token is the top-left 2x2 tile
        assert_eq!(&g.value(p).data()[..4], &[0.0, 1.0, 4.0, 5.0]);
        let back = g.unpatchify(p, 1, 2, 2, 2).unwrap();
        assert_eq!(g.value(back), &t);
    }

    #[test]
    fn permute_inverse_is_bitwise_identity() {
        let mut g = Graph::<f32>::new();
        let t = Tensor::from_fn(&[2, 3, 4, 5], |i| (i as f32 * 0.37).cos());
        let x = g.constant(t.clone());
        let y = g.permute(x, &[2, 0, 3, 1]).unwrap();
        assert_eq!(g.shape(y), &[4, 2, 5, 3]);
        let z = g.permute(y, &[1, 3, 0, 2]).unwrap();
        assert_eq!(g.value(z), &t);
    }

    #[test]
    fn reshape_rejects_count_change() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones(&[2, 3]));
        assert!(g.reshape(x, &[4, 2]).is_err());
        assert!(g.permute(x, &[0, 0]).is_err());
    }

    #[test]
    fn concat_channels() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let b = g.constant(Tensor::full(&[1, 2, 2, 2], 2.0));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[1, 3, 2, 2]);
        assert_eq!(g.value(c).at(&[0, 0, 1, 1]), 1.0);
        assert_eq!(g.value(c).at(&[0, 2, 0, 0]), 2.0);
    }
}
