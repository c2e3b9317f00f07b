use crate::error::{Result, TensorError};
use crate::graph::{Grads, Graph, Op, Var};
use crate::ops::elementwise::{broadcast_shape, broadcast_strides, broadcast_walk};
use crate::scalar::Scalar;
use crate::tensor::{fmt_shape, Tensor};

struct MatmulPlan {
    m: usize,
    k: usize,
    n: usize,
    batch: Vec<usize>,
    stride_a: Vec<usize>,
    stride_b: Vec<usize>,
}

fn plan(sa: &[usize], sb: &[usize]) -> Result<MatmulPlan> {
    let mismatch = || {
        TensorError::shape(
            "matmul",
            format!("incompatible operands {} and {}", fmt_shape(sa), fmt_shape(sb)),
        )
    };
    if sa.len() < 2 || sb.len() < 2 {
        return Err(mismatch());
    }
    let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
    let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
    if k != k2 {
        return Err(mismatch());
    }
    let ba = &sa[..sa.len() - 2];
    let bb = &sb[..sb.len() - 2];
    let batch = broadcast_shape(ba, bb).ok_or_else(mismatch)?;
    // strides in units of whole matrices
    let stride_a = broadcast_strides(ba, &batch);
    let stride_b = broadcast_strides(bb, &batch);
    Ok(MatmulPlan {
        m,
        k,
        n,
        batch,
        stride_a,
        stride_b,
    })
}

impl<T: Scalar> Graph<T> {
    /// Batched matrix product `[.., m, k] · [.., k, n]` with broadcast batch axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = plan(self.shape(a), self.shape(b))?;
        let (m, k, n) = (p.m, p.k, p.n);
        let mut out_shape = p.batch.clone();
        out_shape.extend([m, n]);
        let mut out = vec![T::zero(); out_shape.iter().product()];
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        broadcast_walk(&p.batch, &p.stride_a, &p.stride_b, |o, ia, ib| {
            let a_mat = &va[ia * m * k..(ia + 1) * m * k];
            let b_mat = &vb[ib * k * n..(ib + 1) * k * n];
            let c_mat = &mut out[o * m * n..(o + 1) * m * n];
            T::gemm(
                m, k, n, T::one(), a_mat, k as isize, 1, b_mat, n as isize, 1, T::zero(), c_mat,
                n as isize, 1,
            );
        });
        let value = Tensor::new(&out_shape, out)?;
        self.push(value, Op::Matmul { a, b })
    }

    pub(crate) fn matmul_backward(&self, a: Var, b: Var, gout: &Tensor<T>, grads: &mut Grads<T>) {
        let (ta, tb) = (self.value(a), self.value(b));
        let p = plan(ta.shape(), tb.shape()).expect("plan validated in forward");
        let (m, k, n) = (p.m, p.k, p.n);
        let gs = gout.data();
        if self.requires_grad(a) {
            let mut ga = vec![T::zero(); ta.numel()];
            let vb = tb.data();
            broadcast_walk(&p.batch, &p.stride_a, &p.stride_b, |o, ia, ib| {
                // dA += dC · Bᵀ
                T::gemm(
                    m,
                    n,
                    k,
                    T::one(),
                    &gs[o * m * n..(o + 1) * m * n],
                    n as isize,
                    1,
                    &vb[ib * k * n..(ib + 1) * k * n],
                    1,
                    n as isize,
                    T::one(),
                    &mut ga[ia * m * k..(ia + 1) * m * k],
                    k as isize,
                    1,
                );
            });
            grads.add(self, a, Tensor::new(ta.shape(), ga).expect("grad shape"));
        }
        if self.requires_grad(b) {
            let mut gb = vec![T::zero(); tb.numel()];
            let va = ta.data();
            broadcast_walk(&p.batch, &p.stride_a, &p.stride_b, |o, ia, ib| {
                // dB += Aᵀ · dC
                T::gemm(
                    k,
                    m,
                    n,
                    T::one(),
                    &va[ia * m * k..(ia + 1) * m * k],
                    1,
                    k as isize,
                    &gs[o * m * n..(o + 1) * m * n],
                    n as isize,
                    1,
                    T::one(),
                    &mut gb[ib * k * n..(ib + 1) * k * n],
                    n as isize,
                    1,
                );
            });
            grads.add(self, b, Tensor::new(tb.shape(), gb).expect("grad shape"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_product() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_f64(&[1, 2], &[1.0, 2.0]).unwrap());
        let b = g.constant(Tensor::from_f64(&[2, 1], &[3.0, 4.0]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.0]);
    }

    #[test]
    fn identity_leaves_matrix_unchanged() {
        let mut g = Graph::<f64>::new();
        let eye = g.constant(Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let m = Tensor::from_fn(&[3, 3], |i| (i * i) as f64 - 2.5);
        let mv = g.constant(m.clone());
        let c = g.matmul(eye, mv).unwrap();
        assert_eq!(g.value(c), &m);
    }

    #[test]
    fn batch_broadcast_against_shared_weight() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[2, 3, 4], |i| i as f64));
        let w = g.constant(Tensor::from_fn(&[4, 5], |i| (i % 3) as f64));
        let y = g.matmul(x, w).unwrap();
        assert_eq!(g.shape(y), &[2, 3, 5]);
        // second batch row 0 = [12,13,14,15] · w[:,0] = 12*0 + 13*2 + 14*1 + 15*0
        assert_eq!(g.value(y).at(&[1, 0, 0]), 13.0 * 2.0 + 14.0);
    }

    #[test]
    fn inner_mismatch_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::ones(&[2, 3]));
        let b = g.constant(Tensor::ones(&[4, 2]));
        let msg = g.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2x3]") && msg.contains("[4x2]"), "{msg}");
    }
}
