//! Layers over a [`ParamStore`](crate::params::ParamStore) bound to a graph.
//!
//! Each layer records parameter indices at declaration time; `forward`
//! looks them up in the slice of bound vars.

use tgfuse_autodiff::{Graph, Scalar, Var};

use crate::params::{Init, Layout};

pub type TResult<V> = tgfuse_autodiff::Result<V>;

/// `x · W + b` on the last axis, `W` stored as `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    w: usize,
    b: usize,
}

impl Linear {
    pub fn new(l: &mut Layout, name: &str, inp: usize, out: usize) -> Self {
        l.scope(name, |l| Linear {
            w: l.add("weight", &[inp, out], Init::Kaiming { fan_in: inp }),
            b: l.add("bias", &[out], Init::Zeros),
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> TResult<Var> {
        let y = g.matmul(x, p[self.w])?;
        g.add(y, p[self.b])
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    w: usize,
    b: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn new(
        l: &mut Layout,
        name: &str,
        inp: usize,
        out: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        Self::with_init(l, name, inp, out, k, stride, Init::Kaiming { fan_in: inp * k * k })
    }

    pub fn with_init(
        l: &mut Layout,
        name: &str,
        inp: usize,
        out: usize,
        k: usize,
        stride: usize,
        init: Init,
    ) -> Self {
        l.scope(name, |l| Conv {
            w: l.add("weight", &[out, inp, k, k], init),
            b: l.add("bias", &[out], Init::Zeros),
            stride,
            pad: k / 2,
        })
    }

    pub fn weight_index(&self) -> usize {
        self.w
    }

    pub fn bias_index(&self) -> usize {
        self.b
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> TResult<Var> {
        g.conv2d(x, p[self.w], Some(p[self.b]), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    gamma: usize,
    beta: usize,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(l: &mut Layout, name: &str, dim: usize) -> Self {
        l.scope(name, |l| LayerNorm {
            gamma: l.add("gamma", &[dim], Init::Ones),
            beta: l.add("beta", &[dim], Init::Zeros),
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> TResult<Var> {
        g.layer_norm(x, p[self.gamma], p[self.beta], T::from_f64_lossy(Self::EPS))
    }
}

/// Multi-head self-attention over `[b, tokens, embed]`.
#[derive(Clone, Debug)]
pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(l: &mut Layout, name: &str, embed: usize, heads: usize) -> Self {
        l.scope(name, |l| Attention {
            q: Linear::new(l, "q", embed, embed),
            k: Linear::new(l, "k", embed, embed),
            v: Linear::new(l, "v", embed, embed),
            out: Linear::new(l, "out", embed, embed),
            heads,
        })
    }

    fn split<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> TResult<Var> {
        let s = g.shape(x).to_vec();
        let (b, n, e) = (s[0], s[1], s[2]);
        let x = g.reshape(x, &[b, n, self.heads, e / self.heads])?;
        g.permute(x, &[0, 2, 1, 3])
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> TResult<Var> {
        let s = g.shape(x).to_vec();
        let (b, n, e) = (s[0], s[1], s[2]);
        let q = self.q.forward(g, p, x)?;
        let q = self.split(g, q)?;
        let k = self.k.forward(g, p, x)?;
        let k = self.split(g, k)?;
        let v = self.v.forward(g, p, x)?;
        let v = self.split(g, v)?;
        let kt = g.transpose_last(k)?;
        let scores = g.matmul(q, kt)?;
        let head_dim = (e / self.heads) as f64;
        let scores = g.scale(scores, T::from_f64_lossy(1.0 / head_dim.sqrt()))?;
        let attn = g.softmax(scores, 3)?;
        let ctx = g.matmul(attn, v)?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[b, n, e])?;
        self.out.forward(g, p, ctx)
    }
}

/// Pre-norm block: `x + attn(norm(x))`, then `x + mlp(norm(x))`.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    norm1: LayerNorm,
    attn: Attention,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl EncoderBlock {
    pub fn new(l: &mut Layout, name: &str, embed: usize, heads: usize, hidden: usize) -> Self {
        l.scope(name, |l| EncoderBlock {
            norm1: LayerNorm::new(l, "norm1", embed),
            attn: Attention::new(l, "attn", embed, heads),
            norm2: LayerNorm::new(l, "norm2", embed),
            fc1: Linear::new(l, "fc1", embed, hidden),
            fc2: Linear::new(l, "fc2", hidden, embed),
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> TResult<Var> {
        let h = self.norm1.forward(g, p, x)?;
        let h = self.attn.forward(g, p, h)?;
        let x = g.add(x, h)?;
        let h = self.norm2.forward(g, p, x)?;
        let h = self.fc1.forward(g, p, h)?;
        let h = g.gelu(h)?;
        let h = self.fc2.forward(g, p, h)?;
        g.add(x, h)
    }
}

/// Stack of encoder blocks followed by a final norm.
#[derive(Clone, Debug)]
pub struct Encoder {
    blocks: Vec<EncoderBlock>,
    norm: LayerNorm,
}

impl Encoder {
    pub fn new(
        l: &mut Layout,
        name: &str,
        depth: usize,
        embed: usize,
        heads: usize,
        hidden: usize,
    ) -> Self {
        l.scope(name, |l| Encoder {
            blocks: (0..depth)
                .map(|i| EncoderBlock::new(l, &format!("block{i}"), embed, heads, hidden))
                .collect(),
            norm: LayerNorm::new(l, "norm", embed),
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], mut x: Var) -> TResult<Var> {
        for b in &self.blocks {
            x = b.forward(g, p, x)?;
        }
        self.norm.forward(g, p, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use tgfuse_autodiff::{grad_check, GradCheckOptions, Tensor};

    #[test]
    fn linear_matches_hand_product() {
        let mut l = Layout::default();
        let lin = Linear::new(&mut l, "lin", 2, 1);
        let mut store = ParamStore::<f64>::init(l.into_specs(), 0);
        store.tensors_mut()[0] = Tensor::from_f64(&[2, 1], &[3.0, 4.0]).unwrap();
        store.tensors_mut()[1] = Tensor::from_f64(&[1], &[0.5]).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::from_f64(&[1, 2], &[1.0, 2.0]).unwrap());
        let y = lin.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.value(y).data(), &[11.5]);
    }

    #[test]
    fn attention_is_token_permutation_equivariant() {
        let mut l = Layout::default();
        let attn = Attention::new(&mut l, "attn", 8, 2);
        let store = ParamStore::<f64>::init(l.into_specs(), 5);
        let x = Tensor::from_fn(&[1, 3, 8], |i| ((i * 7) % 11) as f64 / 11.0 - 0.5);
        let perm = [2usize, 0, 1];
        let xp = Tensor::from_fn(&[1, 3, 8], |i| x.data()[perm[i / 8] * 8 + i % 8]);
        let run = |t: &Tensor<f64>| {
            let mut g = Graph::new();
            let p = store.bind(&mut g, false);
            let x = g.constant(t.clone());
            let y = attn.forward(&mut g, &p, x).unwrap();
            g.value(y).clone()
        };
        let (y, yp) = (run(&x), run(&xp));
        for i in 0..24 {
            assert!((yp.data()[i] - y.data()[perm[i / 8] * 8 + i % 8]).abs() < 1e-12);
        }
    }

    #[test]
    fn encoder_block_gradients() {
        let mut l = Layout::default();
        let block = EncoderBlock::new(&mut l, "b", 8, 2, 16);
        let store = ParamStore::<f64>::init(l.into_specs(), 9);
        let mut inputs = vec![Tensor::from_fn(&[2, 3, 8], |i| ((i * 13) % 17) as f64 / 17.0)];
        inputs.extend(store.tensors().iter().cloned());
        let report = grad_check(
            |g, v| {
                let y = block.forward(g, &v[1..], v[0])?;
                let w = g.constant(Tensor::from_fn(&[2, 3, 8], |i| (i as f64 * 0.37).sin()));
                let y = g.mul(y, w)?;
                g.sum(y)
            },
            &inputs,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }
}
