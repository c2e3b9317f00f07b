use crate::error::{Result, TensorError};
use crate::graph::{Grads, Graph, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::{fmt_shape, strides_of, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum UnaryKind<T> {
    Relu,
    Gelu,
    Sigmoid,
    Abs,
    Square,
    Scale(T),
    AddScalar(T),
}

impl<T> UnaryKind<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            UnaryKind::Relu => "relu",
            UnaryKind::Gelu => "gelu",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Abs => "abs",
            UnaryKind::Square => "square",
            UnaryKind::Scale(_) => "scale",
            UnaryKind::AddScalar(_) => "add_scalar",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryKind {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numpy-style broadcast of two shapes, aligned on the trailing axis.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` seen through `out_shape`, zero on broadcast axes.
pub(crate) fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let own = strides_of(shape);
    (0..rank)
        .map(|i| {
            if i + shape.len() < rank {
                0
            } else {
                let j = i + shape.len() - rank;
                if shape[j] == 1 && out_shape[i] != 1 {
                    0
                } else {
                    own[j]
                }
            }
        })
        .collect()
}

/// Calls `f(out_index, a_offset, b_offset)` over every output element.
pub(crate) fn broadcast_walk(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out_shape.len();
    let total: usize = out_shape.iter().product();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out_shape[rank - 1];
    let (ia_step, ib_step) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank];
    let mut o = 0;
    while o < total {
        let mut oa: usize = 0;
        let mut ob: usize = 0;
        for d in 0..rank - 1 {
            oa += idx[d] * sa[d];
            ob += idx[d] * sb[d];
        }
        for j in 0..inner {
            f(o + j, oa + j * ia_step, ob + j * ib_step);
        }
        o += inner;
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

impl<T: Scalar> Graph<T> {
    fn unary(&mut self, x: Var, kind: UnaryKind<T>) -> Result<Var> {
        let f: Box<dyn Fn(T) -> T> = match kind {
            UnaryKind::Relu => Box::new(|v: T| v.max(T::zero())),
            UnaryKind::Gelu => Box::new(gelu),
            UnaryKind::Sigmoid => Box::new(sigmoid),
            UnaryKind::Abs => Box::new(|v: T| v.abs()),
            UnaryKind::Square => Box::new(|v: T| v * v),
            UnaryKind::Scale(s) => Box::new(move |v: T| v * s),
            UnaryKind::AddScalar(s) => Box::new(move |v: T| v + s),
        };
        let value = self.value(x).map(f);
        self.push(value, Op::Unary { kind, x })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Relu)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Gelu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Sigmoid)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Abs)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Square)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        self.unary(x, UnaryKind::Scale(s))
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Result<Var> {
        self.unary(x, UnaryKind::AddScalar(s))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Scale(-T::one()))
    }

    pub(crate) fn unary_backward(
        &self,
        kind: &UnaryKind<T>,
        x: Var,
        out: &Tensor<T>,
        gout: &Tensor<T>,
        grads: &mut Grads<T>,
    ) {
        let xs = self.value(x).data();
        let ys = out.data();
        let gs = gout.data();
        let dx: Vec<T> = match *kind {
            UnaryKind::Relu => xs
                .iter()
                .zip(gs)
                .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                .collect(),
            UnaryKind::Gelu => xs.iter().zip(gs).map(|(&v, &g)| g * gelu_grad(v)).collect(),
            UnaryKind::Sigmoid => ys
                .iter()
                .zip(gs)
                .map(|(&y, &g)| g * y * (T::one() - y))
                .collect(),
            UnaryKind::Abs => xs
                .iter()
                .zip(gs)
                .map(|(&v, &g)| {
                    if v > T::zero() {
                        g
                    } else if v < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                })
                .collect(),
            UnaryKind::Square => xs
                .iter()
                .zip(gs)
                .map(|(&v, &g)| g * (v + v))
                .collect(),
            UnaryKind::Scale(s) => gs.iter().map(|&g| g * s).collect(),
            UnaryKind::AddScalar(_) => gs.to_vec(),
        };
        let t = Tensor::new(self.shape(x), dx).expect("unary grad shape");
        grads.add(self, x, t);
    }

    fn binary(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| {
            TensorError::shape(
                kind.name(),
                format!("cannot broadcast {} with {}", fmt_shape(&sa), fmt_shape(&sb)),
            )
        })?;
        let f = |x: T, y: T| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let data = if sa == sb {
            va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut data = vec![T::zero(); out_shape.iter().product()];
            let stra = broadcast_strides(&sa, &out_shape);
            let strb = broadcast_strides(&sb, &out_shape);
            broadcast_walk(&out_shape, &stra, &strb, |o, ia, ib| {
                data[o] = f(va[ia], vb[ib]);
            });
            data
        };
        let value = Tensor::new(&out_shape, data)?;
        self.push(value, Op::Binary { kind, a, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Div)
    }

    pub(crate) fn binary_backward(
        &self,
        kind: BinaryKind,
        a: Var,
        b: Var,
        gout: &Tensor<T>,
        grads: &mut Grads<T>,
    ) {
        let (ta, tb) = (self.value(a), self.value(b));
        let out_shape = gout.shape();
        let stra = broadcast_strides(ta.shape(), out_shape);
        let strb = broadcast_strides(tb.shape(), out_shape);
        let (va, vb, gs) = (ta.data(), tb.data(), gout.data());
        if self.requires_grad(a) {
            let mut ga = vec![T::zero(); ta.numel()];
            broadcast_walk(out_shape, &stra, &strb, |o, ia, ib| {
                ga[ia] += match kind {
                    BinaryKind::Add | BinaryKind::Sub => gs[o],
                    BinaryKind::Mul => gs[o] * vb[ib],
                    BinaryKind::Div => gs[o] / vb[ib],
                };
            });
            grads.add(self, a, Tensor::new(ta.shape(), ga).expect("grad shape"));
        }
        if self.requires_grad(b) {
            let mut gb = vec![T::zero(); tb.numel()];
            broadcast_walk(out_shape, &stra, &strb, |o, ia, ib| {
                gb[ib] += match kind {
                    BinaryKind::Add => gs[o],
                    BinaryKind::Sub => -gs[o],
                    BinaryKind::Mul => gs[o] * va[ia],
                    BinaryKind::Div => -gs[o] * va[ia] / (vb[ib] * vb[ib]),
                };
            });
            grads.add(self, b, Tensor::new(tb.shape(), gb).expect("grad shape"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 1, 1], &[2, 3, 4]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[4], &[2, 3, 4]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[3, 2]), None);
    }

    #[test]
    fn activations_at_reference_points() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[3], &[0.0, -3.0, 3.0]).unwrap());
        let s = g.sigmoid(x).unwrap();
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(s).data()[0], 0.5);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 3.0]);
        // sigmoid stays strictly inside (0, 1) for large magnitudes at f64
        let big = g.constant(Tensor::from_f64(&[2], &[-30.0, 30.0]).unwrap());
        let sb = g.sigmoid(big).unwrap();
        assert!(g.value(sb).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn channel_broadcast_multiply() {
        let mut g = Graph::<f64>::new();
        let w = g.constant(Tensor::from_f64(&[2, 1, 1], &[2.0, 3.0]).unwrap());
        let x = g.constant(Tensor::ones(&[2, 2, 2]));
        let y = g.mul(w, x).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn incompatible_broadcast_is_a_dimension_error() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::ones(&[2, 3]));
        let b = g.constant(Tensor::ones(&[3, 2]));
        let err = g.add(a, b).unwrap_err();
        assert!(matches!(err, TensorError::Shape { .. }));
        assert!(err.to_string().contains("[2x3]") && err.to_string().contains("[3x2]"));
    }
}
