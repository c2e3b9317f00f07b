use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{fmt_shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn for_shapes<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|s| (Tensor::zeros(s), Tensor::zeros(s)))
            .unzip();
        AdamState { m, v, step: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub state: AdamState<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new<'a>(config: AdamConfig, shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        Adam {
            config,
            state: AdamState::for_shapes(shapes),
        }
    }

    /// One bias-corrected update. Parameters whose gradient is `None`
    /// are left untouched, moments included.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Option<Tensor<T>>]) -> Result<()> {
        let st = &mut self.state;
        if params.len() != st.m.len() || grads.len() != st.m.len() {
            return Err(TensorError::shape(
                "adam",
                format!(
                    "{} params / {} grads for {} moment buffers",
                    params.len(),
                    grads.len(),
                    st.m.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let bad = p.shape() != st.m[i].shape()
                || g.as_ref().is_some_and(|g| g.shape() != p.shape());
            if bad {
                return Err(TensorError::shape(
                    "adam",
                    format!(
                        "parameter {i}: {} vs moment {}",
                        fmt_shape(p.shape()),
                        fmt_shape(st.m[i].shape())
                    ),
                ));
            }
        }
        st.step += 1;
        let c = self.config;
        let t = st.step as i32;
        let lr_t = c.lr / (1.0 - c.beta1.powi(t));
        let v_corr = 1.0 / (1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let (lr_t, v_corr, eps) = (
            T::from_f64_lossy(lr_t),
            T::from_f64_lossy(v_corr),
            T::from_f64_lossy(c.eps),
        );
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let m = st.m[i].data_mut();
            let v = st.v[i].data_mut();
            for (((pj, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mj = b1 * *mj + one_b1 * gj;
                *vj = b2 * *vj + one_b2 * gj * gj;
                *pj -= lr_t * *mj / ((*vj * v_corr).sqrt() + eps);
            }
        }
        Ok(())
    }
}
