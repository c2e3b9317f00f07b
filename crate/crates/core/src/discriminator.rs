//! Feature-level discriminators: a VGG-16 style convolutional network cut
//! after its fourth pooling stage, compared through mean absolute feature
//! distance.

use tgfuse_autodiff::{Graph, Scalar, TensorError, Var};

use crate::error::{FuseError, Result};
use crate::nn::{Conv, TResult};
use crate::params::{Layout, ParamStore};

pub const STAGE_WIDTHS: [usize; 4] = [64, 128, 256, 512];
pub const STAGE_DEPTHS: [usize; 4] = [2, 2, 3, 3];

/// Which stage each modality's discriminator compares at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiscriminatorSpec {
    pub ir_stage: usize,
    pub vis_stage: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        DiscriminatorSpec {
            ir_stage: 4,
            vis_stage: 1,
        }
    }
}

impl DiscriminatorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.ir_stage) || !(1..=4).contains(&self.vis_stage) {
            return Err(FuseError::input("discriminator stages must be in 1..=4"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PerceptualNet<T> {
    stages: Vec<Vec<Conv>>,
    pub params: ParamStore<T>,
}

impl<T: Scalar> PerceptualNet<T> {
    /// Seeded random initialization; see [`crate::checkpoint`] for loading
    /// converted weights.
    pub fn new(seed: u64) -> Self {
        let mut l = Layout::default();
        let mut inp = 3;
        let stages = STAGE_WIDTHS
            .iter()
            .zip(STAGE_DEPTHS)
            .enumerate()
            .map(|(s, (&width, depth))| {
                (0..depth)
                    .map(|i| {
                        let conv = Conv::new(&mut l, &format!("stage{}.conv{i}", s + 1), inp, width, 3, 1);
                        inp = width;
                        conv
                    })
                    .collect()
            })
            .collect();
        PerceptualNet {
            stages,
            params: ParamStore::init(l.into_specs(), seed),
        }
    }

    /// Features after the pool ending `stage` (1-based), from a one-channel
    /// image replicated to three input channels.
    pub fn extract(&self, g: &mut Graph<T>, p: &[Var], img: Var, stage: usize) -> TResult<Var> {
        let s = g.shape(img).to_vec();
        if !(1..=4).contains(&stage) {
            return Err(TensorError::Usage(format!("stage {stage} outside 1..=4")));
        }
        let m = 1 << stage;
        if s.len() != 4 || s[1] != 1 || s[2] % m != 0 || s[3] % m != 0 {
            return Err(TensorError::shape(
                "extract_stage_features",
                format!("expected [b, 1, h, w] with h, w divisible by {m}, got {s:?}"),
            ));
        }
        let mut x = g.concat(&[img, img, img], 1)?;
        for convs in &self.stages[..stage] {
            for conv in convs {
                x = conv.forward(g, p, x)?;
                x = g.relu(x)?;
            }
            x = g.max_pool2(x)?;
        }
        Ok(x)
    }

    /// Distance between stage features of `fused` and `target`.
    pub fn loss(
        &self,
        g: &mut Graph<T>,
        p: &[Var],
        fused: Var,
        target: Var,
        stage: usize,
    ) -> TResult<Var> {
        let a = self.extract(g, p, fused, stage)?;
        let b = self.extract(g, p, target, stage)?;
        feature_distance(g, a, b)
    }

    /// Number of parameters used up to and including `stage`.
    pub fn stage_param_count(&self, stage: usize) -> usize {
        let used: usize = STAGE_DEPTHS[..stage].iter().sum();
        self.params.tensors()[..2 * used].iter().map(|t| t.numel()).sum()
    }
}

/// Mean absolute difference.
pub fn feature_distance<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> TResult<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(TensorError::shape(
            "feature_distance",
            format!("{:?} vs {:?}", g.shape(a), g.shape(b)),
        ));
    }
    let d = g.sub(a, b)?;
    let d = g.abs(d)?;
    g.mean(d)
}
