//! Windowed SSIM, the variance-gated reference selection and the generator
//! objective built from them.

use tgfuse_autodiff::{Graph, Scalar, Tensor, TensorError, Var};

use crate::discriminator::{DiscriminatorSpec, PerceptualNet};
use crate::error::{FuseError, Result};
use crate::nn::TResult;

/// SSIM stabilizers for a dynamic range of 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimConstants {
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimConstants {
    fn default() -> Self {
        SsimConstants::for_range(1.0)
    }
}

impl SsimConstants {
    pub fn for_range(l: f64) -> Self {
        SsimConstants {
            c1: (0.01 * l) * (0.01 * l),
            c2: (0.03 * l) * (0.03 * l),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub size: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec { size: 11, stride: 1 }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 3 || self.size % 2 == 0 || self.stride == 0 {
            return Err(FuseError::input(format!("invalid window {self:?}")));
        }
        Ok(())
    }

    /// Window origins along an axis of length `n`.
    pub fn positions(&self, n: usize) -> usize {
        if n < self.size {
            0
        } else {
            (n - self.size) / self.stride + 1
        }
    }
}

/// SSIM from first and second moments.
fn ssim_from_moments<T: Scalar>(
    g: &mut Graph<T>,
    mx: Var,
    my: Var,
    exx: Var,
    eyy: Var,
    exy: Var,
    k: SsimConstants,
) -> TResult<Var> {
    let (c1, c2) = (T::from_f64_lossy(k.c1), T::from_f64_lossy(k.c2));
    let mx2 = g.square(mx)?;
    let my2 = g.square(my)?;
    let mxy = g.mul(mx, my)?;
    let vx = g.sub(exx, mx2)?;
    let vy = g.sub(eyy, my2)?;
    let cov = g.sub(exy, mxy)?;

    let l_num = g.scale(mxy, T::from_f64_lossy(2.0))?;
    let l_num = g.add_scalar(l_num, c1)?;
    let c_num = g.scale(cov, T::from_f64_lossy(2.0))?;
    let c_num = g.add_scalar(c_num, c2)?;
    let num = g.mul(l_num, c_num)?;

    let l_den = g.add(mx2, my2)?;
    let l_den = g.add_scalar(l_den, c1)?;
    let c_den = g.add(vx, vy)?;
    let c_den = g.add_scalar(c_den, c2)?;
    let den = g.mul(l_den, c_den)?;
    g.div(num, den)
}

/// SSIM of two equally shaped blocks, statistics over every element.
pub fn ssim<T: Scalar>(g: &mut Graph<T>, x: Var, y: Var, k: SsimConstants) -> TResult<Var> {
    if g.shape(x) != g.shape(y) {
        return Err(TensorError::shape("ssim", format!("{:?} vs {:?}", g.shape(x), g.shape(y))));
    }
    let mx = g.mean(x)?;
    let my = g.mean(y)?;
    let xx = g.square(x)?;
    let yy = g.square(y)?;
    let xy = g.mul(x, y)?;
    let exx = g.mean(xx)?;
    let eyy = g.mean(yy)?;
    let exy = g.mean(xy)?;
    ssim_from_moments(g, mx, my, exx, eyy, exy, k)
}

/// Per-window SSIM over the trailing two axes with uniform window weights,
/// one value per window position.
pub fn ssim_map<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    y: Var,
    window: WindowSpec,
    k: SsimConstants,
) -> TResult<Var> {
    if g.shape(x) != g.shape(y) {
        return Err(TensorError::shape(
            "ssim_map",
            format!("{:?} vs {:?}", g.shape(x), g.shape(y)),
        ));
    }
    let n = window.size;
    let xx = g.square(x)?;
    let yy = g.square(y)?;
    let xy = g.mul(x, y)?;
    let mut stats = [x, y, xx, yy, xy];
    for s in &mut stats {
        *s = g.box_mean(*s, n)?;
        if window.stride > 1 {
            *s = g.subsample(*s, window.stride)?;
        }
    }
    let [mx, my, exx, eyy, exy] = stats;
    ssim_from_moments(g, mx, my, exx, eyy, exy, k)
}

/// Population variance.
pub fn block_variance(block: &[f64]) -> f64 {
    let n = block.len() as f64;
    let mean = block.iter().sum::<f64>() / n;
    block.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// SSIM against whichever of `ix`, `iy` has the larger variance; ties pick
/// `iy`. The comparison is a constant gate: no gradient flows through it.
pub fn var_ssim<T: Scalar>(
    g: &mut Graph<T>,
    ix: Var,
    iy: Var,
    i_f: Var,
    k: SsimConstants,
) -> TResult<Var> {
    let vx = block_variance(&g.value(ix).to_f64_vec());
    let vy = block_variance(&g.value(iy).to_f64_vec());
    let reference = if vx > vy { ix } else { iy };
    ssim(g, reference, i_f, k)
}

/// Per-window gate: `true` where the window of `ix` has strictly larger
/// variance than the same window of `iy`. Variances are computed directly
/// (two-pass) in 64-bit.
pub fn gate_mask<T: Scalar>(ix: &Tensor<T>, iy: &Tensor<T>, window: WindowSpec) -> Vec<bool> {
    let s = ix.shape();
    let r = s.len();
    let (h, w) = (s[r - 2], s[r - 1]);
    let planes: usize = s[..r - 2].iter().product();
    let (oh, ow) = (window.positions(h), window.positions(w));
    let n = window.size;
    let (x, y) = (ix.to_f64_vec(), iy.to_f64_vec());
    let mut bx = vec![0.0; n * n];
    let mut by = vec![0.0; n * n];
    let mut mask = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let (r0, c0) = (i * window.stride, j * window.stride);
                for a in 0..n {
                    let row = base + (r0 + a) * w + c0;
                    bx[a * n..(a + 1) * n].copy_from_slice(&x[row..row + n]);
                    by[a * n..(a + 1) * n].copy_from_slice(&y[row..row + n]);
                }
                mask.push(block_variance(&bx) > block_variance(&by));
            }
        }
    }
    mask
}

/// `1 − mean` of the gated SSIM over every window position.
pub fn loss_var_ssim<T: Scalar>(
    g: &mut Graph<T>,
    ix: Var,
    iy: Var,
    i_f: Var,
    window: WindowSpec,
    k: SsimConstants,
) -> Result<Var> {
    window.validate()?;
    let s = g.shape(ix).to_vec();
    if s != g.shape(iy) || s != g.shape(i_f) {
        return Err(FuseError::input(format!(
            "loss inputs differ in shape: {s:?}, {:?}, {:?}",
            g.shape(iy),
            g.shape(i_f)
        )));
    }
    let r = s.len();
    if r < 2 || s[r - 2] < window.size || s[r - 1] < window.size {
        return Err(FuseError::input(format!(
            "images {s:?} smaller than the {0}x{0} window",
            window.size
        )));
    }
    let mask = gate_mask(g.value(ix), g.value(iy), window);
    let sx = ssim_map(g, ix, i_f, window, k)?;
    let sy = ssim_map(g, iy, i_f, window, k)?;
    let chosen = g.select(&mask, sx, sy)?;
    let m = g.mean(chosen)?;
    let neg = g.neg(m)?;
    Ok(g.add_scalar(neg, T::one())?)
}

/// Discriminators and their bound parameters, used as frozen critics.
pub struct Critics<'a, T> {
    pub ir: &'a PerceptualNet<T>,
    pub ir_params: &'a [Var],
    pub vis: &'a PerceptualNet<T>,
    pub vis_params: &'a [Var],
    pub spec: DiscriminatorSpec,
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub var_ssim: Var,
    pub ir: Option<Var>,
    pub vis: Option<Var>,
}

/// `L_var_ssim + λ_ir·d_ir + λ_vis·d_vis`. Without critics (or with both
/// weights zero) the adversarial terms are not built at all.
#[allow(clippy::too_many_arguments)]
pub fn generator_total_loss<T: Scalar>(
    g: &mut Graph<T>,
    ix: Var,
    iy: Var,
    i_f: Var,
    critics: Option<&Critics<'_, T>>,
    lambda_ir: f64,
    lambda_vis: f64,
) -> Result<LossTerms> {
    if !(lambda_ir >= 0.0 && lambda_vis >= 0.0) {
        return Err(FuseError::input("loss weights must be non-negative"));
    }
    let var_ssim = loss_var_ssim(g, ix, iy, i_f, WindowSpec::default(), SsimConstants::default())?;
    let mut terms = LossTerms {
        total: var_ssim,
        var_ssim,
        ir: None,
        vis: None,
    };
    let Some(c) = critics else {
        return Ok(terms);
    };
    if lambda_ir > 0.0 {
        let d = c.ir.loss(g, c.ir_params, i_f, ix, c.spec.ir_stage)?;
        let wd = g.scale(d, T::from_f64_lossy(lambda_ir))?;
        terms.total = g.add(terms.total, wd)?;
        terms.ir = Some(d);
    }
    if lambda_vis > 0.0 {
        let d = c.vis.loss(g, c.vis_params, i_f, iy, c.spec.vis_stage)?;
        let wd = g.scale(d, T::from_f64_lossy(lambda_vis))?;
        terms.total = g.add(terms.total, wd)?;
        terms.vis = Some(d);
    }
    Ok(terms)
}
