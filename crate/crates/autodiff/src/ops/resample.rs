use crate::error::{Result, TensorError};
use crate::graph::{Grads, Graph, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::{fmt_shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ResampleMode {
    Nearest,
    /// Half-pixel centers (`align_corners = false`).
    Bilinear,
    /// Block average; extents must divide evenly.
    AvgPool,
}

/// One-axis linear resampling map: `out[o] = Σ w · in[i]` over `taps[o]`.
#[derive(Clone, Debug)]
pub(crate) struct Taps<T> {
    in_len: usize,
    taps: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> Taps<T> {
    fn out_len(&self) -> usize {
        self.taps.len()
    }

    fn build(mode: ResampleMode, in_len: usize, out_len: usize) -> Option<Self> {
        let taps = match mode {
            ResampleMode::Nearest => (0..out_len)
                .map(|o| vec![(((o * in_len) / out_len).min(in_len - 1), T::one())])
                .collect(),
            ResampleMode::Bilinear => {
                let scale = in_len as f64 / out_len as f64;
                (0..out_len)
                    .map(|o| {
                        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                        let i0 = (src.floor() as usize).min(in_len - 1);
                        let i1 = (i0 + 1).min(in_len - 1);
                        let l = src - i0 as f64;
                        vec![
                            (i0, T::from_f64_lossy(1.0 - l)),
                            (i1, T::from_f64_lossy(l)),
                        ]
                    })
                    .collect()
            }
            ResampleMode::AvgPool => {
                if in_len % out_len != 0 {
                    return None;
                }
                let f = in_len / out_len;
                let w = T::one() / T::from_usize(f).expect("factor fits scalar");
                (0..out_len)
                    .map(|o| (0..f).map(|j| (o * f + j, w)).collect())
                    .collect()
            }
        };
        Some(Taps { in_len, taps })
    }

    /// Keeps every `step`-th element starting at 0.
    fn stride(in_len: usize, step: usize) -> Self {
        Taps {
            in_len,
            taps: (0..in_len.div_ceil(step))
                .map(|o| vec![(o * step, T::one())])
                .collect(),
        }
    }

    /// Replicates the last element to extend `in_len` to `out_len`.
    fn edge(in_len: usize, out_len: usize) -> Self {
        Taps {
            in_len,
            taps: (0..out_len)
                .map(|o| vec![(o.min(in_len - 1), T::one())])
                .collect(),
        }
    }
}

/// Applies row and column maps to every trailing `[h, w]` plane.
fn apply<T: Scalar>(x: &[T], planes: usize, rows: &Taps<T>, cols: &Taps<T>) -> Vec<T> {
    let (h, w) = (rows.in_len, cols.in_len);
    let (oh, ow) = (rows.out_len(), cols.out_len());
    let mut out = vec![T::zero(); planes * oh * ow];
    let mut tmp = vec![T::zero(); h * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for (ox, taps) in cols.taps.iter().enumerate() {
                tmp[y * ow + ox] = taps.iter().map(|&(i, wt)| wt * src[y * w + i]).sum();
            }
        }
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, taps) in rows.taps.iter().enumerate() {
            for &(i, wt) in taps {
                for ox in 0..ow {
                    dst[oy * ow + ox] += wt * tmp[i * ow + ox];
                }
            }
        }
    }
    out
}

fn apply_adjoint<T: Scalar>(g: &[T], planes: usize, rows: &Taps<T>, cols: &Taps<T>) -> Vec<T> {
    let (h, w) = (rows.in_len, cols.in_len);
    let (oh, ow) = (rows.out_len(), cols.out_len());
    let mut out = vec![T::zero(); planes * h * w];
    let mut tmp = vec![T::zero(); h * ow];
    for p in 0..planes {
        let src = &g[p * oh * ow..(p + 1) * oh * ow];
        tmp.fill(T::zero());
        for (oy, taps) in rows.taps.iter().enumerate() {
            for &(i, wt) in taps {
                for ox in 0..ow {
                    tmp[i * ow + ox] += wt * src[oy * ow + ox];
                }
            }
        }
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for (ox, taps) in cols.taps.iter().enumerate() {
                let gv = tmp[y * ow + ox];
                for &(i, wt) in taps {
                    dst[y * w + i] += wt * gv;
                }
            }
        }
    }
    out
}

impl<T: Scalar> Graph<T> {
    fn separable(
        &mut self,
        x: Var,
        rows: Taps<T>,
        cols: Taps<T>,
        name: &'static str,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let r = shape.len();
        let planes: usize = shape[..r - 2].iter().product();
        let out = apply(self.value(x).data(), planes, &rows, &cols);
        let mut out_shape = shape[..r - 2].to_vec();
        out_shape.extend([rows.out_len(), cols.out_len()]);
        let value = Tensor::new(&out_shape, out)?;
        self.push(
            value,
            Op::Separable {
                x,
                rows,
                cols,
                name,
            },
        )
    }

    pub(crate) fn separable_backward(
        &self,
        x: Var,
        rows: &Taps<T>,
        cols: &Taps<T>,
        gout: &Tensor<T>,
        grads: &mut Grads<T>,
    ) {
        let shape = self.shape(x);
        let planes: usize = shape[..shape.len() - 2].iter().product();
        let gx = apply_adjoint(gout.data(), planes, rows, cols);
        grads.add(self, x, Tensor::new(shape, gx).expect("resample grad"));
    }

    fn check_spatial(&self, op: &'static str, x: Var) -> Result<(usize, usize)> {
        let s = self.shape(x);
        if s.len() < 2 {
            return Err(TensorError::shape(
                op,
                format!("needs trailing [h, w] axes, got {}", fmt_shape(s)),
            ));
        }
        Ok((s[s.len() - 2], s[s.len() - 1]))
    }

    /// Resizes the trailing two axes to `out_h × out_w`.
    pub fn resample(
        &mut self,
        x: Var,
        out_h: usize,
        out_w: usize,
        mode: ResampleMode,
    ) -> Result<Var> {
        let (h, w) = self.check_spatial("resample", x)?;
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::shape("resample", "zero output extent"));
        }
        let (Some(rows), Some(cols)) = (
            Taps::build(mode, h, out_h),
            Taps::build(mode, w, out_w),
        ) else {
            return Err(TensorError::shape(
                "resample",
                format!(
                    "avgpool needs {}x{} divisible by {out_h}x{out_w}",
                    h, w
                ),
            ));
        };
        self.separable(x, rows, cols, "resample")
    }

    /// Extends the trailing two axes to `out_h × out_w` by repeating the last
    /// row and column.
    pub fn pad_edge(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (h, w) = self.check_spatial("pad_edge", x)?;
        if out_h < h || out_w < w {
            return Err(TensorError::shape(
                "pad_edge",
                format!("cannot pad {h}x{w} down to {out_h}x{out_w}"),
            ));
        }
        self.separable(x, Taps::edge(h, out_h), Taps::edge(w, out_w), "pad_edge")
    }

    /// Keeps every `step`-th row and column of the trailing two axes.
    pub fn subsample(&mut self, x: Var, step: usize) -> Result<Var> {
        let (h, w) = self.check_spatial("subsample", x)?;
        if step == 0 {
            return Err(TensorError::shape("subsample", "zero step"));
        }
        self.separable(x, Taps::stride(h, step), Taps::stride(w, step), "subsample")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Tensor<f64> {
        Tensor::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn subsample_keeps_origin_aligned_grid() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[1, 5, 5], |i| i as f64));
        let y = g.subsample(x, 2).unwrap();
        assert_eq!(g.value(y).data(), &[0., 2., 4., 10., 12., 14., 20., 22., 24.]);
    }

    #[test]
    fn nearest_doubling_replicates_blocks() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(grid());
        let y = g.resample(x, 4, 4, ResampleMode::Nearest).unwrap();
        let expect = [
            1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.,
        ];
        assert_eq!(g.value(y).data(), &expect);
    }

    #[test]
    fn avgpool_to_single_pixel() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(grid());
        let y = g.resample(x, 1, 1, ResampleMode::AvgPool).unwrap();
        assert_eq!(g.value(y).data(), &[2.5]);
        assert!(g.resample(x, 3, 3, ResampleMode::AvgPool).is_err());
    }

    #[test]
    fn bilinear_half_pixel_convention() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[1, 2], &[0.0, 1.0]).unwrap());
        let y = g.resample(x, 1, 4, ResampleMode::Bilinear).unwrap();
        // src coords -0.25(clamped 0), 0.25, 0.75, 1.25(clamped to last)
        assert_eq!(g.value(y).data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn bilinear_same_size_is_identity() {
        let mut g = Graph::<f64>::new();
        let t = Tensor::from_fn(&[2, 3, 5], |i| (i as f64).sin());
        let x = g.constant(t.clone());
        let y = g.resample(x, 3, 5, ResampleMode::Bilinear).unwrap();
        assert_eq!(g.value(y), &t);
    }

    #[test]
    fn edge_padding_repeats_border() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(grid());
        let y = g.pad_edge(x, 3, 3).unwrap();
        assert_eq!(
            g.value(y).data(),
            &[1., 2., 2., 3., 4., 4., 3., 4., 4.]
        );
    }
}
