//! Central-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub eps: f64,
    /// Inputs with more coordinates than this are checked on a seeded
    /// random subset of exactly this many coordinates.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            max_coords: 256,
            seed: 0x6772_6164,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
    /// `(input index, flat coordinate)` of the largest error.
    pub worst: Option<(usize, usize)>,
}

fn evaluate<F>(builder: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = builder(&mut g, &vars)?;
    Ok(g.value(out).sum())
}

/// Compares the analytic gradient of `builder`'s scalar output against
/// central differences for every input.
///
/// The error of coordinate `i` is `|a_i - n_i| / max(|a_i|, |n_i|, floor)`
/// where `floor = 1e-3 · max_j |a_j|` over all coordinates of all inputs.
/// The floor keeps near-zero entries from turning cancellation noise into
/// huge relative errors.
pub fn grad_check<F>(
    builder: F,
    inputs: &[Tensor<f64>],
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = builder(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let scale = analytic.iter().fold(0.0f64, |m, t| m.max(t.max_abs()));
    let floor = (1e-3 * scale).max(1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        coords_checked: 0,
        worst: None,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = if n <= opts.max_coords {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let orig = input.data()[i];
            probe[k].data_mut()[i] = orig + opts.eps;
            let up = evaluate(&builder, &probe)?;
            probe[k].data_mut()[i] = orig - opts.eps;
            let down = evaluate(&builder, &probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * opts.eps);
            let a = analytic[k].data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.coords_checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((k, i));
            }
        }
    }
    Ok(report)
}
