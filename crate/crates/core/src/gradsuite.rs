//! Named central-difference checks over every tape op and the composite
//! blocks built from them, shared by the test suite and the command line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgfuse_autodiff::{grad_check, GradCheckOptions, GradCheckReport, Graph, ResampleMode, Tensor, TensorError, Var};

use crate::config::FusionConfig;
use crate::discriminator::PerceptualNet;
use crate::error::{FuseError, Result};
use crate::generator::Generator;
use crate::loss::{loss_var_ssim, SsimConstants, WindowSpec};

pub const OP_TOLERANCE: f64 = 1e-4;
pub const COMPOSITE_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Depth {
    Op,
    Composite,
}

#[derive(Clone, Copy)]
pub struct GradCase {
    pub name: &'static str,
    pub depth: Depth,
    check: fn() -> std::result::Result<GradCheckReport, TensorError>,
}

#[derive(Clone, Debug)]
pub struct GradOutcome {
    pub name: &'static str,
    pub depth: Depth,
    pub report: GradCheckReport,
    pub tolerance: f64,
}

impl GradOutcome {
    pub fn passed(&self) -> bool {
        self.report.max_rel_err < self.tolerance
    }
}

impl GradCase {
    pub fn tolerance(&self) -> f64 {
        match self.depth {
            Depth::Op => OP_TOLERANCE,
            Depth::Composite => COMPOSITE_TOLERANCE,
        }
    }

    pub fn run(&self) -> Result<GradOutcome> {
        let report = (self.check)().map_err(FuseError::from)?;
        Ok(GradOutcome {
            name: self.name,
            depth: self.depth,
            report,
            tolerance: self.tolerance(),
        })
    }
}

fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn signed(shape: &[usize], seed: u64) -> Tensor<f64> {
    random(shape, seed, -1.0, 1.0)
}

/// Weighted sum so every output coordinate carries its own sensitivity.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> std::result::Result<Var, TensorError> {
    let w = g.constant(signed(&g.shape(y).to_vec(), seed));
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn tensor_err(e: FuseError) -> TensorError {
    match e {
        FuseError::Tensor(t) => t,
        e => TensorError::Usage(e.to_string()),
    }
}

fn unary(
    x: Tensor<f64>,
    f: impl Fn(&mut Graph<f64>, Var) -> std::result::Result<Var, TensorError>,
) -> std::result::Result<GradCheckReport, TensorError> {
    grad_check(
        |g, v| {
            let y = f(g, v[0])?;
            project(g, y, 7)
        },
        &[x],
        GradCheckOptions::default(),
    )
}

fn binary(
    a: Tensor<f64>,
    b: Tensor<f64>,
    f: impl Fn(&mut Graph<f64>, Var, Var) -> std::result::Result<Var, TensorError>,
) -> std::result::Result<GradCheckReport, TensorError> {
    grad_check(
        |g, v| {
            let y = f(g, v[0], v[1])?;
            project(g, y, 8)
        },
        &[a, b],
        GradCheckOptions::default(),
    )
}

fn tiny() -> FusionConfig {
    FusionConfig {
        cnn_layers: 2,
        channels: 8,
        spatial_embed: 16,
        channel_embed: 16,
        encoder_layers: 1,
        heads: 2,
        ..FusionConfig::default()
    }
}

/// Checks `f(params, x)` over the input and every generator parameter.
fn generator_block(
    cfg: FusionConfig,
    x: Tensor<f64>,
    max_coords: usize,
    f: impl Fn(&Generator<f64>, &mut Graph<f64>, &[Var], Var) -> std::result::Result<Var, TensorError>,
) -> std::result::Result<GradCheckReport, TensorError> {
    let gen = Generator::<f64>::new(cfg, 5).map_err(tensor_err)?;
    let mut inputs = vec![x];
    inputs.extend(gen.params.tensors().iter().cloned());
    grad_check(
        |g, v| {
            let y = f(&gen, g, &v[1..], v[0])?;
            project(g, y, 9)
        },
        &inputs,
        GradCheckOptions {
            max_coords,
            ..GradCheckOptions::default()
        },
    )
}

pub fn gradient_suite() -> Vec<GradCase> {
    use Depth::{Composite, Op};
    let case = |name, depth, check| GradCase { name, depth, check };
    vec![
        case("matmul", Op, || binary(signed(&[2, 3, 4], 1), signed(&[4, 5], 2), |g, a, b| g.matmul(a, b))),
        case("conv2d", Op, || {
            grad_check(
                |g, v| {
                    let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
                    project(g, y, 3)
                },
                &[signed(&[1, 2, 5, 5], 4), signed(&[3, 2, 3, 3], 5), signed(&[3], 6)],
                GradCheckOptions::default(),
            )
        }),
        case("conv2d_stride2", Op, || {
            binary(signed(&[1, 2, 6, 5], 10), signed(&[3, 2, 3, 3], 11), |g, a, b| g.conv2d(a, b, None, 2, 1))
        }),
        case("relu", Op, || unary(signed(&[3, 4], 12), |g, x| g.relu(x))),
        case("gelu", Op, || unary(signed(&[3, 4], 13), |g, x| g.gelu(x))),
        case("sigmoid", Op, || unary(signed(&[3, 4], 14), |g, x| g.sigmoid(x))),
        case("abs", Op, || unary(signed(&[3, 4], 15), |g, x| g.abs(x))),
        case("square", Op, || unary(signed(&[3, 4], 16), |g, x| g.square(x))),
        case("scale", Op, || unary(signed(&[3, 4], 17), |g, x| g.scale(x, -2.5))),
        case("add_scalar", Op, || unary(signed(&[3, 4], 18), |g, x| g.add_scalar(x, 0.7))),
        case("neg", Op, || unary(signed(&[3, 4], 19), |g, x| g.neg(x))),
        case("add", Op, || binary(signed(&[2, 3, 4], 20), signed(&[1, 4], 21), |g, a, b| g.add(a, b))),
        case("sub", Op, || binary(signed(&[2, 3, 4], 22), signed(&[2, 1, 1], 23), |g, a, b| g.sub(a, b))),
        case("mul", Op, || binary(signed(&[2, 3, 4], 24), signed(&[3, 1], 25), |g, a, b| g.mul(a, b))),
        case("div", Op, || {
            binary(signed(&[3, 4], 26), random(&[3, 4], 27, 0.5, 1.5), |g, a, b| g.div(a, b))
        }),
        case("reshape", Op, || unary(signed(&[2, 6], 28), |g, x| g.reshape(x, &[3, 4]))),
        case("permute", Op, || unary(signed(&[2, 3, 4], 29), |g, x| g.permute(x, &[2, 0, 1]))),
        case("transpose_last", Op, || unary(signed(&[2, 3, 4], 30), |g, x| g.transpose_last(x))),
        case("concat", Op, || {
            binary(signed(&[1, 1, 2, 3], 31), signed(&[1, 2, 2, 3], 32), |g, a, b| g.concat(&[a, b], 1))
        }),
        case("patchify", Op, || unary(signed(&[1, 2, 4, 6], 33), |g, x| g.patchify(x, 2))),
        case("unpatchify", Op, || unary(signed(&[1, 6, 8], 34), |g, x| g.unpatchify(x, 2, 2, 3, 2))),
        case("softmax", Op, || unary(signed(&[3, 5], 35), |g, x| g.softmax(x, 1))),
        case("layer_norm", Op, || {
            grad_check(
                |g, v| {
                    let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
                    project(g, y, 36)
                },
                &[signed(&[2, 4, 8], 37), signed(&[8], 38), signed(&[8], 39)],
                GradCheckOptions::default(),
            )
        }),
        case("sum_axis", Op, || unary(signed(&[2, 3, 4], 40), |g, x| g.sum_axis(x, 1))),
        case("mean_axis", Op, || unary(signed(&[2, 3, 4], 41), |g, x| g.mean_axis(x, 2))),
        case("mean", Op, || unary(signed(&[2, 3], 42), |g, x| g.mean(x))),
        case("box_mean", Op, || unary(signed(&[1, 1, 9, 7], 43), |g, x| g.box_mean(x, 3))),
        case("select", Op, || {
            let mask: Vec<bool> = (0..12).map(|i| i % 3 != 1).collect();
            binary(signed(&[3, 4], 44), signed(&[3, 4], 45), move |g, a, b| g.select(&mask, a, b))
        }),
        case("max_pool2", Op, || unary(signed(&[1, 2, 4, 6], 46), |g, x| g.max_pool2(x))),
        case("resample_bilinear", Op, || {
            unary(signed(&[1, 2, 3, 4], 47), |g, x| g.resample(x, 7, 9, ResampleMode::Bilinear))
        }),
        case("resample_nearest", Op, || {
            unary(signed(&[1, 1, 3, 3], 48), |g, x| g.resample(x, 6, 6, ResampleMode::Nearest))
        }),
        case("resample_avgpool", Op, || {
            unary(signed(&[1, 1, 6, 4], 49), |g, x| g.resample(x, 3, 2, ResampleMode::AvgPool))
        }),
        case("pad_edge", Op, || unary(signed(&[1, 1, 3, 2], 50), |g, x| g.pad_edge(x, 5, 4))),
        case("subsample", Op, || unary(signed(&[1, 2, 5, 6], 51), |g, x| g.subsample(x, 2))),
        case("res_block", Composite, || {
            generator_block(tiny(), signed(&[1, 8, 8, 8], 60), 256, |gen, g, p, x| {
                let block = gen.layout.blocks.last().expect("stem has blocks");
                block.forward(g, p, x)
            })
        }),
        case("channel_transformer", Composite, || {
            generator_block(tiny(), signed(&[1, 8, 16, 16], 61), 256, |gen, g, p, x| {
                gen.channel_transformer(g, p, x)
            })
        }),
        case("spatial_transformer", Composite, || {
            let cfg = FusionConfig {
                use_position_embedding: true,
                ..tiny()
            };
            generator_block(cfg, signed(&[1, 8, 8, 8], 62), 256, |gen, g, p, x| {
                gen.spatial_transformer(g, p, x)
            })
        }),
        case("generator", Composite, || {
            let vis = random(&[1, 1, 16, 16], 64, 0.0, 1.0);
            generator_block(tiny(), random(&[1, 1, 16, 16], 63, 0.0, 1.0), 32, move |gen, g, p, ir| {
                let vis = g.constant(vis.clone());
                gen.forward(g, p, ir, vis).map(|o| o.fused).map_err(tensor_err)
            })
        }),
        case("loss_var_ssim", Composite, || {
            // Seeds chosen so no window sits near a variance tie.
            let x = random(&[1, 1, 20, 20], 11, 0.0, 1.0);
            let y = random(&[1, 1, 20, 20], 12, 0.0, 1.0).map(|v| 0.3 + 0.4 * v);
            grad_check(
                |g, v| {
                    let (a, b) = (g.constant(x.clone()), g.constant(y.clone()));
                    loss_var_ssim(g, a, b, v[0], WindowSpec::default(), SsimConstants::default())
                        .map_err(tensor_err)
                },
                &[random(&[1, 1, 20, 20], 13, 0.0, 1.0)],
                GradCheckOptions::default(),
            )
        }),
        case("feature_distance", Composite, || {
            let net = PerceptualNet::<f64>::new(5);
            grad_check(
                |g, v| {
                    let p = net.params.bind(g, false);
                    net.loss(g, &p, v[0], v[1], 1)
                },
                &[random(&[1, 1, 8, 8], 65, 0.0, 1.0), random(&[1, 1, 8, 8], 66, 0.0, 1.0)],
                GradCheckOptions {
                    max_coords: 64,
                    ..GradCheckOptions::default()
                },
            )
        }),
    ]
}
