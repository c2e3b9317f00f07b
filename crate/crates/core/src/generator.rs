//! The fusion generator: residual CNN stem, channel/spatial transformer
//! fusion module and multi-scale reconstruction.

use tgfuse_autodiff::{Graph, ResampleMode, Scalar, Tensor, TensorError, Var};

use crate::config::{FusionConfig, TransformerOrder};
use crate::error::{FuseError, Result};
use crate::nn::{Conv, Encoder, Linear, TResult};
use crate::params::{Init, Layout, ParamSpec, ParamStore};

/// Side of the learnable grid the spatial position embedding is stored on;
/// it is resampled to whatever token grid the input produces.
pub const PE_GRID: usize = 8;
const PE_INIT: f64 = 0.02;

/// `conv3×3(stride) – relu – conv3×3 + shortcut`.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: Conv,
    pub conv2: Conv,
    /// 1×1 strided projection, present only when the block downsamples.
    pub proj: Option<Conv>,
    pub stride: usize,
}

impl ResBlock {
    fn new(l: &mut Layout, name: &str, channels: usize, stride: usize) -> Self {
        l.scope(name, |l| ResBlock {
            conv1: Conv::new(l, "conv1", channels, channels, 3, stride),
            conv2: Conv::new(l, "conv2", channels, channels, 3, 1),
            proj: (stride != 1).then(|| Conv::new(l, "proj", channels, channels, 1, stride)),
            stride,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> TResult<Var> {
        let s = g.shape(x).to_vec();
        if self.stride > 1 && (s[2] % self.stride != 0 || s[3] % self.stride != 0) {
            return Err(TensorError::shape(
                "res_block",
                format!("{}x{} not divisible by stride {}", s[2], s[3], self.stride),
            ));
        }
        let h = self.conv1.forward(g, p, x)?;
        let h = g.relu(h)?;
        let h = self.conv2.forward(g, p, h)?;
        let shortcut = match &self.proj {
            Some(proj) => proj.forward(g, p, x)?,
            None => x,
        };
        g.add(h, shortcut)
    }
}

/// One token per feature channel; outputs a sigmoid weight per channel.
#[derive(Clone, Debug)]
pub struct ChannelTransformer {
    proj: Linear,
    pos: Option<usize>,
    encoder: Encoder,
    head: Linear,
    grid: usize,
}

impl ChannelTransformer {
    fn new(l: &mut Layout, cfg: &FusionConfig) -> Self {
        let e = cfg.channel_embed;
        let grid = cfg.channel_patch;
        l.scope("channel", |l| ChannelTransformer {
            proj: Linear::new(l, "proj", grid * grid, e),
            pos: cfg
                .use_position_embedding
                .then(|| l.add("pos", &[cfg.channels, e], Init::Uniform(PE_INIT))),
            encoder: Encoder::new(l, "encoder", cfg.encoder_layers, e, cfg.heads, cfg.mlp_hidden(e)),
            head: Linear::new(l, "head", e, 1),
            grid,
        })
    }

    /// `[b, c, h, w]` → `[b, c, 1, 1]` in (0, 1).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], f: Var) -> TResult<Var> {
        let s = g.shape(f).to_vec();
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let k = self.grid;
        let (ph, pw) = (h.max(k).next_multiple_of(k), w.max(k).next_multiple_of(k));
        let x = if (ph, pw) != (h, w) { g.pad_edge(f, ph, pw)? } else { f };
        let x = g.resample(x, k, k, ResampleMode::AvgPool)?;
        let x = g.reshape(x, &[b, c, k * k])?;
        let mut t = self.proj.forward(g, p, x)?;
        if let Some(pos) = self.pos {
            t = g.add(t, p[pos])?;
        }
        let t = self.encoder.forward(g, p, t)?;
        let y = self.head.forward(g, p, t)?;
        let y = g.reshape(y, &[b, c, 1, 1])?;
        g.sigmoid(y)
    }
}

/// One token per `patch × patch` tile; outputs a one-channel map in (0, 1).
#[derive(Clone, Debug)]
pub struct SpatialTransformer {
    embed: Linear,
    pos: Option<usize>,
    encoder: Encoder,
    head: Linear,
    patch: usize,
}

impl SpatialTransformer {
    fn new(l: &mut Layout, cfg: &FusionConfig) -> Self {
        let e = cfg.spatial_embed;
        let patch = cfg.spatial_patch;
        l.scope("spatial", |l| SpatialTransformer {
            embed: Linear::new(l, "embed", cfg.channels * patch * patch, e),
            pos: cfg
                .use_position_embedding
                .then(|| l.add("pos", &[1, e, PE_GRID, PE_GRID], Init::Uniform(PE_INIT))),
            encoder: Encoder::new(l, "encoder", cfg.encoder_layers, e, cfg.heads, cfg.mlp_hidden(e)),
            head: Linear::new(l, "head", e, patch * patch),
            patch,
        })
    }

    /// `[b, c, h, w]` → `[b, 1, h, w]` in (0, 1).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], f: Var) -> TResult<Var> {
        let s = g.shape(f).to_vec();
        let (h, w) = (s[2], s[3]);
        let k = self.patch;
        if h % k != 0 || w % k != 0 {
            return Err(TensorError::shape(
                "spatial_transformer",
                format!("{h}x{w} features not divisible by patch {k}"),
            ));
        }
        let (hp, wp) = (h / k, w / k);
        let tokens = g.patchify(f, k)?;
        let mut t = self.embed.forward(g, p, tokens)?;
        if let Some(pos) = self.pos {
            let e = g.shape(p[pos])[1];
            let pe = g.resample(p[pos], hp, wp, ResampleMode::Bilinear)?;
            let pe = g.reshape(pe, &[1, e, hp * wp])?;
            let pe = g.transpose_last(pe)?;
            t = g.add(t, pe)?;
        }
        let t = self.encoder.forward(g, p, t)?;
        let y = self.head.forward(g, p, t)?;
        let y = g.unpatchify(y, 1, hp, wp, k)?;
        g.sigmoid(y)
    }
}

#[derive(Clone, Debug)]
pub struct GeneratorLayout {
    pub input: Conv,
    pub blocks: Vec<ResBlock>,
    pub channel: Option<ChannelTransformer>,
    pub spatial: Option<SpatialTransformer>,
    /// Per-scale 1×1 projections to one channel.
    pub heads: Vec<Conv>,
}

impl GeneratorLayout {
    pub fn build(cfg: &FusionConfig) -> (Self, Vec<ParamSpec>) {
        let mut l = Layout::default();
        let c = cfg.channels;
        let input = Conv::new(&mut l, "stem.input", 2, c, 3, 1);
        let blocks = (0..cfg.cnn_layers)
            .map(|i| ResBlock::new(&mut l, &format!("stem.block{i}"), c, if i == 0 { 1 } else { 2 }))
            .collect();
        let order = cfg.transformer_order;
        let channel = order.uses_channel().then(|| ChannelTransformer::new(&mut l, cfg));
        let spatial = order.uses_spatial().then(|| SpatialTransformer::new(&mut l, cfg));
        let heads = (0..cfg.cnn_layers)
            .map(|i| Conv::with_init(&mut l, &format!("out.scale{i}"), c, 1, 1, 1, head_init(cfg)))
            .collect();
        let layout = GeneratorLayout {
            input,
            blocks,
            channel,
            spatial,
            heads,
        };
        (layout, l.into_specs())
    }
}

/// Unit-variance fan-in scaling divided by the number of scales, so the
/// summed head outputs start inside the sigmoid's linear range. The stem has
/// no normalization and its feature variance grows with depth; Kaiming-scaled
/// heads saturate the output before training starts.
fn head_init(cfg: &FusionConfig) -> Init {
    Init::Uniform((3.0 / cfg.channels as f64).sqrt() / cfg.cnn_layers as f64)
}

/// Parameter count of the generator built from `cfg`, without allocating it.
pub fn param_count(cfg: &FusionConfig) -> usize {
    GeneratorLayout::build(cfg).1.iter().map(ParamSpec::numel).sum()
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct GeneratorOutput {
    pub fused: Var,
    /// Relation map at the coarsest scale, `[b, 1, h_L, w_L]`.
    pub map: Var,
    pub features: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Generator<T> {
    pub config: FusionConfig,
    pub layout: GeneratorLayout,
    pub params: ParamStore<T>,
}

fn staged<V>(stage: &str, r: TResult<V>) -> Result<V> {
    r.map_err(|e| FuseError::from(e).at_stage(stage))
}

impl<T: Scalar> Generator<T> {
    pub fn new(config: FusionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = GeneratorLayout::build(&config);
        Ok(Generator {
            config,
            layout,
            params: ParamStore::init(specs, seed),
        })
    }

    pub fn cast<U: Scalar>(&self) -> Generator<U> {
        Generator {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.cast(),
        }
    }

    /// Features `F1..FL`; the first at full resolution, each later one half
    /// the previous.
    pub fn cnn_stem(&self, g: &mut Graph<T>, p: &[Var], pair: Var) -> TResult<Vec<Var>> {
        let s = g.shape(pair).to_vec();
        let m = self.config.stem_multiple();
        if s.len() != 4 || s[1] != 2 || s[2] % m != 0 || s[3] % m != 0 {
            return Err(TensorError::shape(
                "cnn_stem",
                format!("expected [b, 2, h, w] with h, w divisible by {m}, got {s:?}"),
            ));
        }
        let x = self.layout.input.forward(g, p, pair)?;
        let mut x = g.relu(x)?;
        let mut feats = Vec::with_capacity(self.layout.blocks.len());
        for block in &self.layout.blocks {
            x = block.forward(g, p, x)?;
            feats.push(x);
        }
        Ok(feats)
    }

    pub fn channel_transformer(&self, g: &mut Graph<T>, p: &[Var], f: Var) -> TResult<Var> {
        self.layout
            .channel
            .as_ref()
            .ok_or_else(|| TensorError::Usage("channel transformer not in this configuration".into()))?
            .forward(g, p, f)
    }

    pub fn spatial_transformer(&self, g: &mut Graph<T>, p: &[Var], f: Var) -> TResult<Var> {
        self.layout
            .spatial
            .as_ref()
            .ok_or_else(|| TensorError::Usage("spatial transformer not in this configuration".into()))?
            .forward(g, p, f)
    }

    /// Relation map for the coarsest features under the configured order.
    pub fn fusion_module(&self, g: &mut Graph<T>, p: &[Var], f: Var) -> TResult<Var> {
        match self.config.transformer_order {
            TransformerOrder::ChannelThenSpatial => {
                let w = self.channel_transformer(g, p, f)?;
                let fw = g.mul(f, w)?;
                self.spatial_transformer(g, p, fw)
            }
            TransformerOrder::SpatialThenChannel => {
                let m = self.spatial_transformer(g, p, f)?;
                let fm = g.mul(f, m)?;
                let w = self.channel_transformer(g, p, fm)?;
                let fmw = g.mul(fm, w)?;
                let avg = g.mean_axis(fmw, 1)?;
                g.sigmoid(avg)
            }
            TransformerOrder::SpatialOnly => self.spatial_transformer(g, p, f),
            TransformerOrder::ChannelOnly => {
                let w = self.channel_transformer(g, p, f)?;
                let fw = g.mul(f, w)?;
                let avg = g.mean_axis(fw, 1)?;
                g.sigmoid(avg)
            }
        }
    }

    /// Full pipeline on graph values `ir`, `vis` of shape `[b, 1, h, w]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], ir: Var, vis: Var) -> Result<GeneratorOutput> {
        let (h, w) = {
            let s = g.shape(ir);
            (s[2], s[3])
        };
        let pair = staged("input", g.concat(&[ir, vis], 1))?;
        let features = staged("cnn stem", self.cnn_stem(g, p, pair))?;
        let coarsest = *features.last().expect("at least two scales");
        let map = staged("fusion module", self.fusion_module(g, p, coarsest))?;
        let fused = staged("reconstruction", self.reconstruct(g, p, &features, map, h, w))?;
        Ok(GeneratorOutput {
            fused,
            map,
            features,
        })
    }

    fn reconstruct(
        &self,
        g: &mut Graph<T>,
        p: &[Var],
        features: &[Var],
        map: Var,
        h: usize,
        w: usize,
    ) -> TResult<Var> {
        let mut acc = None;
        for (f, head) in features.iter().zip(&self.layout.heads) {
            let (fh, fw) = {
                let s = g.shape(*f);
                (s[2], s[3])
            };
            let m = if g.shape(map)[2..] == [fh, fw] {
                map
            } else {
                g.resample(map, fh, fw, ResampleMode::Bilinear)?
            };
            let weighted = g.mul(*f, m)?;
            let y = head.forward(g, p, weighted)?;
            let y = if (fh, fw) == (h, w) {
                y
            } else {
                g.resample(y, h, w, ResampleMode::Bilinear)?
            };
            acc = Some(match acc {
                None => y,
                Some(a) => g.add(a, y)?,
            });
        }
        g.sigmoid(acc.expect("at least one scale"))
    }

    /// Inference on `[b, 1, h, w]` images in [0, 1].
    pub fn generate(&self, ir: &Tensor<T>, vis: &Tensor<T>) -> Result<Tensor<T>> {
        check_pair(ir, vis, self.config.required_multiple())?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let (ir, vis) = (g.constant(ir.clone()), g.constant(vis.clone()));
        let out = self.forward(&mut g, &p, ir, vis)?;
        Ok(g.value(out.fused).clone())
    }
}

/// Shape and range checks shared by inference and training.
pub fn check_pair<T: Scalar>(ir: &Tensor<T>, vis: &Tensor<T>, multiple: usize) -> Result<()> {
    let s = ir.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(FuseError::input(format!("expected [b, 1, h, w] images, got {s:?}")));
    }
    if s != vis.shape() {
        return Err(FuseError::input(format!(
            "infrared {s:?} and visible {:?} shapes differ",
            vis.shape()
        )));
    }
    if s[2] % multiple != 0 || s[3] % multiple != 0 {
        return Err(FuseError::input(format!(
            "{}x{} is not a multiple of {multiple}; pad the inputs first",
            s[2], s[3]
        )));
    }
    for (name, t) in [("infrared", ir), ("visible", vis)] {
        if !t.is_finite() {
            return Err(FuseError::Numerical {
                stage: "input".into(),
                detail: format!("{name} image contains non-finite values"),
            });
        }
        let (lo, hi) = (T::zero(), T::one());
        if t.data().iter().any(|&v| v < lo || v > hi) {
            return Err(FuseError::input(format!("{name} values outside [0, 1]")));
        }
    }
    Ok(())
}
