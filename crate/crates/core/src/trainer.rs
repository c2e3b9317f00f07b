//! Alternating generator/discriminator training, checkpointed runs and the
//! free-pixel overfit check.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tgfuse_autodiff::{Adam, AdamConfig, Graph, Scalar, Tensor, Var};

use crate::checkpoint::{
    load_discriminator_into, load_generator, save_discriminator, save_generator,
};
use crate::config::RunConfig;
use crate::data::Pair;
use crate::discriminator::{feature_distance, PerceptualNet};
use crate::error::{FuseError, Result};
use crate::generator::Generator;
use crate::image::{stack, Image};
use crate::loss::{generator_total_loss, loss_var_ssim, ssim_map, Critics, SsimConstants, WindowSpec};

pub const GENERATOR_FILE: &str = "generator.tgf";
pub const IR_CRITIC_FILE: &str = "ir.tgfd";
pub const VIS_CRITIC_FILE: &str = "vis.tgfd";

/// Generator objective after one update, evaluated before the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub var_ssim: f64,
    pub ir: Option<f64>,
    pub vis: Option<f64>,
    /// Euclidean norm of the full generator gradient.
    pub grad_norm: f64,
}

/// Feature distances seen by the discriminators, before their update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticLosses {
    pub ir: f64,
    pub vis: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainRecord {
    /// 1-based index of the completed step.
    pub step: u64,
    pub epoch: u64,
    pub generator: StepLosses,
    pub critics: Option<CriticLosses>,
    pub seconds: f64,
    pub nan: bool,
}

/// Append-only per-step log.
#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    records: Vec<TrainRecord>,
}

pub const TRAIN_LOG_HEADER: [&str; 11] = [
    "step", "epoch", "total", "var_ssim", "ir", "vis", "critic_ir", "critic_vis", "grad_norm",
    "seconds", "nan",
];

impl TrainLog {
    pub fn push(&mut self, r: TrainRecord) {
        if let Some(last) = self.records.last() {
            assert!(r.step > last.step, "train log steps must increase");
        }
        self.records.push(r);
    }

    pub fn records(&self) -> &[TrainRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn generator_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.generator.total).collect()
    }

    /// Mean generator loss over the first and last `k` steps.
    pub fn smoothed_ends(&self, k: usize) -> Option<(f64, f64)> {
        let l = self.generator_losses();
        if l.is_empty() {
            return None;
        }
        let k = k.clamp(1, l.len());
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&l[..k]), mean(&l[l.len() - k..])))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let csv_err = |e: csv::Error| FuseError::input(format!("writing train log: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRAIN_LOG_HEADER).map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            let g = &r.generator;
            w.write_record([
                r.step.to_string(),
                r.epoch.to_string(),
                g.total.to_string(),
                g.var_ssim.to_string(),
                opt(g.ir),
                opt(g.vis),
                opt(r.critics.map(|c| c.ir)),
                opt(r.critics.map(|c| c.vis)),
                g.grad_norm.to_string(),
                format!("{:.6}", r.seconds),
                u8::from(r.nan).to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| FuseError::input(format!("writing train log: {e}")))?;
        Ok(())
    }
}

/// A discriminator with its optimizer.
///
/// Ascent on an unbounded ReLU network grows the distance by inflating the
/// weight scale, so after every update each convolution kernel is rescaled
/// to the Frobenius norm it had at initialization. Only filter directions
/// (and biases) adapt.
#[derive(Clone, Debug)]
pub struct Critic<T> {
    pub net: PerceptualNet<T>,
    pub adam: Adam<T>,
    kernel_norms: Vec<Option<f64>>,
}

fn frobenius<T: Scalar>(t: &Tensor<T>) -> f64 {
    t.data()
        .iter()
        .map(|v| v.to_f64_lossy().powi(2))
        .sum::<f64>()
        .sqrt()
}

impl<T: Scalar> Critic<T> {
    fn new(seed: u64, lr: f64) -> Self {
        let net = PerceptualNet::new(seed);
        let adam = Adam::new(
            AdamConfig {
                lr,
                ..AdamConfig::default()
            },
            net.params.specs().iter().map(|s| s.shape.as_slice()),
        );
        let kernel_norms = Self::kernel_norms(&net);
        Critic {
            net,
            adam,
            kernel_norms,
        }
    }

    fn kernel_norms(net: &PerceptualNet<T>) -> Vec<Option<f64>> {
        net.params
            .tensors()
            .iter()
            .map(|t| (t.shape().len() == 4).then(|| frobenius(t)))
            .collect()
    }

    /// Adopts the current kernel norms as the projection targets, e.g.
    /// after loading converted weights.
    pub fn reset_norms(&mut self) {
        self.kernel_norms = Self::kernel_norms(&self.net);
    }

    fn project(&mut self) {
        for (t, norm) in self.net.params.tensors_mut().iter_mut().zip(&self.kernel_norms) {
            let Some(target) = *norm else { continue };
            let now = frobenius(t);
            if now > 0.0 {
                let k = T::from_f64_lossy(target / now);
                *t = t.map(|v| v * k);
            }
        }
    }
}

fn numerical(step: u64, detail: impl Into<String>) -> FuseError {
    FuseError::Numerical {
        stage: format!("training step {step}"),
        detail: detail.into(),
    }
}

fn at_step(step: u64) -> impl Fn(FuseError) -> FuseError {
    move |e| match e {
        FuseError::Numerical { stage, detail } => numerical(step, format!("{stage}: {detail}")),
        e if e.is_numerical() => numerical(step, e.to_string()),
        e => e,
    }
}

fn grad_norm<T: Scalar>(grads: &[Option<Tensor<T>>]) -> f64 {
    grads
        .iter()
        .flatten()
        .flat_map(|t| t.data().iter())
        .map(|v| {
            let v = v.to_f64().unwrap_or(f64::NAN);
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// A generator, its optimizer and (with `use_gan`) the two discriminators.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub run: RunConfig,
    pub generator: Generator<T>,
    pub adam: Adam<T>,
    /// Infrared and visible critics, present when `use_gan` is set.
    pub critics: Option<(Critic<T>, Critic<T>)>,
    /// Completed steps.
    pub step: u64,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh networks seeded from `run.train.seed`.
    pub fn new(run: RunConfig) -> Result<Self> {
        run.validate()?;
        let seed = run.train.seed;
        let generator = Generator::new(run.fusion.clone(), seed)?;
        let adam = Adam::new(
            AdamConfig {
                lr: run.train.lr,
                ..AdamConfig::default()
            },
            generator.params.specs().iter().map(|s| s.shape.as_slice()),
        );
        let critics = run.fusion.use_gan.then(|| {
            let lr = run.train.lr * run.train.disc_lr_scale;
            (
                Critic::new(seed.wrapping_add(1), lr),
                Critic::new(seed.wrapping_add(2), lr),
            )
        });
        Ok(Trainer {
            run,
            generator,
            adam,
            critics,
            step: 0,
        })
    }

    /// One Adam update of the generator. Discriminators enter the graph as
    /// constants and are never modified here.
    pub fn train_step_generator(&mut self, ir: &Tensor<T>, vis: &Tensor<T>) -> Result<StepLosses> {
        let step = self.step + 1;
        let mut g = Graph::new();
        let p = self.generator.params.bind(&mut g, true);
        let (ix, iy) = (g.constant(ir.clone()), g.constant(vis.clone()));
        let out = self.generator.forward(&mut g, &p, ix, iy).map_err(at_step(step))?;
        let bound = self.critics.as_ref().map(|(a, b)| {
            (a.net.params.bind(&mut g, false), b.net.params.bind(&mut g, false))
        });
        let critics = match (&self.critics, &bound) {
            (Some((a, b)), Some((pa, pb))) => Some(Critics {
                ir: &a.net,
                ir_params: pa,
                vis: &b.net,
                vis_params: pb,
                spec: self.run.disc,
            }),
            _ => None,
        };
        let t = &self.run.train;
        let terms = generator_total_loss(&mut g, ix, iy, out.fused, critics.as_ref(), t.lambda_ir, t.lambda_vis)
            .map_err(at_step(step))?;
        let val = |g: &Graph<T>, v: Var| g.value(v).item().to_f64().unwrap_or(f64::NAN);
        let total = val(&g, terms.total);
        if !total.is_finite() {
            return Err(numerical(step, format!("generator loss is {total}")));
        }
        let mut losses = StepLosses {
            total,
            var_ssim: val(&g, terms.var_ssim),
            ir: terms.ir.map(|v| val(&g, v)),
            vis: terms.vis.map(|v| val(&g, v)),
            grad_norm: 0.0,
        };
        g.backward(terms.total)
            .map_err(|e| at_step(step)(FuseError::from(e)))?;
        let grads: Vec<_> = p.iter().map(|&v| g.take_grad(v)).collect();
        losses.grad_norm = grad_norm(&grads);
        if !losses.grad_norm.is_finite() {
            return Err(numerical(step, "non-finite generator gradient"));
        }
        self.adam
            .step(self.generator.params.tensors_mut(), &grads)?;
        Ok(losses)
    }

    /// Current feature distances of a freshly generated fused batch; with
    /// fine-tuning on, also one ascent step per discriminator on its own
    /// distance. Returns `None` when the run has no discriminators.
    pub fn train_step_discriminators(
        &mut self,
        ir: &Tensor<T>,
        vis: &Tensor<T>,
    ) -> Result<Option<CriticLosses>> {
        let step = self.step + 1;
        let fused = self.generator.generate(ir, vis).map_err(at_step(step))?;
        let update = self.run.train.fine_tune_discriminators;
        let spec = self.run.disc;
        let Some((a, b)) = self.critics.as_mut() else {
            return Ok(None);
        };
        let d_ir = critic_step(a, &fused, ir, spec.ir_stage, update, step)?;
        let d_vis = critic_step(b, &fused, vis, spec.vis_stage, update, step)?;
        Ok(Some(CriticLosses { ir: d_ir, vis: d_vis }))
    }

    /// One alternating step: generator first, then discriminators.
    pub fn train_batch(&mut self, batch: &[&Pair]) -> Result<(StepLosses, Option<CriticLosses>)> {
        let irs: Vec<&Image> = batch.iter().map(|p| &p.ir).collect();
        let vis: Vec<&Image> = batch.iter().map(|p| &p.vis).collect();
        let (ir, vis) = (stack::<T>(&irs), stack::<T>(&vis));
        let gen = self.train_step_generator(&ir, &vis)?;
        let critics = self.train_step_discriminators(&ir, &vis)?;
        self.step += 1;
        Ok((gen, critics))
    }

    pub fn steps_per_epoch(&self, dataset_len: usize) -> u64 {
        dataset_len.div_ceil(self.run.train.batch) as u64
    }

    /// Order of the dataset in `epoch` (0-based); depends only on the seed.
    pub fn epoch_order(&self, dataset_len: usize, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..dataset_len).collect();
        let seed = self.run.train.seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order
    }

    /// Trains from the current step to the end of the configured epochs,
    /// appending to `log`. Checkpoints go to `ckpt_dir` every
    /// `checkpoint_every` steps and at the end.
    pub fn fit(&mut self, dataset: &[Pair], log: &mut TrainLog, ckpt_dir: Option<&Path>) -> Result<()> {
        validate_dataset(dataset, self.generator.config.required_multiple())?;
        let spe = self.steps_per_epoch(dataset.len());
        let total = spe * self.run.train.epochs as u64;
        let batch = self.run.train.batch;
        let mut order = Vec::new();
        let mut order_epoch = None;
        while self.step < total {
            let epoch = self.step / spe;
            if order_epoch != Some(epoch) {
                order = self.epoch_order(dataset.len(), epoch);
                order_epoch = Some(epoch);
            }
            let start = (self.step % spe) as usize * batch;
            let items: Vec<&Pair> = order[start..(start + batch).min(order.len())]
                .iter()
                .map(|&i| &dataset[i])
                .collect();
            let t0 = Instant::now();
            let (generator, critics) = self.train_batch(&items)?;
            log.push(TrainRecord {
                step: self.step,
                epoch,
                generator,
                critics,
                seconds: t0.elapsed().as_secs_f64(),
                nan: false,
            });
            let every = self.run.train.checkpoint_every as u64;
            if let Some(dir) = ckpt_dir {
                if (every > 0 && self.step % every == 0) || self.step == total {
                    self.save(dir)?;
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| FuseError::io(dir, e))?;
        save_generator(
            &dir.join(GENERATOR_FILE),
            &self.run,
            &self.generator,
            Some(&self.adam.state),
            self.step,
        )?;
        if let Some((a, b)) = &self.critics {
            save_discriminator(&dir.join(IR_CRITIC_FILE), &a.net, Some(&a.adam.state))?;
            save_discriminator(&dir.join(VIS_CRITIC_FILE), &b.net, Some(&b.adam.state))?;
        }
        Ok(())
    }

    /// Restores a run saved by [`Trainer::save`], optimizer state included.
    pub fn resume(dir: &Path) -> Result<Self> {
        let ck = load_generator::<T>(&dir.join(GENERATOR_FILE))?;
        let mut t = Trainer::new(ck.run)?;
        t.generator = ck.generator;
        if let Some(state) = ck.adam {
            t.adam.state = state;
        }
        t.step = ck.step;
        if let Some((a, b)) = t.critics.as_mut() {
            for (c, file) in [(a, IR_CRITIC_FILE), (b, VIS_CRITIC_FILE)] {
                let fresh = Critic::<T>::kernel_norms(&c.net);
                if let Some(state) = load_discriminator_into(&mut c.net, &dir.join(file))? {
                    c.adam.state = state;
                }
                c.kernel_norms = fresh;
            }
        }
        Ok(t)
    }
}

fn critic_step<T: Scalar>(
    c: &mut Critic<T>,
    fused: &Tensor<T>,
    target: &Tensor<T>,
    stage: usize,
    update: bool,
    step: u64,
) -> Result<f64> {
    let mut g = Graph::new();
    let p = c.net.params.bind(&mut g, update);
    let (f, t) = (g.constant(fused.clone()), g.constant(target.clone()));
    let fail = |e| at_step(step)(FuseError::from(e));
    let a = c.net.extract(&mut g, &p, f, stage).map_err(fail)?;
    let b = c.net.extract(&mut g, &p, t, stage).map_err(fail)?;
    let d = feature_distance(&mut g, a, b).map_err(fail)?;
    let dist = g.value(d).item().to_f64().unwrap_or(f64::NAN);
    if !dist.is_finite() {
        return Err(numerical(step, format!("feature distance is {dist}")));
    }
    if update {
        // Separation relative to the target's feature magnitude, so the
        // critic gains nothing from growing its activations.
        let mag = g.abs(b)?;
        let mag = g.mean(mag)?;
        let mag = g.add_scalar(mag, T::from_f64_lossy(1e-6))?;
        let rel = g.div(d, mag)?;
        let ascent = g.neg(rel)?;
        g.backward(ascent)
            .map_err(|e| at_step(step)(FuseError::from(e)))?;
        let grads: Vec<_> = p.iter().map(|&v| g.take_grad(v)).collect();
        if !grad_norm(&grads).is_finite() {
            return Err(numerical(step, "non-finite discriminator gradient"));
        }
        c.adam.step(c.net.params.tensors_mut(), &grads)?;
        c.project();
    }
    Ok(dist)
}

fn validate_dataset(dataset: &[Pair], multiple: usize) -> Result<()> {
    let first = dataset
        .first()
        .ok_or_else(|| FuseError::input("empty training dataset"))?;
    let (w, h) = (first.ir.width(), first.ir.height());
    if w % multiple != 0 || h % multiple != 0 {
        return Err(FuseError::input(format!(
            "training images are {w}x{h}; extents must be divisible by {multiple}"
        )));
    }
    for p in dataset {
        for img in [&p.ir, &p.vis] {
            if (img.width(), img.height()) != (w, h) {
                return Err(FuseError::input(format!(
                    "pair {} is {}x{}, expected {w}x{h}",
                    p.name,
                    img.width(),
                    img.height()
                )));
            }
        }
    }
    Ok(())
}

/// Trains fresh networks on `dataset` under `run`.
pub fn train<T: Scalar>(dataset: &[Pair], run: &RunConfig, ckpt_dir: Option<&Path>) -> Result<(Trainer<T>, TrainLog)> {
    let mut trainer = Trainer::new(run.clone())?;
    let mut log = TrainLog::default();
    trainer.fit(dataset, &mut log, ckpt_dir)?;
    Ok((trainer, log))
}

/// Outputs that carry no usable signal: nearly flat or nearly black.
pub fn is_collapsed(img: &Image) -> bool {
    let px = img.pixels();
    let (lo, hi) = px
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mean = px.iter().sum::<f64>() / px.len() as f64;
    !(lo.is_finite() && hi.is_finite()) || hi - lo < 1.0 / 255.0 || mean < 0.02
}

#[derive(Clone, Debug)]
pub struct OverfitReport {
    pub losses: Vec<f64>,
    /// Mean windowed SSIM between the optimized image and the reference.
    pub ssim: f64,
    pub fused: Image,
}

/// Optimizes free pixels `F`, starting at `init`, against the gated SSIM loss
/// with both sources equal to `reference`. No network is involved.
pub fn overfit_sanity(reference: &Image, init: &Image, steps: usize, lr: f64) -> Result<OverfitReport> {
    if !reference.same_size(init) {
        return Err(FuseError::input("initial image must match the reference extent"));
    }
    let x = reference.to_tensor::<f64>();
    let mut f = vec![init.to_tensor::<f64>()];
    let mut adam = Adam::new(AdamConfig { lr, ..AdamConfig::default() }, [x.shape()]);
    let (window, k) = (WindowSpec::default(), SsimConstants::default());
    let mut losses = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let fv = g.param(f[0].clone());
        let loss = loss_var_ssim(&mut g, xv, xv, fv, window, k).map_err(at_step(step as u64))?;
        let l = g.value(loss).item();
        if !l.is_finite() {
            return Err(numerical(step as u64, format!("loss is {l}")));
        }
        losses.push(l);
        if step == steps {
            break;
        }
        g.backward(loss)?;
        adam.step(&mut f, &[g.take_grad(fv)])?;
    }
    let mut g = Graph::new();
    let (xv, fv) = (g.constant(x), g.constant(f[0].clone()));
    let map = ssim_map(&mut g, fv, xv, window, k)?;
    let ssim = g.mean(map)?;
    let ssim = g.value(ssim).item();
    let fused = Image::from_tensor(&f[0], 0)?;
    Ok(OverfitReport { losses, ssim, fused })
}
