mod common;

use common::tiny_config;
use tgfuse::autodiff::{Graph, Tensor};
use tgfuse::discriminator::feature_distance;
use tgfuse::data::synthetic_dataset;
use tgfuse::image::stack;
use tgfuse::trainer::{is_collapsed, overfit_sanity, train, TrainRecord, TRAIN_LOG_HEADER};
use tgfuse::{FuseError, Image, Pair, RunConfig, Trainer32, TrainLog};

fn tiny_run(use_gan: bool) -> RunConfig {
    let mut run = RunConfig::desk();
    run.fusion = tiny_config();
    run.fusion.use_gan = use_gan;
    run.train.batch = 1;
    run.train.epochs = 1;
    run.train.seed = 3;
    run
}

fn batch(pairs: &[Pair]) -> (Tensor<f32>, Tensor<f32>) {
    let ir: Vec<&Image> = pairs.iter().map(|p| &p.ir).collect();
    let vis: Vec<&Image> = pairs.iter().map(|p| &p.vis).collect();
    (stack(&ir), stack(&vis))
}

fn params_bits(t: &[Tensor<f32>]) -> Vec<u32> {
    t.iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
}

fn critic_bits(t: &Trainer32) -> Vec<u32> {
    let (a, b) = t.critics.as_ref().unwrap();
    let mut bits = params_bits(a.net.params.tensors());
    bits.extend(params_bits(b.net.params.tensors()));
    bits
}

fn loss_columns(log: &TrainLog) -> Vec<String> {
    log.records()
        .iter()
        .map(|r: &TrainRecord| {
            let g = &r.generator;
            format!(
                "{} {} {:?} {:?} {:?} {:?} {:?} {:?} {}",
                r.step,
                r.epoch,
                g.total.to_bits(),
                g.var_ssim.to_bits(),
                g.ir.map(f64::to_bits),
                g.vis.map(f64::to_bits),
                r.critics.map(|c| (c.ir.to_bits(), c.vis.to_bits())),
                g.grad_norm.to_bits(),
                r.nan
            )
        })
        .collect()
}

#[test]
fn without_gan_only_the_ssim_term_remains() {
    let data = synthetic_dataset(1, 32, 32, 1);
    let mut t = Trainer32::new(tiny_run(false)).unwrap();
    assert!(t.critics.is_none());
    let (ir, vis) = batch(&data);
    let l = t.train_step_generator(&ir, &vis).unwrap();
    assert_eq!((l.ir, l.vis), (None, None));
    assert_eq!(l.total, l.var_ssim);
    assert!(l.grad_norm.is_finite() && l.grad_norm > 0.0);
    assert!(t.train_step_discriminators(&ir, &vis).unwrap().is_none());
}

#[test]
fn with_gan_terms_are_weighted_distances() {
    let data = synthetic_dataset(1, 32, 32, 2);
    let mut t = Trainer32::new(tiny_run(true)).unwrap();
    let (ir, vis) = batch(&data);
    let l = t.train_step_generator(&ir, &vis).unwrap();
    let (di, dv) = (l.ir.unwrap(), l.vis.unwrap());
    assert!(di > 0.0 && dv > 0.0);
    let want = l.var_ssim + 0.01 * di + 0.01 * dv;
    assert!((l.total - want).abs() < 1e-5 * want, "{} vs {want}", l.total);
}

#[test]
fn repeated_pair_loss_drops() {
    let data = synthetic_dataset(1, 32, 32, 4);
    let mut run = tiny_run(false);
    run.train.epochs = 50;
    let (t, log) = train::<f32>(&data, &run, None).unwrap();
    assert_eq!(t.step, 50);
    assert_eq!(log.len(), 50);
    let (first, last) = log.smoothed_ends(5).unwrap();
    assert!(last < first, "{first} -> {last}");
    assert!(log.records().iter().all(|r| r.generator.grad_norm.is_finite() && !r.nan));
}

#[test]
fn generator_step_leaves_critics_alone() {
    let data = synthetic_dataset(1, 32, 32, 5);
    let mut t = Trainer32::new(tiny_run(true)).unwrap();
    let before = critic_bits(&t);
    let gen_before = params_bits(t.generator.params.tensors());
    let (ir, vis) = batch(&data);
    t.train_step_generator(&ir, &vis).unwrap();
    assert_eq!(critic_bits(&t), before);
    assert_ne!(params_bits(t.generator.params.tensors()), gen_before);
}

#[test]
fn critics_change_only_when_fine_tuned() {
    let data = synthetic_dataset(1, 32, 32, 6);
    let (ir, vis) = batch(&data);
    for fine_tune in [false, true] {
        let mut run = tiny_run(true);
        run.train.fine_tune_discriminators = fine_tune;
        let mut t = Trainer32::new(run).unwrap();
        let before = critic_bits(&t);
        let gen_before = params_bits(t.generator.params.tensors());
        let d = t.train_step_discriminators(&ir, &vis).unwrap().unwrap();
        assert!(d.ir > 0.0 && d.vis > 0.0);
        assert_eq!(params_bits(t.generator.params.tensors()), gen_before);
        assert_eq!(critic_bits(&t) != before, fine_tune);
    }
}

/// Feature distance over the target's mean feature magnitude, the quantity
/// each critic ascends.
fn relative_separation(t: &Trainer32, fused: &Tensor<f32>, ir: &Tensor<f32>, vis: &Tensor<f32>) -> [f64; 2] {
    let (a, b) = t.critics.as_ref().unwrap();
    let spec = t.run.disc;
    [(&a.net, ir, spec.ir_stage), (&b.net, vis, spec.vis_stage)].map(|(net, target, stage)| {
        let mut g = Graph::new();
        let p = net.params.bind(&mut g, false);
        let (f, x) = (g.constant(fused.clone()), g.constant(target.clone()));
        let (ff, fx) = (net.extract(&mut g, &p, f, stage).unwrap(), net.extract(&mut g, &p, x, stage).unwrap());
        let d = feature_distance(&mut g, ff, fx).unwrap();
        let m = g.abs(fx).unwrap();
        let m = g.mean(m).unwrap();
        g.value(d).item() as f64 / (g.value(m).item() as f64 + 1e-6)
    })
}

#[test]
fn ascent_step_separates_fused_from_target() {
    let data = synthetic_dataset(1, 32, 32, 7);
    let (ir, vis) = batch(&data);
    let mut run = tiny_run(true);
    run.train.disc_lr_scale = 0.01;
    let mut t = Trainer32::new(run).unwrap();
    let fused = t.generator.generate(&ir, &vis).unwrap();
    let before = relative_separation(&t, &fused, &ir, &vis);
    t.train_step_discriminators(&ir, &vis).unwrap().unwrap();
    let after = relative_separation(&t, &fused, &ir, &vis);
    for i in 0..2 {
        assert!(after[i] > before[i], "critic {i}: {} -> {}", before[i], after[i]);
    }
}

#[test]
fn logs_are_reproducible() {
    let data = synthetic_dataset(2, 32, 32, 8);
    let mut run = tiny_run(true);
    run.train.epochs = 2;
    let (_, a) = train::<f32>(&data, &run, None).unwrap();
    let (_, b) = train::<f32>(&data, &run, None).unwrap();
    assert_eq!(a.len(), 4);
    assert_eq!(loss_columns(&a), loss_columns(&b));
    let mut csv = Vec::new();
    a.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), TRAIN_LOG_HEADER.join(","));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn epoch_order_is_a_seeded_permutation() {
    let t = Trainer32::new(tiny_run(false)).unwrap();
    let o = t.epoch_order(10, 0);
    let mut sorted = o.clone();
    sorted.sort();
    assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    assert_eq!(o, t.epoch_order(10, 0));
    assert_ne!(o, t.epoch_order(10, 1));
    assert_eq!(t.steps_per_epoch(3), 3);
}

#[test]
fn bad_datasets_are_input_errors() {
    let run = tiny_run(false);
    let err = |data: &[Pair]| train::<f32>(data, &run, None).unwrap_err();
    assert!(matches!(err(&[]), FuseError::Input(_)));
    assert!(matches!(err(&synthetic_dataset(1, 20, 32, 0)), FuseError::Input(m) if m.contains("divisible")));
    let mut mixed = synthetic_dataset(2, 32, 32, 0);
    mixed[1] = synthetic_dataset(1, 64, 32, 1).remove(0);
    assert!(matches!(err(&mixed), FuseError::Input(m) if m.contains(&mixed[1].name)));
}

#[test]
fn resume_reproduces_the_next_step() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_dataset(2, 32, 32, 9);
    let mut run = tiny_run(true);
    run.train.epochs = 2;
    run.train.checkpoint_every = 2;
    let mut t = Trainer32::new(run.clone()).unwrap();
    let mut log = TrainLog::default();
    // Stop after the first epoch: checkpoint at step 2.
    t.run.train.epochs = 1;
    t.fit(&data, &mut log, Some(dir.path())).unwrap();
    t.run.train.epochs = 2;
    let mut resumed = Trainer32::resume(dir.path()).unwrap();
    assert_eq!(resumed.step, 2);
    resumed.run.train.epochs = 2;
    let mut a = log.clone();
    let mut b = log;
    t.fit(&data, &mut a, None).unwrap();
    resumed.fit(&data, &mut b, None).unwrap();
    assert_eq!(loss_columns(&a), loss_columns(&b));
    assert_eq!(params_bits(t.generator.params.tensors()), params_bits(resumed.generator.params.tensors()));
}

#[test]
fn overfit_starts_at_zero_from_the_reference() {
    let data = synthetic_dataset(1, 32, 32, 10);
    // The reference is a stationary point: the first Adam step barely moves.
    let r = overfit_sanity(&data[0].vis, &data[0].vis, 1, 0.01).unwrap();
    assert_eq!(r.losses[0], 0.0);
    assert!(r.losses[1].abs() < 1e-12, "{:?}", r.losses);
    assert!((r.ssim - 1.0).abs() < 1e-12);
    assert!(overfit_sanity(&data[0].vis, &Image::filled(16, 16, 0.5), 1, 0.01).is_err());
}

#[test]
fn collapse_detection() {
    assert!(is_collapsed(&Image::filled(8, 8, 0.5)));
    assert!(is_collapsed(&Image::from_fn(8, 8, |x, _| 0.001 * x as f64)));
    assert!(is_collapsed(&Image::from_fn(8, 8, |x, _| if x == 0 { f64::NAN } else { 0.5 })));
    assert!(!is_collapsed(&synthetic_dataset(1, 16, 16, 0)[0].vis));
}
