//! End-to-end acceptance checks. Runs without the libtest harness so each
//! criterion prints exactly one PASS/FAIL line as it finishes.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::oracles::{brute_force_loss, oracle_entropy, oracle_pair_mi, oracle_sd, oracle_sf};
use common::{permute_tiles, random_level_image, random_tensor, rel_diff};
use tgfuse::ablation::{ablation_matrix, ablation_run, csv_header, Outcome, FAILURE_MARK};
use tgfuse::autodiff::{Graph, Tensor};
use tgfuse::data::{synthetic_dataset, synthetic_pair, test_card};
use tgfuse::gradsuite::{gradient_suite, Depth};
use tgfuse::image::stack;
use tgfuse::io::{decode_pgm, encode_pgm, load_image, read_file, save_image};
use tgfuse::loss::{block_variance, gate_mask, loss_var_ssim, ssim, var_ssim, SsimConstants, WindowSpec};
use tgfuse::metrics::{entropy, ms_ssim, mutual_information, q_abf, spatial_frequency, standard_deviation, vif_fusion};
use tgfuse::trainer::{overfit_sanity, train};
use tgfuse::{FusionConfig, Generator64, RunConfig, Trainer32, TrainLog};

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> std::result::Result<Duration, String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {t:.1?}, limit {limit:?}"))?;
    Ok(t)
}

fn gradient_suite_passes() -> Check {
    let start = Instant::now();
    let (mut worst_op, mut worst_deep) = (0.0f64, 0.0f64);
    let cases = gradient_suite();
    for case in &cases {
        let out = case.run().map_err(|e| format!("{}: {e}", case.name))?;
        ensure(out.passed(), || {
            format!("{}: rel err {:.2e} > {:.0e}", out.name, out.report.max_rel_err, out.tolerance)
        })?;
        let worst = match out.depth {
            Depth::Op => &mut worst_op,
            Depth::Composite => &mut worst_deep,
        };
        *worst = worst.max(out.report.max_rel_err);
    }
    let t = within(Duration::from_secs(120), start)?;
    Ok(format!(
        "{} cases, worst op {worst_op:.1e}, worst composite {worst_deep:.1e}, {t:.1?}",
        cases.len()
    ))
}

fn eval_loss(x: &Tensor<f64>, y: &Tensor<f64>, f: &Tensor<f64>) -> f64 {
    let mut g = Graph::new();
    let (a, b, c) = (g.constant(x.clone()), g.constant(y.clone()), g.constant(f.clone()));
    let l = loss_var_ssim(&mut g, a, b, c, WindowSpec::default(), SsimConstants::default()).unwrap();
    g.value(l).item()
}

fn loss_correctness() -> Check {
    let k = SsimConstants::default();
    let x = random_tensor(&[32, 32], 1, 0.0, 1.0);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let s = ssim(&mut g, xv, xv, k).unwrap();
    let s = g.value(s).item();
    ensure((s - 1.0).abs() <= 1e-9, || format!("ssim(X, X) = {s}"))?;
    let l = eval_loss(&x, &x, &x);
    ensure(l.abs() <= 1e-9, || format!("loss(X, X, X) = {l}"))?;

    let mut worst = 0.0f64;
    for seed in 0..3 {
        let x = random_tensor(&[32, 32], 10 + seed, 0.0, 1.0);
        let y = random_tensor(&[32, 32], 20 + seed, 0.0, 1.0);
        let f = random_tensor(&[32, 32], 30 + seed, 0.0, 1.0);
        let d = (eval_loss(&x, &y, &f) - brute_force_loss(&x, &y, &f, k, 11, 1)).abs();
        ensure(d <= 1e-10, || format!("seed {seed}: windowed loss off by {d:e}"))?;
        worst = worst.max(d);
    }

    // 11x11 checkerboards of amplitude a: 61 cells at +a and 60 at -a, so
    // the mean is offset by a/121 and the variance is a^2 (1 - 1/121^2).
    let board = |amp: f64| Tensor::from_fn(&[11, 11], |i| 0.5 + if (i / 11 + i % 11) % 2 == 0 { amp } else { -amp });
    let hand = |amp: f64| amp * amp * (1.0 - 1.0 / (121.0 * 121.0));
    let (hi, lo) = (board(0.2), board(0.1));
    let (vh, vl) = (block_variance(&hi.to_f64_vec()), block_variance(&lo.to_f64_vec()));
    ensure((vh - hand(0.2)).abs() < 1e-12 && (vl - hand(0.1)).abs() < 1e-12, || format!("variances {vh}, {vl}"))?;
    let f = random_tensor(&[11, 11], 40, 0.0, 1.0);
    let mut g = Graph::new();
    let (a, b, c) = (g.constant(hi.clone()), g.constant(lo.clone()), g.constant(f));
    let want = ssim(&mut g, a, c, k).unwrap();
    for (first, second) in [(a, b), (b, a)] {
        let v = var_ssim(&mut g, first, second, c, k).unwrap();
        ensure(g.value(v).item() == g.value(want).item(), || "gate picked the low-variance source".into())?;
    }
    ensure(gate_mask(&hi, &lo, WindowSpec::default()) == [true], || "gate mask".into())?;
    ensure(gate_mask(&lo, &hi, WindowSpec::default()) == [false], || "swapped gate mask".into())?;
    Ok(format!("identities exact to 1e-9, oracle gap {worst:.1e}, gate follows variance"))
}

fn overfit() -> Check {
    let start = Instant::now();
    let (_, vis) = synthetic_pair(64, 64, 5);
    let init = random_level_image(64, 64, 6);
    let r = overfit_sanity(&vis, &init, 2000, 0.01).map_err(|e| e.to_string())?;
    let t = within(Duration::from_secs(300), start)?;
    ensure(r.ssim > 0.99, || format!("ssim {} after 2000 steps", r.ssim))?;
    let first = r.losses.iter().position(|&l| 1.0 - l > 0.99).unwrap_or(r.losses.len());
    Ok(format!("ssim {:.5} after 2000 steps (loss below 0.01 from step {first}), {t:.1?}", r.ssim))
}

fn training_smoke() -> Check {
    let data = synthetic_dataset(8, 32, 32, 11);
    let mut lines = Vec::new();
    for use_gan in [false, true] {
        let mut run = RunConfig::desk();
        run.fusion.use_gan = use_gan;
        run.train.epochs = 50;
        let start = Instant::now();
        let (trainer, log): (Trainer32, TrainLog) = train(&data, &run, None).map_err(|e| format!("use_gan={use_gan}: {e}"))?;
        ensure(log.len() == 200, || format!("{} steps", log.len()))?;
        let nans = log.records().iter().filter(|r| r.nan || !r.generator.total.is_finite()).count();
        ensure(nans == 0, || format!("use_gan={use_gan}: {nans} NaN events"))?;
        let (first, last) = log.smoothed_ends(10).unwrap();
        ensure(last <= 0.5 * first, || format!("use_gan={use_gan}: loss {first:.4} -> {last:.4}"))?;
        for pair in &data {
            let fused = trainer
                .generator
                .generate(&stack(&[&pair.ir]), &stack(&[&pair.vis]))
                .map_err(|e| e.to_string())?;
            ensure(fused.data().iter().all(|v| (0.0..=1.0).contains(v)), || "output outside [0, 1]".into())?;
        }
        lines.push(format!(
            "use_gan={use_gan}: {first:.4} -> {last:.4} (x{:.2}), {:.0?}",
            last / first,
            start.elapsed()
        ));
    }
    Ok(lines.join("; "))
}

fn spatial_map(gen: &Generator64, f: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let p = gen.params.bind(&mut g, false);
    let x = g.constant(f.clone());
    let m = gen.spatial_transformer(&mut g, &p, x).unwrap();
    g.value(m).clone()
}

fn position_embedding() -> Check {
    let f = random_tensor(&[1, 16, 16, 16], 18, -1.0, 1.0);
    let perm = [5, 0, 15, 10, 3, 12, 7, 1, 9, 14, 2, 4, 11, 6, 13, 8];
    let mut diffs = [0.0; 2];
    for (i, pe) in [false, true].into_iter().enumerate() {
        let cfg = FusionConfig {
            use_position_embedding: pe,
            ..FusionConfig::desk()
        };
        let gen = Generator64::new(cfg, 19).map_err(|e| e.to_string())?;
        let expect = permute_tiles(&spatial_map(&gen, &f), 4, &perm);
        let got = spatial_map(&gen, &permute_tiles(&f, 4, &perm));
        diffs[i] = rel_diff(&expect, &got);
    }
    ensure(diffs[0] <= 1e-6, || format!("without embedding the map moved by {:e}", diffs[0]))?;
    ensure(diffs[1] > 1e-4, || format!("embedding left the map equivariant ({:e})", diffs[1]))?;
    Ok(format!("off: {:.1e}, on: {:.1e}", diffs[0], diffs[1]))
}

fn metric_oracles() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let a = random_level_image(8, 8, 10 + seed);
        let b = random_level_image(8, 8, 20 + seed);
        let f = random_level_image(8, 8, 30 + seed);
        let mi = mutual_information(&a, &b, &f).map_err(|e| e.to_string())?;
        let sf = spatial_frequency(&f).map_err(|e| e.to_string())?;
        for (name, got, want) in [
            ("EN", entropy(&f), oracle_entropy(&f)),
            ("SD", standard_deviation(&f), oracle_sd(&f)),
            ("SF", sf, oracle_sf(&f)),
            ("MI", mi, oracle_pair_mi(&f, &a) + oracle_pair_mi(&f, &b)),
        ] {
            let d = (got - want).abs();
            ensure(d <= 1e-10, || format!("{name} seed {seed}: {got} vs {want}"))?;
            worst = worst.max(d);
        }
    }
    for (name, f) in [("synthetic", synthetic_pair(64, 64, 3).1), ("card", test_card(64, 64))] {
        let err = |e: tgfuse::FuseError| format!("{name}: {e}");
        let m = ms_ssim(&f, &f, &f).map_err(err)?;
        ensure((m - 1.0).abs() <= 1e-9, || format!("{name}: ms_ssim {m}"))?;
        let mi = mutual_information(&f, &f, &f).map_err(err)?;
        ensure((mi - 2.0 * entropy(&f)).abs() <= 1e-9, || format!("{name}: mi {mi} vs 2 en"))?;
        let q = q_abf(&f, &f, &f).map_err(err)?;
        ensure(q >= 0.99, || format!("{name}: q_abf {q}"))?;
        let v = vif_fusion(&f, &f, &f).map_err(err)?;
        ensure((v - 1.0).abs() <= 1e-6, || format!("{name}: vif {v}"))?;
    }
    Ok(format!("oracle gap {worst:.1e}; identities hold"))
}

fn ablation() -> Check {
    let start = Instant::now();
    let mut base = RunConfig::desk();
    base.fusion.use_gan = true;
    base.train.epochs = 10;
    let matrix = ablation_matrix(&base);
    let train_set = synthetic_dataset(8, 32, 32, 21);
    let eval = synthetic_dataset(2, 32, 32, 22);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let csv_path = dir.path().join("ablation.csv");
    let rows = ablation_run(&matrix, &train_set, &eval, &csv_path, |_, _| {}).map_err(|e| e.to_string())?;
    let t = within(Duration::from_secs(30 * 60), start)?;
    ensure(rows.len() == 18, || format!("{} rows", rows.len()))?;

    let mut reader = csv::Reader::from_path(&csv_path).map_err(|e| e.to_string())?;
    let header: Vec<String> = reader.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
    ensure(header == csv_header(), || format!("header {header:?}"))?;
    let records: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>().map_err(|e| e.to_string())?;
    ensure(records.len() == 18, || format!("{} csv rows", records.len()))?;
    let metrics_at = header.iter().position(|h| h == "status").unwrap() + 1;
    for r in &records {
        ensure(r.len() == header.len(), || format!("short row {r:?}"))?;
        for cell in r.iter().skip(metrics_at).take(9) {
            ensure(cell == FAILURE_MARK || cell.parse::<f64>().is_ok_and(f64::is_finite), || {
                format!("bad metric cell {cell:?} in {r:?}")
            })?;
        }
    }
    let failures: Vec<String> = rows
        .iter()
        .filter(|r| matches!(r.outcome, Outcome::Failure(_)))
        .map(|r| format!("{}={}", r.axis, r.level))
        .collect();
    Ok(format!("18 rows, failures [{}], {t:.0?}", failures.join(", ")))
}

fn io_round_trips() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("x.pgm");
    let img = random_level_image(45, 31, 7);
    save_image(&path, &img).map_err(|e| e.to_string())?;
    let bytes = read_file(&path).map_err(|e| e.to_string())?;
    let back = load_image(&path).map_err(|e| e.to_string())?;
    ensure(back == img, || "decoded pixels differ".into())?;
    ensure(encode_pgm(&back) == bytes, || "re-encoded bytes differ".into())?;
    ensure(decode_pgm(&bytes, "x").map_err(|e| e.to_string())? == img, || "decode differs".into())?;

    let data = synthetic_dataset(4, 32, 32, 8);
    let mut run = RunConfig::desk();
    run.fusion.use_gan = true;
    run.train.epochs = 1;
    let ckpt = dir.path().join("ckpt");
    let mut t = Trainer32::new(run).map_err(|e| e.to_string())?;
    let mut log = TrainLog::default();
    t.fit(&data, &mut log, Some(&ckpt)).map_err(|e| e.to_string())?;
    let mut resumed = Trainer32::resume(&ckpt).map_err(|e| e.to_string())?;
    let batch: Vec<_> = data.iter().take(2).collect();
    let (a, _) = t.train_batch(&batch).map_err(|e| e.to_string())?;
    let (b, _) = resumed.train_batch(&batch).map_err(|e| e.to_string())?;
    ensure(a.total.to_bits() == b.total.to_bits(), || format!("next-step loss {} vs {}", a.total, b.total))?;
    Ok(format!("pgm bytes identical, resumed next-step loss {} bit-identical", a.total))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("gradient suite", gradient_suite_passes),
        ("loss correctness", loss_correctness),
        ("free-pixel overfit", overfit),
        ("training smoke", training_smoke),
        ("position embedding", position_embedding),
        ("metric oracles", metric_oracles),
        ("ablation matrix", ablation),
        ("image and checkpoint i/o", io_round_trips),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
