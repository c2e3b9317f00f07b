//! The `tgfuse` command line: fuse, train, eval, gradcheck and ablate.
//!
//! [`run`] returns the process exit code: 0 on success, 1 for usage, input,
//! format and I/O errors, 2 for numerical failures. `--seed` on train and
//! ablate overrides the config seed; the other subcommands are deterministic.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use tgfuse::ablation::{ablation_matrix, ablation_run, Outcome};
use tgfuse::checkpoint::load_generator;
use tgfuse::data::synthetic_dataset;
use tgfuse::gradsuite::gradient_suite;
use tgfuse::image::stack;
use tgfuse::io::{load_image, load_pairs, read_file, save_image, write_atomic};
use tgfuse::metrics::{evaluate_all, write_csv, MetricReport};
use tgfuse::{FuseError, Image, Pair, Result, RunConfig, Trainer32, TrainLog};

#[derive(Parser, Debug)]
#[command(name = "tgfuse", version, about = "Infrared/visible image fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fuse one infrared/visible pair with a trained generator.
    Fuse {
        #[arg(long)]
        ir: PathBuf,
        #[arg(long)]
        vis: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Generator checkpoint, or a training output directory holding one.
        #[arg(long)]
        ckpt: PathBuf,
        /// Config the checkpoint must match.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train on DATA/ir and DATA/vis, writing checkpoints and a log to OUT.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from the checkpoint in OUT.
        #[arg(long)]
        resume: bool,
    },
    /// Score fused images; each path is a file or a directory of images
    /// matched by stem.
    Eval {
        #[arg(long)]
        ir: PathBuf,
        #[arg(long)]
        vis: PathBuf,
        #[arg(long)]
        fused: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        /// Run only cases whose name contains this.
        #[arg(long)]
        op: Option<String>,
    },
    /// Run the one-factor ablation sweep around a base config.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV; rows already present are skipped.
        #[arg(long)]
        out: PathBuf,
        /// Directory with ir/ and vis/; synthetic pairs when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

pub fn exit_code(e: &FuseError) -> i32 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("tgfuse: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Fuse {
            ir,
            vis,
            out,
            ckpt,
            config,
        } => fuse(&ir, &vis, &out, &ckpt, config.as_deref()),
        Command::Train {
            data,
            out,
            config,
            seed,
            resume,
        } => train_cmd(&data, &out, &config, seed, resume),
        Command::Eval {
            ir,
            vis,
            fused,
            csv,
        } => eval(&ir, &vis, &fused, &csv),
        Command::Gradcheck { op } => gradcheck(op.as_deref()),
        Command::Ablate {
            config,
            out,
            data,
            seed,
        } => ablate(&config, &out, data.as_deref(), seed),
    }
}

fn read_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|e| FuseError::format(path.display().to_string(), e.utf8_error().valid_up_to() as u64, "not UTF-8"))?;
    let mut run: RunConfig = text
        .parse()
        .map_err(|e| FuseError::input(format!("{}: {e}", path.display())))?;
    if let Some(seed) = seed {
        run.train.seed = seed;
    }
    Ok(run)
}

fn fuse(ir: &Path, vis: &Path, out: &Path, ckpt: &Path, config: Option<&Path>) -> Result<()> {
    let file = if ckpt.is_dir() {
        ckpt.join(tgfuse::trainer::GENERATOR_FILE)
    } else {
        ckpt.to_path_buf()
    };
    let ck = load_generator::<f32>(&file)?;
    if let Some(path) = config {
        let want = read_config(path, None)?;
        if want.fusion != ck.run.fusion {
            return Err(FuseError::input(format!(
                "{} describes a different architecture than {}",
                path.display(),
                file.display()
            )));
        }
    }
    let (a, b) = (load_image(ir)?, load_image(vis)?);
    if !a.same_size(&b) {
        return Err(FuseError::input(format!(
            "infrared is {}x{}, visible is {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let m = ck.generator.config.required_multiple();
    let (pa, crop) = a.pad_to_multiple(m);
    let (pb, _) = b.pad_to_multiple(m);
    let fused = ck.generator.generate(&stack(&[&pa]), &stack(&[&pb]))?;
    let fused = Image::from_tensor(&fused, 0)?.crop(crop);
    save_image(out, &fused)
}

fn train_cmd(data: &Path, out: &Path, config: &Path, seed: Option<u64>, resume: bool) -> Result<()> {
    let run = read_config(config, seed)?;
    let set = load_pairs(&data.join("ir"), &data.join("vis"))?;
    for w in &set.warnings {
        eprintln!("warning: {w}");
    }
    let mut trainer = if resume {
        let t = Trainer32::resume(out)?;
        if t.run.fusion != run.fusion {
            return Err(FuseError::input("checkpoint architecture differs from the config"));
        }
        t
    } else {
        Trainer32::new(run.clone())?
    };
    trainer.run.train.epochs = run.train.epochs;
    std::fs::create_dir_all(out).map_err(|e| FuseError::io(out, e))?;
    let mut log = TrainLog::default();
    let result = trainer.fit(&set.pairs, &mut log, Some(out));
    let mut csv = Vec::new();
    log.write_csv(&mut csv)?;
    write_atomic(&out.join("train_log.csv"), &csv)?;
    result?;
    if let Some(last) = log.records().last() {
        eprintln!("trained to step {}; last loss {:.6}", last.step, last.generator.total);
    }
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn eval(ir: &Path, vis: &Path, fused: &Path, csv: &Path) -> Result<()> {
    let mut reports: Vec<MetricReport> = Vec::new();
    if ir.is_dir() && vis.is_dir() && fused.is_dir() {
        let set = load_pairs(ir, vis)?;
        for w in &set.warnings {
            eprintln!("warning: {w}");
        }
        for pair in &set.pairs {
            let f = ["pgm", "png"]
                .iter()
                .map(|ext| fused.join(format!("{}.{ext}", pair.name)))
                .find(|p| p.is_file())
                .ok_or_else(|| FuseError::input(format!("no fused image for {}", pair.name)))?;
            reports.push(evaluate_all(&pair.name, &pair.ir, &pair.vis, &load_image(&f)?)?);
        }
    } else {
        let (a, b, f) = (load_image(ir)?, load_image(vis)?, load_image(fused)?);
        reports.push(evaluate_all(&stem(fused), &a, &b, &f)?);
    }
    let mut bytes = Vec::new();
    write_csv(&mut bytes, &reports)?;
    write_atomic(csv, &bytes)
}

fn gradcheck(filter: Option<&str>) -> Result<()> {
    let cases: Vec<_> = gradient_suite()
        .into_iter()
        .filter(|c| filter.is_none_or(|f| c.name.contains(f)))
        .collect();
    if cases.is_empty() {
        return Err(FuseError::input(format!("no gradient check matches {:?}", filter.unwrap_or(""))));
    }
    let mut failed = Vec::new();
    for case in cases {
        let o = case.run()?;
        let mark = if o.passed() { "ok" } else { "FAIL" };
        println!(
            "{mark:4} {:24} {:.3e} (tolerance {:.0e}, {} coords)",
            o.name,
            o.report.max_rel_err,
            o.tolerance,
            o.report.coords_checked
        );
        if !o.passed() {
            failed.push(o.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(FuseError::Numerical {
            stage: "gradient check".into(),
            detail: format!("tolerance exceeded by {}", failed.join(", ")),
        })
    }
}

fn ablate(config: &Path, out: &Path, data: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let base = read_config(config, seed)?;
    let (train_set, eval_set): (Vec<Pair>, Vec<Pair>) = match data {
        Some(dir) => {
            let set = load_pairs(&dir.join("ir"), &dir.join("vis"))?;
            for w in &set.warnings {
                eprintln!("warning: {w}");
            }
            let mut pairs = set.pairs;
            if pairs.len() < 2 {
                return Err(FuseError::input("ablation needs at least two pairs"));
            }
            // The last fifth, at least one pair, is held out for scoring.
            let eval = pairs.split_off(pairs.len() - (pairs.len() / 5).max(1));
            (pairs, eval)
        }
        None => {
            let s = base.train.seed;
            (synthetic_dataset(8, 32, 32, s), synthetic_dataset(2, 32, 32, s.wrapping_add(1)))
        }
    };
    let matrix = ablation_matrix(&base);
    let rows = ablation_run(&matrix, &train_set, &eval_set, out, |row, skipped| {
        let status = match (&row.outcome, skipped) {
            (_, true) => "skipped (already in csv)".to_string(),
            (Outcome::Metrics(_), false) => "ok".to_string(),
            (Outcome::Failure(d), false) => format!("training failure: {d}"),
        };
        eprintln!("{}={}: {status}", row.axis, row.level);
    })?;
    eprintln!("{} rows in {}", rows.len(), out.display());
    Ok(())
}
