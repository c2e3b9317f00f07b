//! One-factor ablation sweep over the architecture and training switches.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::{RunConfig, TransformerOrder};
use crate::data::Pair;
use crate::error::{FuseError, Result};
use crate::image::{stack, Image};
use crate::io::write_atomic;
use crate::metrics::{evaluate_all, CSV_HEADER};
use crate::trainer::{is_collapsed, train};

/// Marker written in metric cells of failed configurations.
pub const FAILURE_MARK: &str = "/";

#[derive(Clone, Debug, PartialEq)]
pub struct AblationConfig {
    pub axis: &'static str,
    pub level: String,
    pub run: RunConfig,
}

impl AblationConfig {
    /// Row key: the configuration plus the axis and level it stands for, so
    /// levels that coincide with the base still get their own rows.
    pub fn hash(&self) -> String {
        short_hash(&format!("{}={}\n{}", self.axis, self.level, self.run.to_text()))
    }
}

fn short_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// First 16 hex digits of the SHA-256 of the serialized configuration.
pub fn config_hash(run: &RunConfig) -> String {
    short_hash(&run.to_text())
}

/// Every axis level applied to `base` on its own: GAN on/off, the four
/// transformer orders, position embedding on/off, 3–5 encoder layers,
/// 2–5 CNN layers and 32/64/128 channels.
pub fn ablation_matrix(base: &RunConfig) -> Vec<AblationConfig> {
    let mut out = Vec::new();
    let mut push = |axis: &'static str, level: String, edit: &dyn Fn(&mut RunConfig)| {
        let mut run = base.clone();
        edit(&mut run);
        out.push(AblationConfig { axis, level, run });
    };
    for gan in [false, true] {
        push("use_gan", gan.to_string(), &|r| r.fusion.use_gan = gan);
    }
    for order in TransformerOrder::ALL {
        push("transformer_order", order.to_string(), &|r| r.fusion.transformer_order = order);
    }
    for pe in [false, true] {
        push("use_position_embedding", pe.to_string(), &|r| r.fusion.use_position_embedding = pe);
    }
    for n in [3, 4, 5] {
        push("encoder_layers", n.to_string(), &|r| r.fusion.encoder_layers = n);
    }
    for n in [2, 3, 4, 5] {
        push("cnn_layers", n.to_string(), &|r| r.fusion.cnn_layers = n);
    }
    for c in [32, 64, 128] {
        push("channels", c.to_string(), &|r| r.fusion.channels = c);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    /// Metric means over the evaluation pairs, in report column order.
    Metrics([f64; 9]),
    Failure(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub hash: String,
    pub axis: String,
    pub level: String,
    pub config: Vec<String>,
    pub outcome: Outcome,
}

/// Config columns recorded in every row.
pub const CONFIG_COLUMNS: [&str; 6] = [
    "cnn_layers",
    "channels",
    "encoder_layers",
    "transformer_order",
    "use_position_embedding",
    "use_gan",
];

pub fn csv_header() -> Vec<String> {
    let mut h: Vec<String> = ["hash", "axis", "level"].iter().map(|s| s.to_string()).collect();
    h.extend(CONFIG_COLUMNS.iter().map(|s| s.to_string()));
    h.push("status".into());
    h.extend(CSV_HEADER[1..].iter().map(|s| s.to_string()));
    h.push("detail".into());
    h
}

impl AblationRow {
    pub fn record(&self) -> Vec<String> {
        let mut r = vec![self.hash.clone(), self.axis.clone(), self.level.clone()];
        r.extend(self.config.iter().cloned());
        match &self.outcome {
            Outcome::Metrics(v) => {
                r.push("ok".into());
                r.extend(v.iter().map(|x| format!("{x:.6}")));
                r.push(String::new());
            }
            Outcome::Failure(why) => {
                r.push("training failure".into());
                r.extend(std::iter::repeat_n(FAILURE_MARK.to_string(), 9));
                r.push(why.clone());
            }
        }
        r
    }

    fn parse(rec: &csv::StringRecord) -> Option<AblationRow> {
        let f: Vec<&str> = rec.iter().collect();
        if f.len() != csv_header().len() {
            return None;
        }
        let n = CONFIG_COLUMNS.len();
        let status = f[3 + n];
        let outcome = if status == "ok" {
            let mut v = [0.0; 9];
            for (slot, s) in v.iter_mut().zip(&f[4 + n..13 + n]) {
                *slot = s.parse().ok()?;
            }
            Outcome::Metrics(v)
        } else {
            Outcome::Failure(f[13 + n].to_string())
        };
        Some(AblationRow {
            hash: f[0].into(),
            axis: f[1].into(),
            level: f[2].into(),
            config: f[3..3 + n].iter().map(|s| s.to_string()).collect(),
            outcome,
        })
    }
}

/// Trains one configuration and scores it on `eval`. Errors, non-finite
/// scores and collapsed outputs all become failures.
pub fn run_config(run: &RunConfig, train_set: &[Pair], eval: &[Pair]) -> Outcome {
    match try_run(run, train_set, eval) {
        Ok(o) => o,
        Err(e) => Outcome::Failure(e.to_string()),
    }
}

fn try_run(run: &RunConfig, train_set: &[Pair], eval: &[Pair]) -> Result<Outcome> {
    let (trainer, _) = train::<f32>(train_set, run, None)?;
    let mut sum = [0.0; 9];
    for p in eval {
        let fused = trainer
            .generator
            .generate(&stack(&[&p.ir]), &stack(&[&p.vis]))?;
        let fused = Image::from_tensor(&fused, 0)?;
        if is_collapsed(&fused) {
            return Ok(Outcome::Failure(format!("collapsed output on {}", p.name)));
        }
        let report = evaluate_all(&p.name, &p.ir, &p.vis, &fused)?;
        for (s, v) in sum.iter_mut().zip(report.values()) {
            *s += v;
        }
    }
    let mean = sum.map(|s| s / eval.len() as f64);
    if mean.iter().any(|v| !v.is_finite()) {
        return Ok(Outcome::Failure("non-finite metric".into()));
    }
    Ok(Outcome::Metrics(mean))
}

pub fn read_rows(path: &Path) -> Result<Vec<AblationRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| FuseError::format(path.display().to_string(), 0, e.to_string()))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let offset = e.position().map_or(0, |p| p.byte());
            FuseError::format(path.display().to_string(), offset, e.to_string())
        })?;
        if let Some(row) = AblationRow::parse(&rec) {
            rows.push(row);
        }
    }
    Ok(rows)
}

fn write_rows(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| FuseError::input(format!("writing ablation csv: {e}"));
    w.write_record(csv_header()).map_err(err)?;
    for row in rows {
        w.write_record(row.record()).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| FuseError::input(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Runs every configuration whose hash is not already in `csv_path`,
/// rewriting the file after each one so an interrupted sweep resumes where
/// it stopped. `progress` sees each row as it completes; the return value
/// lists all rows in matrix order.
pub fn ablation_run(
    matrix: &[AblationConfig],
    train_set: &[Pair],
    eval: &[Pair],
    csv_path: &Path,
    mut progress: impl FnMut(&AblationRow, bool),
) -> Result<Vec<AblationRow>> {
    if eval.is_empty() {
        return Err(FuseError::input("ablation needs at least one evaluation pair"));
    }
    let mut rows = read_rows(csv_path)?;
    let mut memo: HashMap<String, Outcome> = HashMap::new();
    let done: HashSet<String> = rows.iter().map(|r| r.hash.clone()).collect();
    for cfg in matrix {
        let hash = cfg.hash();
        if done.contains(&hash) {
            if let Some(row) = rows.iter().find(|r| r.hash == hash) {
                progress(row, true);
            }
            continue;
        }
        let row = AblationRow {
            hash,
            axis: cfg.axis.to_string(),
            level: cfg.level.clone(),
            config: CONFIG_COLUMNS
                .iter()
                .map(|k| cfg.run.get(k).expect("config column"))
                .collect(),
            outcome: memo
                .entry(config_hash(&cfg.run))
                .or_insert_with(|| run_config(&cfg.run, train_set, eval))
                .clone(),
        };
        progress(&row, false);
        rows.push(row);
        write_rows(csv_path, &rows)?;
    }
    let order: Vec<String> = matrix.iter().map(AblationConfig::hash).collect();
    rows.retain(|r| order.contains(&r.hash));
    rows.sort_by_key(|r| order.iter().position(|h| *h == r.hash));
    Ok(rows)
}
