use std::io::Write;
use std::path::{Path, PathBuf};

use relgraph::scene::{load_scene, Scene};
use relgraph::train::Metrics;

use crate::error::{CliError, CliResult};

pub fn scene_file_name(seed: u64) -> String {
    format!("scene_{seed}.jsonl")
}

/// Seed encoded in a `scene_<seed>.jsonl` name.
pub fn parse_scene_file_name(name: &str) -> Option<u64> {
    name.strip_prefix("scene_")?.strip_suffix(".jsonl")?.parse().ok()
}

/// Every scene file in `dir`, ordered by seed.
pub fn scene_files(dir: &Path) -> CliResult<Vec<(u64, PathBuf)>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(CliError::io(dir))? {
        let entry = entry.map_err(CliError::io(dir))?;
        if let Some(seed) = entry.file_name().to_str().and_then(parse_scene_file_name) {
            files.push((seed, entry.path()));
        }
    }
    if files.is_empty() {
        return Err(CliError::Config(format!("no scene_<seed>.jsonl files in {}", dir.display())));
    }
    files.sort();
    Ok(files)
}

pub fn load_scene_dir(dir: &Path) -> CliResult<Vec<Scene>> {
    scene_files(dir)?
        .into_iter()
        .map(|(_, p)| load_scene(&p).map_err(|e| match e {
            relgraph::Error::Io(source) => CliError::Io { path: p.clone(), source },
            other => CliError::Config(format!("{}: {other}", p.display())),
        }))
        .collect()
}

pub fn absolute(p: &Path) -> CliResult<PathBuf> {
    std::fs::canonicalize(p).map_err(CliError::io(p))
}

pub fn metric_header(prefix: &[&str], classes: usize) -> Vec<String> {
    let mut h: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    h.extend(
        ["mode", "seed", "iter", "loss", "acc_overall", "acc_ambiguous"]
            .iter()
            .map(|s| s.to_string()),
    );
    h.extend((0..classes).map(|c| format!("acc_class_{c}")));
    h
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metric_fields(
    mode: &str,
    seed: &str,
    iter: usize,
    loss: f64,
    acc: f64,
    amb: Option<f64>,
    per_class: &[Option<f64>],
) -> Vec<String> {
    let mut row = vec![
        mode.to_string(),
        seed.to_string(),
        iter.to_string(),
        loss.to_string(),
        acc.to_string(),
        opt(amb),
    ];
    row.extend(per_class.iter().map(|&v| opt(v)));
    row
}

pub fn metrics_fields(mode: &str, seed: &str, iter: usize, m: &Metrics) -> Vec<String> {
    metric_fields(mode, seed, iter, m.loss, m.acc_overall, m.acc_ambiguous, &m.per_class)
}

/// CSV writer that flushes after every record, so rows already written
/// survive a later failure.
pub struct RowWriter {
    inner: csv::Writer<std::fs::File>,
}

impl RowWriter {
    pub fn create(path: &Path, header: &[String]) -> CliResult<Self> {
        let file = std::fs::File::create(path).map_err(CliError::io(path))?;
        let mut w = Self {
            inner: csv::Writer::from_writer(file),
        };
        w.row(header)?;
        Ok(w)
    }

    pub fn row(&mut self, fields: &[String]) -> CliResult<()> {
        self.inner.write_record(fields)?;
        self.inner.flush().map_err(|e| CliError::Csv(e.into()))?;
        Ok(())
    }
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut f = std::fs::File::create(path).map_err(CliError::io(path))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n").map_err(CliError::io(path))
}
