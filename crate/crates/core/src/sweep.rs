//! One-axis sweeps over a base run config.
//!
//! Each (value, seed) cell is an ordinary run in its own directory. Cells
//! with the same seed start from the same initial weights, since those depend
//! only on the seed and the model shape. A failing cell is recorded and the
//! sweep moves on.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::{read_metrics, train_run, RunConfig, RunLayout, TrainOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    BatchSize,
    LearningRate,
    /// `none`, `attn-dropout` (p = 0.1) or `weight-decay` (λ = 0.1).
    Regularizer,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::BatchSize => "batch_size",
            SweepAxis::LearningRate => "learning_rate",
            SweepAxis::Regularizer => "regularizer",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Number(f64),
    Name(String),
}

impl SweepValue {
    /// Text used in directory names and the combined CSV.
    pub fn label(&self) -> String {
        match self {
            SweepValue::Number(v) => format!("{v}"),
            SweepValue::Name(s) => s.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Path of the base run config (TOML), relative to the spec file.
    pub base: PathBuf,
    pub axis: SweepAxis,
    pub values: Vec<SweepValue>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl SweepSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: Self = toml::from_str(s).map_err(|e| Error::Toml(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Loads a spec and resolves `base` against the spec's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::from_toml_str(&text)?;
        if spec.base.is_relative() {
            if let Some(dir) = path.parent() {
                spec.base = dir.join(&spec.base);
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("a sweep needs at least one value and one seed".into()));
        }
        let mut labels: Vec<String> = self.values.iter().map(SweepValue::label).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.values.len() {
            return Err(Error::Config("sweep values repeat".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::Config("sweep seeds repeat".into()));
        }
        Ok(())
    }

    pub fn cell_dir(&self, value: &SweepValue, seed: u64) -> PathBuf {
        self.out_dir
            .join(format!("{}={}", self.axis.name(), value.label()))
            .join(format!("seed={seed}"))
    }

    /// Every cell's config, values outermost.
    pub fn cells(&self, base: &RunConfig) -> Result<Vec<SweepCell>> {
        let mut out = Vec::new();
        for value in &self.values {
            for &seed in &self.seeds {
                let mut config = apply_value(base, self.axis, value)?;
                config.seed = seed;
                config.out_dir = self.cell_dir(value, seed);
                config.validate()?;
                out.push(SweepCell {
                    value: value.clone(),
                    seed,
                    config,
                });
            }
        }
        Ok(out)
    }
}

pub fn apply_value(base: &RunConfig, axis: SweepAxis, value: &SweepValue) -> Result<RunConfig> {
    let mut cfg = base.clone();
    let bad = || Error::Config(format!("{} is not a valid {} value", value.label(), axis.name()));
    match (axis, value) {
        (SweepAxis::BatchSize, SweepValue::Number(v)) if *v >= 1.0 && v.fract() == 0.0 => {
            cfg.train.batch_size = *v as usize;
        }
        (SweepAxis::LearningRate, SweepValue::Number(v)) if *v > 0.0 => cfg.train.peak_lr = *v,
        (SweepAxis::Regularizer, SweepValue::Name(n)) => match n.as_str() {
            "none" => {
                cfg.model.attn_dropout = 0.0;
                cfg.train.weight_decay = 0.0;
            }
            "attn-dropout" => {
                cfg.model.attn_dropout = 0.1;
                cfg.train.weight_decay = 0.0;
            }
            "weight-decay" => {
                cfg.model.attn_dropout = 0.0;
                cfg.train.weight_decay = 0.1;
            }
            _ => return Err(bad()),
        },
        _ => return Err(bad()),
    }
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub value: SweepValue,
    pub seed: u64,
    pub config: RunConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub value: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub failed: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub axis: SweepAxis,
    pub cells: Vec<CellOutcome>,
}

impl SweepSummary {
    pub fn n_failed(&self) -> usize {
        self.cells.iter().filter(|c| c.failed).count()
    }
}

pub const SWEEP_CSV_HEADER: &str = "axis,value,seed,step,tokens_seen,lr,train_loss,copy_acc,failed";

/// Runs every cell in order and writes `sweep.csv` and `sweep_summary.json`
/// under the sweep's output directory.
pub fn run_sweep(spec: &SweepSpec, base: &RunConfig, opts: &TrainOptions) -> Result<SweepSummary> {
    let cells = spec.cells(base)?;
    prepare_sweep_dir(spec, opts.force)?;
    let mut outcomes = Vec::new();
    for cell in &cells {
        let result = train_run(&cell.config, opts);
        outcomes.push(CellOutcome {
            value: cell.value.label(),
            seed: cell.seed,
            dir: cell.config.out_dir.clone(),
            failed: result.is_err(),
            error: result.err().map(|e| e.to_string()),
        });
    }
    finish_sweep(spec, outcomes)
}

/// Creates the sweep directory, clearing it first under `force`.
pub fn prepare_sweep_dir(spec: &SweepSpec, force: bool) -> Result<()> {
    let root = &spec.out_dir;
    let occupied = std::fs::read_dir(root).map(|mut d| d.next().is_some()).unwrap_or(false);
    if occupied {
        if !force {
            return Err(Error::Config(format!(
                "output directory {} is not empty; pass force to overwrite",
                root.display()
            )));
        }
        std::fs::remove_dir_all(root).map_err(|e| Error::io(root, e))?;
    }
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let text = serde_json::to_string_pretty(spec)?;
    let path = root.join("sweep.json");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Writes the combined CSV and the summary from per-cell outcomes.
pub fn finish_sweep(spec: &SweepSpec, cells: Vec<CellOutcome>) -> Result<SweepSummary> {
    let mut csv = String::from(SWEEP_CSV_HEADER);
    csv.push('\n');
    for cell in &cells {
        let path = RunLayout::new(&cell.dir).metrics();
        let records = match read_metrics(&path) {
            Ok(r) => r,
            Err(_) if cell.failed => Vec::new(),
            Err(e) => return Err(e),
        };
        for r in records {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{}",
                spec.axis.name(),
                cell.value,
                cell.seed,
                r.step,
                r.tokens_seen,
                r.lr,
                r.train_loss,
                r.copy_acc,
                cell.failed
            );
        }
    }
    let path = spec.out_dir.join("sweep.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    let summary = SweepSummary {
        axis: spec.axis,
        cells,
    };
    let path = spec.out_dir.join("sweep_summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(axis: &str, values: &str) -> Result<SweepSpec> {
        SweepSpec::from_toml_str(&format!(
            "base = \"base.toml\"\naxis = \"{axis}\"\nvalues = {values}\nseeds = [1, 2]\nout_dir = \"out\"\n"
        ))
    }

    #[test]
    fn cell_dirs_are_distinct() {
        let s = spec("learning_rate", "[0.0005, 0.001, 0.002]").unwrap();
        let cells = s.cells(&RunConfig::desk()).unwrap();
        assert_eq!(cells.len(), 6);
        let mut dirs: Vec<_> = cells.iter().map(|c| c.config.out_dir.clone()).collect();
        dirs.sort();
        dirs.dedup();
        assert_eq!(dirs.len(), 6);
        assert_eq!(cells[2].config.train.peak_lr, 0.001);
        assert_eq!(cells[2].seed, 1);
    }

    #[test]
    fn regularizer_values() {
        let s = spec("regularizer", "[\"none\", \"attn-dropout\", \"weight-decay\"]").unwrap();
        let cells = s.cells(&RunConfig::desk()).unwrap();
        assert_eq!(cells[2].config.model.attn_dropout, 0.1);
        assert_eq!(cells[4].config.train.weight_decay, 0.1);
        assert_eq!(cells[4].config.model.attn_dropout, 0.0);
    }

    #[test]
    fn bad_values_are_rejected() {
        let s = spec("batch_size", "[16.5]").unwrap();
        assert!(s.cells(&RunConfig::desk()).is_err());
        let s = spec("regularizer", "[\"dropout\"]").unwrap();
        assert!(s.cells(&RunConfig::desk()).is_err());
        assert!(spec("batch_size", "[16, 16]").is_err());
        assert!(spec("depth", "[1]").is_err());
    }

    #[test]
    fn same_seed_same_init() {
        let s = spec("batch_size", "[16, 32]").unwrap();
        let cells = s.cells(&RunConfig::desk()).unwrap();
        let a = cells[0].config.initial_weights().unwrap();
        let b = cells[2].config.initial_weights().unwrap();
        assert_eq!(a, b);
        assert_ne!(a, cells[1].config.initial_weights().unwrap());
    }
}
