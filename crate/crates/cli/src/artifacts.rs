//! Files every run leaves behind: manifest, metrics CSV and summary JSON.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cnc::cnc::evaluate;
use cnc::data::{LabeledDataset, Split};
use cnc::metrics::{write_metric_rows, MetricRow, MetricsReport};
use cnc::nn::MlpModel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Bumped whenever the manifest or summary layout changes.
pub const SCHEMA_VERSION: u32 = 1;

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("CNC_GIT_DESCRIBE"));

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: impl Serialize) -> Result<Self> {
        Ok(Self {
            schema: SCHEMA_VERSION,
            version: VERSION.into(),
            command: command.into(),
            argv: std::env::args().skip(1).collect(),
            seed,
            config: serde_json::to_value(config)?,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputFile {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.into());
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        write_json(&out.join("manifest.json"), self)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    write_metric_rows(rows, std::io::BufWriter::new(file))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub avg_acc: f64,
    pub worst_group_acc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_class_alignment: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mi_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mi_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_holds: Option<bool>,
}

impl From<&MetricsReport> for SplitSummary {
    fn from(r: &MetricsReport) -> Self {
        Self {
            avg_acc: r.avg_acc(),
            worst_group_acc: r.worst_group_acc(),
            mean_class_alignment: r.mean_class_alignment(),
            mi_y: r.mi_y,
            mi_a: r.mi_a,
            bound_holds: r.bound.as_ref().map(|b| b.holds()),
        }
    }
}

/// The cell coordinates of a run, shared by `pipeline` and `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: String,
    pub p_corr: f64,
    /// Group inference used by the method; `none` for ERM and group DRO.
    pub inference: String,
    pub noise_p: f64,
    /// Sampler mode and λ; only set for CnC-style methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: u32,
    pub run: String,
    pub seed: u64,
    #[serde(flatten)]
    pub cell: Cell,
    pub best_epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1_accuracy_vs_y: Option<f64>,
    pub val: SplitSummary,
    pub test: SplitSummary,
}

pub struct Evaluation {
    pub rows: Vec<MetricRow>,
    pub val: MetricsReport,
    pub test: MetricsReport,
}

/// Val and test reports for a finished model; the extra metrics are only
/// computed on test.
pub fn evaluate_model(
    model: &MlpModel,
    ds: &LabeledDataset,
    run: &str,
    epoch: usize,
    bound: bool,
    mi: bool,
) -> Result<Evaluation> {
    let val = evaluate(model, ds, Split::Val, false, false)?;
    let test = evaluate(model, ds, Split::Test, bound, mi)?;
    let mut rows = val.rows(run, epoch);
    rows.extend(test.rows(run, epoch));
    Ok(Evaluation { rows, val, test })
}
