use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Split};
use crate::error::Result;
use crate::metrics::accuracy::{accuracy_from_logits, AccuracyReport};
use crate::metrics::alignment::RepresentationView;
use crate::metrics::bound::{bound_from_view, BoundConfig, BoundReport};
use crate::metrics::mi::{mutual_information, MiConfig};
use crate::nn::{spectral_norm, MlpModel};

/// Which optional diagnostics to compute alongside accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub alignment: bool,
    /// Use unit-norm representations for alignment.
    pub normalized_alignment: bool,
    pub mi: Option<MiConfig>,
    pub bound: Option<BoundConfig>,
}

impl EvalOptions {
    pub fn accuracy_only() -> Self {
        Self {
            alignment: false,
            normalized_alignment: false,
            mi: None,
            bound: None,
        }
    }

    pub fn full() -> Self {
        Self {
            alignment: true,
            normalized_alignment: false,
            mi: Some(MiConfig::default()),
            bound: Some(BoundConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: Split,
    pub accuracy: AccuracyReport,
    /// Indexed by class; `None` where fewer than two groups are present.
    pub per_class_align: Vec<Option<f64>>,
    pub mi_y: Option<f64>,
    pub mi_a: Option<f64>,
    pub bound: Option<BoundReport>,
}

/// One long-format CSV record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run: String,
    pub epoch: usize,
    pub split: Split,
    pub metric: String,
    pub value: f64,
}

impl MetricsReport {
    pub fn avg_acc(&self) -> f64 {
        self.accuracy.avg_acc
    }

    pub fn worst_group_acc(&self) -> f64 {
        self.accuracy.worst_group_acc
    }

    /// Mean of the defined per-class alignments.
    pub fn mean_class_alignment(&self) -> Option<f64> {
        let vals: Vec<f64> = self.per_class_align.iter().flatten().copied().collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn rows(&self, run: &str, epoch: usize) -> Vec<MetricRow> {
        let mut out = Vec::new();
        let mut push = |metric: String, value: f64| {
            out.push(MetricRow {
                run: run.to_string(),
                epoch,
                split: self.split,
                metric,
                value,
            })
        };
        let acc = &self.accuracy;
        push("avg_acc".into(), acc.avg_acc);
        push("worst_group_acc".into(), acc.worst_group_acc);
        push("avg_loss".into(), acc.avg_loss);
        push("worst_group_loss".into(), acc.worst_group_loss);
        for g in &acc.per_group {
            let tag = format!("y{}_a{}", g.group.y, g.group.a);
            push(format!("group_acc/{tag}"), g.accuracy);
            push(format!("group_loss/{tag}"), g.mean_loss);
            push(format!("group_n/{tag}"), g.n as f64);
        }
        for (y, v) in self.per_class_align.iter().enumerate() {
            if let Some(v) = v {
                push(format!("class_align/y{y}"), *v);
            }
        }
        if let Some(v) = self.mi_y {
            push("mi_y".into(), v);
        }
        if let Some(v) = self.mi_a {
            push("mi_a".into(), v);
        }
        if let Some(b) = &self.bound {
            push("bound/B".into(), b.b);
            for c in &b.per_class {
                push(format!("bound/lhs/y{}", c.y), c.lhs);
                push(format!("bound/rhs/y{}", c.y), c.rhs);
                push(format!("bound/holds/y{}", c.y), f64::from(u8::from(c.holds)));
            }
            push("bound/global_lhs".into(), b.global.worst_group_loss);
            push("bound/global_rhs".into(), b.global.rhs);
            push("bound/global_holds".into(), f64::from(u8::from(b.global.holds)));
        }
        out
    }
}

pub fn evaluate_split(model: &MlpModel, ds: &LabeledDataset, split: Split, opts: &EvalOptions) -> Result<MetricsReport> {
    let raw = RepresentationView::new(model, ds, split, false)?;
    let accuracy = accuracy_from_logits(ds, split, &raw.idx, &raw.logits)?;
    let per_class_align = if opts.alignment {
        if opts.normalized_alignment {
            RepresentationView::new(model, ds, split, true)?.per_class_alignment()
        } else {
            raw.per_class_alignment()
        }
    } else {
        Vec::new()
    };
    let (mi_y, mi_a) = match &opts.mi {
        Some(cfg) => (
            Some(mutual_information(&raw.reps, &ds.labels_of(&raw.idx), cfg)?),
            Some(mutual_information(&raw.reps, &ds.attributes_of(&raw.idx), cfg)?),
        ),
        None => (None, None),
    };
    let bound = match &opts.bound {
        Some(cfg) => {
            let b = spectral_norm(&model.classifier.weight, cfg.spectral_tol, cfg.spectral_max_iter)?;
            Some(bound_from_view(&raw, &ds.labels_of(&raw.idx), b, cfg)?)
        }
        None => None,
    };
    Ok(MetricsReport {
        split,
        accuracy,
        per_class_align,
        mi_y,
        mi_a,
        bound,
    })
}

/// Writes `run,epoch,split,metric,value` records with a header.
pub fn write_metric_rows<W: Write>(rows: &[MetricRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metric_rows(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_blobs, BlobSpec};
    use crate::nn::ModelConfig;
    use crate::rng;

    #[test]
    fn full_report_on_random_model() {
        let spec = BlobSpec {
            n_train: 100,
            n_val: 50,
            n_test: 400,
            ..BlobSpec::substrate(0.9, 1)
        };
        let ds = build_blobs(&spec).unwrap();
        let cfg = ModelConfig {
            input_dim: ds.feature_dim(),
            hidden: vec![8],
            classes: 5,
            projection: vec![],
        };
        let model = MlpModel::new(&cfg, &mut rng::stream(1, "init")).unwrap();
        let rep = evaluate_split(&model, &ds, Split::Test, &EvalOptions::full()).unwrap();
        assert_eq!(rep.per_class_align.len(), 5);
        assert!(rep.mi_y.unwrap() >= 0.0);
        assert!(rep.bound.as_ref().unwrap().per_class.len() == 5);
        assert!(rep.worst_group_acc() <= rep.avg_acc());

        let rows = rep.rows("r0", 3);
        assert!(rows.iter().any(|r| r.metric == "worst_group_acc"));
        let mut buf = Vec::new();
        write_metric_rows(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("run,epoch,split,metric,value\n"));
        assert_eq!(text.lines().count(), rows.len() + 1);
        let json = serde_json::to_string(&rep).unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.accuracy.n, rep.accuracy.n);
    }
}
