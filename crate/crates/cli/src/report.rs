//! Aggregation of run summaries into mean (std) tables plus trend checks.
//! Output depends only on the summaries found under the run directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::artifacts::{write_json, Cell, Manifest, Summary, SCHEMA_VERSION};
use crate::Common;

/// Largest rise in worst-group accuracy between neighbouring noise levels
/// still counted as non-increasing.
pub const NOISE_SLACK: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stat {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; absent for a single run.
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(v: &[f64]) -> Self {
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        Self { n, mean, std }
    }

    /// Percent with one decimal, std in parentheses when present.
    pub fn cell(&self) -> String {
        match self.std {
            Some(s) => format!("{:.1} ({:.1})", 100.0 * self.mean, 100.0 * s),
            None => format!("{:.1}", 100.0 * self.mean),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Row {
    #[serde(flatten)]
    pub cell: Cell,
    pub seeds: Vec<u64>,
    pub test_worst_group: Stat,
    pub test_avg: Stat,
    pub val_worst_group: Stat,
    /// For CnC rows with a JTT row on the same data, inference and noise.
    pub cnc_ge_jtt: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema: u32,
    pub runs: usize,
    pub rows: Vec<Row>,
    pub checks: Vec<Check>,
}

fn find_summaries(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if e.file_type()?.is_dir() {
            find_summaries(&path, out)?;
        } else if e.file_name() == "summary.json" {
            out.push(path);
        }
    }
    Ok(())
}

pub fn load_summaries(dir: &Path) -> Result<Vec<Summary>> {
    let mut paths = Vec::new();
    find_summaries(dir, &mut paths)?;
    let mut out = Vec::new();
    for p in paths {
        let text = fs::read_to_string(&p)?;
        let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        let schema = v.get("schema").and_then(|s| s.as_u64());
        if schema != Some(u64::from(SCHEMA_VERSION)) {
            bail!(cnc::Error::Schema(format!(
                "{} has schema {schema:?}, this build reads {SCHEMA_VERSION}",
                p.display()
            )));
        }
        out.push(serde_json::from_value(v).with_context(|| format!("parsing {}", p.display()))?);
    }
    if out.is_empty() {
        bail!("no summary.json files under {}", dir.display());
    }
    Ok(out)
}

fn key(c: &Cell) -> String {
    serde_json::to_string(c).expect("cell serializes")
}

pub fn aggregate(summaries: &[Summary]) -> Report {
    let mut groups: BTreeMap<String, Vec<&Summary>> = BTreeMap::new();
    for s in summaries {
        groups.entry(key(&s.cell)).or_default().push(s);
    }
    let mut rows: Vec<Row> = groups
        .values()
        .map(|g| {
            let col = |f: &dyn Fn(&Summary) -> f64| Stat::of(&g.iter().map(|s| f(s)).collect::<Vec<_>>());
            Row {
                cell: g[0].cell.clone(),
                seeds: g.iter().map(|s| s.seed).collect(),
                test_worst_group: col(&|s| s.test.worst_group_acc),
                test_avg: col(&|s| s.test.avg_acc),
                val_worst_group: col(&|s| s.val.worst_group_acc),
                cnc_ge_jtt: None,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        (&a.cell.method, &a.cell.inference, &a.cell.sampler)
            .cmp(&(&b.cell.method, &b.cell.inference, &b.cell.sampler))
            .then(a.cell.p_corr.total_cmp(&b.cell.p_corr))
            .then(a.cell.noise_p.total_cmp(&b.cell.noise_p))
            .then(a.cell.lambda.unwrap_or(0.0).total_cmp(&b.cell.lambda.unwrap_or(0.0)))
    });

    let same_data = |a: &Cell, b: &Cell| a.p_corr == b.p_corr && a.inference == b.inference && a.noise_p == b.noise_p;
    let jtt: Vec<(Cell, f64)> = rows
        .iter()
        .filter(|r| r.cell.method == "jtt")
        .map(|r| (r.cell.clone(), r.test_worst_group.mean))
        .collect();
    for r in rows.iter_mut().filter(|r| r.cell.method == "cnc") {
        r.cnc_ge_jtt = jtt
            .iter()
            .find(|(c, _)| same_data(c, &r.cell))
            .map(|(_, j)| r.test_worst_group.mean >= *j);
    }
    let checks = trend_checks(&rows);
    Report {
        schema: SCHEMA_VERSION,
        runs: summaries.len(),
        rows,
        checks,
    }
}

fn trend_checks(rows: &[Row]) -> Vec<Check> {
    let mut checks = Vec::new();
    // Worst-group accuracy against noise, per method series.
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.cell.inference != "none") {
        let c = Cell { noise_p: 0.0, ..r.cell.clone() };
        series.entry(key(&c)).or_default().push((r.cell.noise_p, r.test_worst_group.mean));
    }
    for (k, mut pts) in series {
        if pts.len() < 2 {
            continue;
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let worst_rise = pts.windows(2).map(|w| w[1].1 - w[0].1).fold(f64::NEG_INFINITY, f64::max);
        let c: Cell = serde_json::from_str(&k).expect("own key");
        checks.push(Check {
            name: format!("{} ({}, p_corr {}) non-increasing in noise", c.method, c.inference, c.p_corr),
            pass: worst_rise <= NOISE_SLACK,
            detail: format!("largest rise {:.1} points", 100.0 * worst_rise),
        });
    }
    let cnc_cells: Vec<&Row> = rows.iter().filter(|r| r.cnc_ge_jtt.is_some()).collect();
    if !cnc_cells.is_empty() {
        let wins = cnc_cells.iter().filter(|r| r.cnc_ge_jtt == Some(true)).count();
        checks.push(Check {
            name: "CnC >= JTT worst-group in every cell".into(),
            pass: wins == cnc_cells.len(),
            detail: format!("{wins} of {} cells", cnc_cells.len()),
        });
    }
    let find = |method: &str, sampler: Option<&str>| {
        rows.iter()
            .find(|r| r.cell.method == method && sampler.is_none_or(|s| r.cell.sampler.as_deref() == Some(s)))
            .map(|r| r.test_worst_group.mean)
    };
    if let (Some(c), Some(s)) = (find("cnc", Some("cnc_two_sided")), find("cnc", Some("supcon"))) {
        checks.push(Check {
            name: "CnC sampling beats SupCon sampling by 10 points".into(),
            pass: c - s >= 0.10,
            detail: format!("{:.1} vs {:.1}", 100.0 * c, 100.0 * s),
        });
    }
    if let (Some(c), Some(g)) = (find("cnc-star", None), find("gdro", None)) {
        checks.push(Check {
            name: "CnC* within 2 points of group DRO or better".into(),
            pass: c >= g - 0.02,
            detail: format!("{:.1} vs {:.1}", 100.0 * c, 100.0 * g),
        });
    }
    checks
}

pub fn run(common: &Common, runs: &Path) -> Result<()> {
    let summaries = load_summaries(runs)?;
    let report = aggregate(&summaries);
    fs::create_dir_all(&common.out)?;

    let mut w = csv::Writer::from_path(common.out.join("report.csv"))?;
    w.write_record([
        "method",
        "p_corr",
        "inference",
        "noise_p",
        "sampler",
        "lambda",
        "n",
        "test_worst_group_mean",
        "test_worst_group_std",
        "test_avg_mean",
        "test_avg_std",
        "test_worst_group",
        "test_avg",
        "cnc_ge_jtt",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &report.rows {
        let c = &r.cell;
        w.write_record([
            c.method.clone(),
            c.p_corr.to_string(),
            c.inference.clone(),
            c.noise_p.to_string(),
            c.sampler.clone().unwrap_or_default(),
            opt(c.lambda),
            r.test_worst_group.n.to_string(),
            r.test_worst_group.mean.to_string(),
            opt(r.test_worst_group.std),
            r.test_avg.mean.to_string(),
            opt(r.test_avg.std),
            r.test_worst_group.cell(),
            r.test_avg.cell(),
            r.cnc_ge_jtt.map(|b| b.to_string()).unwrap_or_default(),
        ])?;
        println!(
            "{:<9} p_corr {:<6} {:<8} noise {:<5} {:<16} worst-group {:<12} avg {}",
            c.method,
            c.p_corr,
            c.inference,
            c.noise_p,
            c.sampler.as_deref().unwrap_or(""),
            r.test_worst_group.cell(),
            r.test_avg.cell()
        );
    }
    w.flush()?;
    for c in &report.checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    write_json(&common.out.join("report.json"), &report)?;
    let mut m = Manifest::new("report", common.seed, serde_json::json!({ "runs": runs }))?;
    m.output("report.csv");
    m.output("report.json");
    m.write(&common.out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artifacts::SplitSummary;

    fn summary(method: &str, noise: f64, seed: u64, wg: f64) -> Summary {
        let split = SplitSummary {
            avg_acc: 0.9,
            worst_group_acc: wg,
            mean_class_alignment: None,
            mi_y: None,
            mi_a: None,
            bound_holds: None,
        };
        Summary {
            schema: SCHEMA_VERSION,
            run: format!("{method}_{noise}_{seed}"),
            seed,
            cell: Cell {
                method: method.into(),
                p_corr: 0.995,
                inference: "oracle".into(),
                noise_p: noise,
                sampler: None,
                lambda: None,
            },
            best_epoch: 1,
            stage1_accuracy_vs_y: None,
            val: split.clone(),
            test: split,
        }
    }

    #[test]
    fn mean_and_sample_std_match_hand_computation() {
        let s = Stat::of(&[0.5, 0.6, 0.7]);
        assert!((s.mean - 0.6).abs() < 1e-15);
        assert!((s.std.unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(s.cell(), "60.0 (10.0)");
        let one = Stat::of(&[0.25]);
        assert_eq!(one.std, None);
        assert_eq!(one.cell(), "25.0");
    }

    #[test]
    fn grid_gets_comparison_column_and_trend_checks() {
        let mut v = Vec::new();
        for (k, noise) in [0.0, 0.1].into_iter().enumerate() {
            for seed in 0..3 {
                v.push(summary("cnc", noise, seed, 0.8 - 0.1 * k as f64));
                v.push(summary("jtt", noise, seed, 0.75 - 0.2 * k as f64 + if k == 0 { 0.1 } else { 0.0 }));
            }
        }
        let r = aggregate(&v);
        assert_eq!(r.rows.len(), 4);
        let cnc: Vec<_> = r.rows.iter().filter(|r| r.cell.method == "cnc").map(|r| r.cnc_ge_jtt).collect();
        assert_eq!(cnc, vec![Some(false), Some(true)]);
        assert!(r.rows.iter().filter(|r| r.cell.method == "jtt").all(|r| r.cnc_ge_jtt.is_none()));
        let every = r.checks.iter().find(|c| c.name.starts_with("CnC >= JTT")).unwrap();
        assert!(!every.pass);
        assert!(r.checks.iter().filter(|c| c.name.contains("non-increasing")).all(|c| c.pass));
    }

    #[test]
    fn mixed_schema_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        for (k, schema) in [SCHEMA_VERSION, SCHEMA_VERSION + 1].into_iter().enumerate() {
            let d = dir.path().join(format!("r{k}"));
            fs::create_dir_all(&d).unwrap();
            let mut s = serde_json::to_value(summary("erm", 0.0, k as u64, 0.1)).unwrap();
            s["schema"] = schema.into();
            fs::write(d.join("summary.json"), s.to_string()).unwrap();
        }
        let err = load_summaries(dir.path()).unwrap_err();
        assert!(format!("{err:#}").contains("schema"));
    }
}
