//! Plan expansion and a bounded pool of `cnc pipeline` worker processes.

use std::collections::{HashSet, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::artifacts::{Manifest, Summary};
use crate::{usage, Common};

/// A sweep description. Axis lists expand to their product; `runs` adds
/// individually named cells on top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plan {
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub methods: Vec<String>,
    #[serde(default)]
    pub p_corr: Vec<f64>,
    #[serde(default)]
    pub noise_p: Vec<f64>,
    #[serde(default)]
    pub inference: Vec<String>,
    #[serde(default)]
    pub samplers: Vec<String>,
    #[serde(default)]
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub bound: bool,
    #[serde(default)]
    pub mi: bool,
    /// Base config for every run, relative to the plan file.
    #[serde(default)]
    pub config: Option<PathBuf>,
    #[serde(default)]
    pub runs: Vec<NamedRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedRun {
    pub name: String,
    pub method: String,
    #[serde(default)]
    pub p_corr: Option<f64>,
    #[serde(default)]
    pub noise_p: Option<f64>,
    #[serde(default)]
    pub inference: Option<String>,
    #[serde(default)]
    pub sampler: Option<String>,
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Overrides the plan's base config.
    #[serde(default)]
    pub config: Option<PathBuf>,
}

/// One process to launch.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub name: String,
    pub args: Vec<String>,
}

const METHODS: [&str; 5] = ["erm", "jtt", "gdro", "cnc", "cnc-star"];

fn uses_inference(method: &str) -> bool {
    matches!(method, "jtt" | "cnc")
}

fn cnc_like(method: &str) -> bool {
    matches!(method, "cnc" | "cnc-star")
}

fn or_none<T: Clone>(v: &[T]) -> Vec<Option<T>> {
    if v.is_empty() {
        vec![None]
    } else {
        v.iter().cloned().map(Some).collect()
    }
}

impl Plan {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading plan {}", path.display()))?;
        toml::from_str(&text).map_err(|e| usage(format!("plan {}: {e}", path.display())))
    }

    /// Expands the plan into jobs; run names are unique and directories
    /// are `out/<name>`.
    pub fn jobs(&self, plan_dir: &Path, base_config: Option<&Path>, out: &Path) -> Result<Vec<Job>> {
        if self.seeds.is_empty() {
            return Err(usage("plan must list its seeds explicitly"));
        }
        for m in self.methods.iter().chain(self.runs.iter().map(|r| &r.method)) {
            if !METHODS.contains(&m.as_str()) {
                return Err(usage(format!("unknown method '{m}' in plan")));
            }
        }
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { plan_dir.join(p) };
        let plan_config = self.config.as_deref().map(resolve).or_else(|| base_config.map(Path::to_path_buf));

        let mut cells: Vec<(String, NamedRun)> = Vec::new();
        for method in &self.methods {
            let inf_axis = if uses_inference(method) { or_none(&self.inference) } else { vec![None] };
            let noise_axis = if uses_inference(method) { or_none(&self.noise_p) } else { vec![None] };
            let samplers = if cnc_like(method) { or_none(&self.samplers) } else { vec![None] };
            let lambdas = if cnc_like(method) { or_none(&self.lambdas) } else { vec![None] };
            for pc in or_none(&self.p_corr) {
                for inf in &inf_axis {
                    for np in &noise_axis {
                        for s in &samplers {
                            for l in &lambdas {
                                let mut name = method.clone();
                                if let Some(v) = pc {
                                    name += &format!("_pc{v}");
                                }
                                if let Some(v) = inf {
                                    name += &format!("_{v}");
                                }
                                if let Some(v) = np {
                                    name += &format!("_np{v}");
                                }
                                if let Some(v) = s {
                                    name += &format!("_{v}");
                                }
                                if let Some(v) = l {
                                    name += &format!("_l{v}");
                                }
                                cells.push((
                                    name.clone(),
                                    NamedRun {
                                        name,
                                        method: method.clone(),
                                        p_corr: pc,
                                        noise_p: *np,
                                        inference: inf.clone(),
                                        sampler: s.clone(),
                                        lambda: *l,
                                        config: None,
                                    },
                                ));
                            }
                        }
                    }
                }
            }
        }
        for r in &self.runs {
            cells.push((r.name.clone(), r.clone()));
        }

        let mut jobs = Vec::new();
        let mut seen = HashSet::new();
        for (cell, r) in &cells {
            for &seed in &self.seeds {
                let name = format!("{cell}_s{seed}");
                if !seen.insert(name.clone()) {
                    return Err(usage(format!("run name '{name}' appears twice in the plan")));
                }
                let mut args: Vec<String> = vec!["pipeline".into(), "--method".into(), r.method.clone()];
                let mut opt = |flag: &str, v: Option<String>| {
                    if let Some(v) = v {
                        args.push(flag.into());
                        args.push(v);
                    }
                };
                opt("--p-corr", r.p_corr.map(|v| v.to_string()));
                opt("--noise-p", r.noise_p.map(|v| v.to_string()));
                opt("--inference", r.inference.clone());
                opt("--sampler", r.sampler.clone());
                opt("--lambda", r.lambda.map(|v| v.to_string()));
                let config = r.config.as_deref().map(resolve).or_else(|| plan_config.clone());
                opt("--config", config.map(|p| p.display().to_string()));
                opt("--run", Some(name.clone()));
                opt("--seed", Some(seed.to_string()));
                opt("--out", Some(out.join(&name).display().to_string()));
                if self.bound {
                    args.push("--bound".into());
                }
                if self.mi {
                    args.push("--mi".into());
                }
                jobs.push(Job { name, args });
            }
        }
        Ok(jobs)
    }
}

fn spawn(exe: &Path, job: &Job, out: &Path) -> Result<Child> {
    let dir = out.join(&job.name);
    fs::create_dir_all(&dir)?;
    let log = fs::File::create(dir.join("log.txt"))?;
    Command::new(exe)
        .args(&job.args)
        .stdin(Stdio::null())
        .stdout(log.try_clone()?)
        .stderr(log)
        .spawn()
        .with_context(|| format!("starting run {}", job.name))
}

pub fn run(common: &Common, plan_path: &Path, jobs: usize, skip_existing: bool) -> Result<()> {
    if jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let plan = Plan::load(plan_path)?;
    let plan_dir = plan_path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(&common.out)?;
    let all = plan.jobs(plan_dir, common.config.as_deref(), &common.out)?;
    let mut m = Manifest::new("sweep", common.seed, &plan)?;
    m.input(plan_path)?;
    if let Some(c) = &common.config {
        m.input(c)?;
    }

    let exe = std::env::current_exe()?;
    let mut queue: VecDeque<&Job> = all
        .iter()
        .filter(|j| !(skip_existing && common.out.join(&j.name).join("summary.json").exists()))
        .collect();
    println!("{} runs ({} to do) with {jobs} workers", all.len(), queue.len());
    let mut running: Vec<(&Job, Child)> = Vec::new();
    let mut failed = Vec::new();
    while !queue.is_empty() || !running.is_empty() {
        while running.len() < jobs {
            let Some(job) = queue.pop_front() else { break };
            running.push((job, spawn(&exe, job, &common.out)?));
        }
        let mut k = 0;
        while k < running.len() {
            if let Some(status) = running[k].1.try_wait()? {
                let (job, _) = running.swap_remove(k);
                println!("{} {}", if status.success() { "done" } else { "FAILED" }, job.name);
                if !status.success() {
                    failed.push(job.name.clone());
                }
            } else {
                k += 1;
            }
        }
        thread::sleep(Duration::from_millis(20));
    }

    let mut w = csv::Writer::from_path(common.out.join("runs.csv"))?;
    w.write_record([
        "run",
        "method",
        "seed",
        "p_corr",
        "inference",
        "noise_p",
        "sampler",
        "lambda",
        "val_worst_group_acc",
        "test_worst_group_acc",
        "test_avg_acc",
    ])?;
    for job in &all {
        let path = common.out.join(&job.name).join("summary.json");
        let Ok(text) = fs::read_to_string(&path) else { continue };
        let s: Summary = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let c = &s.cell;
        w.write_record([
            s.run.clone(),
            c.method.clone(),
            s.seed.to_string(),
            c.p_corr.to_string(),
            c.inference.clone(),
            c.noise_p.to_string(),
            c.sampler.clone().unwrap_or_default(),
            c.lambda.map(|v| v.to_string()).unwrap_or_default(),
            s.val.worst_group_acc.to_string(),
            s.test.worst_group_acc.to_string(),
            s.test.avg_acc.to_string(),
        ])?;
    }
    w.flush()?;
    m.output("runs.csv");
    m.write(&common.out)?;
    if !failed.is_empty() {
        bail!("{} of {} runs failed: {}", failed.len(), all.len(), failed.join(", "));
    }
    Ok(())
}
