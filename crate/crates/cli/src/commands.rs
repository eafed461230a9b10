use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cnc::baselines::{train_cnc_star, train_gdro, train_jtt};
use cnc::checkpoint::{load_model, save_model};
use cnc::cnc::{Checkpoint, CncTrainer};
use cnc::data::{LabeledDataset, Split};
use cnc::metrics::group_accuracy;
use cnc::nn::MlpModel;
use cnc::sampler::SamplerMode;
use cnc::stage1::{self, inject_noise, oracle_inference, predict_argmax, predict_cluster, ClusterConfig, GroupInference};

use crate::artifacts::{evaluate_model, write_json, write_metrics, Cell, Manifest, Summary, SCHEMA_VERSION};
use crate::config::{RunConfig, Source};
use crate::{usage, BaselineArg, Common, InferArg, MethodArg};

fn prepare(common: &Common) -> Result<RunConfig> {
    let cfg = RunConfig::load(common.config.as_deref())?;
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    Ok(cfg)
}

fn manifest(command: &str, common: &Common, cfg: &RunConfig) -> Result<Manifest> {
    let mut m = Manifest::new(command, common.seed, cfg)?;
    if let Some(path) = &common.config {
        m.input(path)?;
    }
    Ok(m)
}

fn load_dataset(path: &Path, m: &mut Manifest) -> Result<LabeledDataset> {
    m.input(path)?;
    LabeledDataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_inference(ds: &LabeledDataset, path: &Path, m: &mut Manifest) -> Result<GroupInference> {
    m.input(path)?;
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    GroupInference::read_csv(ds, Split::Train, file).with_context(|| format!("reading {}", path.display()))
}

fn write_inference(inf: &GroupInference, ds: &LabeledDataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    inf.write_csv(ds, std::io::BufWriter::new(file))?;
    Ok(())
}

/// Writes `model.bin` and `metrics.csv` for a finished model.
fn finish_model(out: &Path, m: &mut Manifest, model: &MlpModel, ds: &LabeledDataset, run: &str, epoch: usize) -> Result<()> {
    save_model(model, &out.join("model.bin"))?;
    let eval = evaluate_model(model, ds, run, epoch, false, false)?;
    write_metrics(&out.join("metrics.csv"), &eval.rows)?;
    m.output("model.bin");
    m.output("metrics.csv");
    println!(
        "{run}: val worst-group {:.4}, test worst-group {:.4}, test avg {:.4}",
        eval.val.worst_group_acc(),
        eval.test.worst_group_acc(),
        eval.test.avg_acc()
    );
    Ok(())
}

pub fn show_config(common: &Common) -> Result<()> {
    let cfg = RunConfig::load(common.config.as_deref())?;
    print!("{}", cfg.to_toml());
    Ok(())
}

pub fn gen_data(common: &Common, cmnist: bool, mnist_dir: Option<PathBuf>, p_corr: Option<f64>) -> Result<()> {
    let mut cfg = prepare(common)?;
    if cmnist {
        cfg.data.source = Source::Cmnist;
    }
    if let Some(dir) = mnist_dir {
        cfg.data.mnist_dir = Some(dir);
    }
    if let Some(p) = p_corr {
        if !(0.0..=1.0).contains(&p) {
            return Err(usage("--p-corr must lie in [0, 1]"));
        }
        cfg.data.p_corr = p;
    }
    if cfg.data.source == Source::Cmnist && cfg.data.mnist_dir.is_none() {
        return Err(usage("--cmnist needs --mnist-dir or data.mnist_dir"));
    }
    let mut m = manifest("gen-data", common, &cfg)?;
    let ds = cfg.build_dataset(common.seed)?;
    let path = common.out.join("dataset.bin");
    ds.save(&path)?;
    m.output("dataset.bin");
    m.write(&common.out)?;
    println!(
        "{}: {} samples ({} train / {} val / {} test), sha256 {}",
        path.display(),
        ds.len(),
        ds.split_len(Split::Train),
        ds.split_len(Split::Val),
        ds.split_len(Split::Test),
        crate::artifacts::sha256_file(&path)?
    );
    Ok(())
}

pub fn train_erm(common: &Common, data: &Path, stage1: bool) -> Result<()> {
    let cfg = prepare(common)?;
    let mut m = manifest("train-erm", common, &cfg)?;
    let ds = load_dataset(data, &mut m)?;
    let recipe = if stage1 { cfg.stage1 } else { cfg.erm };
    let out = stage1::train_erm(&ds, &cfg.model_config(&ds), &recipe, common.seed)?;
    let run = if stage1 { "stage1" } else { "erm" };
    finish_model(&common.out, &mut m, &out.model, &ds, run, out.best_epoch)?;
    m.write(&common.out)
}

fn infer(ds: &LabeledDataset, model: Option<&MlpModel>, method: InferArg, seed: u64) -> Result<GroupInference> {
    let need = || model.ok_or_else(|| usage("this inference method needs a stage-1 model"));
    Ok(match method {
        InferArg::Argmax => predict_argmax(need()?, ds, Split::Train)?,
        InferArg::Cluster => predict_cluster(
            need()?,
            ds,
            Split::Train,
            &ClusterConfig {
                seed,
                ..ClusterConfig::default()
            },
        )?,
        InferArg::Oracle => oracle_inference(ds, Split::Train)?,
    })
}

fn check_noise(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(usage("--noise-p must lie in [0, 1]"));
    }
    Ok(())
}

pub fn infer_groups(common: &Common, data: &Path, model: Option<&Path>, method: InferArg, noise_p: Option<f64>) -> Result<()> {
    let cfg = prepare(common)?;
    let mut m = manifest("infer-groups", common, &cfg)?;
    let ds = load_dataset(data, &mut m)?;
    let model = match model {
        Some(path) => {
            m.input(path)?;
            Some(load_model(path)?)
        }
        None => None,
    };
    let mut inf = infer(&ds, model.as_ref(), method, common.seed)?;
    if let Some(p) = noise_p {
        check_noise(p)?;
        inf = inject_noise(&inf, &ds, p, common.seed)?;
    }
    write_inference(&inf, &ds, &common.out.join("inference.csv"))?;
    m.output("inference.csv");
    m.write(&common.out)?;
    println!(
        "{} labels ({}): accuracy vs y {:.4}{}",
        inf.len(),
        inf.method,
        inf.accuracy_vs_y,
        inf.accuracy_vs_a_proxy
            .map(|a| format!(", vs attribute class {a:.4}"))
            .unwrap_or_default()
    );
    Ok(())
}

pub fn train_cnc(common: &Common, data: &Path, inference: &Path, resume: Option<&Path>) -> Result<()> {
    let cfg = prepare(common)?;
    let mut m = manifest("train-cnc", common, &cfg)?;
    let ds = load_dataset(data, &mut m)?;
    let inf = load_inference(&ds, inference, &mut m)?;
    let cc = cfg.cnc_config(&ds, common.seed);
    let mut trainer = match resume {
        Some(path) => {
            m.input(path)?;
            CncTrainer::resume(&ds, &inf, &cc, Checkpoint::load(path)?)?
        }
        None => CncTrainer::new(&ds, &inf, &cc)?,
    };
    let ckpt = common.out.join("checkpoint.bin");
    while !trainer.is_done() {
        let e = trainer.run_epoch()?;
        println!(
            "epoch {}: loss {:.4}{}",
            e.epoch,
            e.train_loss,
            e.val_worst_group_acc.map(|v| format!(", val worst-group {v:.4}")).unwrap_or_default()
        );
        trainer.checkpoint().save(&ckpt)?;
    }
    m.output("checkpoint.bin");
    let out = trainer.finish();
    write_json(&common.out.join("history.json"), &out.history)?;
    m.output("history.json");
    finish_model(&common.out, &mut m, &out.model, &ds, "cnc", out.best_epoch)?;
    m.write(&common.out)
}

pub fn train_baseline(common: &Common, method: BaselineArg, data: &Path, inference: Option<&Path>) -> Result<()> {
    let cfg = prepare(common)?;
    let mut m = manifest("train-baseline", common, &cfg)?;
    let ds = load_dataset(data, &mut m)?;
    let (name, model, epoch) = match method {
        BaselineArg::Jtt => {
            let path = inference.ok_or_else(|| usage("jtt needs --inference"))?;
            let inf = load_inference(&ds, path, &mut m)?;
            let (out, s) = train_jtt(&ds, &inf, cfg.upsample_policy(), &cfg.model_config(&ds), &cfg.robust, common.seed)?;
            println!(
                "error set {} of {}, upsampled multiset {}{}",
                s.incorrect,
                s.correct + s.incorrect,
                s.multiset_size,
                if s.degenerate { " (no errors: plain ERM)" } else { "" }
            );
            ("jtt", out.model, out.best_epoch)
        }
        BaselineArg::Gdro => {
            let (model, epoch, _) = best_gdro(&cfg, &ds, common.seed)?;
            ("gdro", model, epoch)
        }
        BaselineArg::CncStar => {
            let out = train_cnc_star(&ds, &cfg.cnc_config(&ds, common.seed))?;
            ("cnc-star", out.model, out.best_epoch)
        }
    };
    finish_model(&common.out, &mut m, &model, &ds, name, epoch)?;
    m.write(&common.out)
}

/// Trains group DRO at each configured adjustment and keeps the best by
/// validation worst-group accuracy (earliest on ties).
fn best_gdro(cfg: &RunConfig, ds: &LabeledDataset, seed: u64) -> Result<(MlpModel, usize, f64)> {
    let mut best: Option<(f64, MlpModel, usize, f64)> = None;
    for g in cfg.gdro_configs() {
        let out = train_gdro(ds, &cfg.model_config(ds), &cfg.robust, &g, seed)?;
        let val = group_accuracy(&out.train.model, ds, Split::Val)?.worst_group_acc;
        if best.as_ref().is_none_or(|b| val > b.0) {
            best = Some((val, out.train.model, out.train.best_epoch, g.c_adj));
        }
    }
    let (_, model, epoch, c) = best.expect("at least one adjustment");
    Ok((model, epoch, c))
}

pub fn evaluate(common: &Common, data: &Path, model: &Path, split: &str, run: &str, bound: bool, mi: bool) -> Result<()> {
    let split: Split = split.parse().map_err(|e: cnc::Error| usage(e.to_string()))?;
    let cfg = prepare(common)?;
    let mut m = manifest("evaluate", common, &cfg)?;
    let ds = load_dataset(data, &mut m)?;
    m.input(model)?;
    let model = load_model(model)?;
    let rep = cnc::cnc::evaluate(&model, &ds, split, bound, mi)?;
    write_metrics(&common.out.join("metrics.csv"), &rep.rows(run, 0))?;
    write_json(&common.out.join("report.json"), &rep)?;
    m.output("metrics.csv");
    m.output("report.json");
    m.write(&common.out)?;
    println!(
        "{run} on {split}: worst-group {:.4}, avg {:.4}{}",
        rep.worst_group_acc(),
        rep.avg_acc(),
        rep.bound
            .as_ref()
            .map(|b| format!(", bound holds {}", b.holds()))
            .unwrap_or_default()
    );
    Ok(())
}

pub struct PipelineArgs {
    pub method: MethodArg,
    pub inference: InferArg,
    pub noise_p: f64,
    pub p_corr: Option<f64>,
    pub sampler: Option<String>,
    pub lambda: Option<f64>,
    pub run: Option<String>,
    pub bound: bool,
    pub mi: bool,
}

pub fn pipeline(common: &Common, a: &PipelineArgs) -> Result<()> {
    let mut cfg = prepare(common)?;
    check_noise(a.noise_p)?;
    if let Some(p) = a.p_corr {
        cfg.data.p_corr = p;
    }
    if let Some(s) = &a.sampler {
        cfg.cnc.sampler = s.parse::<SamplerMode>().map_err(|e| usage(e.to_string()))?;
    }
    if let Some(l) = a.lambda {
        cfg.cnc.loss.lambda = l;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let seed = common.seed;
    let mut m = manifest("pipeline", common, &cfg)?;
    let ds = cfg.build_dataset(seed)?;
    let mc = cfg.model_config(&ds);

    let uses_inference = matches!(a.method, MethodArg::Jtt | MethodArg::Cnc);
    let mut stage1_acc = None;
    let inference = if uses_inference {
        let stage1 = match a.inference {
            InferArg::Oracle => None,
            _ => Some(stage1::train_erm(&ds, &mc, &cfg.stage1, seed)?.model),
        };
        let mut inf = infer(&ds, stage1.as_ref(), a.inference, seed)?;
        if a.noise_p > 0.0 {
            inf = inject_noise(&inf, &ds, a.noise_p, seed)?;
        }
        stage1_acc = Some(inf.accuracy_vs_y);
        write_inference(&inf, &ds, &common.out.join("inference.csv"))?;
        m.output("inference.csv");
        Some(inf)
    } else {
        None
    };

    let (model, epoch) = match a.method {
        MethodArg::Erm => {
            let o = stage1::train_erm(&ds, &mc, &cfg.erm, seed)?;
            (o.model, o.best_epoch)
        }
        MethodArg::Jtt => {
            let o = train_jtt(&ds, inference.as_ref().unwrap(), cfg.upsample_policy(), &mc, &cfg.robust, seed)?.0;
            (o.model, o.best_epoch)
        }
        MethodArg::Gdro => {
            let (model, epoch, _) = best_gdro(&cfg, &ds, seed)?;
            (model, epoch)
        }
        MethodArg::Cnc => {
            let o = cnc::cnc::train_cnc(&ds, inference.as_ref().unwrap(), &cfg.cnc_config(&ds, seed))?;
            (o.model, o.best_epoch)
        }
        MethodArg::CncStar => {
            let o = train_cnc_star(&ds, &cfg.cnc_config(&ds, seed))?;
            (o.model, o.best_epoch)
        }
    };

    let run = a.run.clone().unwrap_or_else(|| a.method.as_str().to_string());
    let eval = evaluate_model(&model, &ds, &run, epoch, a.bound, a.mi)?;
    save_model(&model, &common.out.join("model.bin"))?;
    write_metrics(&common.out.join("metrics.csv"), &eval.rows)?;
    let cnc_like = matches!(a.method, MethodArg::Cnc | MethodArg::CncStar);
    let summary = Summary {
        schema: SCHEMA_VERSION,
        run: run.clone(),
        seed,
        cell: Cell {
            method: a.method.as_str().into(),
            p_corr: cfg.data.p_corr,
            inference: match (a.method, uses_inference) {
                (MethodArg::CncStar, _) => "oracle".into(),
                (_, false) => "none".into(),
                _ => format!("{:?}", a.inference).to_lowercase(),
            },
            noise_p: if uses_inference { a.noise_p } else { 0.0 },
            sampler: cnc_like.then(|| cfg.cnc.sampler.as_str().to_string()),
            lambda: cnc_like.then_some(cfg.cnc.loss.lambda),
        },
        best_epoch: epoch,
        stage1_accuracy_vs_y: stage1_acc,
        val: (&eval.val).into(),
        test: (&eval.test).into(),
    };
    write_json(&common.out.join("summary.json"), &summary)?;
    for f in ["model.bin", "metrics.csv", "summary.json"] {
        m.output(f);
    }
    m.write(&common.out)?;
    println!(
        "{run}: test worst-group {:.4}, avg {:.4}",
        summary.test.worst_group_acc, summary.test.avg_acc
    );
    Ok(())
}
