use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[data]
p_corr = 0.9

[data.blobs]
n_train = 600
n_val = 150
n_test = 300

[erm]
epochs = 2

[stage1]
epochs = 1

[robust]
epochs = 2

[cnc]
epochs = 2
m = 4
n = 4
anchors_per_epoch = 100

[gdro]
c_adjustments = [0.0]
"#;

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        let s = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(s.path("tiny.toml"), TINY).unwrap();
        s
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn config(&self) -> String {
        self.path("tiny.toml").display().to_string()
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_cnc")).args(args).output().unwrap()
    }

    /// Runs with the tiny config and `--out <dir>`, asserting success.
    fn ok(&self, args: &[&str], out: &str) -> PathBuf {
        let out_dir = self.path(out);
        let mut full: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        full.extend(["--config".into(), self.config(), "--out".into(), out_dir.display().to_string()]);
        let refs: Vec<&str> = full.iter().map(String::as_str).collect();
        let o = self.run(&refs);
        assert!(
            o.status.success(),
            "{args:?} failed:\n{}{}",
            String::from_utf8_lossy(&o.stdout),
            String::from_utf8_lossy(&o.stderr)
        );
        out_dir
    }

    fn data(&self) -> String {
        let d = self.ok(&["gen-data", "--blobs", "--seed", "3"], "data");
        d.join("dataset.bin").display().to_string()
    }
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn exit_codes_separate_usage_from_runtime_errors() {
    let sb = Sandbox::new();
    assert_eq!(sb.run(&["--help"]).status.code(), Some(0));
    assert_eq!(sb.run(&[]).status.code(), Some(1));
    assert_eq!(sb.run(&["gen-data", "--bogus", "--out", "x"]).status.code(), Some(1));
    assert_eq!(sb.run(&["train-erm", "--out", "x"]).status.code(), Some(1));
    let missing = s(&sb.path("nope.bin"));
    let o = sb.run(&["train-erm", "--data", &missing, "--out", &s(&sb.path("x"))]);
    assert_eq!(o.status.code(), Some(2));
    let data = sb.data();
    let o = sb.run(&["train-baseline", "--method", "jtt", "--data", &data, "--out", &s(&sb.path("y"))]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let o = sb.run(&["show-config", "--config", &s(&sb.path("absent.toml")), "--out", "."]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_data_is_reproducible_and_writes_a_manifest() {
    let sb = Sandbox::new();
    let a = sb.ok(&["gen-data", "--blobs", "--p-corr", "0.995", "--seed", "7"], "a");
    let b = sb.ok(&["gen-data", "--blobs", "--p-corr", "0.995", "--seed", "7"], "b");
    let c = sb.ok(&["gen-data", "--blobs", "--p-corr", "0.995", "--seed", "8"], "c");
    let bytes = |d: &Path| fs::read(d.join("dataset.bin")).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    assert_ne!(bytes(&a), bytes(&c));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 7);
    assert_eq!(m["command"], "gen-data");
    assert_eq!(m["config"]["data"]["p_corr"], 0.995);
    assert_eq!(m["config"]["data"]["blobs"]["n_train"], 600);
    assert!(m["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
}

#[test]
fn staged_commands_chain_through_files() {
    let sb = Sandbox::new();
    let data = sb.data();
    let s1 = sb.ok(&["train-erm", "--stage1", "--data", &data, "--seed", "3"], "s1");
    let model = s(&s1.join("model.bin"));
    let inf = sb.ok(&["infer-groups", "--data", &data, "--model", &model, "--method", "argmax"], "inf");
    let inf_csv = s(&inf.join("inference.csv"));
    let header = fs::read_to_string(&inf_csv).unwrap();
    assert!(header.starts_with("sample_index,y,a_if_known,yhat,method\n"));

    let cnc = sb.ok(&["train-cnc", "--data", &data, "--inference", &inf_csv, "--seed", "3"], "cnc");
    for f in ["model.bin", "checkpoint.bin", "metrics.csv", "history.json", "manifest.json"] {
        assert!(cnc.join(f).exists(), "{f}");
    }
    for method in ["jtt", "gdro", "cnc-star"] {
        let out = sb.ok(
            &["train-baseline", "--method", method, "--data", &data, "--inference", &inf_csv],
            &format!("b-{method}"),
        );
        assert!(out.join("model.bin").exists());
    }
    let ev = sb.ok(
        &["evaluate", "--data", &data, "--model", &s(&cnc.join("model.bin")), "--bound", "--mi"],
        "eval",
    );
    let csv = fs::read_to_string(ev.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("run,epoch,split,metric,value\n"));
    for metric in ["worst_group_acc", "mi_y", "mi_a", "bound/global_holds"] {
        assert!(csv.contains(&format!(",test,{metric},")), "{metric}");
    }
}

#[test]
fn noisy_oracle_labels_record_their_method() {
    let sb = Sandbox::new();
    let data = sb.data();
    let out = sb.ok(&["infer-groups", "--data", &data, "--method", "oracle", "--noise-p", "0.25"], "inf");
    let text = fs::read_to_string(out.join("inference.csv")).unwrap();
    let first = text.lines().nth(1).unwrap();
    assert!(first.ends_with(",oracle_noised(0.25)"), "{first}");
    let o = sb.run(&["infer-groups", "--data", &data, "--method", "argmax", "--out", &s(&sb.path("x"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn resumed_cnc_run_matches_an_uninterrupted_one() {
    let sb = Sandbox::new();
    let data = sb.data();
    let inf = sb.ok(&["infer-groups", "--data", &data, "--method", "oracle", "--noise-p", "0.2"], "inf");
    let inf_csv = s(&inf.join("inference.csv"));
    let three = TINY.replace("[cnc]\nepochs = 2", "[cnc]\nepochs = 3");
    let three_path = sb.path("three.toml");
    fs::write(&three_path, &three).unwrap();
    let two_path = sb.path("two.toml");
    fs::write(&two_path, TINY).unwrap();

    let run = |cfg: &Path, out: &str, resume: Option<&Path>| {
        let out = sb.path(out);
        let (c, o) = (s(cfg), s(&out));
        let mut args = vec!["train-cnc", "--data", &data, "--inference", &inf_csv, "--config", &c, "--out", &o];
        let r;
        if let Some(p) = resume {
            r = s(p);
            args.extend(["--resume", &r]);
        }
        let res = sb.run(&args);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        out
    };
    let full = run(&three_path, "full", None);
    let part = run(&two_path, "part", None);
    let resumed = run(&three_path, "resumed", Some(&part.join("checkpoint.bin")));
    let bytes = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(bytes(&full, "model.bin"), bytes(&resumed, "model.bin"));
    assert_eq!(bytes(&full, "metrics.csv"), bytes(&resumed, "metrics.csv"));
}

#[test]
fn pipeline_reruns_are_byte_identical() {
    let sb = Sandbox::new();
    let args = ["pipeline", "--method", "cnc", "--inference", "argmax", "--noise-p", "0.1", "--seed", "4", "--mi"];
    let a = sb.ok(&args, "a");
    let b = sb.ok(&args, "b");
    for f in ["metrics.csv", "summary.json", "model.bin", "inference.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["method"], "cnc");
    assert_eq!(summary["noise_p"], 0.1);
    assert_eq!(summary["sampler"], "cnc_two_sided");
}

#[test]
fn sweep_then_report() {
    let sb = Sandbox::new();
    let plan = sb.path("grid.plan");
    fs::write(
        &plan,
        "seeds = [0, 1]\nmethods = [\"cnc\", \"jtt\"]\ninference = [\"oracle\"]\nnoise_p = [0.0, 0.25]\nconfig = \"tiny.toml\"\n",
    )
    .unwrap();
    let runs = sb.path("runs");
    let o = sb.run(&["sweep", &s(&plan), "--jobs", "2", "--out", &s(&runs)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(runs.join("runs.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 8);

    let rep = sb.path("rep");
    let rep2 = sb.path("rep2");
    for out in [&rep, &rep2] {
        let o = sb.run(&["report", &s(&runs), "--out", &s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv = fs::read_to_string(rep.join("report.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(rep2.join("report.csv")).unwrap());
    let mut r = csv::Reader::from_reader(csv.as_bytes());
    let headers = r.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    for row in &rows {
        assert_eq!(&row[col("n")], "2");
        let flag = &row[col("cnc_ge_jtt")];
        if &row[col("method")] == "cnc" {
            assert!(flag == "true" || flag == "false");
        } else {
            assert_eq!(flag, "");
        }
    }

    // A second sweep with skip-existing launches nothing new.
    let o = sb.run(&["sweep", &s(&plan), "--skip-existing", "--out", &s(&runs)]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("(0 to do)"));
}
