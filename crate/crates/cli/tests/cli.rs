use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_leaderlens"));
    c.env_remove("SOURCE_DATE_EPOCH");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn synth(dir: &Path, rows: usize) -> String {
    let path = dir.join("snap.csv");
    let o = run(&["synth", "--rows", &rows.to_string(), "--seed", "3", "--out", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    path.to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(run(&["describe"]).status.code(), Some(1));
    assert_eq!(run(&["nonsense"]).status.code(), Some(1));
    let d = tempfile::tempdir().unwrap();
    let snap = synth(d.path(), 150);
    assert_eq!(run(&["anova", "--input", &snap, "--group-by", "colour"]).status.code(), Some(1));
    assert_eq!(run(&["anova", "--input", &snap, "--group-by", "type", "--alpha", "2"]).status.code(), Some(1));
    let bad = run(&["gamm", "--input", &snap, "--formula", "log_ARC ~ s(log_Param"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("column"));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("nope.csv");
    assert_eq!(run(&["describe", "--input", missing.to_str().unwrap()]).status.code(), Some(2));
    let ragged = d.path().join("ragged.csv");
    std::fs::write(
        &ragged,
        "model,params_b,type,architecture,ARC,HellaSwag,MMLU,TruthfulQA,Winogrande,GSM8K\na,1,pretrained,LlamaForCausalLM,1,2\n",
    )
    .unwrap();
    let o = run(&["describe", "--input", ragged.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn analysis_commands_run() {
    let d = tempfile::tempdir().unwrap();
    let snap = synth(d.path(), 200);
    let o = run(&["describe", "--input", &snap]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("records: 200 parsed of 200 rows"));

    let o = run(&["corr", "--input", &snap]);
    assert!(stdout(&o).starts_with("column,ARC,HellaSwag,MMLU,TruthfulQA,Winogrande,GSM8K\n"));

    let o = run(&["anova", "--input", &snap, "--group-by", "type"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 7);

    let o = run(&["tukey", "--input", &snap, "--group-by", "bracket"]);
    assert!(stdout(&o).starts_with("benchmark,level_a,level_b"));

    let out = d.path().join("fit");
    let o = run(&[
        "gamm",
        "--input",
        &snap,
        "--formula",
        "log_MMLU ~ s(log_Param) + re(Architecture)",
        "--weights",
        "arch-balance",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    assert_eq!(fit["formula"], "log_MMLU ~ s(log_Param) + re(Architecture)");
    assert!(out.join("effect_s_log_Param_.csv").exists());

    let o = run(&["tsne", "--input", &snap, "--seed", "5", "--perplexity", "20", "--iterations", "300"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("model,x,y,bracket,type,arch\n"));
    let again = stdout(&run(&["tsne", "--input", &snap, "--seed", "5", "--perplexity", "20", "--iterations", "300"]));
    assert_eq!(text, again);

    let o = run(&["interplay", "--input", &snap]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("log_ARC,")).count(), 6);
}

#[test]
fn suite_and_render_are_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let snap = synth(d.path(), 200);
    let config = d.path().join("suite.json");
    std::fs::write(
        &config,
        r#"{"input": "snap.csv", "output": "out-a", "seed": 9, "tsne": {"perplexity": 20.0, "iterations": 1000,
            "early_exaggeration": 12.0, "exaggeration_iters": 250, "learning_rate": 200.0, "momentum_initial": 0.5,
            "momentum_final": 0.8, "momentum_switch": 250, "init_sd": 0.0001}}"#,
    )
    .unwrap();
    let a = run(&["suite", "--config", config.to_str().unwrap()]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let out_b = d.path().join("out-b");
    let b = run(&["suite", "--config", config.to_str().unwrap(), "--out", out_b.to_str().unwrap()]);
    assert_eq!(b.status.code(), Some(0));
    let ra = std::fs::read(d.path().join("out-a/report.json")).unwrap();
    let rb = std::fs::read(out_b.join("report.json")).unwrap();
    assert_eq!(ra, rb);
    let report: serde_json::Value = serde_json::from_slice(&ra).unwrap();
    assert!(report["metadata"]["timestamp"].is_null());
    assert_eq!(report["metadata"]["config"]["input"], snap);

    let out_c = d.path().join("out-c");
    let c = run(&["render", "--report", d.path().join("out-a/report.json").to_str().unwrap(), "--out", out_c.to_str().unwrap()]);
    assert_eq!(c.status.code(), Some(0));
    for f in ["summary.md", "plots/gamm.svg", "plots/tsne_arch.svg", "tables/tukey_type.csv", "manifest.json"] {
        assert_eq!(std::fs::read(d.path().join("out-a").join(f)).unwrap(), std::fs::read(out_c.join(f)).unwrap(), "{f}");
    }

    let stamped = bin()
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .args(["suite", "--config", config.to_str().unwrap(), "--out", d.path().join("out-d").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(stamped.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.path().join("out-d/report.json")).unwrap()).unwrap();
    assert_eq!(report["metadata"]["timestamp"], 1700000000u64);
}

#[test]
fn suite_without_input_is_usage_error() {
    assert_eq!(run(&["suite"]).status.code(), Some(1));
}

#[test]
fn fetch_offline_miss_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let o = bin()
        .env("LEADERLENS_CACHE", d.path())
        .args(["fetch", "--offline", "http://127.0.0.1:9/x.csv"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("offline"));
}
