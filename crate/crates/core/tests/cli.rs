use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use histoseg::config::PipelineConfig;
use histoseg::eval::{prediction_file_name, read_report};
use histoseg::nn::UNetConfig;
use histoseg::training::SplitAssignment;

fn histoseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_histoseg"))
        .args(args)
        .env_remove("HISTOSEG_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = histoseg(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn init_config_round_trips() {
    let text = ok(&["init-config"]);
    assert_eq!(PipelineConfig::from_json(&text).unwrap(), PipelineConfig::default());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sub/cfg.json");
    ok(&["init-config", "--seed", "17", "--out", p(&path)]);
    let cfg = PipelineConfig::load(&path).unwrap();
    assert_eq!(cfg.seed, 17);
    assert_eq!(PipelineConfig { seed: 0, ..cfg }, PipelineConfig::default());
}

#[test]
fn exit_codes() {
    assert_eq!(histoseg(&["--help"]).status.code(), Some(0));
    assert_eq!(histoseg(&["predict", "--bogus"]).status.code(), Some(1));
    assert_eq!(histoseg(&["frobnicate"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = histoseg(&["overlay", "--slide", p(&missing), "--pred", p(&missing), "--out", p(&dir.path().join("o.png"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"seed": 1, "nonsense": true}"#).unwrap();
    let out = histoseg(&["prepare", "--slides", p(dir.path()), "--out", p(&missing), "--config", p(&bad)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gradcheck_reports_and_passes() {
    let out = ok(&["gradcheck", "--seed", "0"]);
    assert!(out.contains("max_rel_err"), "{out}");
    // an impossible tolerance fails with exit code 1
    assert_eq!(histoseg(&["gradcheck", "--tolerance", "0"]).status.code(), Some(1));
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = PipelineConfig::default();
    cfg.seed = 5;
    cfg.unet = UNetConfig { depth: 2, base_channels: 4, ..UNetConfig::default() };
    cfg.train.max_epochs = 2;
    cfg.train.batch_size = 4;
    cfg.train.learning_rate = 1e-3;
    cfg.train.split_fractions = [0.4, 0.35, 0.25];
    let path = dir.join("cfg.json");
    cfg.save(&path).unwrap();
    path
}

#[test]
fn three_slide_pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let (slides, patches, model) = (d.join("slides"), d.join("patches"), d.join("model/unet.bin"));
    ok(&["synth", "--seed", "5", "--n", "3", "--out", p(&slides)]);
    ok(&["prepare", "--slides", p(&slides), "--out", p(&patches), "--config", p(&cfg)]);
    ok(&["train", "--patches", p(&patches), "--config", p(&cfg), "--out", p(&model)]);
    for f in ["history.csv", "split.json"] {
        assert!(d.join("model").join(f).is_file(), "{f}");
    }
    let split: SplitAssignment =
        serde_json::from_str(&fs::read_to_string(d.join("model/split.json")).unwrap()).unwrap();
    assert_eq!((split.train.len(), split.val.len(), split.test.len()), (1, 1, 1));
    let preds = d.join("preds");
    for patient in &split.test {
        let id = patient.replacen('P', "S", 1);
        let pred = preds.join(prediction_file_name(&id));
        let slide = slides.join(&id);
        ok(&["predict", "--slide", p(&slide), "--model", p(&model), "--out", p(&pred), "--config", p(&cfg)]);
        ok(&["overlay", "--slide", p(&slide), "--pred", p(&pred), "--out", p(&preds.join(format!("{id}_overlay.png"))), "--config", p(&cfg)]);
    }
    let report = d.join("report.json");
    ok(&["evaluate", "--pred-dir", p(&preds), "--slides-dir", p(&slides), "--report", p(&report), "--config", p(&cfg)]);
    let r = read_report(&report).unwrap();
    assert_eq!(r.cohort.n, split.test.len());
    assert_eq!(r.per_slide.len(), 1);
}

#[test]
fn worker_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let slides = d.join("slides");
    ok(&["synth", "--seed", "9", "--n", "3", "--out", p(&slides)]);
    let mut models = Vec::new();
    for workers in ["1", "2"] {
        let patches = d.join(format!("patches{workers}"));
        let model = d.join(format!("m{workers}/unet.bin"));
        ok(&["--workers", workers, "prepare", "--slides", p(&slides), "--out", p(&patches), "--config", p(&cfg)]);
        ok(&["--workers", workers, "train", "--patches", p(&patches), "--config", p(&cfg), "--out", p(&model)]);
        let pred = d.join(format!("pred{workers}.png"));
        ok(&["--workers", workers, "predict", "--slide", p(&slides.join("S000")), "--model", p(&model), "--out", p(&pred), "--config", p(&cfg)]);
        models.push((fs::read(&model).unwrap(), fs::read(&pred).unwrap()));
    }
    assert!(models[0] == models[1], "outputs differ between 1 and 2 workers");
}
