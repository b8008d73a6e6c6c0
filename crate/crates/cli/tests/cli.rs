use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
[model]
epochs = 2
pretrain_epochs = 1
word_dim = 8
encoder_hidden = 8
encoder_dim = 8
latent_dim = 6
vib_hidden = 8
vib_latent_dim = 5
decoder_embed_dim = 8
decoder_hidden = 8
"#;

struct Env {
    dir: TempDir,
    corpus: PathBuf,
    dict: PathBuf,
    config: PathBuf,
}

fn ibner(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ibner"))
        .args(args)
        .output()
        .expect("spawn ibner")
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn setup() -> Env {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = ibner(&["synth", "--out", &s(&data), "--sentences", "20"]);
    assert!(out.status.success());
    let config = dir.path().join("small.toml");
    fs::write(&config, SMALL).unwrap();
    Env {
        corpus: data.join("toy.jsonl"),
        dict: data.join("toy.dict.tsv"),
        config,
        dir,
    }
}

impl Env {
    fn train(&self, name: &str, mode: &str, extra: &[&str]) -> (PathBuf, Output) {
        let out = self.dir.path().join(name);
        let mut args = vec![
            "train",
            "--config",
            &s(&self.config),
            "--corpus",
            &s(&self.corpus),
            "--out",
            &s(&out),
            "--mode",
            mode,
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
        args.extend(extra.iter().map(|x| x.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = ibner(&refs);
        (out, o)
    }
}

fn header(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn train_writes_mode_dependent_logs() {
    let env = setup();
    let dict = s(&env.dict);
    let (out, o) = env.train("all", "all", &["--dict", &dict]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "config.toml",
        "loss.tsv",
        "pretrain_loss.tsv",
        "dev.tsv",
        "best.ckpt",
        "final.ckpt",
        "dev_predictions.jsonl",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(header(&out.join("loss.tsv")), "step\tL\tL_VIB\tL_SR\tL_SG");
    assert_eq!(
        header(&out.join("pretrain_loss.tsv")),
        "step\tL\tL_VIB\tL_SR\tL_SG"
    );

    let (out, o) = env.train("base", "baseline", &[]);
    assert!(o.status.success());
    assert_eq!(header(&out.join("loss.tsv")), "step\tL");
    assert!(!out.join("pretrain_loss.tsv").exists());

    let (out, o) = env.train(
        "reco",
        "supvib_spanreco",
        &["--beta", "0.001", "--seed", "4"],
    );
    assert!(o.status.success());
    assert_eq!(header(&out.join("loss.tsv")), "step\tL\tL_VIB\tL_SR");
    let echo = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(
        echo.contains("beta = 0.001") && echo.contains("seed = 4") && echo.contains("epochs = 2"),
        "{echo}"
    );
}

#[test]
fn missing_dictionary_fails_before_training() {
    let env = setup();
    let (out, o) = env.train("nodict", "all", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("synonym dictionary"));
    assert!(!out.exists());

    let (_, o) = env.train("baddict", "all", &["--dict", "/nonexistent/dict.tsv"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_one() {
    let env = setup();
    let bad = env.dir.path().join("bad.toml");
    fs::write(&bad, "[model]\nbetta = 0.1\n").unwrap();
    let o = ibner(&[
        "train",
        "--config",
        &s(&bad),
        "--corpus",
        &s(&env.corpus),
        "--out",
        "x",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(
        ibner(&["train", "--mode", "everything"]).status.code(),
        Some(1)
    );
    assert_eq!(
        ibner(&["train", "--corpus", &s(&env.corpus), "--mode", "supvib"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(ibner(&["--help"]).status.code(), Some(0));
}

#[test]
fn numeric_failure_exits_three() {
    let env = setup();
    let cfg = env.dir.path().join("explode.toml");
    fs::write(&cfg, format!("{SMALL}ner_lr = 1e300\n")).unwrap();
    let out = env.dir.path().join("nf");
    let o = ibner(&[
        "train",
        "--config",
        &s(&cfg),
        "--corpus",
        &s(&env.corpus),
        "--out",
        &s(&out),
        "--mode",
        "supvib",
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite loss at step"));
}

#[test]
fn eval_reconstruct_and_export() {
    let env = setup();
    let (run, o) = env.train("sv", "supvib", &[]);
    assert!(o.status.success());
    let ckpt = s(&run.join("final.ckpt"));
    let corpus = s(&env.corpus);
    let out = env.dir.path().join("eval");

    let o = ibner(&[
        "eval",
        "--checkpoint",
        &ckpt,
        "--corpus",
        &corpus,
        "--out",
        &s(&out),
    ]);
    assert!(o.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["errors"]["category_errors"], 0);
    assert!(report.get("bleu2").is_none());
    assert!(out.join("predictions.jsonl").exists());

    let empty = env.dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let o = ibner(&[
        "eval",
        "--checkpoint",
        &ckpt,
        "--corpus",
        &s(&empty),
        "--out",
        &s(&out),
    ]);
    assert!(o.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["f1"], 0.0);
    assert_eq!(report["report"]["true_positives"], 0);

    let other = env.dir.path().join("other.jsonl");
    fs::write(
        &other,
        r#"{"doc_id":"x","tokens":["a","b"],"entities":[{"start":0,"end":0,"type":"Chemical"}]}"#,
    )
    .unwrap();
    let o = ibner(&["eval", "--checkpoint", &ckpt, "--corpus", &s(&other)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("type inventory"));

    let o = ibner(&["reconstruct", "--checkpoint", &ckpt, "--corpus", &corpus]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no reconstruction decoder"));

    let o = ibner(&[
        "export-posteriors",
        "--checkpoint",
        &ckpt,
        "--corpus",
        &corpus,
        "--source",
        "z1",
        "--out",
        &s(&out),
    ]);
    assert_ne!(o.status.code(), Some(0));
    let o = ibner(&[
        "export-posteriors",
        "--checkpoint",
        &ckpt,
        "--corpus",
        &corpus,
        "--source",
        "z3",
        "--out",
        &s(&out),
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(out.join("posteriors_z3.tsv")).unwrap();
    assert!(text.lines().skip(1).all(|l| l.split('\t').count() == 5 + 5));
}

#[test]
fn reconstruct_writes_one_row_per_entity() {
    let env = setup();
    let (run, o) = env.train("reco", "supvib_spanreco", &[]);
    assert!(o.status.success());
    let out = env.dir.path().join("rec");
    let o = ibner(&[
        "reconstruct",
        "--checkpoint",
        &s(&run.join("best.ckpt")),
        "--corpus",
        &s(&env.corpus),
        "--out",
        &s(&out),
    ]);
    assert!(o.status.success());
    let gold: usize = fs::read_to_string(&env.corpus)
        .unwrap()
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["entities"]
                .as_array()
                .unwrap()
                .len()
        })
        .sum();
    let text = fs::read_to_string(out.join("reconstructions.tsv")).unwrap();
    let rows = text.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(rows, gold);
    assert_eq!(text.lines().next(), Some("original\treconstruction\tbleu2"));
}

#[test]
fn grid_marks_one_best_cell() {
    let env = setup();
    let out = env.dir.path().join("grid");
    let base = [
        "grid",
        "--config",
        &s(&env.config),
        "--corpus",
        &s(&env.corpus),
        "--mode",
        "supvib",
        "--out",
        &s(&out),
    ];
    let mut args = base.to_vec();
    args.extend(["--betas", "1e-6,1e-5,1e-4", "--gammas", "1e-6,1e-5,1e-4"]);
    let o = ibner(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("grid.tsv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 9);
    assert_eq!(rows.iter().filter(|r| r.ends_with('*')).count(), 1);

    let mut args = base.to_vec();
    args.extend([
        "--betas",
        "1e-6,1e-5,1e-4,1e-3",
        "--gammas",
        "1e-6,1e-5,1e-4",
    ]);
    assert_eq!(ibner(&args).status.code(), Some(1));
}

#[test]
fn single_cell_grid_matches_train() {
    let env = setup();
    let grid = env.dir.path().join("g1");
    let o = ibner(&[
        "grid",
        "--config",
        &s(&env.config),
        "--corpus",
        &s(&env.corpus),
        "--mode",
        "supvib",
        "--out",
        &s(&grid),
    ]);
    assert!(o.status.success());
    let (run, o) = env.train("t1", "supvib", &[]);
    assert!(o.status.success());
    let cell = fs::read_dir(&grid)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.is_dir())
        .unwrap();
    for f in ["loss.tsv", "dev.tsv", "final.ckpt"] {
        assert_eq!(
            fs::read(cell.join(f)).unwrap(),
            fs::read(run.join(f)).unwrap(),
            "{f}"
        );
    }
}
