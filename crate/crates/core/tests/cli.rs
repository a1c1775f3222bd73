mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use coattn::data::{ScoreScale, Vocabulary};
use coattn::model::{CoAttentionModel, ModelConfig, ModelParams};
use coattn::training::{save_checkpoint, TrainedModel};
use common::{tiny_run_file, write_corpus, SyntheticPrompt};
use tempfile::TempDir;

fn coattn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coattn"))
        .args(args)
        .env_remove("COATTN_OUTPUT_DIR")
        .output()
        .expect("run coattn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Workspace {
    dir: TempDir,
    corpus: PathBuf,
    article: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().expect("tempdir");
        let mut prompt = SyntheticPrompt::new(3, 4);
        let corpus = dir.path().join("corpus.tsv");
        let article = dir.path().join("article.txt");
        write_corpus(&corpus, &prompt.essays(20));
        fs::write(&article, prompt.article()).expect("write article");
        Self { dir, corpus, article }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run_file(&self, out: &Path, seed: u64) -> PathBuf {
        let path = self.path(&format!("run{seed}.conf"));
        fs::write(&path, tiny_run_file(&self.corpus, &self.article, out, seed)).expect("write run file");
        path
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let path = self.path(name);
        fs::write(&path, text).expect("write file");
        path
    }
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// All-zero parameters: the output sigmoid sees 0 and returns 0.5.
fn zero_checkpoint(path: &Path, min: i64, max: i64) {
    let config = ModelConfig {
        embed_dim: 4,
        conv_kernel: 2,
        conv_filters: 3,
        lstm_hidden: 3,
        modeling_hidden: 3,
        vocab_size: 40,
        max_sentences: 8,
        max_tokens: 10,
        ..Default::default()
    };
    let trained = TrainedModel {
        model: CoAttentionModel::new(config.clone(), ModelParams::<f32>::zeros(&config)).unwrap(),
        vocab: Vocabulary::build(["Water is far away. Kids get sick."], 40).unwrap(),
        scale: ScoreScale::new(min, max).unwrap(),
    };
    save_checkpoint(&trained, path).unwrap();
}

#[test]
fn train_writes_checkpoints_log_and_summary() {
    let ws = Workspace::new();
    let out = ws.path("out");
    let run = ws.run_file(&out, 5);
    let o = coattn(&["train", "--config", s(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("mean_qwk\t"));
    for fold in 0..5 {
        assert!(out.join(format!("fold{fold}.ckpt")).is_file());
    }
    let log = fs::read_to_string(out.join("train.log")).unwrap();
    let epoch_lines = log.lines().filter(|l| l.contains("\tepoch=")).count();
    assert_eq!(epoch_lines, 5 * 3);
    assert_eq!(log.lines().filter(|l| l.contains("\ttest_qwk=")).count(), 5);
    for line in log.lines().filter(|l| l.starts_with("fold=")) {
        assert!(line.split('\t').all(|field| field.contains('=')), "{line}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["per_fold_qwk"].as_array().unwrap().len(), 5);
    assert!(out.join("run.conf").is_file());
}

#[test]
fn same_seed_reproduces_summary_bytes() {
    let ws = Workspace::new();
    let (a, b) = (ws.path("a"), ws.path("b"));
    let run = ws.run_file(&a, 8);
    assert!(coattn(&["train", "--config", s(&run)]).status.success());
    assert!(coattn(&["train", "--config", s(&run), "--output-dir", s(&b)])
        .status
        .success());
    assert_eq!(
        fs::read(a.join("summary.json")).unwrap(),
        fs::read(b.join("summary.json")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("fold2.ckpt")).unwrap(),
        fs::read(b.join("fold2.ckpt")).unwrap()
    );
}

#[test]
fn missing_corpus_names_the_path() {
    let ws = Workspace::new();
    let run = ws.run_file(&ws.path("out"), 1);
    let o = coattn(&["train", "--config", s(&run), "--corpus", "/no/such/corpus.tsv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/corpus.tsv"), "{}", stderr(&o));
}

#[test]
fn exit_codes_follow_error_class() {
    let ws = Workspace::new();
    let run = ws.run_file(&ws.path("out"), 1);
    let o = coattn(&["train", "--config", s(&run), "--set", "colour=blue"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let bad = ws.write("bad.tsv", "essay_id\tprompt_id\tscore\ttext\ne1\tp1\t9\tToo high.\n");
    let o = coattn(&["train", "--config", s(&run), "--corpus", s(&bad)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let o = coattn(&[
        "score",
        "--checkpoint",
        "/no/model.ckpt",
        "--essay",
        s(&ws.article),
        "--article",
        s(&ws.article),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("/no/model.ckpt"));

    let junk = ws.write("junk.ckpt", "coattn-checkpoint 9\n");
    let o = coattn(&[
        "score",
        "--checkpoint",
        s(&junk),
        "--essay",
        s(&ws.article),
        "--article",
        s(&ws.article),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn output_dir_from_environment_and_flag() {
    let ws = Workspace::new();
    let run = ws.run_file(&ws.path("from_file"), 2);
    let env_dir = ws.path("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_coattn"))
        .args(["train", "--config", s(&run), "--epochs", "1"])
        .env("COATTN_OUTPUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(env_dir.join("summary.json").is_file());
    assert!(!ws.path("from_file").exists());

    let flag_dir = ws.path("from_flag");
    let o = Command::new(env!("CARGO_BIN_EXE_coattn"))
        .args([
            "train",
            "--config",
            s(&run),
            "--epochs",
            "1",
            "--output-dir",
            s(&flag_dir),
        ])
        .env("COATTN_OUTPUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(flag_dir.join("summary.json").is_file());
}

#[test]
fn zero_checkpoint_scores_two_on_zero_to_three() {
    let ws = Workspace::new();
    let ckpt = ws.path("zero.ckpt");
    zero_checkpoint(&ckpt, 0, 3);
    let essay = ws.write("essay.txt", "Kids get sick. Water is far away.");
    let article = ws.write("src.txt", "Water is far away.");
    for _ in 0..2 {
        let o = coattn(&[
            "score",
            "--checkpoint",
            s(&ckpt),
            "--essay",
            s(&essay),
            "--article",
            s(&article),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(stdout(&o), "2\n");
    }
}

#[test]
fn attend_prints_one_row_per_sentence() {
    let ws = Workspace::new();
    let ckpt = ws.path("zero.ckpt");
    zero_checkpoint(&ckpt, 1, 4);
    let article = ws.write("src.txt", "Water is far away. Kids get sick.");

    let one = ws.write("one.txt", "Kids get sick.");
    let o = coattn(&[
        "attend",
        "--checkpoint",
        s(&ckpt),
        "--essay",
        s(&one),
        "--article",
        s(&article),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "1\tKids get sick.\t1.00000\n");

    let three = ws.write("three.txt", "Kids get sick. Water is far away. The end.");
    let o = coattn(&[
        "attend",
        "--checkpoint",
        s(&ckpt),
        "--essay",
        s(&three),
        "--article",
        s(&article),
    ]);
    let out = stdout(&o);
    let rows: Vec<Vec<&str>> = out.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2][1], "The end.");
    let total: f64 = rows.iter().map(|r| r[2].parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 2e-5, "{total}");
    assert!(rows.iter().all(|r| r[2].split('.').nth(1).unwrap().len() == 5));
}

#[test]
fn evaluate_checkpoint_and_compare_summaries() {
    let ws = Workspace::new();
    let (a, b) = (ws.path("a"), ws.path("b"));
    assert!(coattn(&["train", "--config", s(&ws.run_file(&a, 1))]).status.success());
    assert!(
        coattn(&["train", "--config", s(&ws.run_file(&b, 2)), "--set", "system=other"])
            .status
            .success()
    );

    let o = coattn(&[
        "evaluate",
        "--checkpoint",
        s(&a.join("fold0.ckpt")),
        "--corpus",
        s(&ws.corpus),
        "--article",
        s(&ws.article),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("essays\t20\nqwk\t"), "{out}");

    let o = coattn(&[
        "evaluate",
        "--summary",
        s(&a.join("summary.json")),
        "--against",
        s(&b.join("summary.json")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    assert!(line.starts_with("system=co-attention\tagainst=other\t"), "{line}");
    assert!(line.contains("\tdf=4\t"));

    let o = coattn(&[
        "evaluate",
        "--summary",
        s(&a.join("summary.json")),
        "--against",
        s(&a.join("summary.json")),
    ]);
    assert!(stdout(&o).contains("\tt=0.000000\tp=1.000000\tdf=4\tflag=identical\tsignificant=false"));

    let o = coattn(&["evaluate"]);
    assert_eq!(o.status.code(), Some(2));
}
