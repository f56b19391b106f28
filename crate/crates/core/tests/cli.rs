use std::fs;
use std::path::Path;
use std::process::Command;

use entmemnet::cli::run;

fn call(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("entmemnet").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = "d_sent=8\nd_ent=8\nae_epochs=3\nf2_epochs=2\nqa_epochs=3\n";

fn gendata(dir: &Path, stories: usize, seed: u64) -> (i32, String, String) {
    let cfg = dir.join("world.cfg");
    fs::write(&cfg, format!("stories={stories}\ntest_stories=5\nseed={seed}\n")).unwrap();
    call(&["gendata", "--config", p(&cfg), "--out", p(dir)])
}

#[test]
fn gendata_is_deterministic_and_counts_questions() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (code, stdout, _) = gendata(a.path(), 30, 7);
    assert_eq!(code, 0);
    gendata(b.path(), 30, 7);
    for f in ["train.txt", "test.txt"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
    }
    let train = fs::read_to_string(a.path().join("train.txt")).unwrap();
    let questions = train.lines().filter(|l| l.contains('\t')).count();
    let line = stdout.lines().find(|l| l.starts_with("train.txt")).unwrap();
    assert!(line.ends_with(&format!("questions={questions}")), "{line}");
    assert!(line.contains("stories=30"));
}

#[test]
fn gendata_with_no_stories_warns() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("world.cfg");
    fs::write(&cfg, "stories=0\ntest_stories=0\n").unwrap();
    let (code, _, stderr) = call(&["gendata", "--config", p(&cfg), "--out", p(d.path())]);
    assert_eq!(code, 0);
    assert!(stderr.contains("warning"));
    assert_eq!(fs::read_to_string(d.path().join("train.txt")).unwrap(), "");
}

#[test]
fn train_eval_round() {
    let d = tempfile::tempdir().unwrap();
    gendata(d.path(), 20, 3);
    let cfg = d.path().join("train.cfg");
    fs::write(&cfg, TINY).unwrap();
    let train = d.path().join("train.txt");
    let ck1 = d.path().join("a.ckpt");
    let ck2 = d.path().join("b.ckpt");
    for ck in [&ck1, &ck2] {
        let (code, _, err) = call(&["train", "--config", p(&cfg), "--data", p(&train), "--out", p(ck)]);
        assert_eq!(code, 0, "{err}");
    }
    assert_eq!(fs::read(&ck1).unwrap(), fs::read(&ck2).unwrap());
    let csv1 = fs::read_to_string(ck1.with_extension("csv")).unwrap();
    assert_eq!(csv1, fs::read_to_string(ck2.with_extension("csv")).unwrap());
    let mut lines = csv1.lines();
    assert_eq!(lines.next(), Some("epoch,stage,loss,accuracy"));
    assert_eq!(lines.count(), 3 + 2 + 3);

    let preds = d.path().join("pred.txt");
    let (code, stdout, err) = call(&[
        "eval",
        "--checkpoint",
        p(&ck1),
        "--data",
        p(&d.path().join("test.txt")),
        "--predictions",
        p(&preds),
    ]);
    assert_eq!(code, 0, "{err}");
    let json: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    for k in ["accuracy", "n", "mean_hops", "related_entity_hit_rate", "unknown"] {
        assert!(json.get(k).is_some(), "{k} missing from {json}");
    }
    // rescore the predictions file by hand against the gold answers
    let gold: Vec<String> = fs::read_to_string(d.path().join("test.txt"))
        .unwrap()
        .lines()
        .filter_map(|l| l.split('\t').nth(1).map(String::from))
        .collect();
    let predicted = fs::read_to_string(&preds).unwrap();
    let hits = predicted.lines().zip(&gold).filter(|(a, b)| a == b).count();
    assert_eq!(json["n"].as_u64().unwrap() as usize, gold.len());
    assert_eq!(json["accuracy"].as_f64().unwrap(), hits as f64 / gold.len() as f64);
}

#[test]
fn flags_override_config_file() {
    let d = tempfile::tempdir().unwrap();
    gendata(d.path(), 5, 4);
    let cfg = d.path().join("train.cfg");
    fs::write(&cfg, TINY).unwrap();
    let ck = d.path().join("m.ckpt");
    let (code, _, err) = call(&[
        "train", "--config", p(&cfg), "--data", p(&d.path().join("train.txt")), "--out", p(&ck),
        "--qa-epochs", "1", "--seed", "9",
    ]);
    assert_eq!(code, 0, "{err}");
    let text = fs::read_to_string(&ck).unwrap();
    assert!(text.contains("\nqa_epochs=1\n") && text.contains("\nseed=9\n"));
}

#[test]
fn corrupted_checkpoint_is_a_domain_error() {
    let d = tempfile::tempdir().unwrap();
    gendata(d.path(), 2, 1);
    let ck = d.path().join("bad.ckpt");
    fs::write(&ck, "ENTMEMNN 7\n").unwrap();
    let (code, _, err) = call(&["eval", "--checkpoint", p(&ck), "--data", p(&d.path().join("test.txt"))]);
    assert_eq!(code, 1);
    assert!(err.contains("version 7"), "{err}");
}

#[test]
fn gradcheck_reports_and_fails_on_tight_threshold() {
    let (code, out, _) = call(&["gradcheck"]);
    assert_eq!(code, 0, "{out}");
    for name in ["gru_step", "lstm_step", "reconstruct", "loss_full"] {
        assert!(out.contains(name), "{out}");
    }
    let (code, out, err) = call(&["gradcheck", "--threshold", "1e-12"]);
    assert_eq!(code, 1);
    assert!(out.contains("FAIL") && err.contains("gradient checks failed"));
}

#[test]
fn convert_sentiment_and_mc() {
    let d = tempfile::tempdir().unwrap();
    for (label, text) in [("pos", "A wonderful film.<br />Great cast."), ("neg", "The plot was dull.")] {
        fs::create_dir_all(d.path().join("reviews").join(label)).unwrap();
        fs::write(d.path().join("reviews").join(label).join("1.txt"), text).unwrap();
    }
    let out = d.path().join("sent.txt");
    let (code, stdout, err) =
        call(&["convert", "--mode", "sentiment", "--data", p(&d.path().join("reviews")), "--out", p(&out)]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("2 stories written, 0 skipped"));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.matches("what is the opinion ?").count(), 2);

    let tsv = d.path().join("mc.tsv");
    let story = "Mary went to the park.\\newlineShe saw a dog.";
    let good = "one: Where did Mary go?\tpark\tschool\thome\tstore";
    let bad = "one: Mary went to the park.\ta\tb\tc\td";
    fs::write(&tsv, format!("mc.1\tauthor\t{story}\t{good}\t{bad}\t{good}\t{good}\n")).unwrap();
    let ans = d.path().join("mc.ans");
    fs::write(&ans, "A\tB\tA\tA\n").unwrap();
    let out = d.path().join("mc.txt");
    let (code, stdout, err) =
        call(&["convert", "--mode", "mc", "--data", p(&tsv), "--answers", p(&ans), "--out", p(&out)]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("1 skipped"), "{stdout}");
    let text = fs::read_to_string(&out).unwrap();
    let answers: Vec<&str> = text.lines().filter_map(|l| l.split('\t').nth(1)).collect();
    assert_eq!(answers.len(), 12);
    assert_eq!(&answers[..4], ["true", "false", "false", "false"]);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(call(&["train"]).0, 2);
    assert_eq!(call(&["frobnicate"]).0, 2);
    assert_eq!(call(&["convert", "--mode", "poetry", "--data", "x", "--out", "y"]).0, 2);
    assert_eq!(call(&["--help"]).0, 0);
    let status = Command::new(env!("CARGO_BIN_EXE_entmemnet")).arg("eval").status().unwrap();
    assert_eq!(status.code(), Some(2));
    let status = Command::new(env!("CARGO_BIN_EXE_entmemnet"))
        .args(["eval", "--checkpoint", "/nonexistent/ck", "--data", "/nonexistent/d"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}
