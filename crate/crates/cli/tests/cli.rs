use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jova_core::interpret::read_explanations;
use jova_core::metrics::MetricsReport;
use tempfile::TempDir;

const TINY: &str = "\
latent_dim = 16
num_heads = 2
ffn_dim = 32
head_hidden = 16
graph_hidden = 16
rnn_hidden = 8
ecfp_bits = 256
ecfp_radius = 2
max_steps = 6
eval_every = 3
batch_size = 16
";

fn jova(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jova"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Temp dir with a small synthetic dataset `d.csv` and config `run.conf`.
fn workspace(pairs: usize) -> TempDir {
    let dir = TempDir::new().unwrap();
    let n = pairs.to_string();
    let out = jova(
        dir.path(),
        &["synth", "--out", "d.csv", "--compounds", "16", "--targets", "6", "--pairs", &n, "--seed", "3"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    fs::write(dir.path().join("run.conf"), format!("data = d.csv\n{TINY}")).unwrap();
    dir
}

fn train(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--config", "run.conf"];
    args.extend_from_slice(extra);
    jova(dir, &args)
}

fn checkpoint(dir: &Path, out: &str) -> PathBuf {
    dir.join(out).join("warm/seed1/fold0/model.ckpt")
}

#[test]
fn training_is_deterministic_and_counts_seed_fold_rows() {
    let ws = workspace(60);
    let a = train(ws.path(), &["--seeds", "1,2", "--out", "a"]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let b = train(ws.path(), &["--seeds", "1,2", "--out", "b"]);
    assert_eq!(code(&b), 0, "{}", stderr(&b));

    let bytes_a = fs::read(ws.path().join("a/metrics.csv")).unwrap();
    let bytes_b = fs::read(ws.path().join("b/metrics.csv")).unwrap();
    assert_eq!(bytes_a, bytes_b);
    let report = MetricsReport::read_csv(bytes_a.as_slice()).unwrap();
    assert_eq!(report.rows.len(), 10);
    assert!(report.rows.iter().all(|r| r.rmse.is_finite()));

    for seed in [1, 2] {
        let manifest = ws.path().join(format!("a/warm/seed{seed}/split.txt"));
        assert!(fs::read_to_string(manifest).unwrap().starts_with("# scheme=warm"));
        for k in 0..5 {
            assert!(ws.path().join(format!("a/warm/seed{seed}/fold{k}/model.ckpt")).exists());
        }
    }
    assert!(stdout(&a).contains("warm"));
    assert!(ws.path().join("a/scatter_warm.svg").exists());
    assert_eq!(
        fs::read(ws.path().join("a/predictions.csv")).unwrap(),
        fs::read(ws.path().join("b/predictions.csv")).unwrap()
    );
}

#[test]
fn flags_override_the_config_file() {
    let ws = workspace(60);
    let out = train(ws.path(), &["--out", "o", "--max-steps", "2", "--set", "latent_dim=8"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let conf = fs::read_to_string(ws.path().join("o/run.conf")).unwrap();
    assert!(conf.contains("max_steps = 2\n"), "{conf}");
    assert!(conf.contains("latent_dim = 8\n"));
    assert!(conf.contains("ffn_dim = 32\n"));
    assert!(conf.contains("patience = 50\n"));
}

#[test]
fn cached_features_give_the_same_metrics() {
    let ws = workspace(60);
    let f = jova(ws.path(), &["featurize", "--data", "d.csv", "--out", "f.cache", "--config", "run.conf"]);
    assert_eq!(code(&f), 0, "{}", stderr(&f));
    let direct = train(ws.path(), &["--out", "direct"]);
    let cached = train(ws.path(), &["--out", "cached", "--cache", "f.cache"]);
    assert_eq!(code(&direct), 0);
    assert_eq!(code(&cached), 0, "{}", stderr(&cached));
    assert_eq!(
        fs::read(ws.path().join("direct/metrics.csv")).unwrap(),
        fs::read(ws.path().join("cached/metrics.csv")).unwrap()
    );

    // a cache built for other settings is refused
    let other = train(ws.path(), &["--out", "x", "--cache", "f.cache", "--set", "ecfp_bits=128"]);
    assert_eq!(code(&other), 2);
}

#[test]
fn cold_split_of_one_compound_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let mut csv = String::from("compound_id,smiles,target_id,sequence,affinity\n");
    for t in 0..8 {
        csv.push_str(&format!("C0,CCO,T{t},MKTAYIAKQRQISFVKSHFSRQLEERLG,{}\n", 5.0 + t as f64 * 0.1));
    }
    fs::write(dir.path().join("one.csv"), csv).unwrap();
    fs::write(dir.path().join("run.conf"), format!("data = one.csv\n{TINY}")).unwrap();
    let out = train(dir.path(), &["--scheme", "cold_drug", "--out", "o"]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("compound"), "{err}");
    assert!(err.contains("cold_drug"), "{err}");

    let split = jova(dir.path(), &["split", "--data", "one.csv", "--scheme", "cold_drug"]);
    assert_eq!(code(&split), 2);
}

#[test]
fn evaluate_never_modifies_the_checkpoint() {
    let ws = workspace(60);
    assert_eq!(code(&train(ws.path(), &["--out", "o"])), 0);
    let ck = checkpoint(ws.path(), "o");
    let before = fs::read(&ck).unwrap();
    let ck_arg = ck.to_str().unwrap();
    let out = jova(
        ws.path(),
        &[
            "evaluate", "--checkpoint", ck_arg, "--data", "d.csv", "--split", "o/warm/seed1/split.txt", "--fold", "0",
            "--out", "eval.csv",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read(&ck).unwrap(), before);

    // the fold's test score matches the training run's metrics row
    let text = stdout(&out);
    let rmse: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("rmse "))
        .unwrap()
        .parse()
        .unwrap();
    let report = MetricsReport::read_csv(fs::read(ws.path().join("o/metrics.csv")).unwrap().as_slice()).unwrap();
    assert!((rmse - report.rows[0].rmse).abs() < 1e-5, "{rmse} vs {}", report.rows[0].rmse);
    let value = |key: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(key))
            .unwrap()
            .trim()
            .parse()
            .unwrap()
    };
    assert!((value("pearson ").powi(2) - value("r2 ")).abs() < 1e-5);
}

#[test]
fn predict_explain_and_screen_from_a_checkpoint() {
    let ws = workspace(60);
    assert_eq!(code(&train(ws.path(), &["--out", "o"])), 0);
    let ck = checkpoint(ws.path(), "o");
    let ck = ck.to_str().unwrap();
    let seq = "MKTAYIAKQRQISFVKSHFSRQLEERLGLIEVQ";

    let p = jova(ws.path(), &["predict", "--checkpoint", ck, "--smiles", "CCO", "--sequence", seq]);
    assert_eq!(code(&p), 0, "{}", stderr(&p));
    assert!(stdout(&p).trim().parse::<f64>().unwrap().is_finite());
    let bad = jova(ws.path(), &["predict", "--checkpoint", ck, "--smiles", "C1CC", "--sequence", seq]);
    assert_eq!(code(&bad), 2);

    let data = fs::read_to_string(ws.path().join("d.csv")).unwrap();
    let first: Vec<&str> = data.lines().nth(1).unwrap().split(',').collect();
    let pair = format!("{},{}", first[0], first[2]);
    let e = jova(
        ws.path(),
        &["explain", "--checkpoint", ck, "--data", "d.csv", "--pair", &pair, "--topk", "3", "--out", "e.jsonl"],
    );
    assert_eq!(code(&e), 0, "{}", stderr(&e));
    let text = fs::read(ws.path().join("e.jsonl")).unwrap();
    let ex = read_explanations(text.as_slice()).unwrap();
    assert_eq!(ex.len(), 1);
    assert_eq!(ex[0].compound_id, first[0]);
    assert_eq!(ex[0].compound_topk.len(), 3);
    assert_eq!(ex[0].target_topk.iter().map(|s| s.rank).collect::<Vec<_>>(), vec![1, 2, 3]);
    let missing = jova(ws.path(), &["explain", "--checkpoint", ck, "--data", "d.csv", "--pair", "nope,TGT000"]);
    assert_eq!(code(&missing), 2);

    fs::write(
        ws.path().join("lib.csv"),
        "compound_id,smiles\nA,CCO\nB,c1ccccc1O\nbroken,C1CC\nD,CC(=O)Nc1ccc(O)cc1\n",
    )
    .unwrap();
    let s = jova(
        ws.path(),
        &[
            "screen", "--checkpoint", ck, "--compounds", "lib.csv", "--target", "TGT000", "--data", "d.csv",
            "--threshold", "100",
        ],
    );
    assert_eq!(code(&s), 0, "{}", stderr(&s));
    let lines: Vec<String> = stdout(&s).lines().map(String::from).collect();
    assert_eq!(lines[0], "rank,compound_id,score,flag");
    assert_eq!(lines.len(), 4);
    let scores: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] <= w[1]));
    assert!(lines[1..].iter().all(|l| l.ends_with(",true")));
    assert!(!stdout(&s).contains("broken"));
}

#[test]
fn report_of_a_single_fold_has_zero_std() {
    let dir = TempDir::new().unwrap();
    let run = dir.path().join("run");
    fs::create_dir_all(&run).unwrap();
    fs::write(run.join("metrics.csv"), "scheme,fold,seed,rmse,ci,r2\ncold_drug,0,1,0.4,0.7,0.3\n").unwrap();
    let out = jova(dir.path(), &["report", "--in", "run"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = stdout(&out);
    assert!(table.contains("0.400 (0.000)"), "{table}");
    assert!(table.contains("0.700 (0.000)"));
    assert_eq!(fs::read_to_string(run.join("summary.txt")).unwrap(), table);
}

#[test]
fn report_aggregates_with_population_std() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("metrics.csv"),
        "scheme,fold,seed,rmse,ci,r2\nwarm,0,1,0.2,0.8,0.5\nwarm,1,1,0.3,0.8,0.5\n",
    )
    .unwrap();
    let out = jova(dir.path(), &["report", "--in", "."]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("0.250 (0.050)"));
}

fn attr(tag: &str, name: &str) -> f64 {
    let start = tag.find(&format!(" {name}=\"")).unwrap() + name.len() + 3;
    let end = start + tag[start..].find('"').unwrap();
    tag[start..end].parse().unwrap()
}

#[test]
fn scatter_of_perfect_predictions_lies_on_the_diagonal() {
    let dir = TempDir::new().unwrap();
    let mut csv = String::from("scheme,seed,fold,compound_id,target_id,truth,prediction\n");
    for (i, v) in [5.1, 6.25, 7.0, 8.4, 4.9, 6.6].iter().enumerate() {
        csv.push_str(&format!("warm,1,{},c{i},t{i},{v},{v}\n", i % 2));
    }
    fs::write(dir.path().join("predictions.csv"), csv).unwrap();
    let out = jova(dir.path(), &["report", "--in", ".", "--out", "rep"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("0.000 (0.000)"));

    let svg = fs::read_to_string(dir.path().join("rep/scatter_warm.svg")).unwrap();
    let identity = svg.lines().find(|l| l.contains("class=\"identity\"")).unwrap();
    let (x1, y1, x2, y2) = (attr(identity, "x1"), attr(identity, "y1"), attr(identity, "x2"), attr(identity, "y2"));
    let circles: Vec<&str> = svg.lines().filter(|l| l.starts_with("<circle")).collect();
    assert_eq!(circles.len(), 6);
    for c in circles {
        assert_eq!(attr(c, "data-true") - attr(c, "data-pred"), 0.0);
        let (cx, cy) = (attr(c, "cx"), attr(c, "cy"));
        let cross = (x2 - x1) * (cy - y1) - (y2 - y1) * (cx - x1);
        assert!(cross.abs() < 1.0, "{c}");
    }
}

#[test]
fn report_rejects_malformed_metrics() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("metrics.csv"), "scheme,fold,seed,rmse,ci,r2\nwarm,zero,1,0.2,0.8,0.5\n").unwrap();
    let out = jova(dir.path(), &["report", "--in", "."]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn exit_codes() {
    let ws = workspace(60);
    let p = ws.path();
    assert_eq!(code(&jova(p, &["--help"])), 0);
    assert_eq!(code(&jova(p, &["--version"])), 0);
    assert_eq!(code(&jova(p, &[])), 1);
    assert_eq!(code(&jova(p, &["frobnicate"])), 1);
    assert_eq!(code(&jova(p, &["split", "--data", "d.csv", "--scheme", "lukewarm"])), 1);
    assert_eq!(code(&jova(p, &["train", "--config", "run.conf", "--set", "learning_rate=1"])), 1);
    assert_eq!(code(&jova(p, &["train", "--config", "run.conf", "--seeds", ""])), 1);
    assert_eq!(code(&jova(p, &["train", "--config", "run.conf", "--data", "missing.csv"])), 2);
    assert_eq!(code(&jova(p, &["predict", "--checkpoint", "missing.ckpt", "--smiles", "C", "--sequence", "AAAA"])), 2);

    fs::write(p.join("bad.csv"), "compound_id,smiles\nA,CCO\n").unwrap();
    assert_eq!(code(&jova(p, &["split", "--data", "bad.csv"])), 2);

    // a learning rate beyond the f32 range makes every fold diverge
    let out = train(p, &["--out", "boom", "--lr", "1e300"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    let report = MetricsReport::read_csv(fs::read(p.join("boom/metrics.csv")).unwrap().as_slice()).unwrap();
    assert_eq!(report.rows.len(), 5);
    assert!(report.rows.iter().all(|r| r.rmse.is_nan()));
}

#[test]
fn split_manifest_is_reproducible() {
    let ws = workspace(60);
    let run = |out: &str| {
        let o = jova(ws.path(), &["split", "--data", "d.csv", "--scheme", "cold_target", "--seed", "4", "--out", out]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read_to_string(ws.path().join(out)).unwrap()
    };
    let a = run("a.txt");
    assert_eq!(a, run("b.txt"));
    assert_eq!(a.lines().count(), 1 + 5 * 60);
    let split = jova_core::FoldSplit::from_manifest(&a).unwrap();
    assert_eq!(split.to_manifest(), a);
}
