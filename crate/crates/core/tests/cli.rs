use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn saev(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saev"))
        .args(args)
        .env("SAEV_NUM_THREADS", "2")
        .output()
        .expect("spawn saev")
}

fn ok(args: &[&str]) -> Output {
    let out = saev(args);
    assert!(
        out.status.success(),
        "saev {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

const SMALL_TRAIN: &[&str] = &[
    "--set",
    "total_steps=300",
    "--set",
    "batch_size=256",
    "--set",
    "lr=1e-3",
    "--set",
    "lambda=0.3",
    "--set",
    "lr_warmup_steps=30",
    "--set",
    "lr_decay_steps=60",
    "--set",
    "dead_feature_window=100",
    "--set",
    "feature_sampling_window=100",
    "--set",
    "buffer_batches_num=4",
    "--set",
    "expansion_factor=2",
];

struct Fixture {
    dir: TempDir,
    shard: String,
    model: String,
}

fn fixture(items: usize) -> Fixture {
    let dir = TempDir::new().unwrap();
    let shard = p(dir.path(), "corpus.saev");
    let model = p(dir.path(), "model.saem");
    ok(&[
        "gen-synth",
        "--out",
        &shard,
        "--items",
        &items.to_string(),
        "--truth",
        &p(dir.path(), "truth.json"),
    ]);
    let mut args = vec!["train", "--shards", &shard, "--out", &model, "--seed", "3"];
    args.extend_from_slice(SMALL_TRAIN);
    ok(&args);
    Fixture { dir, shard, model }
}

#[test]
fn pipeline_gen_train_eval_rank_filter() {
    let f = fixture(40);
    let d = f.dir.path();

    let report = p(d, "report.json");
    ok(&[
        "eval", "--shards", &f.shard, "--model", &f.model, "--out", &report,
    ]);
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(r["mean_recon"].as_f64().unwrap() < r["mean_zero_baseline"].as_f64().unwrap());
    assert_eq!(r["token_count"], 40 * 16);

    let weights = p(d, "weights.json");
    ok(&[
        "weights", "--shards", &f.shard, "--model", &f.model, "--out", &weights, "--delta", "0.1",
    ]);
    let w: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&weights).unwrap()).unwrap();
    assert_eq!(w["sample_size"], 40);
    assert_eq!(w["omega"].as_array().unwrap().len(), 128);

    let manifest = p(d, "manifest.jsonl");
    ok(&[
        "rank",
        "--shards",
        &f.shard,
        "--model",
        &f.model,
        "--method",
        "cosine",
        "--weights",
        &weights,
        "--delta",
        "0.1",
        "--out",
        &manifest,
    ]);
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&manifest)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 40);
    assert!(lines
        .windows(2)
        .all(|w| w[0]["score"].as_f64() >= w[1]["score"].as_f64()));

    let kept = ok(&["filter", "--manifest", &manifest, "--retention", "0.5"]);
    let kept: Vec<u64> = String::from_utf8(kept.stdout)
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    let top: Vec<u64> = lines[..20]
        .iter()
        .map(|l| l["item_id"].as_u64().unwrap())
        .collect();
    assert_eq!(kept, top);

    let avg = ok(&["avg-score", "--weights", &weights]);
    let avg: f64 = String::from_utf8(avg.stdout)
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!((-1.0..=1.0).contains(&avg));

    let masks = p(d, "masks.jsonl");
    let scores = p(d, "scores.csv");
    ok(&[
        "patch-filter",
        "--shards",
        &f.shard,
        "--model",
        &f.model,
        "--method",
        "l1",
        "--gamma",
        "0.25",
        "--gamma",
        "0.75",
        "--out",
        &masks,
        "--scores",
        &scores,
    ]);
    let masks: Vec<serde_json::Value> = std::fs::read_to_string(&masks)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(masks.len(), 80);
    assert_eq!(masks[0]["kept"].as_array().unwrap().len(), 2);
    assert_eq!(masks[1]["kept"].as_array().unwrap().len(), 6);
    assert_eq!(
        std::fs::read_to_string(&scores).unwrap().lines().count(),
        1 + 40 * 8
    );
}

#[test]
fn rank_and_train_are_reproducible() {
    let f = fixture(24);
    let d = f.dir.path();
    let again = p(d, "again.saem");
    let mut args = vec![
        "train", "--shards", &f.shard, "--out", &again, "--seed", "3",
    ];
    args.extend_from_slice(SMALL_TRAIN);
    ok(&args);
    assert_eq!(
        std::fs::read(&f.model).unwrap(),
        std::fs::read(&again).unwrap()
    );

    let a = ok(&[
        "rank", "--shards", &f.shard, "--model", &f.model, "--method", "cooccur", "--delta", "0.1",
    ]);
    let b = ok(&[
        "rank", "--shards", &f.shard, "--model", &again, "--method", "cooccur", "--delta", "0.1",
    ]);
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn cosine_rank_without_weights_names_the_flag() {
    let out = saev(&[
        "rank", "--shards", "x.saev", "--model", "m.saem", "--method", "cosine",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--weights"));
    let out = saev(&[
        "patch-filter",
        "--shards",
        "x.saev",
        "--model",
        "m.saem",
        "--method",
        "cosine",
        "--gamma",
        "0.5",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    assert_eq!(saev(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(saev(&["rank", "--unknown-flag"]).status.code(), Some(1));
    assert_eq!(saev(&["--help"]).status.code(), Some(0));
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.saev");
    std::fs::write(&bad, b"not a shard").unwrap();
    let bad = bad.display().to_string();
    let out = saev(&["eval", "--shards", &bad, "--model", "missing.saem"]);
    assert_eq!(out.status.code(), Some(2));
    let out = saev(&[
        "train",
        "--shards",
        &bad,
        "--out",
        &p(dir.path(), "m"),
        "--set",
        "nonsense=1",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn patch_filter_skips_single_modality_items() {
    let f = fixture(12);
    let d = f.dir.path();
    let text_only: PathBuf = d.join("text.saev");
    ok(&[
        "gen-synth",
        "--out",
        text_only.to_str().unwrap(),
        "--items",
        "3",
        "--vision-fraction",
        "0",
    ]);
    let out = ok(&[
        "patch-filter",
        "--shards",
        text_only.to_str().unwrap(),
        &f.shard,
        "--model",
        &f.model,
        "--method",
        "l0",
        "--gamma",
        "0.5",
    ]);
    // gen-synth reuses item ids 0.., so count lines rather than ids.
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 12);
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipping"));
}

#[test]
fn corr_reads_tables() {
    let dir = TempDir::new().unwrap();
    let x = p(dir.path(), "x.csv");
    let y = p(dir.path(), "y.csv");
    std::fs::write(&x, "id,score\na,1\nb,2\nc,3\n").unwrap();
    std::fs::write(&y, "id,score\nc,30\na,10\nb,20\nz,5\n").unwrap();
    let out = ok(&["corr", "--x", &x, "--y", &y]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["pearson"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(v["n"], 3);
}
