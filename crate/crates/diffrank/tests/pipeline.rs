mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use diffrank::cache::{load_prepared, CACHE_FILE, SUMMARY_FILE, TRANSFORM_FILE};
use diffrank::checkpoint::Checkpoint;
use diffrank::pipeline::{BEST_CHECKPOINT, PER_QUERY, RESOLVED_CONFIG, RESULTS, RESULTS_HEADER, TRAIN_LOG, TRAIN_LOG_HEADER};

use common::{write_config, write_synthetic_fold};

fn diffrank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffrank"))
        .arg("--quiet")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = diffrank(args);
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

fn prepare(root: &Path) -> std::path::PathBuf {
    let raw = root.join("raw").join("SYN").join("Fold1");
    write_synthetic_fold(&raw, [12, 5, 5], 15, 1);
    let prepared = root.join("prepared");
    ok(&["prepare", "--input", p(&raw), "--dataset", "letor", "--out", p(&prepared)]);
    prepared
}

#[test]
fn full_recipe_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let prepared = prepare(root);
    for f in [CACHE_FILE, TRANSFORM_FILE, SUMMARY_FILE, RESOLVED_CONFIG] {
        assert!(prepared.join(f).is_file(), "{f}");
    }
    let summary = fs::read_to_string(prepared.join(SUMMARY_FILE)).unwrap();
    assert!(summary.contains("| Queries | 12 | 5 | 5 | 22 |"), "{summary}");
    assert!(summary.contains("| Data points | 180 | 75 | 75 | 330 |"), "{summary}");
    let data = load_prepared(&prepared).unwrap();
    assert_eq!(data.name, "SYN-Fold1");
    assert_eq!(data.fold.train.feature_count(), 46);

    let runs = root.join("runs");
    for objective in ["disc_pointwise", "disc_pointwise_squared", "disc_pairwise", "gen_pointwise", "gen_pairwise"] {
        let cfg = root.join(format!("{objective}.conf"));
        write_config(&cfg, &prepared, &runs.join(objective), objective, "");
        let msg = ok(&["train", "--config", p(&cfg), "--test"]);
        assert!(msg.contains("NDCG@10"), "{msg}");
        let run = runs.join(objective);
        for f in [RESOLVED_CONFIG, TRAIN_LOG, BEST_CHECKPOINT, RESULTS, PER_QUERY] {
            assert!(run.join(f).is_file(), "{objective}: {f}");
        }
        let log = fs::read_to_string(run.join(TRAIN_LOG)).unwrap();
        assert_eq!(log.lines().next(), Some(TRAIN_LOG_HEADER));
        assert_eq!(log.lines().count(), 4, "one validation per epoch");
        let results = fs::read_to_string(run.join(RESULTS)).unwrap();
        assert_eq!(results.lines().next(), Some(RESULTS_HEADER));
        assert!(results.lines().nth(1).unwrap().ends_with(",5"));
    }

    let ab_cfg = root.join("ablate.conf");
    write_config(&ab_cfg, &prepared, &runs.join("ablated"), "disc_pointwise", "");
    ok(&["ablate", "--config", p(&ab_cfg), "--noise-std", "0.1", "--test"]);
    let ck = Checkpoint::load(&runs.join("ablated").join(BEST_CHECKPOINT)).unwrap();
    assert_eq!(ck.method_name(), "Discriminative (pointwise) perturbed");

    let report = root.join("report");
    let msg = ok(&["report", "--runs", p(&runs), "--out", p(&report)]);
    assert!(msg.starts_with("6 runs"), "{msg}");
    let md = fs::read_to_string(report.join("results_table.md")).unwrap();
    assert_eq!(md.lines().filter(|l| l.starts_with("| D")).count(), 6, "{md}");
    assert_eq!(md.matches("**").count(), 4, "one bold cell per metric column: {md}");
    assert!(report.join("significance").join("SYN-Fold1_K1.csv").is_file());
    assert_eq!(fs::read_dir(report.join("curves")).unwrap().count(), 6);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let prepared = prepare(root);
    let cache = fs::read(prepared.join(CACHE_FILE)).unwrap();
    let raw = root.join("raw").join("SYN").join("Fold1");
    ok(&["prepare", "--input", p(&raw), "--dataset", "letor", "--out", p(&prepared)]);
    assert_eq!(fs::read(prepared.join(CACHE_FILE)).unwrap(), cache);

    for objective in ["gen_pairwise", "disc_pointwise"] {
        let mut artifacts = Vec::new();
        for name in ["a", "b"] {
            let cfg = root.join(format!("{objective}-{name}.conf"));
            let out = root.join(format!("{objective}-{name}"));
            write_config(&cfg, &prepared, &out, objective, "k_fraction = 0.5\n");
            ok(&["train", "--config", p(&cfg)]);
            artifacts.push((
                fs::read(out.join(TRAIN_LOG)).unwrap(),
                fs::read(out.join(BEST_CHECKPOINT)).unwrap(),
            ));
        }
        assert_eq!(artifacts[0], artifacts[1], "{objective}");
    }
}

#[test]
fn subsample_command_matches_k_fraction_training() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let prepared = prepare(root);
    let sub = root.join("sub");
    let msg = ok(&["subsample", "--data", p(&prepared), "--fraction", "0.25", "--seed", "11", "--out", p(&sub)]);
    assert!(msg.starts_with("kept 3 of the training queries"), "{msg}");

    let a = root.join("via-k.conf");
    write_config(&a, &prepared, &root.join("via-k"), "disc_pairwise", "k_fraction = 0.25\n");
    let b = root.join("via-sub.conf");
    write_config(&b, &sub, &root.join("via-sub"), "disc_pairwise", "");
    ok(&["train", "--config", p(&a)]);
    ok(&["train", "--config", p(&b)]);
    let ca = Checkpoint::load(&root.join("via-k").join(BEST_CHECKPOINT)).unwrap();
    let cb = Checkpoint::load(&root.join("via-sub").join(BEST_CHECKPOINT)).unwrap();
    assert_eq!(ca.parameters, cb.parameters);
    assert_eq!(ca.k_fraction, 0.25);
}

#[test]
fn ablation_with_zero_noise_equals_training() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let prepared = prepare(root);
    let a = root.join("a.conf");
    write_config(&a, &prepared, &root.join("trained"), "disc_pointwise", "");
    let b = root.join("b.conf");
    write_config(&b, &prepared, &root.join("ablated"), "disc_pointwise", "");
    ok(&["train", "--config", p(&a)]);
    ok(&["ablate", "--config", p(&b), "--noise-std", "0"]);
    for f in [TRAIN_LOG, BEST_CHECKPOINT] {
        assert_eq!(
            fs::read(root.join("trained").join(f)).unwrap(),
            fs::read(root.join("ablated").join(f)).unwrap()
        );
    }
}

#[test]
fn ablated_model_is_evaluated_on_clean_features() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let prepared = prepare(root);
    let cfg = root.join("a.conf");
    write_config(&cfg, &prepared, &root.join("ablated"), "disc_pairwise", "");
    ok(&["ablate", "--config", p(&cfg), "--noise-std", "0.5", "--test"]);
    let ck = Checkpoint::load(&root.join("ablated").join(BEST_CHECKPOINT)).unwrap();
    let data = load_prepared(&prepared).unwrap();
    let direct = diffrank::pipeline::evaluate_checkpoint(&ck, &data.fold.test).unwrap();
    let written = fs::read_to_string(root.join("ablated").join(RESULTS)).unwrap();
    assert_eq!(written, direct.results_csv());
}

#[test]
fn failures_exit_nonzero_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let prepared = prepare(root);

    let cfg = root.join("gen.conf");
    write_config(&cfg, &prepared, &root.join("gen"), "gen_pointwise", "");
    let out = diffrank(&["ablate", "--config", p(&cfg), "--noise-std", "0.1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("discriminative"));

    let cfg = root.join("diverge.conf");
    write_config(&cfg, &prepared, &root.join("diverge"), "disc_pointwise_squared", "learning_rate = 1e300\neval_interval = 1\n");
    let out = diffrank(&["train", "--config", p(&cfg)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("diverged"), "{err}");
    assert!(root.join("diverge").join(BEST_CHECKPOINT).is_file());

    let broken = root.join("broken");
    fs::create_dir_all(&broken).unwrap();
    fs::write(broken.join("train.txt"), "0 qid:1 1:0.5\n").unwrap();
    let out = diffrank(&["prepare", "--input", p(&broken), "--dataset", "letor", "--out", p(&root.join("x"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("vali.txt"));

    let out = diffrank(&["train", "--config", p(&cfg), "--epochs", "3"]);
    assert!(!out.status.success());
}
