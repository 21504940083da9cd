use std::path::Path;
use std::process::{Command, Output};

use tagweave::matrix_file;

fn tagweave(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tagweave"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = tagweave(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const SMALL: [&str; 6] = ["--genres", "3", "--styles-per-genre", "2", "--tracks-per-style", "60"];

fn synth_small(dir: &Path, out: &str) {
    let mut args = vec!["synth", "--out", out, "--seed", "4"];
    args.extend(SMALL);
    ok(dir, &args);
}

/// Runs split/sample/train/predict on a small corpus in `dir/c`.
fn trained(dir: &Path) {
    synth_small(dir, "c");
    ok(
        dir,
        &[
            "split", "--tags", "c/tags.txt", "--annotations", "c/annotations.tsv", "--features", "c/features.mx",
            "--out-dir", "s",
        ],
    );
    for (part, extra) in [("train", vec!["--cap", "40"]), ("valid", vec![])] {
        let ann = format!("s/{part}.tsv");
        let out = format!("s/mono_{part}.tsv");
        let mut args = vec![
            "sample", "--tags", "c/tags.txt", "--annotations", &ann, "--popularity-annotations",
            "c/annotations.tsv", "--out", &out,
        ];
        args.extend(extra);
        ok(dir, &args);
    }
    ok(
        dir,
        &[
            "train", "--tags", "c/tags.txt", "--features", "s/train.mx", "--annotations", "s/train.tsv",
            "--assignment", "s/mono_train.tsv", "--valid-features", "s/valid.mx", "--valid-annotations",
            "s/valid.tsv", "--valid-assignment", "s/mono_valid.tsv", "--jitter", "c/jitter.json", "--hidden",
            "16", "--out", "m.twml",
        ],
    );
    ok(dir, &["predict", "--model", "m.twml", "--features", "s/test.mx", "--out", "P.mx"]);
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path(), "one");
    synth_small(dir.path(), "two");
    for f in ["tags.txt", "taxonomy.tsv", "annotations.tsv", "features.mx", "ground_truth.json"] {
        let a = std::fs::read(dir.path().join("one").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("two").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("one/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["params"]["generator"]["seed"], 4);
    assert_eq!(manifest["outputs"].as_object().unwrap().len(), 6);
}

#[test]
fn missing_required_flag_exits_2_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = tagweave(dir.path(), &["synth", "--seed", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn module_errors_carry_machine_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let out = tagweave(dir.path(), &["eval-taxonomy", "--sim", "absent.mx", "--taxonomy", "absent.tsv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("ERROR io:"));

    synth_small(dir.path(), "c");
    let out = tagweave(
        dir.path(),
        &["embed", "--kind", "mean", "--tags", "c/tags.txt", "--out", "e.mx"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("ERROR parameter:"));

    let out = tagweave(dir.path(), &["split", "--tags", "c/tags.txt", "--annotations", "c/taxonomy.tsv", "--out-dir", "s"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("ERROR "));
}

#[test]
fn stage_chain_produces_simplex_mean_embedding_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    ok(
        d,
        &[
            "embed", "--kind", "mean", "--tags", "c/tags.txt", "--posteriors", "P.mx", "--annotations", "s/test.tsv",
            "--out", "mean.mx",
        ],
    );
    let m = matrix_file::read(&d.join("mean.mx")).unwrap();
    assert!(m.nrows() > 0);
    for row in m.rows() {
        assert!(row.iter().all(|&v| v >= 0.0));
        // 32-bit storage.
        assert!((row.sum() - 1.0).abs() < 1e-5);
    }
    assert!(d.join("mean.mx.tags").exists());
    assert!(d.join("mean.mx.manifest.json").exists());

    ok(d, &["embed", "--kind", "columns", "--tags", "c/tags.txt", "--posteriors", "P.mx", "--out", "col.mx"]);
    ok(d, &["similarity", "--a", "col.mx", "--out", "S.mx", "--csv", "S.csv"]);
    let csv = std::fs::read_to_string(d.join("S.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("row_tag,col_tag,similarity"));

    let out = ok(d, &["eval-taxonomy", "--sim", "S.mx", "--taxonomy", "c/taxonomy.tsv", "--resamples", "200"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["task"], "taxonomy");
    assert_eq!(report["n_queries"], 6);
    for key in ["1", "2"] {
        let v = report["hr"][key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
    assert!(report["map"].as_f64().is_some());
    assert!(report["ci95"]["hr@1"].as_f64().is_some());

    // Same flags, same bytes; the report file gets its own manifest.
    ok(d, &["eval-taxonomy", "--sim", "S.mx", "--taxonomy", "c/taxonomy.tsv", "--resamples", "200", "--out", "r.json"]);
    assert_eq!(std::fs::read(d.join("r.json")).unwrap(), out.stdout);
    assert!(d.join("r.json.manifest.json").exists());
}

#[test]
fn dedup_chain_and_dist_cross_group_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(d, "c");
    ok(d, &["duplicate", "--tags", "c/tags.txt", "--annotations", "c/annotations.tsv", "--out-dir", "dup"]);
    ok(
        d,
        &["embed", "--kind", "dist", "--tags", "dup/tags.txt", "--annotations", "dup/annotations.tsv", "--out", "e.mx"],
    );
    ok(d, &["similarity", "--a", "e.mx", "--out", "S.mx"]);
    let out = ok(d, &["eval-dedup", "--sim", "S.mx", "--plan", "dup/plan.json", "--resamples", "100"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["task"], "dedup");
    // Subtags never share a track, so counterparts are never retrieved first.
    assert_eq!(report["hr"]["1"].as_f64(), Some(0.0));
}

#[test]
fn twin_synth_and_translation_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut args = vec!["synth", "--out", "t", "--twin"];
    args.extend(SMALL);
    ok(d, &args);
    // f_dist cannot link disjoint track sets; this only exercises the wiring.
    ok(
        d,
        &[
            "embed", "--kind", "dist", "--tags", "t/joint/tags.txt", "--annotations", "t/joint/annotations.tsv",
            "--out", "e.mx",
        ],
    );
    ok(d, &["similarity", "--a", "e.mx", "--row-prefix", "A:", "--col-prefix", "B:", "--out", "S.mx"]);
    let out = ok(
        d,
        &["eval-translate", "--sim", "S.mx", "--ground-truth", "t/joint/ground_truth.json", "--resamples", "100"],
    );
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["task"], "translation");
    assert_eq!(report["n_queries"], 9);
    // Disjoint tracks: every A-B occurrence cosine is 0.
    assert!(report["unmatched_pairs"]
        .as_array()
        .unwrap()
        .iter()
        .all(|p| p["similarity"].as_f64() == Some(0.0)));
}

#[test]
fn demo_is_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = |out: &'static str| {
        vec!["demo", "--seed", "2", "--tracks-per-style", "40", "--hidden", "16", "--cap", "30", "--out-dir", out]
    };
    let first = ok(d, &args("r1"));
    let table = String::from_utf8_lossy(&first.stdout).to_string();
    assert!(table.contains("taxonomy") && table.contains("dedup") && table.contains("translation"));
    let single = Command::new(env!("CARGO_BIN_EXE_tagweave"))
        .args(args("r2"))
        .current_dir(d)
        .env("TAGWEAVE_THREADS", "1")
        .output()
        .unwrap();
    assert!(single.status.success());
    assert_eq!(
        std::fs::read(d.join("r1/report.json")).unwrap(),
        std::fs::read(d.join("r2/report.json")).unwrap()
    );
}
