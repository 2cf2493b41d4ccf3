use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn estproc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_estproc"))
        .args(args)
        .env_remove("ESTPROC_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, procedures: &str) -> String {
    let path = dir.join("experiment.ini");
    let text = format!(
        "[experiment]\nseed = 11\nprocedures = {procedures}\n\n[classifier]\nepochs = 3\n\n\
         [dataset.small]\nsynthetic = drift\nn = 21000\nseed = 4\n"
    );
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn hashes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
        out.insert(rel, Sha256::digest(std::fs::read(&entry).unwrap()).to_vec());
    }
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            files.extend(walk(&path));
        } else {
            files.push(path);
        }
    }
    files
}

#[test]
fn run_writes_every_artifact_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "all");
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for (out, threads) in [(&out_a, "1"), (&out_b, "3")] {
        let o = estproc(&["run", "-c", &config, "-o", out.to_str().unwrap(), "--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for file in ["partitions.csv", "gold.csv", "estimates.csv", "errors.csv", "medians.csv", "report.md", "manifest.json"] {
        assert!(out_a.join(file).is_file(), "missing {file}");
    }
    let manifest = std::fs::read_to_string(out_a.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"OK\""));
    assert_eq!(hashes(&out_a), hashes(&out_b));
}

#[test]
fn stage_without_upstream_artifact_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "all");
    let out = tmp.path().join("out");
    let o = estproc(&["estimate", "-c", &config, "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("partitions.csv"));
}

#[test]
fn invalid_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.ini");
    std::fs::write(&path, "[experiment]\nseed = 1\nblok_size = 5\n\n[dataset.x]\nsynthetic = iid\nn = 100\n").unwrap();
    let o = estproc(&["run", "-c", path.to_str().unwrap(), "-o", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("blok_size"));
}

#[test]
fn partition_lists_pairs_of_a_tsv_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus.tsv");
    let o = estproc(&["synth", "--kind", "iid", "--n", "45758", "--seed", "1", "-o", corpus.to_str().unwrap()]);
    assert!(o.status.success());
    let o = estproc(&["partition", "--input", corpus.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 1 + 4);
    assert_eq!(lines[1], "1,0,10000,10000,20000");
    assert_eq!(lines[4], "4,0,40000,40000,45758");
}

#[test]
fn ranking_tests_with_one_procedure_are_refused_not_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "xval_strat_rand");
    let out = tmp.path().join("out");
    let o = estproc(&["run", "-c", &config, "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let friedman = std::fs::read_to_string(out.join("friedman.json")).unwrap();
    assert!(friedman.contains("refused"));
}
