use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use navformer::cli::load_house;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_navformer")).args(args).output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let p = std::env::temp_dir().join(format!("navformer-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&p);
    std::fs::create_dir_all(&p).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_MODEL: &str = "d_model = 16\nencoder_heads = 4\ndecoder_heads = 4\nencoder_ffn = 32\ndecoder_ffn = 32\n\
backbone_width = 32\nbox_encoding_dim = 16\nencoder_layers = 1\ndecoder_layers = 1\nobs_size = 28\n";
const BENCH_MODEL: &str = "d_model = 16\nencoder_layers = 1\ndecoder_layers = 1\nobs_size = 28\n";

#[test]
fn missing_required_key_exits_2() {
    let dir = scratch("missing");
    let cfg = dir.join("bad.cfg");
    std::fs::write(&cfg, "seed = 1\nrollouts = 2\n").unwrap();
    let out = bin(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("total_steps"));
}

#[test]
fn genworlds_is_reproducible_and_connected() {
    let dir = scratch("gen");
    let (a, b) = (dir.join("a"), dir.join("b"));
    for d in [&a, &b] {
        let out = bin(&["genworlds", "--count", "10", "--seed", "40", "--out", s(d)]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let mut files: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert_eq!(files.iter().filter(|f| f.to_string_lossy().ends_with(".bin")).count(), 10);
    assert!(a.join("index.json").exists());
    for f in &files {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f:?} differs");
        if f.to_string_lossy().ends_with(".bin") {
            let h = load_house(&a.join(f)).unwrap();
            assert_eq!(h.traversable().components(), 1, "{f:?} is not connected");
        }
    }
}

#[test]
fn greedy_eval_is_deterministic() {
    let dir = scratch("eval");
    let cfg = dir.join("eval.cfg");
    std::fs::write(&cfg, format!("seed = 3\ntotal_steps = 64\nrollouts = 2\n{SMALL_MODEL}")).unwrap();
    let mut reports = Vec::new();
    for k in 0..2 {
        let out_file = dir.join(format!("eval{k}.json"));
        let out = bin(&["eval", "--config", s(&cfg), "--episodes", "3", "--greedy", "--out", s(&out_file)]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        reports.push(std::fs::read_to_string(out_file).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn bench_refuses_to_time_non_equivalent_strategies() {
    let dir = scratch("bench-bad");
    let cfg = dir.join("bench.cfg");
    std::fs::write(&cfg, format!("tolerance = -1\nt_grid = 4\nr_grid = 1\nscaling_t = 4\n{BENCH_MODEL}")).unwrap();
    let out = bin(&["bench", "--config", s(&cfg), "--out", s(&dir.join("out"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!dir.join("out/bench.csv").exists());
}

#[test]
fn bench_default_grid_csv() {
    let dir = scratch("bench");
    let cfg = dir.join("bench.cfg");
    std::fs::write(&cfg, format!("r_grid = 1\nscaling_t = 16\n{BENCH_MODEL}")).unwrap();
    let out = bin(&["bench", "--config", s(&cfg), "--out", s(&dir.join("out")), "--gnuplot"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("out/bench.csv")).unwrap();
    let rows: Vec<_> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 16);
    for strategy in ["NoCache", "FeatureCache", "StateCache", "KVCache"] {
        for t in ["16", "32", "64", "128"] {
            assert!(
                rows.iter().any(|r| r.split(',').take(2).eq([strategy, t])),
                "missing row {strategy},{t}"
            );
        }
    }
    assert!(dir.join("out/bench.dat").exists());
}
