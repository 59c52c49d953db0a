//! CLI acceptance: every subcommand with a fixed seed produces
//! byte-identical reports across two runs, and exit codes follow the
//! documented convention.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_learngroup")
}

fn scratch_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "learngroup-acceptance-{}-{tag}",
        std::process::id()
    ));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.cfg");
    std::fs::write(
        &path,
        "[experiment]\n\
         m = 32\n\
         n = 48\n\
         g_list = 2,4\n\
         c_list = 2\n\
         seeds = 7\n\
         [spmv]\n\
         cases = 12\n\
         max_m = 16\n\
         max_n = 16\n\
         [alloc]\n\
         trials = 4\n\
         [train]\n\
         iterations = 4\n\
         batch_episodes = 2\n\
         hidden = 8\n",
    )
    .unwrap();
    path
}

fn read_all_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_file() {
            out.insert(
                path.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&path).unwrap(),
            );
        }
    }
    out
}

#[test]
fn criterion_12_subcommands_are_deterministic_per_seed() {
    let root = scratch_dir("determinism");
    let cfg = write_tiny_config(&root);
    for format in ["csv", "json"] {
        for sub in ["encode-bench", "alloc-bench", "spmv-verify", "train"] {
            let mut outputs = Vec::new();
            for run in 0..2 {
                let out = root.join(format!("{sub}-{format}-{run}"));
                let status = Command::new(bin())
                    .args([
                        sub,
                        "--config",
                        cfg.to_str().unwrap(),
                        "--seed",
                        "9",
                        "--out",
                        out.to_str().unwrap(),
                        "--format",
                        format,
                    ])
                    .status()
                    .unwrap();
                assert!(status.success(), "{sub} run {run} failed");
                outputs.push(read_all_files(&out));
            }
            assert_eq!(
                outputs[0], outputs[1],
                "criterion 12: {sub} ({format}) reports differ between runs"
            );
            assert!(!outputs[0].is_empty());
        }
    }
    println!("criterion 12 (CLI determinism): PASS");
    let _ = std::fs::remove_dir_all(&root);
}

#[test]
fn config_errors_exit_one() {
    let root = scratch_dir("config-error");
    let bad = root.join("bad.cfg");
    std::fs::write(&bad, "[experiment]\ng_list =\n").unwrap();
    let status = Command::new(bin())
        .args(["encode-bench", "--config", bad.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));

    let status = Command::new(bin())
        .args(["encode-bench", "--config", "/nonexistent/x.cfg"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));

    // unknown flags are config errors too
    let status = Command::new(bin())
        .args(["encode-bench", "--wat"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    let _ = std::fs::remove_dir_all(&root);
}

#[test]
fn report_subcommand_flags_invalid_files() {
    let root = scratch_dir("report");
    let out = root.join("reports");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(
        out.join("good.csv"),
        "id,params,metric,value,units\nx,g=1,cycles,3.0,cycles\n",
    )
    .unwrap();
    let status = Command::new(bin())
        .args(["report", "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));

    std::fs::write(
        out.join("bad.json"),
        "[{\"id\":\"x\",\"params\":\"g=1\",\"metric\":\"flops\",\"value\":1.0,\"units\":\"u\"}]",
    )
    .unwrap();
    let status = Command::new(bin())
        .args(["report", "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2), "invalid report must exit 2");
    let _ = std::fs::remove_dir_all(&root);
}
