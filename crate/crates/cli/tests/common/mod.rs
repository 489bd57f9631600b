//! Helpers shared by the CLI integration tests and the acceptance target.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_semshare"))
}

pub fn semshare(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn semshare")
}

/// Runs the binary and panics with its stderr unless it exits cleanly.
pub fn semshare_ok(args: &[&str]) -> Output {
    let out = semshare(args);
    assert!(
        out.status.success(),
        "semshare {args:?} exited with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Every regular file under `root`, keyed by its relative path.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).expect("read_dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                files.insert(rel, std::fs::read(&path).expect("read"));
            }
        }
    }
    files
}

/// A small benchmark written by the CLI itself.
pub fn small_bench(dir: &Path) {
    semshare_ok(&[
        "gen-bench", "--out", s(dir), "--seed", "7", "--train", "2", "--test", "2", "--planar", "1",
        "--width", "96", "--height", "64",
    ]);
}

/// One invocation of every subcommand, writing under `out` and reading the
/// benchmark at `bench`. Returns the command names in the order run.
pub fn every_command(bench: &Path, out: &Path) -> Vec<&'static str> {
    std::fs::create_dir_all(out).unwrap();
    let f0 = bench.join("f000");
    let f2 = bench.join("f002");
    let p = |name: &str| out.join(name);
    let rig = bench.join("rig.txt");
    semshare_ok(&["gen-bench", "--out", s(&p("bench")), "--seed", "3", "--train", "1", "--test", "1", "--planar", "0", "--width", "64", "--height", "48"]);
    semshare_ok(&[
        "flow", "--target", s(&f0.join("narrow.pgm")), "--source", s(&f0.join("wide.pgm")),
        "--out", s(&p("pair.flo")), "--color", s(&p("pair.ppm")),
    ]);
    for dir in ["forward", "backward"] {
        let scores = if dir == "forward" { "wide_scores.sem" } else { "narrow_scores.sem" };
        semshare_ok(&[
            "share", "--rig", s(&rig), "--wide-img", s(&f0.join("wide.pgm")), "--narrow-img",
            s(&f0.join("narrow.pgm")), "--scores", s(&f0.join(scores)), "--direction", dir, "--out",
            s(&p(&format!("{dir}.sem"))), "--mask-out", s(&p(&format!("{dir}_mask.sem"))),
            "--dump-intermediates", s(&p(&format!("{dir}_dump"))),
        ]);
    }
    semshare_ok(&[
        "train-fusion", "--bench", s(bench), "--variant", "basic", "--out", s(&p("narrow_head.sem")),
        "--iterations", "300", "--losses", s(&p("narrow_losses.tsv")),
    ]);
    semshare_ok(&[
        "train-fusion", "--bench", s(bench), "--variant", "bottleneck", "--branch", "wide", "--narrow-head",
        s(&p("narrow_head.sem")), "--out", s(&p("wide_head.sem")), "--iterations", "300", "--seed", "5",
    ]);
    semshare_ok(&[
        "run", "--rig", s(&rig), "--wide-img", s(&f2.join("wide.pgm")), "--narrow-img", s(&f2.join("narrow.pgm")),
        "--wide-scores", s(&f2.join("wide_scores.sem")), "--narrow-scores", s(&f2.join("narrow_scores.sem")),
        "--narrow-head", s(&p("narrow_head.sem")), "--wide-head", s(&p("wide_head.sem")), "--out", s(&p("run")),
        "--dump-intermediates",
    ]);
    for suite in ["flow", "fusion", "overlap", "flow-quality"] {
        semshare_ok(&["ablate", suite, "--bench", s(bench), "--out", s(&p(&format!("ablate_{suite}.tsv")))]);
    }
    semshare_ok(&[
        "eval", "--pred", s(&p("run/narrow_labels.sem")), "--gt", s(&f2.join("narrow_gt.sem")), "--mask",
        s(&p("run/narrow_mask.sem")), "--out", s(&p("eval_labels.txt")),
    ]);
    semshare_ok(&[
        "eval", "--pred", s(&f2.join("narrow_scores.sem")), "--gt", s(&f2.join("narrow_gt.sem")), "--flow",
        s(&p("pair.flo")), "--flow-gt", s(&p("forward_dump/flow.flo")), "--out", s(&p("eval_flow.txt")),
    ]);
    vec!["gen-bench", "flow", "share", "train-fusion", "run", "ablate", "eval"]
}
