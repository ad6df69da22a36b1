#![allow(dead_code)]

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::Command;

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn fixture(rel: &str) -> PathBuf {
    manifest_dir().join("tests/fixtures").join(rel)
}

pub fn golden_dir(case: &str) -> PathBuf {
    manifest_dir().join("tests/golden").join(case)
}

#[derive(Debug)]
pub struct Run {
    pub status: i32,
    pub stdout: String,
    pub stderr: String,
    /// Files under the output directory, keyed by file name.
    pub files: BTreeMap<String, Vec<u8>>,
}

/// Runs the binary in a fresh working directory with `--output-dir out`.
pub fn kpeval<I, S>(args: I) -> Run
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let dir = tempfile::tempdir().unwrap();
    kpeval_in(dir.path(), args)
}

pub fn kpeval_in<I, S>(cwd: &Path, args: I) -> Run
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let out = Command::new(env!("CARGO_BIN_EXE_kpeval"))
        .current_dir(cwd)
        .arg("--output-dir")
        .arg("out")
        .args(args.into_iter().map(Into::into))
        .output()
        .expect("spawn kpeval");
    let mut files = BTreeMap::new();
    if let Ok(entries) = std::fs::read_dir(cwd.join("out")) {
        for e in entries {
            let e = e.unwrap();
            files.insert(
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            );
        }
    }
    Run {
        status: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
        files,
    }
}

pub const GOLDEN_CASES: [&str; 3] = ["evaluate", "silver", "simulate"];

pub fn golden_args(case: &str) -> Vec<OsString> {
    let toy = |f: &str| fixture(&format!("toy/{f}")).into_os_string();
    let mut a: Vec<OsString> = vec![case.into()];
    match case {
        "evaluate" => {
            a.extend(["--predictions".into(), toy("predictions.jsonl")]);
            a.extend(["--gold".into(), toy("gold.jsonl")]);
        }
        "silver" => {
            a.extend(["--predictions".into(), toy("predictions.jsonl")]);
            a.extend(["--gold".into(), toy("gold.jsonl")]);
            a.extend(["--silver".into(), toy("silver.jsonl")]);
            a.extend([
                "--disagreement".into(),
                golden_dir("evaluate").join("members.csv").into_os_string(),
            ]);
        }
        "simulate" => a.extend(["--task".into(), toy("task.txt")]),
        other => panic!("no golden case {other}"),
    }
    a
}

pub fn read_golden(case: &str) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for e in std::fs::read_dir(golden_dir(case)).unwrap() {
        let e = e.unwrap();
        files.insert(
            e.file_name().to_string_lossy().into_owned(),
            std::fs::read(e.path()).unwrap(),
        );
    }
    files
}

/// Rewrites the golden directory from a fresh run.
pub fn bless(case: &str) {
    static LOCK: std::sync::Mutex<()> = std::sync::Mutex::new(());
    let _guard = LOCK.lock().unwrap();
    let run = kpeval(golden_args(case));
    assert_eq!(run.status, 0, "{}", run.stderr);
    let dir = golden_dir(case);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    for (name, bytes) in &run.files {
        std::fs::write(dir.join(name), bytes).unwrap();
    }
}

/// Empty when a fresh run matches the golden files byte for byte.
pub fn golden_diff(case: &str) -> Vec<String> {
    let run = kpeval(golden_args(case));
    if run.status != 0 {
        return vec![format!("exit {}: {}", run.status, run.stderr)];
    }
    let golden = read_golden(case);
    let mut diffs = Vec::new();
    for name in golden.keys().chain(run.files.keys()) {
        match (golden.get(name), run.files.get(name)) {
            (Some(a), Some(b)) if a == b => {}
            (Some(_), Some(_)) => diffs.push(format!("{case}/{name} differs")),
            (Some(_), None) => diffs.push(format!("{case}/{name} not produced")),
            (None, Some(_)) => diffs.push(format!("{case}/{name} not in golden set")),
            (None, None) => unreachable!(),
        }
    }
    diffs.dedup();
    diffs
}
