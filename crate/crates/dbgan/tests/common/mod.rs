#![allow(dead_code)]

use std::path::{Path, PathBuf};

use dbgan::graph::Graph;

pub struct DatasetFiles {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: Option<PathBuf>,
}

/// Writes `g` in the loader's text formats: `a b` edge lines, comma-separated
/// feature rows and one label per line.
pub fn write_dataset(dir: &Path, g: &Graph, with_labels: bool) -> DatasetFiles {
    std::fs::create_dir_all(dir).unwrap();
    let edges: String = g.edges().iter().map(|(a, b)| format!("{a} {b}\n")).collect();
    let features: String = g
        .features()
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    let files = DatasetFiles {
        edges: dir.join("edges.txt"),
        features: dir.join("features.csv"),
        labels: with_labels.then(|| dir.join("labels.txt")),
    };
    std::fs::write(&files.edges, edges).unwrap();
    std::fs::write(&files.features, features).unwrap();
    if let Some(p) = &files.labels {
        let labels: String = g.labels().unwrap().iter().map(|l| format!("{l}\n")).collect();
        std::fs::write(p, labels).unwrap();
    }
    files
}

/// Narrow layers so a handful of epochs take well under a second.
pub const SMALL_CONFIG: &str = "q = 8\nm = 30\nepochs = 6\ncritic_steps = 2\nencoder_hidden = 16\n\
generator_hidden = 32,64\ndz_hidden = 16,8\ndx_hidden = 32,16\n";

pub fn write_config(dir: &Path, files: &DatasetFiles, extra: &str) -> PathBuf {
    let mut text = format!(
        "edges = {}\nfeatures = {}\n",
        files.edges.display(),
        files.features.display()
    );
    if let Some(l) = &files.labels {
        text += &format!("labels = {}\n", l.display());
    }
    text += SMALL_CONFIG;
    text += extra;
    let path = dir.join("run.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the `dbgan` binary with `SOURCE_DATE_EPOCH` pinned.
pub fn dbgan(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_dbgan"));
    cmd.args(args).env("SOURCE_DATE_EPOCH", "1700000000").env_remove("DBGAN_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().unwrap();
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

/// Every file under `dir`, relative path plus contents, sorted by path.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
