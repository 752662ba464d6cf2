#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_trajformer");

/// Small, fast settings shared by the pipeline tests.
pub const TINY: &str = "output_dir=out
seed=0
dataset.a.root=out/data/a
dataset.b.root=out/data/b
window.delta=10
window.kappa=50
window.stride=10
grid.th=100
model.d_model=8
model.n_heads=1
model.n_layers=1
train.epochs=2
train.learning_rate=0.001
train.batch_size=8
";

pub struct Workdir {
    pub dir: tempfile::TempDir,
}

impl Workdir {
    pub fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("run.conf"), config).unwrap();
        Self { dir }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn out(&self) -> PathBuf {
        self.path().join("out")
    }

    pub fn run(&self, args: &[&str]) -> Output {
        let conf = self.path().join("run.conf");
        let mut full = vec![args[0], "--config", conf.to_str().unwrap()];
        full.extend_from_slice(&args[1..]);
        Command::new(BIN).args(&full).env("TRAJFORMER_THREADS", "1").output().unwrap()
    }

    pub fn ok(&self, args: &[&str]) -> String {
        let o = self.run(args);
        assert!(
            o.status.success(),
            "{args:?} failed with {:?}\nstdout:\n{}\nstderr:\n{}",
            o.status.code(),
            String::from_utf8_lossy(&o.stdout),
            String::from_utf8_lossy(&o.stderr)
        );
        String::from_utf8(o.stdout).unwrap()
    }
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("process exited normally")
}

/// Every file under `root`, keyed by relative path.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
