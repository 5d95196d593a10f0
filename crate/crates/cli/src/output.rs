use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Versions {
    ldrlab: &'static str,
    ldrlab_cli: &'static str,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    subcommand: &'a str,
    status: &'a str,
    config_hash: &'a str,
    seed: u64,
    threads: usize,
    versions: Versions,
    wall_time_s: f64,
    artifacts: &'a [Artifact],
    diagnostics: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Artifact directory of one subcommand run. Every file goes through
/// [`Output::write`] so the manifest lists it.
pub struct Output {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
    diagnostics: Vec<String>,
    started: Instant,
}

impl Output {
    pub fn create(dir: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), artifacts: Vec::new(), diagnostics: Vec::new(), started: Instant::now() })
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
        let bytes = contents.as_ref();
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.artifacts.retain(|a| a.path != name);
        self.artifacts.push(Artifact { path: name.to_string(), sha256: hex(&Sha256::digest(bytes)) });
        Ok(())
    }

    pub fn diagnostic(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        eprintln!("warning: {msg}");
        self.diagnostics.push(msg);
    }

    /// Writes `<subcommand>.manifest.json`. On failure the artifacts written
    /// so far are deleted and the manifest records the error.
    pub fn finish(
        mut self,
        subcommand: &str,
        config_hash: &str,
        seed: u64,
        threads: usize,
        outcome: &anyhow::Result<()>,
    ) -> anyhow::Result<PathBuf> {
        let error = outcome.as_ref().err().map(|e| format!("{e:#}"));
        if error.is_some() {
            for a in self.artifacts.drain(..) {
                let _ = std::fs::remove_file(self.dir.join(&a.path));
            }
        }
        let manifest = Manifest {
            subcommand,
            status: if error.is_some() { "failed" } else { "complete" },
            config_hash,
            seed,
            threads,
            versions: Versions { ldrlab: ldrlab_version(), ldrlab_cli: env!("CARGO_PKG_VERSION") },
            wall_time_s: self.started.elapsed().as_secs_f64(),
            artifacts: &self.artifacts,
            diagnostics: &self.diagnostics,
            error,
        };
        let path = self.dir.join(format!("{subcommand}.manifest.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn ldrlab_version() -> &'static str {
    // the library is a path dependency of this workspace and shares its version
    env!("CARGO_PKG_VERSION")
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs `f(0..n)` on up to `threads` workers; results are in index order.
pub fn pool_map<T: Send>(n: usize, threads: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= n {
                    break;
                }
                let v = f(k);
                slots.lock().expect("worker panicked")[k] = Some(v);
            });
        }
    });
    slots.into_inner().expect("worker panicked").into_iter().map(|v| v.expect("every job ran")).collect()
}
