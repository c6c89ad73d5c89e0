//! Output-file plumbing: 12-significant-digit CSV formatting, the run
//! manifest, and cleanup of partial outputs on failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Formats a float with 12 significant digits, stable across runs.
pub fn fmt12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    format!("{x:.11e}")
}

/// Tracks files written during a command so failures leave no partial
/// output behind.
pub struct OutputDir {
    dir: PathBuf,
    written: Vec<PathBuf>,
    start: Instant,
}

impl OutputDir {
    pub fn create(dir: &Path) -> std::io::Result<OutputDir> {
        fs::create_dir_all(dir)?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            start: Instant::now(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> std::io::Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, contents)?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// Removes everything written so far (failure path).
    pub fn discard(&mut self) {
        for path in self.written.drain(..) {
            let _ = fs::remove_file(path);
        }
    }

    /// Appends one manifest record; the manifest is a JSON-lines file and
    /// the only append-only artifact in the directory.
    pub fn finish_manifest(
        &mut self,
        command: &str,
        inputs: &[&Path],
        params: serde_json::Value,
        seed: Option<u64>,
    ) -> std::io::Result<()> {
        let record = serde_json::json!({
            "command": command,
            "inputs": inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "params": params,
            "seed": seed,
            "out_dir": self.dir.display().to_string(),
            "tool_version": env!("CARGO_PKG_VERSION"),
            "duration_secs": self.start.elapsed().as_secs_f64(),
        });
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join("manifest.json"))?;
        writeln!(file, "{record}")
    }
}
