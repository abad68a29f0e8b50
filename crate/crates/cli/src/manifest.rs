use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Record of one invocation: what was read, what was written, with which
/// seeds and settings, and how long each stage took.
#[derive(Debug, Default)]
pub struct RunManifest {
    pub command: String,
    pub seeds: Vec<(String, u64)>,
    pub config: Vec<(String, String)>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub stages: Vec<(String, f64)>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self { command: command.to_string(), ..Default::default() }
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.push((name.to_string(), value));
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.to_string(), value.to_string()));
    }

    pub fn input(&mut self, path: impl AsRef<Path>) {
        self.inputs.push(path.as_ref().to_path_buf());
    }

    pub fn output(&mut self, path: impl AsRef<Path>) {
        self.outputs.push(path.as_ref().to_path_buf());
    }

    /// Runs `f` and records its wall-clock time under `name`.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.stages.push((name.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "tool = neurocond {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "command = {}", self.command);
        for (k, v) in &self.seeds {
            let _ = writeln!(out, "seed.{k} = {v}");
        }
        for (k, v) in &self.config {
            let _ = writeln!(out, "config.{k} = {v}");
        }
        for p in &self.inputs {
            let _ = writeln!(out, "input = {}", p.display());
        }
        for p in &self.outputs {
            let _ = writeln!(out, "output = {}", p.display());
        }
        for (s, t) in &self.stages {
            let _ = writeln!(out, "stage.{s} = {t:.3} s");
        }
        out
    }

    /// Writes next to the first output unless `path` is given. Outputs that
    /// are missing on disk are an error: the manifest only lists real files.
    pub fn write(&self, path: Option<&Path>) -> std::io::Result<PathBuf> {
        for p in &self.outputs {
            if !p.exists() {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("output {} was not written", p.display()),
                ));
            }
        }
        let target = match (path, self.outputs.first()) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(first)) => {
                let mut name = first.as_os_str().to_owned();
                name.push(".manifest.txt");
                PathBuf::from(name)
            }
            (None, None) => PathBuf::from("neurocond.manifest.txt"),
        };
        fs::write(&target, self.to_text())?;
        Ok(target)
    }
}
