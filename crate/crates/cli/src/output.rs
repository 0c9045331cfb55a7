use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::fail::{CmdResult, Failure};

/// An output directory that remembers what was written into it.
pub struct OutDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> CmdResult<Self> {
        std::fs::create_dir_all(root).map_err(|e| Failure::Io(format!("{}: {e}", root.display())))?;
        Ok(OutDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Path for `name`, recorded in the manifest.
    pub fn file(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.root.join(name)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CmdResult<PathBuf> {
        let path = self.file(name);
        let text = serde_json::to_string_pretty(value).map_err(|e| Failure::config(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    /// Writes `manifest.json` listing every produced file and the resolved
    /// config. Call last.
    pub fn finish<C: Serialize>(mut self, command: &str, config: &C) -> CmdResult<()> {
        let mut files = self.files.clone();
        files.sort();
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            files,
            config,
        };
        self.write_json("manifest.json", &manifest)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct Manifest<'a, C> {
    command: &'a str,
    version: &'a str,
    files: Vec<String>,
    config: &'a C,
}
