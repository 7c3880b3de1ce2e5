use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// Output directory that remembers what it created, so a failed command can
/// take its partial files back.
pub struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Outputs { dir: dir.to_path_buf(), created_dir, files: Vec::new() })
    }

    pub fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(path);
        Ok(BufWriter::new(file))
    }

    pub fn write_with<F>(&mut self, name: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<(), String>,
    {
        let path = self.dir.join(name);
        let mut w = self.create(name)?;
        f(&mut w).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        w.flush().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(|e| e.to_string())?;
            w.write_all(b"\n").map_err(|e| e.to_string())
        })
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        self.write_with(name, |w| w.write_all(body.as_bytes()).map_err(|e| e.to_string()))
    }

    /// Removes every file written so far (and the directory, if this run
    /// made it and it is now empty).
    pub fn discard(self) {
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}
