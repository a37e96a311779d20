use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use perslm::artifacts::write_atomic;
use perslm::config::ExperimentConfig;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// The one directory a command writes into. Every artifact is written
/// atomically and listed, with its digest, in the command's manifest.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<(String, String)>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Artifact names are plain file names; anything that could escape the
    /// output directory is refused.
    fn path_for(&self, name: &str) -> Result<PathBuf> {
        let plain = Path::new(name).file_name().is_some_and(|f| f == name);
        if !plain || name.starts_with('.') {
            bail!(perslm::Error::Config(format!("artifact name {name:?} must be a plain file name")));
        }
        Ok(self.root.join(name))
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path_for(name)?;
        write_atomic(&path, bytes)?;
        self.written.push((name.to_string(), sha256_hex(bytes)));
        Ok(path)
    }

    pub fn save_checkpoint(&mut self, name: &str, ck: &perslm::checkpoint::Checkpoint) -> Result<PathBuf> {
        let bytes = ck.to_bytes()?;
        self.write(name, &bytes)
    }

    /// Writes `<command>.manifest`: enough to rerun the command and check
    /// its outputs.
    pub fn finish(mut self, command: &str, args: &[String], config: &ExperimentConfig) -> Result<()> {
        let canonical = config.to_canonical_string();
        let mut text = format!(
            "command = {command}\nversion = perslm {}\nseed = {}\nconfig_hash = sha256:{}\nargs = {}\n\n[config]\n{canonical}\n[outputs]\n",
            env!("CARGO_PKG_VERSION"),
            config.train.seed,
            sha256_hex(canonical.as_bytes()),
            args.join(" "),
        );
        for (name, digest) in &self.written {
            text.push_str(&format!("{name} sha256:{digest}\n"));
        }
        let name = format!("{command}.manifest");
        let path = self.path_for(&name)?;
        write_atomic(path, text.as_bytes())?;
        self.written.clear();
        Ok(())
    }
}
