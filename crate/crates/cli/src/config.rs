//! Flat key=value config files with flag-override precedence, and the
//! resolved-config record written next to every command's outputs.

use psparse_core::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Key=value pairs loaded from `--config`. Blank lines and `#` comments are
/// skipped.
#[derive(Debug, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: Option<&PathBuf>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::File {
            path: path.clone(),
            source: e,
        })?;
        let mut values = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Infeasible(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                )));
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(FileConfig { values })
    }

    /// Flag > config file > default.
    pub fn resolve<T: std::str::FromStr>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(raw) => raw.parse::<T>().map_err(|_| {
                Error::Infeasible(format!("config key {key}: cannot parse {raw:?}"))
            }),
            None => Ok(default),
        }
    }

}

/// Fully resolved parameters of one run, serialized as key=value next to
/// the command outputs so any artifact can be reproduced.
#[derive(Debug, Default)]
pub struct ResolvedConfig {
    entries: Vec<(String, String)>,
}

impl ResolvedConfig {
    pub fn new(command: &str) -> Self {
        let mut c = ResolvedConfig::default();
        c.set("command", command);
        c
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    /// Records the CRC32 of an input file's bytes.
    pub fn hash_input(&mut self, label: &str, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::File {
            path: path.to_path_buf(),
            source: e,
        })?;
        self.set(
            &format!("input_crc32.{label}"),
            format!("{:08x}", crc32fast::hash(&bytes)),
        );
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// Writes `config.txt` into `dir_or_file`'s directory (or the directory
    /// itself), stem-prefixed when the output is a file.
    pub fn write_next_to(&self, out: &Path, out_is_dir: bool) -> Result<()> {
        let path = if out_is_dir {
            out.join("config.txt")
        } else {
            let stem = out
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into());
            out.with_file_name(format!("{stem}.config.txt"))
        };
        std::fs::write(&path, self.render()).map_err(|e| Error::File { path, source: e })?;
        Ok(())
    }
}
