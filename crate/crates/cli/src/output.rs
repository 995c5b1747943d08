//! Atomic file output and CSV tables.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// A CSV table preceded by one `# key=value ...` comment line.
pub struct Table {
    comment: String,
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(comment: &str, header: &[String]) -> Result<Self> {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        writer.write_record(header)?;
        Ok(Self {
            comment: comment.to_string(),
            writer,
        })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn into_bytes(self) -> Result<Vec<u8>> {
        let body = self.writer.into_inner().map_err(|e| anyhow::anyhow!("{}", e.error()))?;
        let mut out = format!("# {}\n", self.comment).into_bytes();
        out.extend(body);
        Ok(out)
    }

    pub fn write(self, path: &Path) -> Result<()> {
        write_atomic(path, &self.into_bytes()?)
    }
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn nums(vs: &[f64]) -> impl Iterator<Item = String> + '_ {
    vs.iter().map(|&v| num(v))
}

pub fn names(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}
