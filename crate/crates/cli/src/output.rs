//! Output directory handling and the per-run metadata record.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use crate::config::{OutputFormat, RunConfig};

pub struct Output {
    dir: PathBuf,
    format: OutputFormat,
    files: Vec<String>,
}

impl Output {
    pub fn create(dir: &Path, format: OutputFormat) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            format,
            files: Vec::new(),
        })
    }

    fn open(&mut self, name: &str) -> anyhow::Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    /// Writes a JSON data file unless the format is CSV-only.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        if self.format.json() {
            let mut w = self.open(name)?;
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
            w.flush()?;
        }
        Ok(())
    }

    /// Writes a CSV data file unless the format is JSON-only.
    pub fn csv(
        &mut self,
        name: &str,
        write: impl FnOnce(&mut BufWriter<File>) -> reldiff::Result<()>,
    ) -> anyhow::Result<()> {
        if self.format.csv() {
            let mut w = self.open(name)?;
            write(&mut w)?;
            w.flush()?;
        }
        Ok(())
    }

    /// Metadata record plus `config.json`, the resolved configuration in a
    /// form accepted by `--config`.
    pub fn finish(mut self, command: &str, config: &RunConfig, threads: usize) -> anyhow::Result<()> {
        let mut w = self.open("config.json")?;
        serde_json::to_writer_pretty(&mut w, config)?;
        writeln!(w)?;
        w.flush()?;
        let meta = Metadata {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: config.seed,
            threads,
            conventions: Conventions {
                friction_sign: config.bath.friction_sign.as_str(),
                advection: config.advection.as_str(),
                metric_signature: "+---",
                tensor_storage: "contravariant",
            },
            files: self.files.clone(),
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config,
        };
        let path = self.dir.join("metadata.json");
        let mut f = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        serde_json::to_writer_pretty(&mut f, &meta)?;
        writeln!(f)?;
        f.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct Conventions {
    friction_sign: &'static str,
    advection: &'static str,
    metric_signature: &'static str,
    tensor_storage: &'static str,
}

#[derive(Serialize)]
struct Metadata<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    threads: usize,
    conventions: Conventions,
    files: Vec<String>,
    /// Excluded from reproducibility comparisons.
    created_unix: u64,
    config: &'a RunConfig,
}
