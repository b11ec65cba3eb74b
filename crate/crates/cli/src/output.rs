use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

/// Collects written files and emits `manifest.json` at the end of a run.
pub struct RunDir {
    root: PathBuf,
    outputs: Vec<String>,
    started: Instant,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seeds: &'a [u64],
    config: &'a str,
    outputs: &'a [String],
    wall_time_s: f64,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)
            .with_context(|| format!("cannot create output directory {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.root.join(name);
        std::fs::write(&path, contents)
            .with_context(|| format!("cannot write {}", path.display()))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, table: Table) -> Result<()> {
        self.write(name, &table.finish()?)
    }

    pub fn finish(self, command: &str, seeds: &[u64], config: &str) -> Result<PathBuf> {
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seeds,
            config,
            outputs: &self.outputs,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        let path = self.root.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
            .with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}

/// In-memory CSV with a fixed header.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header)?;
        Ok(Self { writer })
    }

    pub fn row<I, T>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = T>,
        T: ToString,
    {
        let fields: Vec<String> = fields.into_iter().map(|f| f.to_string()).collect();
        self.writer.write_record(&fields)?;
        Ok(())
    }

    pub fn finish(self) -> Result<String> {
        let bytes = self.writer.into_inner().context("flush csv")?;
        Ok(String::from_utf8(bytes)?)
    }
}

pub fn bits_string(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

pub fn indices_string(idx: &[usize]) -> String {
    idx.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}
