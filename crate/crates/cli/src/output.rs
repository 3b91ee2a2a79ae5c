use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use flate2::write::GzEncoder;
use flate2::Compression;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Writes files under one directory, each CSV prefixed by a metadata line.
pub struct OutputDir {
    root: PathBuf,
    meta: String,
}

impl OutputDir {
    pub fn create(config: &ExperimentConfig, command: &str) -> Result<Self, CliError> {
        fs::create_dir_all(&config.output_dir)?;
        Ok(Self {
            root: config.output_dir.clone(),
            meta: format!(
                "# tool=botnet {VERSION} command={command} params={}",
                config.param_hash()
            ),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn csv<R, I>(&self, name: &str, extra: &[(&str, String)], header: &[&str], rows: I) -> Result<PathBuf, CliError>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let path = self.path(name);
        let mut out = BufWriter::new(File::create(&path)?);
        write_rows(&mut out, &self.meta, extra, header, rows)?;
        out.flush()?;
        Ok(path)
    }

    pub fn csv_gz<R, I>(&self, name: &str, header: &[&str], rows: I) -> Result<PathBuf, CliError>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let path = self.path(name);
        let mut gz = GzEncoder::new(BufWriter::new(File::create(&path)?), Compression::default());
        write_rows(&mut gz, &self.meta, &[], header, rows)?;
        gz.finish()?.flush()?;
        Ok(path)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}

fn write_rows<W, R, I>(out: &mut W, meta: &str, extra: &[(&str, String)], header: &[&str], rows: I) -> Result<(), CliError>
where
    W: Write,
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    write!(out, "{meta}")?;
    for (key, value) in extra {
        write!(out, " {key}={value}")?;
    }
    writeln!(out)?;
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn num(v: f64) -> String {
    v.to_string()
}
