use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::CliResult;

pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Wall-clock facts kept out of the data files.
#[derive(Debug, Serialize)]
pub struct RunMeta<T: Serialize> {
    pub command: &'static str,
    pub version: &'static str,
    pub started_unix_s: f64,
    pub wall_time_s: f64,
    pub threads: usize,
    pub detail: T,
}

impl<T: Serialize> RunMeta<T> {
    pub fn new(command: &'static str, started: std::time::SystemTime, detail: T) -> Self {
        let since = |t: std::time::SystemTime| {
            t.duration_since(std::time::UNIX_EPOCH)
                .map_or(0.0, |d| d.as_secs_f64())
        };
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            started_unix_s: since(started),
            wall_time_s: started.elapsed().map_or(0.0, |d| d.as_secs_f64()),
            threads: rayon::current_num_threads(),
            detail,
        }
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        write_json(&dir.join("run_meta.json"), self)
    }
}
