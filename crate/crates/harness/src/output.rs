use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::HarnessError;
use crate::experiments::{RunOutput, Table};

pub fn write_csv<W: Write>(table: &Table, out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    let fail = |e: csv::Error| HarnessError::Output(e.to_string());
    w.write_record(&table.header).map_err(fail)?;
    for row in &table.rows {
        w.write_record(row).map_err(fail)?;
    }
    w.flush()?;
    Ok(())
}

/// `results.csv` → `results.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn sidecar(cfg: &ExperimentConfig, summary: &Value) -> Value {
    json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "summary": summary,
    })
}

/// Writes the CSV to `path` and the JSON sidecar next to it.
pub fn write_files(path: &Path, cfg: &ExperimentConfig, run: &RunOutput) -> Result<(), HarnessError> {
    let file = std::fs::File::create(path)?;
    write_csv(&run.table, std::io::BufWriter::new(file))?;
    let text = serde_json::to_string_pretty(&sidecar(cfg, &run.summary)).map_err(|e| HarnessError::Output(e.to_string()))?;
    std::fs::write(sidecar_path(path), text + "\n")?;
    Ok(())
}
