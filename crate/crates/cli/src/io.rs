//! Dataset CSV files and JSON manifests.
//!
//! A dataset has a header row. Observation columns are named `y`, `y<k>` or
//! `y_<k>`; failing those, a single `value` column is used, so a series
//! with header `date,value` reads directly. Optional `date` (kept verbatim)
//! and `time` columns are carried along, anything else is ignored.

use std::path::Path;

use serde_json::{json, Value};

use crate::settings::Settings;
use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct DataFile {
    pub dates: Option<Vec<String>>,
    pub times: Option<Vec<f64>>,
    pub ys: Vec<Vec<f64>>,
}

fn is_obs_column(name: &str) -> bool {
    let rest = match name.strip_prefix('y') {
        Some(r) => r.strip_prefix('_').unwrap_or(r),
        None => return false,
    };
    rest.chars().all(|c| c.is_ascii_digit())
}

pub fn read_dataset(path: &Path) -> Result<DataFile, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Config(format!("{}: bad header: {e}", path.display())))?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let mut obs: Vec<usize> = (0..header.len()).filter(|&i| is_obs_column(&header[i])).collect();
    if obs.is_empty() {
        obs = header.iter().position(|h| h == "value").into_iter().collect();
    }
    if obs.is_empty() {
        return Err(CliError::Config(format!(
            "{}: no observation column (expected `y`, `y<k>` or `value`)",
            path.display()
        )));
    }
    let date_col = header.iter().position(|h| h == "date");
    let time_col = header.iter().position(|h| h == "time");
    let mut data = DataFile {
        dates: date_col.map(|_| Vec::new()),
        times: time_col.map(|_| Vec::new()),
        ys: Vec::new(),
    };
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::Config(format!("{}: line {line}: {e}", path.display()))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let number = |i: usize| -> Result<f64, CliError> {
            let field = record.get(i).unwrap_or("");
            field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Config(format!("{}: line {line}: `{field}` in column `{}` is not a number", path.display(), header[i])))
        };
        data.ys.push(obs.iter().map(|&i| number(i)).collect::<Result<_, _>>()?);
        if let (Some(i), Some(times)) = (time_col, data.times.as_mut()) {
            times.push(number(i)?);
        }
        if let (Some(i), Some(dates)) = (date_col, data.dates.as_mut()) {
            dates.push(record.get(i).unwrap_or("").to_string());
        }
    }
    Ok(data)
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn io_error(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Config(format!("cannot write {}: {e}", path.display()))
}

/// Writes `header` followed by `rows` (already formatted).
pub fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(io_error(path))?;
    for row in rows {
        w.write_record(row).map_err(io_error(path))?;
    }
    w.flush()
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

/// Column names for a `d`-dimensional quantity: `base` when `d = 1`,
/// `base1 … based` otherwise.
pub fn columns(base: &str, d: usize) -> Vec<String> {
    if d == 1 {
        vec![base.to_string()]
    } else {
        (1..=d).map(|i| format!("{base}{i}")).collect()
    }
}

/// Shortest round-trip representation, so files reproduce bit-exactly.
pub fn fmt(v: f64) -> String {
    format!("{v:?}")
}

pub fn manifest_path(out: &Path) -> std::path::PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".json");
    name.into()
}

/// Writes the sidecar manifest `<out>.json` recording the command, the
/// fully resolved settings and any extra results.
pub fn write_manifest(out: &Path, command: &str, settings: &Settings, extra: Value) -> Result<(), CliError> {
    let resolved: serde_json::Map<String, Value> =
        settings.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
    let mut doc = json!({
        "tool": "pathsmooth",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "settings": resolved,
    });
    if let (Value::Object(doc), Value::Object(extra)) = (&mut doc, extra) {
        doc.extend(extra);
    }
    let path = manifest_path(out);
    let text = serde_json::to_string_pretty(&doc).expect("manifest serialises");
    std::fs::write(&path, text + "\n").map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observation_column_names() {
        assert!(is_obs_column("y"));
        assert!(is_obs_column("y2"));
        assert!(is_obs_column("y_1"));
        assert!(!is_obs_column("yield"));
        assert!(!is_obs_column("x"));
    }

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 7.0] {
            assert_eq!(fmt(v).parse::<f64>().unwrap(), v);
        }
    }
}
