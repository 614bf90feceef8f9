//! Table and plot-data writers. Every file is written to a temporary file in
//! the target directory and renamed into place.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::run::RunRecord;
use crate::HarnessError;

pub const CSV_COLUMNS: [&str; 12] =
    ["experiment", "family", "d", "d1", "n", "replicate", "metric", "value", "error", "seed", "config_digest", "wall_time_ms"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Floats as JSON numbers when finite, strings (`NaN`, `inf`, `-inf`) otherwise.
pub mod float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&super::format_float(*v))
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// 17 significant digits; non-finite values spelled `NaN`, `inf`, `-inf`.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), HarnessError> {
    let io = |e: std::io::Error| HarnessError::Io(format!("{}: {e}", path.display()));
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    body(tmp.as_file_mut()).map_err(io)?;
    tmp.as_file_mut().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn csv_row(r: &RunRecord) -> [String; 12] {
    [
        r.experiment.clone(),
        r.family.clone(),
        r.d.to_string(),
        r.d1.to_string(),
        r.n.to_string(),
        r.replicate.to_string(),
        r.metric.clone(),
        format_float(r.value),
        format_float(r.error),
        r.seed.to_string(),
        r.config_digest.clone(),
        r.wall_time_ms.to_string(),
    ]
}

pub fn emit_table(records: &[RunRecord], format: Format, path: &Path) -> Result<(), HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::Runtime("no records to write".into()));
    }
    match format {
        Format::Csv => write_atomic(path, |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(CSV_COLUMNS)?;
            for r in records {
                out.write_record(csv_row(r))?;
            }
            out.flush()
        }),
        Format::Json => write_atomic(path, |w| {
            serde_json::to_writer_pretty(&mut *w, records)?;
            w.write_all(b"\n")
        }),
    }
}

pub fn read_table(path: &Path, format: Format) -> Result<Vec<RunRecord>, HarnessError> {
    let io = |e: String| HarnessError::Io(format!("{}: {e}", path.display()));
    match format {
        Format::Json => {
            let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
            serde_json::from_str(&text).map_err(|e| io(e.to_string()))
        }
        Format::Csv => {
            let mut rdr = csv::Reader::from_path(path).map_err(|e| io(e.to_string()))?;
            let mut out = Vec::new();
            for row in rdr.records() {
                let row = row.map_err(|e| io(e.to_string()))?;
                let f = |i: usize| row.get(i).unwrap_or_default().to_string();
                let num = |i: usize| f(i).parse::<u64>().map_err(|e| io(format!("column {}: {e}", CSV_COLUMNS[i])));
                let real = |i: usize| f(i).parse::<f64>().map_err(|e| io(format!("column {}: {e}", CSV_COLUMNS[i])));
                out.push(RunRecord {
                    experiment: f(0),
                    family: f(1),
                    d: num(2)? as usize,
                    d1: num(3)? as usize,
                    n: num(4)? as usize,
                    replicate: num(5)? as usize,
                    metric: f(6),
                    value: real(7)?,
                    error: real(8)?,
                    seed: num(9)?,
                    config_digest: f(10),
                    wall_time_ms: num(11)?,
                });
            }
            Ok(out)
        }
    }
}

fn field(r: &RunRecord, name: &str) -> Result<String, HarnessError> {
    Ok(match name {
        "experiment" => r.experiment.clone(),
        "family" => r.family.clone(),
        "d" => r.d.to_string(),
        "d1" => r.d1.to_string(),
        "n" => r.n.to_string(),
        "replicate" => r.replicate.to_string(),
        "metric" => r.metric.clone(),
        "seed" => r.seed.to_string(),
        other => return Err(HarnessError::UnknownField(other.to_string())),
    })
}

fn numeric_field(r: &RunRecord, name: &str) -> Result<f64, HarnessError> {
    Ok(match name {
        "d" => r.d as f64,
        "d1" => r.d1 as f64,
        "n" => r.n as f64,
        "replicate" => r.replicate as f64,
        other => return Err(HarnessError::UnknownField(other.to_string())),
    })
}

/// Least-squares slope of `ln y` on `ln x` over points with positive
/// coordinates; `NaN` with fewer than two such points.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if logs.len() < 2 {
        return f64::NAN;
    }
    let m = logs.len() as f64;
    let (mx, my) = logs.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / m, b + y / m));
    let (sxy, sxx) = logs.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx) * (x - mx)));
    if sxx == 0.0 {
        f64::NAN
    } else {
        sxy / sxx
    }
}

/// Whitespace-separated `x y y_error` blocks, one per group, each followed
/// by a `# slope` comment with its log-log slope. Blocks are separated by
/// two blank lines.
pub fn emit_plotdata(records: &[RunRecord], x: &str, y_metric: &str, group_by: &[&str], path: &Path) -> Result<(), HarnessError> {
    let mut groups: BTreeMap<Vec<String>, Vec<(f64, f64, f64)>> = BTreeMap::new();
    let first = records.first().ok_or_else(|| HarnessError::Runtime("no records to plot".into()))?;
    numeric_field(first, x)?;
    for g in group_by {
        field(first, g)?;
    }
    for r in records.iter().filter(|r| r.metric == y_metric) {
        let key = group_by.iter().map(|g| Ok(format!("{g}={}", field(r, g)?))).collect::<Result<Vec<_>, HarnessError>>()?;
        groups.entry(key).or_default().push((numeric_field(r, x)?, r.value, r.error));
    }
    let mut text = String::new();
    for (i, (key, mut rows)) in groups.into_iter().enumerate() {
        if i > 0 {
            text.push_str("\n\n");
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        text.push_str(&format!("# {y_metric} vs {x} {}\n", key.join(" ")));
        text.push_str(&format!("# {x} {y_metric} error\n"));
        for (xv, yv, ev) in &rows {
            text.push_str(&format!("{} {} {}\n", format_float(*xv), format_float(*yv), format_float(*ev)));
        }
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.0, r.1)).collect();
        text.push_str(&format!("# slope {}\n", format_float(log_log_slope(&pts))));
    }
    write_atomic(path, |w| w.write_all(text.as_bytes()))
}
