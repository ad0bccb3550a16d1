//! Result emission: 17-significant-digit CSV, JSON records and atomic writes.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// One CSV cell.
pub enum Cell<'a> {
    Int(u64),
    Float(f64),
    Text(&'a str),
}

impl From<f64> for Cell<'_> {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell<'_> {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl<'a> From<&'a str> for Cell<'a> {
    fn from(v: &'a str) -> Self {
        Cell::Text(v)
    }
}

/// In-memory CSV table with a fixed header.
#[derive(Debug, Clone)]
pub struct Csv {
    columns: usize,
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Self { columns: header.len(), text }
    }

    pub fn row(&mut self, cells: &[Cell<'_>]) {
        assert_eq!(cells.len(), self.columns, "csv row width");
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            match c {
                Cell::Int(v) => write!(self.text, "{v}").unwrap(),
                Cell::Float(v) => self.text.push_str(&fmt_f64(*v)),
                Cell::Text(s) => self.text.push_str(s),
            }
        }
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn into_string(self) -> String {
        self.text
    }

    /// The table as `{"columns": [...], "rows": [[...], ...]}`; non-finite
    /// floats become `null`.
    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::{json, Value};
        let cell = |c: &str| -> Value {
            if let Ok(i) = c.parse::<i64>() {
                return json!(i);
            }
            match c.parse::<f64>() {
                Ok(v) if v.is_finite() => json!(v),
                Ok(_) => Value::Null,
                Err(_) if matches!(c, "nan" | "inf" | "-inf") => Value::Null,
                Err(_) => json!(c),
            }
        };
        let mut lines = self.text.lines();
        let columns: Vec<&str> = lines.next().map(|h| h.split(',').collect()).unwrap_or_default();
        let rows: Vec<Vec<Value>> = lines.map(|l| l.split(',').map(cell).collect()).collect();
        json!({ "columns": columns, "rows": rows })
    }
}

/// Writes `contents` to `path` through a temporary sibling and a rename, so a
/// partially written file is never observable under the final name.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, record: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(record)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-2.5), "-2.5000000000000000e0");
        let x = std::f64::consts::PI;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn csv_layout() {
        let mut csv = Csv::new(&["n", "l1_norm"]);
        csv.row(&[1usize.into(), 0.5.into()]);
        assert_eq!(csv.as_str(), "n,l1_norm\n1,5.0000000000000000e-1\n");
    }

    #[test]
    fn csv_as_json() {
        let mut csv = Csv::new(&["n", "v", "m"]);
        csv.row(&[3usize.into(), f64::NAN.into(), "batch-means".into()]);
        csv.row(&[4usize.into(), 0.25.into(), "green-kubo".into()]);
        let j = csv.to_json();
        assert_eq!(j["columns"][1], "v");
        assert_eq!(j["rows"][0][0], 3);
        assert!(j["rows"][0][1].is_null());
        assert_eq!(j["rows"][1][1], 0.25);
        assert_eq!(j["rows"][1][2], "green-kubo");
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_atomic(&p, b"x\n").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "x\n");
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }
}
