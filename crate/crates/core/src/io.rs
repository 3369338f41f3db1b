//! Tabular output: CSV files whose first line is `# {json metadata}`, and a
//! JSON manifest listing every file written by a run.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub metadata: Value,
    pub columns: Vec<String>,
    /// Column-major data.
    pub data: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(metadata: Value) -> Self {
        Table {
            metadata,
            columns: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn with_column(mut self, name: &str, values: Vec<f64>) -> Self {
        self.columns.push(name.to_string());
        self.data.push(values);
        self
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().position(|c| c == name).map(|i| self.data[i].as_slice())
    }

    pub fn rows(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let rows = self.rows();
        if self.data.iter().any(|c| c.len() != rows) {
            return Err(Error::Format("columns have different lengths".into()));
        }
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "# {}", serde_json::to_string(&self.metadata)?)?;
        writeln!(w, "{}", self.columns.join(","))?;
        for i in 0..rows {
            let line: Vec<String> = self.data.iter().map(|c| format!("{:e}", c[i])).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Table> {
        let r = BufReader::new(fs::File::open(path)?);
        let mut lines = r.lines();
        let first = lines.next().ok_or_else(|| Error::Format(format!("{} is empty", path.display())))??;
        let metadata = match first.strip_prefix('#') {
            Some(json) => serde_json::from_str(json.trim())?,
            None => return Err(Error::Format("missing '# {json}' header line".into())),
        };
        let header = lines.next().ok_or_else(|| Error::Format("missing column header".into()))??;
        let columns: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let mut data = vec![Vec::new(); columns.len()];
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != columns.len() {
                return Err(Error::Format(format!("row {} has {} fields, expected {}", n + 1, fields.len(), columns.len())));
            }
            for (col, f) in data.iter_mut().zip(fields) {
                let v = f
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("row {}: {e}", n + 1)))?;
                col.push(v);
            }
        }
        Ok(Table { metadata, columns, data })
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    /// Seconds since the Unix epoch; the only field that varies between
    /// identical runs.
    pub created: u64,
    pub config: Value,
    pub files: Vec<String>,
    pub summary: Value,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let t = Table::new(json!({"omega": 0.0, "basis": "dyson"}))
            .with_column("t", vec![0.0, 0.1, 0.2])
            .with_column("k", vec![-2.0, 1.0 / 3.0, f64::MIN_POSITIVE]);
        t.write(&p).unwrap();
        assert_eq!(Table::read(&p).unwrap(), t);
    }

    #[test]
    fn ragged_and_malformed_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let t = Table::new(json!({})).with_column("a", vec![1.0]).with_column("b", vec![]);
        assert!(t.write(&p).is_err());
        fs::write(&p, "t,k\n0,1\n").unwrap();
        assert!(matches!(Table::read(&p), Err(Error::Format(_))));
        fs::write(&p, "# {}\nt,k\n0,1,2\n").unwrap();
        assert!(matches!(Table::read(&p), Err(Error::Format(_))));
    }
}
