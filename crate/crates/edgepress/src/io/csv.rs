//! CSV traces with a fixed column order, a header row, and floats at nine
//! significant digits for stable diffs.

use crate::error::{Error, Result};

/// Scientific notation with nine significant digits.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        return "nan".to_owned();
    }
    format!("{v:.8e}")
}

/// A header plus rows of stringly-typed cells; the writer controls the
/// exact formatting so identical runs produce identical bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        CsvTable { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width mismatch");
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Config("empty CSV".into()))?
            .split(',')
            .map(str::to_owned)
            .collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let row: Vec<String> = line.split(',').map(str::to_owned).collect();
            if row.len() != header.len() {
                return Err(Error::Config(format!(
                    "CSV row {} has {} cells, header has {}",
                    i + 2,
                    row.len(),
                    header.len()
                )));
            }
            rows.push(row);
        }
        Ok(CsvTable { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("CSV schema mismatch: missing column '{name}'")))
    }

    pub fn f64_at(&self, row: usize, col: usize) -> Result<f64> {
        let cell = &self.rows[row][col];
        if cell == "nan" {
            return Ok(f64::NAN);
        }
        cell.parse().map_err(|_| Error::Config(format!("bad float '{cell}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_nine_significant_digits() {
        assert_eq!(format_float(1.0), "1.00000000e0");
        assert_eq!(format_float(0.0123456789), "1.23456789e-2");
        assert_eq!(format_float(f64::NAN), "nan");
    }

    #[test]
    fn render_parse_roundtrip() {
        let mut t = CsvTable::new(&["a", "b"]);
        t.push(vec!["1".into(), format_float(0.5)]);
        t.push(vec!["2".into(), "nan".into()]);
        let text = t.render();
        let parsed = CsvTable::parse(&text).unwrap();
        assert_eq!(parsed, t);
        assert!(parsed.f64_at(1, 1).unwrap().is_nan());
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(CsvTable::parse("a,b\n1\n").is_err());
    }
}
