//! Plain-text report blocks (`name = value`, six significant digits) and
//! plot-ready CSV emission.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Format like C's `%.6g`.
pub fn sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    lines: Vec<(String, String)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num(&mut self, name: impl Into<String>, v: f64) -> &mut Self {
        self.lines.push((name.into(), sig6(v)));
        self
    }

    pub fn int(&mut self, name: impl Into<String>, v: usize) -> &mut Self {
        self.lines.push((name.into(), v.to_string()));
        self
    }

    pub fn text(&mut self, name: impl Into<String>, v: impl Into<String>) -> &mut Self {
        self.lines.push((name.into(), v.into()));
        self
    }

    pub fn extend(&mut self, other: &Report) -> &mut Self {
        self.lines.extend(other.lines.iter().cloned());
        self
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.lines
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.lines {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

/// Matrix as CSV with a header row.
pub fn matrix_csv(header: &[String], m: &Matrix) -> String {
    assert_eq!(header.len(), m.cols());
    let mut out = header.join(",");
    out.push('\n');
    for row in m.iter_rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.898), "0.898");
        assert_eq!(sig6(371.9), "371.9");
        assert_eq!(sig6(1.0 / 3.0), "0.333333");
        assert_eq!(sig6(123456789.0), "1.23457e+08");
        assert_eq!(sig6(0.000012345678), "1.23457e-05");
        assert_eq!(sig6(-2.5), "-2.5");
        assert_eq!(sig6(100000.0), "100000");
        assert_eq!(sig6(0.0), "0");
    }

    #[test]
    fn render_block() {
        let mut r = Report::new();
        r.num("median_norm", 0.0028).int("n", 3);
        assert_eq!(r.render(), "median_norm = 0.0028\nn = 3\n");
        assert_eq!(r.get("n"), Some("3"));
    }
}
