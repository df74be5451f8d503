//! Plain-text raster and fracture files.
//!
//! Raster: first line `nx ny`, then `ny` rows of `nx` values, row-major with
//! y ascending. Fractures: one segment `x0 y0 x1 y1` per line.

use super::{CoefficientField, Provenance, Segment};
use crate::error::{NlmcError, Result};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub fn format_raster(nx: usize, ny: usize, values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 12);
    let _ = writeln!(s, "{nx} {ny}");
    for row in values.chunks(nx).take(ny) {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_raster(text: &str) -> Result<(usize, usize, Vec<f64>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| NlmcError::Parse("empty raster".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| NlmcError::Parse(format!("raster header: {e}")))?;
    if dims.len() != 2 {
        return Err(NlmcError::Parse("raster header must be `nx ny`".into()));
    }
    let (nx, ny) = (dims[0], dims[1]);
    let mut values = Vec::with_capacity(nx * ny);
    for (r, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| NlmcError::Parse(format!("raster row {r}: {e}")))?;
        if row.len() != nx {
            return Err(NlmcError::Parse(format!(
                "raster row {r} has {} values, expected {nx}",
                row.len()
            )));
        }
        values.extend(row);
    }
    if values.len() != nx * ny {
        return Err(NlmcError::Parse(format!(
            "raster has {} rows, expected {ny}",
            values.len() / nx.max(1)
        )));
    }
    Ok((nx, ny, values))
}

pub fn write_raster(path: &Path, nx: usize, ny: usize, values: &[f64]) -> Result<()> {
    fs::write(path, format_raster(nx, ny, values)).map_err(|e| NlmcError::io(path, e))
}

pub fn read_raster(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| NlmcError::io(path, e))?;
    parse_raster(&text)
}

pub fn read_field(path: &Path) -> Result<CoefficientField> {
    let (nx, ny, values) = read_raster(path)?;
    CoefficientField::new(nx, ny, values, Provenance::File(path.to_path_buf()))
}

pub fn format_fractures(segments: &[Segment]) -> String {
    segments
        .iter()
        .map(|s| format!("{} {} {} {}\n", s.x0, s.y0, s.x1, s.y1))
        .collect()
}

pub fn parse_fractures(text: &str) -> Result<Vec<Segment>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(n, l)| {
            let v: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| NlmcError::Parse(format!("fracture line {}: {e}", n + 1)))?;
            if v.len() != 4 {
                return Err(NlmcError::Parse(format!(
                    "fracture line {} needs 4 values",
                    n + 1
                )));
            }
            Ok(Segment::new(v[0], v[1], v[2], v[3]))
        })
        .collect()
}

pub fn read_fractures(path: &Path) -> Result<Vec<Segment>> {
    let text = fs::read_to_string(path).map_err(|e| NlmcError::io(path, e))?;
    parse_fractures(&text)
}

pub fn write_fractures(path: &Path, segments: &[Segment]) -> Result<()> {
    fs::write(path, format_fractures(segments)).map_err(|e| NlmcError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raster_round_trip() {
        let v = vec![1.0, 2.5, 1e6, 0.1 + 0.2, 3.0, 1e-7];
        let s = format_raster(3, 2, &v);
        assert!(s.starts_with("3 2\n"));
        assert_eq!(parse_raster(&s).unwrap(), (3, 2, v));
        assert!(parse_raster("2 2\n1 2\n3\n").is_err());
    }

    #[test]
    fn fracture_round_trip() {
        let segs = vec![Segment::new(0.1, 0.2, 0.9, 0.2), Segment::new(0.5, 0.0, 0.5, 1.0)];
        assert_eq!(parse_fractures(&format_fractures(&segs)).unwrap(), segs);
        assert!(parse_fractures("0 0 1\n").is_err());
    }
}
