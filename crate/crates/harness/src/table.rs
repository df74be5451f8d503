//! Result tables, CSV and plot-data export.

use crate::error::{HarnessError, Result};
use std::fmt;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
}

impl Cell {
    fn parse(s: &str) -> Self {
        match s.parse::<f64>() {
            Ok(v) => Cell::Num(v),
            Err(_) => Cell::Text(s.to_string()),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // both forms are the shortest representation that parses back exactly
            Cell::Num(v) if *v == 0.0 || !v.is_finite() || (1e-4..1e6).contains(&v.abs()) => write!(f, "{v}"),
            Cell::Num(v) => write!(f, "{v:e}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Num(v as f64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// Named columns with one row per run. Text cells that look numeric are
/// read back as numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    columns: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn new<S: AsRef<str>>(columns: &[S]) -> Result<Self> {
        let columns: Vec<String> = columns.iter().map(|c| c.as_ref().to_string()).collect();
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].contains(c) {
                return Err(HarnessError::Table(format!("duplicate column `{c}`")));
            }
        }
        Ok(Self {
            columns,
            rows: Vec::new(),
        })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(HarnessError::Table(format!(
                "row has {} cells, table has {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn get(&self, row: usize, name: &str) -> Option<&Cell> {
        self.rows.get(row)?.get(self.column(name)?)
    }

    pub fn num(&self, row: usize, name: &str) -> Option<f64> {
        self.get(row, name)?.as_f64()
    }

    /// Rows whose `name` cell is the text `value`.
    pub fn find(&self, name: &str, value: &str) -> Vec<usize> {
        let Some(c) = self.column(name) else { return vec![] };
        (0..self.rows.len())
            .filter(|&r| matches!(&self.rows[r][c], Cell::Text(t) if t == value))
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let err = |e: csv::Error| HarnessError::Table(e.to_string());
        w.write_record(&self.columns).map_err(err)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|c| c.to_string())).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Table(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| HarnessError::Table(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let err = |e: csv::Error| HarnessError::Table(e.to_string());
        let header: Vec<String> = r.headers().map_err(err)?.iter().map(str::to_string).collect();
        let mut t = Self::new(&header)?;
        for rec in r.records() {
            let rec = rec.map_err(err)?;
            t.push(rec.iter().map(Cell::parse).collect())?;
        }
        Ok(t)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| HarnessError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_csv(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Labelled (x, y) series with axis scale flags.
///
/// File layout: one `# x=<label> y=<label> log_x=<bool> log_y=<bool>` line,
/// then a `series,x,y` CSV body.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

impl PlotData {
    /// One series per distinct value of `group` (or a single series named
    /// after `y`). Rows with non-numeric or non-finite x or y are skipped.
    pub fn from_table(table: &ResultTable, x: &str, y: &str, group: Option<&str>, log_y: bool) -> Result<Self> {
        let missing = |c: &str| HarnessError::Table(format!("no column `{c}`"));
        let xi = table.column(x).ok_or_else(|| missing(x))?;
        let yi = table.column(y).ok_or_else(|| missing(y))?;
        let gi = group.map(|g| table.column(g).ok_or_else(|| missing(g))).transpose()?;
        let mut series: Vec<Series> = Vec::new();
        for row in table.rows() {
            let (Some(xv), Some(yv)) = (row[xi].as_f64(), row[yi].as_f64()) else { continue };
            if !(xv.is_finite() && yv.is_finite()) {
                continue;
            }
            let label = gi.map_or_else(|| y.to_string(), |g| row[g].to_string());
            match series.iter_mut().find(|s| s.label == label) {
                Some(s) => s.points.push((xv, yv)),
                None => series.push(Series {
                    label,
                    points: vec![(xv, yv)],
                }),
            }
        }
        Ok(Self {
            x_label: x.to_string(),
            y_label: y.to_string(),
            log_x: false,
            log_y,
            series,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# x={} y={} log_x={} log_y={}\nseries,x,y\n",
            self.x_label, self.y_label, self.log_x, self.log_y
        );
        for se in &self.series {
            for (x, y) in &se.points {
                s.push_str(&format!("{},{x},{y}\n", se.label));
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| HarnessError::Table(format!("plot data: {m}"));
        let mut lines = text.lines();
        let head = lines.next().and_then(|l| l.strip_prefix("# ")).ok_or_else(|| bad("missing header"))?;
        let mut out = Self {
            x_label: String::new(),
            y_label: String::new(),
            log_x: false,
            log_y: false,
            series: Vec::new(),
        };
        for kv in head.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad("malformed header"))?;
            match k {
                "x" => out.x_label = v.to_string(),
                "y" => out.y_label = v.to_string(),
                "log_x" => out.log_x = v == "true",
                "log_y" => out.log_y = v == "true",
                _ => return Err(bad("unknown header key")),
            }
        }
        if lines.next() != Some("series,x,y") {
            return Err(bad("missing column header"));
        }
        for l in lines.filter(|l| !l.is_empty()) {
            let mut it = l.rsplitn(3, ',');
            let (Some(y), Some(x), Some(label)) = (it.next(), it.next(), it.next()) else {
                return Err(bad("malformed row"));
            };
            let p = (x.parse().map_err(|_| bad("bad x"))?, y.parse().map_err(|_| bad("bad y"))?);
            match out.series.iter_mut().find(|s| s.label == label) {
                Some(s) => s.points.push(p),
                None => out.series.push(Series {
                    label: label.to_string(),
                    points: vec![p],
                }),
            }
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_text(&text)
    }
}
