//! Result tables and their CSV / JSON encodings.

use std::io::Write;

use serde_json::{json, Map, Value};

use crate::config::{Config, Format};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(u64),
    Text(String),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Float(x) => format!("{x:.16e}"),
            Cell::Int(n) => n.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Float(x) => json!(x),
            Cell::Int(n) => json!(n),
            Cell::Text(s) => json!(s),
            Cell::Empty => Value::Null,
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Cell::Int(n as u64)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Float)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    /// Two columns `t` and `name`.
    pub fn series(name: &str, t: &[f64], values: &[f64]) -> Self {
        let mut table = Self::new(&["t", name]);
        for (&ti, &v) in t.iter().zip(values) {
            table.push(vec![ti.into(), v.into()]);
        }
        table
    }

    pub fn write_csv<W: Write>(&self, out: W) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Column name to array of values.
    pub fn json_data(&self) -> Value {
        let mut data = Map::new();
        for (i, name) in self.columns.iter().enumerate() {
            data.insert(name.clone(), Value::Array(self.rows.iter().map(|r| r[i].json()).collect()));
        }
        Value::Object(data)
    }
}

#[derive(Debug, Clone)]
pub struct Metadata {
    pub experiment: &'static str,
    pub seed: Option<u64>,
    pub wall_time_s: f64,
    pub extra: Map<String, Value>,
}

pub fn write_result<W: Write>(mut out: W, config: &Config, table: &Table, meta: &Metadata) -> anyhow::Result<()> {
    match config.output.format {
        Format::Csv => table.write_csv(out),
        Format::Json => {
            let mut m = Map::new();
            m.insert("tool".into(), json!(env!("CARGO_PKG_NAME")));
            m.insert("tool_version".into(), json!(env!("CARGO_PKG_VERSION")));
            m.insert("experiment".into(), json!(meta.experiment));
            m.insert("seed".into(), json!(meta.seed));
            m.insert("wall_time_s".into(), json!(meta.wall_time_s));
            m.extend(meta.extra.clone());
            let doc = json!({
                "config": config,
                "data": table.json_data(),
                "metadata": Value::Object(m),
            });
            serde_json::to_writer_pretty(&mut out, &doc)?;
            writeln!(out)?;
            Ok(())
        }
    }
}
