//! Tabular reports rendered as CSV or JSON.

use occupancy_core::report::fmt_sig;
use serde_json::{Map, Number, Value};

use crate::config::{ExperimentConfig, Format, CONFIG_PREFIX};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(x) => fmt_sig(*x),
            Cell::Int(n) => n.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            // round through the printed digits so both formats carry the same values
            Cell::Num(x) => fmt_sig(*x)
                .parse::<f64>()
                .ok()
                .and_then(Number::from_f64)
                .map_or(Value::Null, Value::Number),
            Cell::Int(n) => Value::from(*n),
            Cell::Text(s) => Value::from(s.as_str()),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<u64> for Cell {
    fn from(n: u64) -> Self {
        Cell::Int(n)
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Cell::Int(n as u64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub config: ExperimentConfig,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    pub summary: Vec<(String, Cell)>,
    /// False when a tolerance was breached.
    pub pass: bool,
}

impl Report {
    pub fn new(config: &ExperimentConfig, header: &[&'static str]) -> Self {
        Self {
            config: config.clone(),
            header: header.to_vec(),
            rows: Vec::new(),
            summary: Vec::new(),
            pass: true,
        }
    }

    pub fn row(&mut self, cells: Vec<Cell>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }

    pub fn note(&mut self, key: impl Into<String>, value: impl Into<Cell>) {
        self.summary.push((key.into(), value.into()));
    }

    fn status(&self) -> &'static str {
        if self.pass {
            "pass"
        } else {
            "tolerance_breach"
        }
    }

    pub fn render(&self) -> String {
        match self.config.format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }

    fn to_csv(&self) -> String {
        let mut out = format!("{CONFIG_PREFIX}{}\n", self.config.to_json_line());
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::csv).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        for (key, value) in &self.summary {
            out.push_str(&format!("# {key}={}\n", value.csv()));
        }
        out.push_str(&format!("# status={}\n", self.status()));
        out
    }

    fn to_json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj: Map<String, Value> = self
                    .header
                    .iter()
                    .zip(row)
                    .map(|(h, c)| (h.to_string(), c.json()))
                    .collect();
                Value::Object(obj)
            })
            .collect();
        let summary: Map<String, Value> = self.summary.iter().map(|(k, v)| (k.clone(), v.json())).collect();
        let doc = serde_json::json!({
            "config": self.config,
            "rows": rows,
            "summary": summary,
            "status": self.status(),
        });
        let mut text = serde_json::to_string_pretty(&doc).expect("report serializes");
        text.push('\n');
        text
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::CommandKind;

    #[test]
    fn csv_layout() {
        let mut r = Report::new(&ExperimentConfig::new(CommandKind::Estimate), &["a", "b"]);
        r.row(vec![Cell::from(1.0 / 3.0), Cell::from("x")]);
        r.note("slope", 0.5);
        let text = r.render();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with(CONFIG_PREFIX));
        assert_eq!(&lines[1..], ["a,b", "0.333333333,x", "# slope=0.5", "# status=pass"]);
    }

    #[test]
    fn json_mirrors_csv_digits() {
        let mut c = ExperimentConfig::new(CommandKind::Estimate);
        c.format = Format::Json;
        let mut r = Report::new(&c, &["v"]);
        r.row(vec![Cell::from(2.0f64.sqrt())]);
        let doc: Value = serde_json::from_str(&r.render()).unwrap();
        assert_eq!(doc["rows"][0]["v"], serde_json::json!(1.41421356));
        assert_eq!(doc["config"]["command"], "estimate");
    }
}
