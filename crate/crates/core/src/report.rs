//! Deterministic report rendering.
//!
//! Every run produces the same [`Report`] twice: as JSON for machines and as
//! an aligned text table for people. Metric values always carry four decimal
//! places; nothing in a report depends on timing or thread count.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    /// Metric value, printed with four decimals.
    Num(f64),
    Int(i64),
    Text(String),
    /// Not computed (e.g. METEOR).
    NotAvailable,
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::Num(v) if v.is_finite() => format!("{v:.4}"),
            Cell::Num(_) => "nan".to_string(),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::NotAvailable => "n/a".to_string(),
        }
    }

    fn json(&self) -> String {
        match self {
            Cell::Num(v) if v.is_finite() => format!("{v:.4}"),
            Cell::Num(_) => "null".to_string(),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => json_string(s),
            Cell::NotAvailable => json_string("n/a"),
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
        Cell::Int(v as i64)
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

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub task: String,
    /// Effective configuration, echoed for provenance.
    pub config: Vec<(String, String)>,
    pub metrics: Vec<(String, Cell)>,
    pub notes: Vec<String>,
    pub tables: Vec<Table>,
}

impl Report {
    pub fn new(task: &str) -> Self {
        Report { task: task.to_string(), ..Default::default() }
    }

    pub fn config(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.config.push((key.to_string(), value.to_string()));
        self
    }

    pub fn metric(&mut self, key: &str, value: impl Into<Cell>) -> &mut Self {
        self.metrics.push((key.to_string(), value.into()));
        self
    }

    pub fn note(&mut self, note: impl Into<String>) -> &mut Self {
        self.notes.push(note.into());
        self
    }

    pub fn metric_value(&self, key: &str) -> Option<&Cell> {
        self.metrics.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut out = String::new();
        out.push_str("{\n");
        let _ = writeln!(out, "  \"task\": {},", json_string(&self.task));

        out.push_str("  \"config\": {");
        write_pairs(&mut out, self.config.iter().map(|(k, v)| (k.as_str(), json_string(v))));
        out.push_str("},\n");

        out.push_str("  \"metrics\": {");
        write_pairs(&mut out, self.metrics.iter().map(|(k, v)| (k.as_str(), v.json())));
        out.push_str("},\n");

        out.push_str("  \"notes\": [");
        for (i, n) in self.notes.iter().enumerate() {
            let sep = if i + 1 < self.notes.len() { "," } else { "\n  " };
            let _ = write!(out, "\n    {}{sep}", json_string(n));
        }
        out.push_str("],\n");

        out.push_str("  \"tables\": {");
        for (ti, t) in self.tables.iter().enumerate() {
            let _ = write!(out, "\n    {}: {{\n      \"columns\": [", json_string(&t.name));
            let cols: Vec<String> = t.columns.iter().map(|c| json_string(c)).collect();
            out.push_str(&cols.join(", "));
            out.push_str("],\n      \"rows\": [");
            for (ri, row) in t.rows.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(Cell::json).collect();
                let sep = if ri + 1 < t.rows.len() { "," } else { "\n      " };
                let _ = write!(out, "\n        [{}]{sep}", cells.join(", "));
            }
            out.push_str("]\n    }");
            out.push_str(if ti + 1 < self.tables.len() { "," } else { "\n  " });
        }
        out.push_str("}\n}\n");
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "== {} ==", self.task);
        if !self.config.is_empty() {
            out.push_str("config:\n");
            for (k, v) in &self.config {
                let _ = writeln!(out, "  {k} = {v}");
            }
        }
        if !self.metrics.is_empty() {
            out.push_str("metrics:\n");
            let width = self.metrics.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0);
            for (k, v) in &self.metrics {
                let _ = writeln!(out, "  {k:<width$}  {}", v.text());
            }
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        for t in &self.tables {
            let _ = writeln!(out, "\n[{}]", t.name);
            let cells: Vec<Vec<String>> = t.rows.iter().map(|r| r.iter().map(Cell::text).collect()).collect();
            let widths: Vec<usize> = (0..t.columns.len())
                .map(|c| {
                    cells
                        .iter()
                        .map(|r| r[c].chars().count())
                        .chain(std::iter::once(t.columns[c].chars().count()))
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            let line = |row: &[String]| {
                let padded: Vec<String> = row.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
                padded.join("  ").trim_end().to_string()
            };
            let _ = writeln!(out, "{}", line(&t.columns));
            for r in &cells {
                let _ = writeln!(out, "{}", line(r));
            }
        }
        out
    }
}

fn write_pairs<'a>(out: &mut String, pairs: impl ExactSizeIterator<Item = (&'a str, String)>) {
    let n = pairs.len();
    for (i, (k, v)) in pairs.enumerate() {
        let sep = if i + 1 < n { "," } else { "\n  " };
        let _ = write!(out, "\n    {}: {v}{sep}", json_string(k));
    }
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}
