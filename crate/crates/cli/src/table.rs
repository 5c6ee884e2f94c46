use std::io::Write;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

/// Formats `x` with exactly ten significant digits. Magnitudes in
/// `[1e-5, 1e10)` are written in positional notation, others in exponent form.
pub fn sig10(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.9e}");
    let (mantissa, exponent) = sci.split_once('e').expect("exponent form");
    let exponent: i32 = exponent.parse().expect("integer exponent");
    if !(-5..10).contains(&exponent) {
        return sci;
    }
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(rest) => ("-", rest),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let body = if exponent >= 0 {
        let split = exponent as usize + 1;
        if split >= digits.len() {
            digits
        } else {
            format!("{}.{}", &digits[..split], &digits[split..])
        }
    } else {
        format!("0.{}{digits}", "0".repeat((-exponent - 1) as usize))
    };
    format!("{sign}{body}")
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Num(f64),
    Text(String),
    Flag(bool),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) => sig10(*v),
            Cell::Text(v) => v.clone(),
            Cell::Flag(v) => v.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(v) => Value::from(*v),
            Cell::Num(v) => serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number),
            Cell::Text(v) => Value::from(v.as_str()),
            Cell::Flag(v) => Value::from(*v),
            Cell::Empty => Value::Null,
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Flag(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.into())
    }
}

/// Rectangular result with named columns.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Table {
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn write_csv(&self, out: impl Write) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.headers)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv))?;
        }
        w.flush()?;
        Ok(())
    }

    fn json_rows(&self) -> Vec<Value> {
        self.rows
            .iter()
            .map(|row| {
                let fields: Map<String, Value> =
                    self.headers.iter().cloned().zip(row.iter().map(Cell::json)).collect();
                Value::Object(fields)
            })
            .collect()
    }
}

/// What a subcommand produced: a table for CSV and an optional structured
/// document that replaces the row list in JSON output.
pub struct Report {
    pub command: &'static str,
    pub units: &'static str,
    pub table: Table,
    pub document: Option<Value>,
}

#[derive(Serialize)]
struct Envelope<'a> {
    command: &'a str,
    units: &'a str,
    columns: &'a [String],
    rows: Vec<Value>,
}

impl Report {
    pub fn write_json(&self, mut out: impl Write) -> Result<(), CliError> {
        match &self.document {
            Some(doc) => serde_json::to_writer_pretty(&mut out, doc)?,
            None => serde_json::to_writer_pretty(
                &mut out,
                &Envelope {
                    command: self.command,
                    units: self.units,
                    columns: &self.table.headers,
                    rows: self.table.json_rows(),
                },
            )?,
        }
        writeln!(out)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_significant_digits() {
        assert_eq!(sig10(16.705598061234), "16.70559806");
        assert_eq!(sig10(0.0005), "0.0005000000000");
        assert_eq!(sig10(-2.5), "-2.500000000");
        assert_eq!(sig10(1234567890.4), "1234567890");
        assert_eq!(sig10(1.5e-7), "1.500000000e-7");
        assert_eq!(sig10(9.99999999999), "10.00000000");
        assert_eq!(sig10(0.0), "0");
    }

    #[test]
    fn csv_has_headers_even_when_empty() {
        let mut buf = Vec::new();
        Table::new(&["a", "b"]).write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a,b\n");
    }
}
