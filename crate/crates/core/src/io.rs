//! Shared record reading for the CSV and JSONL input formats.
//!
//! Both formats are reduced to a [`Row`]: a map from field name to a scalar
//! value, tagged with the 1-based line it came from. Typed getters report the
//! offending line and field on failure.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// On-disk encoding of a record file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Jsonl,
}

impl DataFormat {
    /// Guess from a file extension; `.jsonl`/`.ndjson`/`.json` are JSONL, anything else CSV.
    pub fn from_path(path: &std::path::Path) -> DataFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") | Some("json") => DataFormat::Jsonl,
            _ => DataFormat::Csv,
        }
    }
}

impl FromStr for DataFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(DataFormat::Csv),
            "jsonl" | "ndjson" => Ok(DataFormat::Jsonl),
            other => Err(format!("unknown data format `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: field `{field}`: {message}")]
    Field {
        line: u64,
        field: String,
        message: String,
    },
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("input is not valid UTF-8 near line {line}")]
    Utf8 { line: u64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl RecordError {
    pub fn field(line: u64, field: &str, message: impl Into<String>) -> Self {
        RecordError::Field {
            line,
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub fn row(line: u64, message: impl Into<String>) -> Self {
        RecordError::Row {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Scalar {
    Null,
    Text(String),
    Number(serde_json::Number),
    Bool(bool),
}

/// One decoded record.
#[derive(Debug, Clone)]
pub struct Row {
    pub line: u64,
    fields: BTreeMap<String, Scalar>,
}

impl Row {
    fn raw(&self, name: &str) -> Option<&Scalar> {
        match self.fields.get(name) {
            None | Some(Scalar::Null) => None,
            Some(Scalar::Text(s)) if s.trim().is_empty() => None,
            Some(v) => Some(v),
        }
    }

    fn err(&self, name: &str, message: impl Into<String>) -> RecordError {
        RecordError::field(self.line, name, message)
    }

    pub fn has(&self, name: &str) -> bool {
        self.raw(name).is_some()
    }

    pub fn opt_str(&self, name: &str) -> Result<Option<String>, RecordError> {
        Ok(match self.raw(name) {
            None => None,
            Some(Scalar::Text(s)) => Some(s.clone()),
            Some(Scalar::Number(n)) => Some(n.to_string()),
            Some(Scalar::Bool(b)) => Some(b.to_string()),
            Some(Scalar::Null) => unreachable!(),
        })
    }

    pub fn str(&self, name: &str) -> Result<String, RecordError> {
        self.opt_str(name)?
            .ok_or_else(|| self.err(name, "missing value"))
    }

    pub fn opt_f64(&self, name: &str) -> Result<Option<f64>, RecordError> {
        let value = match self.raw(name) {
            None => return Ok(None),
            Some(Scalar::Number(n)) => n
                .as_f64()
                .ok_or_else(|| self.err(name, format!("`{n}` is not representable")))?,
            Some(Scalar::Text(s)) => s
                .trim()
                .parse::<f64>()
                .map_err(|_| self.err(name, format!("`{s}` is not a number")))?,
            Some(other) => return Err(self.err(name, format!("expected a number, got {other:?}"))),
        };
        if !value.is_finite() {
            return Err(self.err(name, "value must be finite"));
        }
        Ok(Some(value))
    }

    pub fn f64(&self, name: &str) -> Result<f64, RecordError> {
        self.opt_f64(name)?
            .ok_or_else(|| self.err(name, "missing value"))
    }

    pub fn i64(&self, name: &str) -> Result<i64, RecordError> {
        match self.raw(name) {
            None => Err(self.err(name, "missing value")),
            Some(Scalar::Number(n)) => n
                .as_i64()
                .ok_or_else(|| self.err(name, format!("`{n}` is not an integer"))),
            Some(Scalar::Text(s)) => s
                .trim()
                .parse::<i64>()
                .map_err(|_| self.err(name, format!("`{s}` is not an integer"))),
            Some(other) => Err(self.err(name, format!("expected an integer, got {other:?}"))),
        }
    }

    /// Parse a string field with `FromStr`, mapping the failure onto this row.
    pub fn parse<T>(&self, name: &str) -> Result<T, RecordError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        let text = self.str(name)?;
        text.trim()
            .parse::<T>()
            .map_err(|e| self.err(name, format!("`{text}`: {e}")))
    }

    pub fn field_error(&self, name: &str, message: impl Into<String>) -> RecordError {
        self.err(name, message)
    }
}

/// Decode every record of `source`, checking that `required` columns exist.
pub fn read_rows<R: Read>(
    source: R,
    format: DataFormat,
    required: &[&str],
) -> Result<Vec<Row>, RecordError> {
    match format {
        DataFormat::Csv => read_csv(source, required),
        DataFormat::Jsonl => read_jsonl(source, required),
    }
}

fn read_csv<R: Read>(source: R, required: &[&str]) -> Result<Vec<Row>, RecordError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(source);
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(csv_error(e, 1)),
    };
    if headers.is_empty() {
        // Entirely empty stream: no header, no rows.
        return Ok(Vec::new());
    }
    let names: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
    for col in required {
        if !names.iter().any(|n| n == col) {
            return Err(RecordError::field(1, col, "column missing from header"));
        }
    }

    let mut rows = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let fallback = reader.position().line() + 1;
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_error(e, fallback)),
        }
        let line = record.position().map(|p| p.line()).unwrap_or(fallback);
        let fields = names
            .iter()
            .cloned()
            .zip(record.iter().map(|v| Scalar::Text(v.to_string())))
            .collect();
        rows.push(Row { line, fields });
    }
    Ok(rows)
}

fn csv_error(e: csv::Error, fallback: u64) -> RecordError {
    let line = e.position().map(|p| p.line()).unwrap_or(fallback);
    match e.kind() {
        csv::ErrorKind::Utf8 { .. } => RecordError::Utf8 { line },
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => RecordError::Io(io),
            _ => unreachable!(),
        },
        _ => RecordError::row(line, e.to_string()),
    }
}

fn read_jsonl<R: Read>(source: R, required: &[&str]) -> Result<Vec<Row>, RecordError> {
    let mut reader = BufReader::new(source);
    let mut rows = Vec::new();
    let mut buf = Vec::new();
    let mut line = 0u64;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line += 1;
        let text = std::str::from_utf8(&buf).map_err(|_| RecordError::Utf8 { line })?;
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(text)
            .map_err(|e| RecordError::row(line, format!("invalid JSON: {e}")))?;
        let Value::Object(map) = value else {
            return Err(RecordError::row(line, "expected a JSON object"));
        };
        let mut fields = BTreeMap::new();
        for (k, v) in map {
            let scalar = match v {
                Value::Null => Scalar::Null,
                Value::String(s) => Scalar::Text(s),
                Value::Number(n) => Scalar::Number(n),
                Value::Bool(b) => Scalar::Bool(b),
                Value::Array(_) | Value::Object(_) => {
                    return Err(RecordError::field(line, &k, "nested values are not supported"))
                }
            };
            fields.insert(k, scalar);
        }
        for col in required {
            if !fields.contains_key(*col) {
                return Err(RecordError::field(line, col, "field missing"));
            }
        }
        rows.push(Row { line, fields });
    }
    Ok(rows)
}

/// Write `items` as JSON lines.
pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Write `items` as CSV with a header row taken from the serialized field names.
pub fn write_csv<W: Write, T: Serialize>(out: W, items: &[T]) -> std::io::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for item in items {
        writer.serialize(item).map_err(std::io::Error::other)?;
    }
    writer.flush()
}
