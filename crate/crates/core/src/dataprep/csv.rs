//! Strict RFC-4180 reading with type inference, and canonical CSV writing.
//!
//! An unquoted empty field is null; a quoted empty field (`""`) is an empty string.

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeZone, Utc};

use super::{Column, ColumnDef, ColumnType, Schema, Table};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct CsvError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> CsvError {
    CsvError { line, message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Field {
    text: String,
    quoted: bool,
}

impl Field {
    fn is_null(&self) -> bool {
        !self.quoted && self.text.is_empty()
    }
}

/// Splits the input into records. Each record carries the line it starts on.
fn records(input: &str) -> Result<Vec<(usize, Vec<Field>)>, CsvError> {
    let mut out = Vec::new();
    let mut chars = input.chars().peekable();
    let mut line = 1;
    while chars.peek().is_some() {
        let start = line;
        let mut fields = Vec::new();
        loop {
            let mut field = Field { text: String::new(), quoted: false };
            if chars.peek() == Some(&'"') {
                chars.next();
                field.quoted = true;
                loop {
                    match chars.next() {
                        None => return Err(err(start, "unterminated quoted field")),
                        Some('"') if chars.peek() == Some(&'"') => {
                            chars.next();
                            field.text.push('"');
                        }
                        Some('"') => break,
                        Some(c) => {
                            if c == '\n' {
                                line += 1;
                            }
                            field.text.push(c);
                        }
                    }
                }
                match chars.peek() {
                    None | Some(',') | Some('\n') | Some('\r') => {}
                    Some(_) => return Err(err(line, "unexpected character after closing quote")),
                }
            } else {
                while let Some(&c) = chars.peek() {
                    match c {
                        ',' | '\n' | '\r' => break,
                        '"' => return Err(err(line, "quote inside unquoted field")),
                        _ => {
                            field.text.push(c);
                            chars.next();
                        }
                    }
                }
            }
            fields.push(field);
            match chars.next() {
                Some(',') => continue,
                Some('\r') => {
                    if chars.next() != Some('\n') {
                        return Err(err(line, "bare carriage return"));
                    }
                    line += 1;
                    break;
                }
                Some('\n') => {
                    line += 1;
                    break;
                }
                None => break,
                Some(_) => unreachable!(),
            }
        }
        out.push((start, fields));
    }
    Ok(out)
}

/// Parses ISO-8601 text into milliseconds since the epoch, UTC. Naive forms are read as UTC.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp_millis());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(Utc.from_utc_datetime(&t).timestamp_millis());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| Utc.from_utc_datetime(&t).timestamp_millis())
}

pub fn format_timestamp(ms: i64) -> String {
    match Utc.timestamp_millis_opt(ms).single() {
        Some(t) => t.format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string(),
        None => ms.to_string(),
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "True" | "TRUE" => Some(true),
        "false" | "False" | "FALSE" => Some(false),
        _ => None,
    }
}

fn parse_float(s: &str) -> Option<f64> {
    // reject inf/nan spellings; they stay strings
    s.parse::<f64>().ok().filter(|x| x.is_finite())
}

fn fits(ty: ColumnType, s: &str) -> bool {
    match ty {
        ColumnType::Bool => parse_bool(s).is_some(),
        ColumnType::Int64 => s.parse::<i64>().is_ok(),
        ColumnType::Float64 => parse_float(s).is_some(),
        ColumnType::TimestampMsUtc => parse_timestamp(s).is_some(),
        ColumnType::String => true,
    }
}

const PRECEDENCE: [ColumnType; 5] = [
    ColumnType::Bool,
    ColumnType::Int64,
    ColumnType::Float64,
    ColumnType::TimestampMsUtc,
    ColumnType::String,
];

/// Narrowest type that accepts every non-null field. Quoted empty strings and all-null
/// columns infer as string.
fn infer(fields: &[&Field]) -> ColumnType {
    let present: Vec<&&Field> = fields.iter().filter(|f| !f.is_null()).collect();
    if present.is_empty() || present.iter().any(|f| f.text.is_empty()) {
        return ColumnType::String;
    }
    PRECEDENCE
        .into_iter()
        .find(|ty| present.iter().all(|f| fits(*ty, &f.text)))
        .unwrap_or(ColumnType::String)
}

fn convert(ty: ColumnType, fields: &[(usize, &Field)], name: &str) -> Result<Column, CsvError> {
    let mut col = Column::with_capacity(ty, fields.len());
    for (line, f) in fields {
        let bad = || err(*line, format!("column {name}: {:?} is not a valid {ty}", f.text));
        if f.is_null() {
            col.push(super::Value::Null).expect("null fits");
            continue;
        }
        let s = f.text.as_str();
        let v = match ty {
            ColumnType::String => super::Value::Str(f.text.clone()),
            ColumnType::Bool => super::Value::Bool(parse_bool(s).ok_or_else(bad)?),
            ColumnType::Int64 => super::Value::Int(s.parse().map_err(|_| bad())?),
            ColumnType::Float64 => super::Value::Float(parse_float(s).ok_or_else(bad)?),
            ColumnType::TimestampMsUtc => super::Value::Timestamp(
                parse_timestamp(s)
                    .or_else(|| s.parse::<i64>().ok())
                    .ok_or_else(bad)?,
            ),
        };
        col.push(v).expect("converted value matches column type");
    }
    Ok(col)
}

/// Reads CSV with a header row. With `schema`, the header must match its names in order
/// and fields are converted to the declared types; otherwise types are inferred.
pub fn read_csv(input: &str, schema: Option<&Schema>) -> Result<Table, CsvError> {
    let input = input.strip_prefix('\u{feff}').unwrap_or(input);
    let recs = records(input)?;
    let Some(((_, header), body)) = recs.split_first() else {
        return Err(err(1, "missing header row"));
    };
    let names: Vec<String> = header.iter().map(|f| f.text.clone()).collect();
    if names.iter().any(|n| n.is_empty()) {
        return Err(err(1, "empty column name"));
    }
    for (line, r) in body {
        if r.len() != names.len() {
            return Err(err(*line, format!("expected {} fields, found {}", names.len(), r.len())));
        }
    }
    let types: Vec<ColumnType> = match schema {
        Some(s) => {
            let declared: Vec<&str> = s.names().collect();
            if declared != names.iter().map(String::as_str).collect::<Vec<_>>() {
                return Err(err(1, "header does not match the declared schema"));
            }
            s.columns().iter().map(|c| c.ty).collect()
        }
        None => (0..names.len())
            .map(|j| infer(&body.iter().map(|(_, r)| &r[j]).collect::<Vec<_>>()))
            .collect(),
    };
    let defs: Vec<ColumnDef> = names.iter().zip(&types).map(|(n, t)| ColumnDef::new(n.clone(), *t)).collect();
    let schema = Schema::new(defs);
    if let Some(d) = schema.duplicate_name() {
        return Err(err(1, format!("duplicate column name {d}")));
    }
    let mut columns = Vec::with_capacity(names.len());
    for (j, ty) in types.iter().enumerate() {
        let fields: Vec<(usize, &Field)> = body.iter().map(|(l, r)| (*l, &r[j])).collect();
        columns.push(convert(*ty, &fields, &names[j])?);
    }
    Table::with_rows(schema, columns, body.len()).map_err(|e| err(1, e.0))
}

fn push_field(out: &mut String, s: &str, force_quote: bool) {
    if force_quote || s.contains([',', '"', '\n', '\r']) || s.starts_with('\u{feff}') {
        out.push('"');
        out.push_str(&s.replace('"', "\"\""));
        out.push('"');
    } else {
        out.push_str(s);
    }
}

/// Canonical CSV: `\n` line endings, nulls as empty fields, floats in shortest round-trip
/// form, timestamps as ISO-8601 UTC with milliseconds.
pub fn write_csv(table: &Table) -> String {
    let mut out = String::new();
    for (j, name) in table.schema().names().enumerate() {
        if j > 0 {
            out.push(',');
        }
        push_field(&mut out, name, false);
    }
    out.push('\n');
    for i in 0..table.row_count() {
        for (j, col) in table.columns().iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            match col {
                Column::String(v) => {
                    if let Some(s) = &v[i] {
                        push_field(&mut out, s, s.is_empty());
                    }
                }
                Column::Int64(v) => {
                    if let Some(x) = v[i] {
                        out.push_str(&x.to_string());
                    }
                }
                Column::Float64(v) => {
                    if let Some(x) = v[i] {
                        out.push_str(&format!("{x:?}"));
                    }
                }
                Column::Bool(v) => {
                    if let Some(x) = v[i] {
                        out.push_str(if x { "true" } else { "false" });
                    }
                }
                Column::TimestampMsUtc(v) => {
                    if let Some(x) = v[i] {
                        out.push_str(&format_timestamp(x));
                    }
                }
            }
        }
        out.push('\n');
    }
    out
}
