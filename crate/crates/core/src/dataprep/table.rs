use serde::{Deserialize, Serialize};

use super::{ColumnDef, ColumnType, Schema, Value};

/// Typed column storage. `None` is null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "values", rename_all = "snake_case")]
pub enum Column {
    String(Vec<Option<String>>),
    Int64(Vec<Option<i64>>),
    Float64(Vec<Option<f64>>),
    Bool(Vec<Option<bool>>),
    TimestampMsUtc(Vec<Option<i64>>),
}

impl Column {
    pub fn empty(ty: ColumnType) -> Self {
        Self::with_capacity(ty, 0)
    }

    pub fn with_capacity(ty: ColumnType, n: usize) -> Self {
        match ty {
            ColumnType::String => Column::String(Vec::with_capacity(n)),
            ColumnType::Int64 => Column::Int64(Vec::with_capacity(n)),
            ColumnType::Float64 => Column::Float64(Vec::with_capacity(n)),
            ColumnType::Bool => Column::Bool(Vec::with_capacity(n)),
            ColumnType::TimestampMsUtc => Column::TimestampMsUtc(Vec::with_capacity(n)),
        }
    }

    pub fn nulls(ty: ColumnType, n: usize) -> Self {
        match ty {
            ColumnType::String => Column::String(vec![None; n]),
            ColumnType::Int64 => Column::Int64(vec![None; n]),
            ColumnType::Float64 => Column::Float64(vec![None; n]),
            ColumnType::Bool => Column::Bool(vec![None; n]),
            ColumnType::TimestampMsUtc => Column::TimestampMsUtc(vec![None; n]),
        }
    }

    pub fn column_type(&self) -> ColumnType {
        match self {
            Column::String(_) => ColumnType::String,
            Column::Int64(_) => ColumnType::Int64,
            Column::Float64(_) => ColumnType::Float64,
            Column::Bool(_) => ColumnType::Bool,
            Column::TimestampMsUtc(_) => ColumnType::TimestampMsUtc,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Column::String(v) => v.len(),
            Column::Int64(v) => v.len(),
            Column::Float64(v) => v.len(),
            Column::Bool(v) => v.len(),
            Column::TimestampMsUtc(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_null(&self, i: usize) -> bool {
        match self {
            Column::String(v) => v[i].is_none(),
            Column::Int64(v) => v[i].is_none(),
            Column::Float64(v) => v[i].is_none(),
            Column::Bool(v) => v[i].is_none(),
            Column::TimestampMsUtc(v) => v[i].is_none(),
        }
    }

    pub fn value(&self, i: usize) -> Value {
        fn lift<T: Clone>(v: &Option<T>, f: impl FnOnce(T) -> Value) -> Value {
            v.clone().map_or(Value::Null, f)
        }
        match self {
            Column::String(v) => lift(&v[i], Value::Str),
            Column::Int64(v) => lift(&v[i], Value::Int),
            Column::Float64(v) => lift(&v[i], Value::Float),
            Column::Bool(v) => lift(&v[i], Value::Bool),
            Column::TimestampMsUtc(v) => lift(&v[i], Value::Timestamp),
        }
    }

    /// Numeric view (int converted to f64). Non-numeric columns yield all nulls.
    pub fn as_f64(&self) -> Vec<Option<f64>> {
        match self {
            Column::Int64(v) => v.iter().map(|x| x.map(|x| x as f64)).collect(),
            Column::Float64(v) => v.clone(),
            other => vec![None; other.len()],
        }
    }

    /// Appends `value`, which must match the column type (or be null).
    pub fn push(&mut self, value: Value) -> Result<(), String> {
        match (self, value) {
            (Column::String(v), Value::Null) => v.push(None),
            (Column::Int64(v), Value::Null) => v.push(None),
            (Column::Float64(v), Value::Null) => v.push(None),
            (Column::Bool(v), Value::Null) => v.push(None),
            (Column::TimestampMsUtc(v), Value::Null) => v.push(None),
            (Column::String(v), Value::Str(s)) => v.push(Some(s)),
            (Column::Int64(v), Value::Int(x)) => v.push(Some(x)),
            (Column::Float64(v), Value::Float(x)) => v.push(Some(x)),
            (Column::Float64(v), Value::Int(x)) => v.push(Some(x as f64)),
            (Column::Bool(v), Value::Bool(x)) => v.push(Some(x)),
            (Column::TimestampMsUtc(v), Value::Timestamp(x)) => v.push(Some(x)),
            (col, value) => {
                return Err(format!("value {value:?} does not fit a {} column", col.column_type()))
            }
        }
        Ok(())
    }

    /// Gathers rows by index; `None` produces a null row.
    pub fn gather(&self, idx: &[Option<usize>]) -> Column {
        fn g<T: Clone>(v: &[Option<T>], idx: &[Option<usize>]) -> Vec<Option<T>> {
            idx.iter().map(|i| i.and_then(|i| v[i].clone())).collect()
        }
        match self {
            Column::String(v) => Column::String(g(v, idx)),
            Column::Int64(v) => Column::Int64(g(v, idx)),
            Column::Float64(v) => Column::Float64(g(v, idx)),
            Column::Bool(v) => Column::Bool(g(v, idx)),
            Column::TimestampMsUtc(v) => Column::TimestampMsUtc(g(v, idx)),
        }
    }

    pub fn filter(&self, keep: &[bool]) -> Column {
        let idx: Vec<Option<usize>> = keep
            .iter()
            .enumerate()
            .filter(|(_, k)| **k)
            .map(|(i, _)| Some(i))
            .collect();
        self.gather(&idx)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("malformed table: {0}")]
pub struct TableError(pub String);

/// Columnar table. Row order is significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    schema: Schema,
    columns: Vec<Column>,
    rows: usize,
}

impl Table {
    pub fn new(schema: Schema, columns: Vec<Column>) -> Result<Self, TableError> {
        if schema.len() != columns.len() {
            return Err(TableError(format!(
                "{} schema columns but {} data columns",
                schema.len(),
                columns.len()
            )));
        }
        if let Some(dup) = schema.duplicate_name() {
            return Err(TableError(format!("duplicate column {dup:?}")));
        }
        let rows = columns.first().map_or(0, Column::len);
        for (def, col) in schema.columns().iter().zip(&columns) {
            if def.ty != col.column_type() {
                return Err(TableError(format!("column {} declared {} but holds {}", def.name, def.ty, col.column_type())));
            }
            if col.len() != rows {
                return Err(TableError(format!("column {} has {} rows, expected {rows}", def.name, col.len())));
            }
            if let Column::Float64(v) = col {
                if v.iter().flatten().any(|x| !x.is_finite()) {
                    return Err(TableError(format!("column {} holds a non-finite float", def.name)));
                }
            }
        }
        Ok(Self { schema, columns, rows })
    }

    /// A table with no columns but `rows` rows (e.g. after dropping every column).
    pub fn with_rows(schema: Schema, columns: Vec<Column>, rows: usize) -> Result<Self, TableError> {
        if columns.is_empty() && schema.is_empty() {
            return Ok(Self { schema, columns, rows });
        }
        let t = Self::new(schema, columns)?;
        if t.rows != rows {
            return Err(TableError(format!("expected {rows} rows, found {}", t.rows)));
        }
        Ok(t)
    }

    pub fn from_rows(schema: Schema, rows: &[Vec<Value>]) -> Result<Self, TableError> {
        let mut cols: Vec<Column> = schema
            .columns()
            .iter()
            .map(|c| Column::with_capacity(c.ty, rows.len()))
            .collect();
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cols.len() {
                return Err(TableError(format!("row {r} has {} values, expected {}", row.len(), cols.len())));
            }
            for (col, v) in cols.iter_mut().zip(row) {
                col.push(v.clone()).map_err(TableError)?;
            }
        }
        Self::with_rows(schema, cols, rows.len())
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn row_count(&self) -> usize {
        self.rows
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.schema.index_of(name).map(|i| &self.columns[i])
    }

    pub fn value(&self, row: usize, col: usize) -> Value {
        self.columns[col].value(row)
    }

    pub fn row(&self, i: usize) -> Vec<Value> {
        self.columns.iter().map(|c| c.value(i)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<Value>> {
        (0..self.rows).map(|i| self.row(i)).collect()
    }

    pub fn into_parts(self) -> (Schema, Vec<Column>, usize) {
        (self.schema, self.columns, self.rows)
    }

    pub(crate) fn push_column(&mut self, def: ColumnDef, col: Column) {
        debug_assert_eq!(col.len(), self.rows);
        self.schema.0.push(def);
        self.columns.push(col);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_and_mistyped() {
        let schema = Schema::new(vec![
            ColumnDef::new("a", ColumnType::Int64),
            ColumnDef::new("b", ColumnType::Int64),
        ]);
        let err = Table::new(
            schema.clone(),
            vec![Column::Int64(vec![Some(1)]), Column::Int64(vec![])],
        );
        assert!(err.is_err());
        assert!(Table::new(schema.clone(), vec![Column::Int64(vec![]), Column::Bool(vec![])]).is_err());
        let nan = Table::new(
            Schema::new(vec![ColumnDef::new("f", ColumnType::Float64)]),
            vec![Column::Float64(vec![Some(f64::NAN)])],
        );
        assert!(nan.is_err());
    }

    #[test]
    fn from_rows_round_trips() {
        let schema = Schema::new(vec![
            ColumnDef::new("s", ColumnType::String),
            ColumnDef::new("t", ColumnType::TimestampMsUtc),
        ]);
        let rows = vec![
            vec![Value::Str("x".into()), Value::Timestamp(5)],
            vec![Value::Null, Value::Null],
        ];
        let t = Table::from_rows(schema, &rows).unwrap();
        assert_eq!(t.row_count(), 2);
        assert_eq!(t.rows(), rows);
    }
}
