//! Column expressions and row predicates, type-checked against a schema and
//! evaluated a whole column at a time.

use chrono::{DateTime, Datelike, Timelike};
use serde::{Deserialize, Serialize};

use super::{Column, ColumnType, Schema, Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimePart {
    Year,
    Month,
    Day,
    Hour,
    /// Monday = 0 … Sunday = 6.
    Weekday,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftDirection {
    Lag,
    Lead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggFunc {
    Mean,
    Sum,
    Min,
    Max,
    Count,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expression {
    Literal { value: Value },
    Column { name: String },
    Binary { op: BinaryOp, left: Box<Expression>, right: Box<Expression> },
    Abs { arg: Box<Expression> },
    /// Natural logarithm; non-positive input yields null.
    Log { arg: Box<Expression> },
    Pow { base: Box<Expression>, exponent: Box<Expression> },
    Extract { part: TimePart, arg: Box<Expression> },
    /// `left - right` in seconds.
    TimestampDiff { left: Box<Expression>, right: Box<Expression> },
    Shift { column: String, offset: usize, direction: ShiftDirection },
    If { condition: Box<Predicate>, then: Box<Expression>, otherwise: Box<Expression> },
    /// Whole-column aggregate broadcast to every row.
    Aggregate { func: AggFunc, column: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    Compare { op: CmpOp, left: Expression, right: Expression },
    IsNull { arg: Expression },
    NotNull { arg: Expression },
    And { left: Box<Predicate>, right: Box<Predicate> },
    Or { left: Box<Predicate>, right: Box<Predicate> },
    Not { arg: Box<Predicate> },
}

impl Expression {
    pub fn col(name: &str) -> Self {
        Expression::Column { name: name.into() }
    }

    pub fn lit(value: Value) -> Self {
        Expression::Literal { value }
    }

    pub fn binary(op: BinaryOp, left: Expression, right: Expression) -> Self {
        Expression::Binary { op, left: Box::new(left), right: Box::new(right) }
    }
}

impl Predicate {
    pub fn cmp(op: CmpOp, left: Expression, right: Expression) -> Self {
        Predicate::Compare { op, left, right }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TypeError {
    UnknownColumn(String),
    Mismatch(String),
}

fn mismatch(msg: impl Into<String>) -> TypeError {
    TypeError::Mismatch(msg.into())
}

fn column_type(schema: &Schema, name: &str) -> Result<ColumnType, TypeError> {
    schema
        .type_of(name)
        .ok_or_else(|| TypeError::UnknownColumn(name.to_owned()))
}

/// Static type of an expression; `None` only for a bare null literal.
fn infer(expr: &Expression, schema: &Schema) -> Result<Option<ColumnType>, TypeError> {
    use ColumnType::*;
    let numeric = |t: Option<ColumnType>, what: &str| -> Result<ColumnType, TypeError> {
        match t {
            Some(t) if t.is_numeric() => Ok(t),
            Some(t) => Err(mismatch(format!("{what} needs a numeric operand, got {t}"))),
            None => Err(mismatch(format!("{what} cannot take a null literal"))),
        }
    };
    Ok(Some(match expr {
        Expression::Literal { value } => {
            if let Value::Float(x) = value {
                if !x.is_finite() {
                    return Err(mismatch("float literals must be finite"));
                }
            }
            return Ok(value.column_type());
        }
        Expression::Column { name } => column_type(schema, name)?,
        Expression::Binary { op, left, right } => {
            let l = numeric(infer(left, schema)?, "arithmetic")?;
            let r = numeric(infer(right, schema)?, "arithmetic")?;
            match op {
                BinaryOp::Div => Float64,
                _ if l == Int64 && r == Int64 => Int64,
                _ => Float64,
            }
        }
        Expression::Abs { arg } => numeric(infer(arg, schema)?, "abs")?,
        Expression::Log { arg } => {
            numeric(infer(arg, schema)?, "log")?;
            Float64
        }
        Expression::Pow { base, exponent } => {
            numeric(infer(base, schema)?, "pow")?;
            numeric(infer(exponent, schema)?, "pow")?;
            Float64
        }
        Expression::Extract { arg, .. } => {
            match infer(arg, schema)? {
                Some(TimestampMsUtc) => {}
                other => return Err(mismatch(format!("extract needs a timestamp, got {other:?}"))),
            }
            Int64
        }
        Expression::TimestampDiff { left, right } => {
            for side in [left, right] {
                if infer(side, schema)? != Some(TimestampMsUtc) {
                    return Err(mismatch("timestamp difference needs two timestamps"));
                }
            }
            Float64
        }
        Expression::Shift { column, .. } => column_type(schema, column)?,
        Expression::If { condition, then, otherwise } => {
            check_predicate(condition, schema)?;
            let t = infer(then, schema)?;
            let e = infer(otherwise, schema)?;
            match (t, e) {
                (Some(a), Some(b)) if a == b => a,
                (Some(a), Some(b)) if a.is_numeric() && b.is_numeric() => Float64,
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => return Err(mismatch("conditional branches are both null")),
                (Some(a), Some(b)) => return Err(mismatch(format!("conditional branches differ: {a} vs {b}"))),
            }
        }
        Expression::Aggregate { func, column } => {
            let t = column_type(schema, column)?;
            aggregate_type(*func, t).map_err(mismatch)?
        }
    }))
}

pub(crate) fn aggregate_type(func: AggFunc, input: ColumnType) -> Result<ColumnType, String> {
    use ColumnType::*;
    match func {
        AggFunc::Count => Ok(Int64),
        AggFunc::Mean if input.is_numeric() => Ok(Float64),
        AggFunc::Sum if input.is_numeric() => Ok(input),
        AggFunc::Min | AggFunc::Max if input.is_numeric() || input == TimestampMsUtc => Ok(input),
        _ => Err(format!("{func:?} is not defined for {input}")),
    }
}

/// Type-checks `expr` and returns its column type.
pub fn check_expression(expr: &Expression, schema: &Schema) -> Result<ColumnType, TypeError> {
    infer(expr, schema)?.ok_or_else(|| mismatch("expression is a bare null literal"))
}

pub fn check_predicate(pred: &Predicate, schema: &Schema) -> Result<(), TypeError> {
    match pred {
        Predicate::Compare { left, right, .. } => {
            let l = check_expression(left, schema)?;
            let r = check_expression(right, schema)?;
            if l == r || (l.is_numeric() && r.is_numeric()) {
                Ok(())
            } else {
                Err(mismatch(format!("cannot compare {l} with {r}")))
            }
        }
        Predicate::IsNull { arg } | Predicate::NotNull { arg } => check_expression(arg, schema).map(|_| ()),
        Predicate::And { left, right } | Predicate::Or { left, right } => {
            check_predicate(left, schema)?;
            check_predicate(right, schema)
        }
        Predicate::Not { arg } => check_predicate(arg, schema),
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn broadcast_literal(value: &Value, n: usize) -> Column {
    match value {
        Value::Null => Column::Int64(vec![None; n]),
        Value::Bool(b) => Column::Bool(vec![Some(*b); n]),
        Value::Int(x) => Column::Int64(vec![Some(*x); n]),
        Value::Float(x) => Column::Float64(vec![finite(*x); n]),
        Value::Str(s) => Column::String(vec![Some(s.clone()); n]),
        Value::Timestamp(t) => Column::TimestampMsUtc(vec![Some(*t); n]),
    }
}

fn timestamp_part(ms: i64, part: TimePart) -> Option<i64> {
    let dt = DateTime::from_timestamp_millis(ms)?;
    Some(match part {
        TimePart::Year => dt.year() as i64,
        TimePart::Month => dt.month() as i64,
        TimePart::Day => dt.day() as i64,
        TimePart::Hour => dt.hour() as i64,
        TimePart::Weekday => dt.weekday().num_days_from_monday() as i64,
    })
}

fn zip_f64(a: &Column, b: &Column, f: impl Fn(f64, f64) -> Option<f64>) -> Column {
    let (a, b) = (a.as_f64(), b.as_f64());
    Column::Float64(
        a.iter()
            .zip(&b)
            .map(|(x, y)| match (x, y) {
                (Some(x), Some(y)) => f(*x, *y).and_then(finite),
                _ => None,
            })
            .collect(),
    )
}

/// Converts an Int64 column to Float64 when the target type demands it.
fn coerce(col: Column, target: ColumnType) -> Column {
    match (col, target) {
        (Column::Int64(v), ColumnType::Float64) => Column::Float64(v.into_iter().map(|x| x.map(|x| x as f64)).collect()),
        (c, t) if c.column_type() == t => c,
        (c, t) => {
            // only reachable for null literals, which evaluate as an all-null Int64 column
            Column::nulls(t, c.len())
        }
    }
}

/// Aggregate over the non-null values of a column, accumulated left to right.
pub(crate) fn aggregate_column(col: &Column, func: AggFunc, rows: impl Iterator<Item = usize> + Clone) -> Value {
    match func {
        AggFunc::Count => Value::Int(rows.filter(|&i| !col.is_null(i)).count() as i64),
        AggFunc::Mean => {
            let vals = col.as_f64();
            let mut sum = 0.0;
            let mut n = 0usize;
            for i in rows {
                if let Some(x) = vals[i] {
                    sum += x;
                    n += 1;
                }
            }
            if n == 0 {
                Value::Null
            } else {
                finite(sum / n as f64).map_or(Value::Null, Value::Float)
            }
        }
        AggFunc::Sum => match col {
            Column::Int64(v) => {
                let mut acc: Option<i64> = None;
                for i in rows {
                    if let Some(x) = v[i] {
                        match acc.unwrap_or(0).checked_add(x) {
                            Some(s) => acc = Some(s),
                            None => return Value::Null,
                        }
                    }
                }
                acc.map_or(Value::Null, Value::Int)
            }
            Column::Float64(v) => {
                let mut acc: Option<f64> = None;
                for i in rows {
                    if let Some(x) = v[i] {
                        acc = Some(acc.unwrap_or(0.0) + x);
                    }
                }
                acc.and_then(finite).map_or(Value::Null, Value::Float)
            }
            _ => Value::Null,
        },
        AggFunc::Min | AggFunc::Max => {
            let want_min = func == AggFunc::Min;
            match col {
                Column::Int64(v) | Column::TimestampMsUtc(v) => {
                    let it = rows.filter_map(|i| v[i]);
                    let r = if want_min { it.min() } else { it.max() };
                    match (r, col) {
                        (None, _) => Value::Null,
                        (Some(x), Column::Int64(_)) => Value::Int(x),
                        (Some(x), _) => Value::Timestamp(x),
                    }
                }
                Column::Float64(v) => {
                    let mut acc: Option<f64> = None;
                    for x in rows.filter_map(|i| v[i]) {
                        acc = Some(match acc {
                            None => x,
                            Some(a) if want_min => if x < a { x } else { a },
                            Some(a) => if x > a { x } else { a },
                        });
                    }
                    acc.map_or(Value::Null, Value::Float)
                }
                _ => Value::Null,
            }
        }
    }
}

/// Evaluates a type-checked expression over every row of `table`.
pub fn eval_expression(expr: &Expression, table: &Table) -> Column {
    let n = table.row_count();
    match expr {
        Expression::Literal { value } => broadcast_literal(value, n),
        Expression::Column { name } => table.column(name).expect("type-checked column").clone(),
        Expression::Binary { op, left, right } => {
            let l = eval_expression(left, table);
            let r = eval_expression(right, table);
            match (op, &l, &r) {
                (BinaryOp::Div, _, _) => zip_f64(&l, &r, |x, y| if y == 0.0 { None } else { Some(x / y) }),
                (_, Column::Int64(a), Column::Int64(b)) => Column::Int64(
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| match (x, y) {
                            (Some(x), Some(y)) => match op {
                                BinaryOp::Add => x.checked_add(*y),
                                BinaryOp::Sub => x.checked_sub(*y),
                                BinaryOp::Mul => x.checked_mul(*y),
                                BinaryOp::Div => unreachable!(),
                            },
                            _ => None,
                        })
                        .collect(),
                ),
                _ => zip_f64(&l, &r, |x, y| {
                    Some(match op {
                        BinaryOp::Add => x + y,
                        BinaryOp::Sub => x - y,
                        BinaryOp::Mul => x * y,
                        BinaryOp::Div => unreachable!(),
                    })
                }),
            }
        }
        Expression::Abs { arg } => match eval_expression(arg, table) {
            Column::Int64(v) => Column::Int64(v.into_iter().map(|x| x.and_then(i64::checked_abs)).collect()),
            Column::Float64(v) => Column::Float64(v.into_iter().map(|x| x.map(f64::abs)).collect()),
            other => other,
        },
        Expression::Log { arg } => Column::Float64(
            eval_expression(arg, table)
                .as_f64()
                .into_iter()
                .map(|x| x.filter(|x| *x > 0.0).map(f64::ln).and_then(finite))
                .collect(),
        ),
        Expression::Pow { base, exponent } => {
            zip_f64(&eval_expression(base, table), &eval_expression(exponent, table), |x, y| Some(x.powf(y)))
        }
        Expression::Extract { part, arg } => match eval_expression(arg, table) {
            Column::TimestampMsUtc(v) => {
                Column::Int64(v.into_iter().map(|t| t.and_then(|t| timestamp_part(t, *part))).collect())
            }
            other => Column::nulls(ColumnType::Int64, other.len()),
        },
        Expression::TimestampDiff { left, right } => {
            match (eval_expression(left, table), eval_expression(right, table)) {
                (Column::TimestampMsUtc(a), Column::TimestampMsUtc(b)) => Column::Float64(
                    a.iter()
                        .zip(&b)
                        .map(|(x, y)| match (x, y) {
                            (Some(x), Some(y)) => x.checked_sub(*y).map(|d| d as f64 / 1000.0),
                            _ => None,
                        })
                        .collect(),
                ),
                _ => Column::nulls(ColumnType::Float64, n),
            }
        }
        Expression::Shift { column, offset, direction } => {
            let col = table.column(column).expect("type-checked column");
            let idx: Vec<Option<usize>> = (0..n)
                .map(|i| match direction {
                    ShiftDirection::Lag => i.checked_sub(*offset),
                    ShiftDirection::Lead => i.checked_add(*offset).filter(|j| *j < n),
                })
                .collect();
            col.gather(&idx)
        }
        Expression::If { condition, then, otherwise } => {
            let target = check_expression(expr, table.schema()).expect("type-checked conditional");
            let cond = eval_predicate(condition, table);
            let t = coerce(eval_expression(then, table), target);
            let e = coerce(eval_expression(otherwise, table), target);
            let mut out = Column::with_capacity(target, n);
            for (i, c) in cond.iter().enumerate() {
                let src = if *c == Some(true) { &t } else { &e };
                out.push(src.value(i)).expect("branches coerced to one type");
            }
            out
        }
        Expression::Aggregate { func, column } => {
            let col = table.column(column).expect("type-checked column");
            let v = aggregate_column(col, *func, 0..n);
            let ty = aggregate_type(*func, col.column_type()).expect("type-checked aggregate");
            let mut out = Column::with_capacity(ty, n);
            for _ in 0..n {
                out.push(v.clone()).expect("aggregate type");
            }
            out
        }
    }
}

fn compare(op: CmpOp, ord: std::cmp::Ordering) -> bool {
    use std::cmp::Ordering::*;
    match op {
        CmpOp::Eq => ord == Equal,
        CmpOp::Ne => ord != Equal,
        CmpOp::Lt => ord == Less,
        CmpOp::Le => ord != Greater,
        CmpOp::Gt => ord == Greater,
        CmpOp::Ge => ord != Less,
    }
}

fn cmp_columns(op: CmpOp, l: &Column, r: &Column) -> Vec<Option<bool>> {
    fn z<T, U>(a: &[Option<T>], b: &[Option<U>], f: impl Fn(&T, &U) -> Option<std::cmp::Ordering>, op: CmpOp) -> Vec<Option<bool>> {
        a.iter()
            .zip(b)
            .map(|(x, y)| match (x, y) {
                (Some(x), Some(y)) => f(x, y).map(|o| compare(op, o)),
                _ => None,
            })
            .collect()
    }
    match (l, r) {
        (Column::Int64(a), Column::Int64(b)) | (Column::TimestampMsUtc(a), Column::TimestampMsUtc(b)) => {
            z(a, b, |x, y| Some(x.cmp(y)), op)
        }
        (Column::String(a), Column::String(b)) => z(a, b, |x, y| Some(x.cmp(y)), op),
        (Column::Bool(a), Column::Bool(b)) => z(a, b, |x, y| Some(x.cmp(y)), op),
        _ => {
            let (a, b) = (l.as_f64(), r.as_f64());
            z(&a, &b, |x, y| x.partial_cmp(y), op)
        }
    }
}

/// Three-valued evaluation: `None` is unknown.
pub fn eval_predicate(pred: &Predicate, table: &Table) -> Vec<Option<bool>> {
    let n = table.row_count();
    match pred {
        Predicate::Compare { op, left, right } => {
            cmp_columns(*op, &eval_expression(left, table), &eval_expression(right, table))
        }
        Predicate::IsNull { arg } => {
            let c = eval_expression(arg, table);
            (0..n).map(|i| Some(c.is_null(i))).collect()
        }
        Predicate::NotNull { arg } => {
            let c = eval_expression(arg, table);
            (0..n).map(|i| Some(!c.is_null(i))).collect()
        }
        Predicate::And { left, right } => eval_predicate(left, table)
            .into_iter()
            .zip(eval_predicate(right, table))
            .map(|(a, b)| match (a, b) {
                (Some(false), _) | (_, Some(false)) => Some(false),
                (Some(true), Some(true)) => Some(true),
                _ => None,
            })
            .collect(),
        Predicate::Or { left, right } => eval_predicate(left, table)
            .into_iter()
            .zip(eval_predicate(right, table))
            .map(|(a, b)| match (a, b) {
                (Some(true), _) | (_, Some(true)) => Some(true),
                (Some(false), Some(false)) => Some(false),
                _ => None,
            })
            .collect(),
        Predicate::Not { arg } => eval_predicate(arg, table).into_iter().map(|v| v.map(|b| !b)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataprep::ColumnDef;

    fn table() -> Table {
        Table::from_rows(
            Schema::new(vec![
                ColumnDef::new("x", ColumnType::Int64),
                ColumnDef::new("f", ColumnType::Float64),
                ColumnDef::new("s", ColumnType::String),
                ColumnDef::new("t", ColumnType::TimestampMsUtc),
            ]),
            &[
                vec![Value::Int(1), Value::Float(0.0), Value::Str("a".into()), Value::Timestamp(0)],
                vec![Value::Int(2), Value::Float(-1.0), Value::Null, Value::Timestamp(1_700_000_000_000)],
                vec![Value::Null, Value::Float(4.0), Value::Str("b".into()), Value::Null],
            ],
        )
        .unwrap()
    }

    #[test]
    fn string_arithmetic_is_a_type_error() {
        let e = Expression::binary(BinaryOp::Add, Expression::col("x"), Expression::col("s"));
        assert!(matches!(check_expression(&e, table().schema()), Err(TypeError::Mismatch(_))));
        let e = Expression::col("nope");
        assert_eq!(check_expression(&e, table().schema()), Err(TypeError::UnknownColumn("nope".into())));
    }

    #[test]
    fn division_by_zero_and_bad_log_are_null() {
        let t = table();
        let div = Expression::binary(BinaryOp::Div, Expression::col("x"), Expression::col("f"));
        assert_eq!(eval_expression(&div, &t), Column::Float64(vec![None, Some(-2.0), None]));
        let log = Expression::Log { arg: Box::new(Expression::col("f")) };
        assert_eq!(eval_expression(&log, &t), Column::Float64(vec![None, None, Some(4f64.ln())]));
    }

    #[test]
    fn timestamp_parts() {
        let t = table();
        let hour = Expression::Extract { part: TimePart::Hour, arg: Box::new(Expression::col("t")) };
        // 2023-11-14T22:13:20Z, a Tuesday
        assert_eq!(eval_expression(&hour, &t), Column::Int64(vec![Some(0), Some(22), None]));
        let wd = Expression::Extract { part: TimePart::Weekday, arg: Box::new(Expression::col("t")) };
        assert_eq!(eval_expression(&wd, &t), Column::Int64(vec![Some(3), Some(1), None]));
        let year = Expression::Extract { part: TimePart::Year, arg: Box::new(Expression::col("t")) };
        assert_eq!(eval_expression(&year, &t), Column::Int64(vec![Some(1970), Some(2023), None]));
    }

    #[test]
    fn shift_zero_is_identity() {
        let t = table();
        for direction in [ShiftDirection::Lag, ShiftDirection::Lead] {
            let e = Expression::Shift { column: "x".into(), offset: 0, direction };
            assert_eq!(&eval_expression(&e, &t), t.column("x").unwrap());
        }
        let lag = Expression::Shift { column: "x".into(), offset: 1, direction: ShiftDirection::Lag };
        assert_eq!(eval_expression(&lag, &t), Column::Int64(vec![None, Some(1), Some(2)]));
    }

    #[test]
    fn three_valued_logic() {
        let t = table();
        let gt = Predicate::cmp(CmpOp::Gt, Expression::col("x"), Expression::lit(Value::Int(1)));
        assert_eq!(eval_predicate(&gt, &t), vec![Some(false), Some(true), None]);
        let not = Predicate::Not { arg: Box::new(gt.clone()) };
        assert_eq!(eval_predicate(&not, &t), vec![Some(true), Some(false), None]);
        let or = Predicate::Or { left: Box::new(gt), right: Box::new(Predicate::IsNull { arg: Expression::col("x") }) };
        assert_eq!(eval_predicate(&or, &t), vec![Some(false), Some(true), Some(true)]);
    }

    #[test]
    fn conditional_promotes_and_broadcast_aggregates() {
        let t = table();
        let e = Expression::If {
            condition: Box::new(Predicate::NotNull { arg: Expression::col("x") }),
            then: Box::new(Expression::col("x")),
            otherwise: Box::new(Expression::col("f")),
        };
        assert_eq!(check_expression(&e, t.schema()), Ok(ColumnType::Float64));
        assert_eq!(eval_expression(&e, &t), Column::Float64(vec![Some(1.0), Some(2.0), Some(4.0)]));
        let mean = Expression::Aggregate { func: AggFunc::Mean, column: "x".into() };
        assert_eq!(eval_expression(&mean, &t), Column::Float64(vec![Some(1.5); 3]));
        let count = Expression::Aggregate { func: AggFunc::Count, column: "s".into() };
        assert_eq!(eval_expression(&count, &t), Column::Int64(vec![Some(2); 3]));
    }

    #[test]
    fn expression_documents_parse() {
        let doc = r#"{"kind":"binary","op":"add","left":{"kind":"column","name":"x"},"right":{"kind":"literal","value":{"int":3}}}"#;
        let e: Expression = serde_json::from_str(doc).unwrap();
        assert_eq!(e, Expression::binary(BinaryOp::Add, Expression::col("x"), Expression::lit(Value::Int(3))));
    }
}
