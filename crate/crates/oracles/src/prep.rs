//! Row-at-a-time interpreter for preparation pipelines.

use std::cmp::Ordering;
use std::collections::HashMap;

use chrono::{DateTime, Datelike, Timelike};
use seclab_core::dataprep::{
    AggFunc, BinaryOp, CmpOp, ColumnType, Expression, FillStrategy, JoinType, Predicate, PrepPipeline, PrepStep,
    ShiftDirection, Table, TimePart, Value,
};
use seclab_core::ids::DatasetId;

#[derive(Debug, Clone, PartialEq)]
pub struct RowTable {
    pub columns: Vec<(String, ColumnType)>,
    pub rows: Vec<Vec<Value>>,
}

impl RowTable {
    pub fn from_table(t: &Table) -> Self {
        Self {
            columns: t.schema().columns().iter().map(|c| (c.name.clone(), c.ty)).collect(),
            rows: t.rows(),
        }
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|(n, _)| n == name)
    }

    fn ty(&self, name: &str) -> Option<ColumnType> {
        self.index(name).map(|i| self.columns[i].1)
    }

    fn column(&self, name: &str) -> Vec<Value> {
        let i = self.index(name).expect("column exists");
        self.rows.iter().map(|r| r[i].clone()).collect()
    }
}

fn numeric(t: ColumnType) -> bool {
    matches!(t, ColumnType::Int64 | ColumnType::Float64)
}

fn lit_type(v: &Value) -> Option<ColumnType> {
    match v {
        Value::Null => None,
        Value::Bool(_) => Some(ColumnType::Bool),
        Value::Int(_) => Some(ColumnType::Int64),
        Value::Float(_) => Some(ColumnType::Float64),
        Value::Str(_) => Some(ColumnType::String),
        Value::Timestamp(_) => Some(ColumnType::TimestampMsUtc),
    }
}

fn agg_type(f: AggFunc, t: ColumnType) -> Result<ColumnType, String> {
    match (f, t) {
        (AggFunc::Count, _) => Ok(ColumnType::Int64),
        (AggFunc::Mean, t) if numeric(t) => Ok(ColumnType::Float64),
        (AggFunc::Sum, t) if numeric(t) => Ok(t),
        (AggFunc::Min | AggFunc::Max, t) if numeric(t) || t == ColumnType::TimestampMsUtc => Ok(t),
        _ => Err("aggregate type".into()),
    }
}

/// Type of an expression, `Ok(None)` for a bare null literal.
pub fn expr_type(e: &Expression, t: &RowTable) -> Result<Option<ColumnType>, String> {
    let num = |x: Option<ColumnType>| match x {
        Some(x) if numeric(x) => Ok(x),
        _ => Err("numeric operand expected".to_string()),
    };
    Ok(Some(match e {
        Expression::Literal { value } => {
            if matches!(value, Value::Float(x) if !x.is_finite()) {
                return Err("non-finite literal".into());
            }
            return Ok(lit_type(value));
        }
        Expression::Column { name } => t.ty(name).ok_or("unknown column")?,
        Expression::Binary { op, left, right } => {
            let a = num(expr_type(left, t)?)?;
            let b = num(expr_type(right, t)?)?;
            if *op != BinaryOp::Div && a == ColumnType::Int64 && b == ColumnType::Int64 {
                ColumnType::Int64
            } else {
                ColumnType::Float64
            }
        }
        Expression::Abs { arg } => num(expr_type(arg, t)?)?,
        Expression::Log { arg } => {
            num(expr_type(arg, t)?)?;
            ColumnType::Float64
        }
        Expression::Pow { base, exponent } => {
            num(expr_type(base, t)?)?;
            num(expr_type(exponent, t)?)?;
            ColumnType::Float64
        }
        Expression::Extract { arg, .. } => {
            if expr_type(arg, t)? != Some(ColumnType::TimestampMsUtc) {
                return Err("timestamp expected".into());
            }
            ColumnType::Int64
        }
        Expression::TimestampDiff { left, right } => {
            if expr_type(left, t)? != Some(ColumnType::TimestampMsUtc)
                || expr_type(right, t)? != Some(ColumnType::TimestampMsUtc)
            {
                return Err("timestamps expected".into());
            }
            ColumnType::Float64
        }
        Expression::Shift { column, .. } => t.ty(column).ok_or("unknown column")?,
        Expression::If { condition, then, otherwise } => {
            pred_check(condition, t)?;
            match (expr_type(then, t)?, expr_type(otherwise, t)?) {
                (None, None) => return Err("both branches null".into()),
                (Some(a), None) | (None, Some(a)) => a,
                (Some(a), Some(b)) if a == b => a,
                (Some(a), Some(b)) if numeric(a) && numeric(b) => ColumnType::Float64,
                _ => return Err("branch types differ".into()),
            }
        }
        Expression::Aggregate { func, column } => agg_type(*func, t.ty(column).ok_or("unknown column")?)?,
    }))
}

pub fn pred_check(p: &Predicate, t: &RowTable) -> Result<(), String> {
    match p {
        Predicate::Compare { left, right, .. } => {
            let a = expr_type(left, t)?.ok_or("null operand")?;
            let b = expr_type(right, t)?.ok_or("null operand")?;
            if a == b || (numeric(a) && numeric(b)) {
                Ok(())
            } else {
                Err("incomparable".into())
            }
        }
        Predicate::IsNull { arg } | Predicate::NotNull { arg } => {
            expr_type(arg, t)?.ok_or("null operand")?;
            Ok(())
        }
        Predicate::And { left, right } | Predicate::Or { left, right } => {
            pred_check(left, t)?;
            pred_check(right, t)
        }
        Predicate::Not { arg } => pred_check(arg, t),
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Int(x) => Some(*x as f64),
        Value::Float(x) => Some(*x),
        _ => None,
    }
}

fn float(x: f64) -> Value {
    if x.is_finite() {
        Value::Float(x)
    } else {
        Value::Null
    }
}

/// Converts a value to the declared type of its column (int into float).
fn conform(v: Value, ty: ColumnType) -> Value {
    match (v, ty) {
        (Value::Int(x), ColumnType::Float64) => Value::Float(x as f64),
        (v, _) => v,
    }
}

/// Aggregate of the non-null values, folding left to right.
pub fn aggregate(values: &[Value], f: AggFunc) -> Value {
    let present: Vec<&Value> = values.iter().filter(|v| !v.is_null()).collect();
    match f {
        AggFunc::Count => Value::Int(present.len() as i64),
        _ if present.is_empty() => Value::Null,
        AggFunc::Mean => {
            let mut s = 0.0;
            for v in &present {
                s += as_f64(v).unwrap();
            }
            float(s / present.len() as f64)
        }
        AggFunc::Sum => match present[0] {
            Value::Int(_) => {
                let mut s: i64 = 0;
                for v in &present {
                    let Value::Int(x) = v else { unreachable!() };
                    match s.checked_add(*x) {
                        Some(n) => s = n,
                        None => return Value::Null,
                    }
                }
                Value::Int(s)
            }
            _ => {
                let mut s = 0.0;
                for v in &present {
                    s += as_f64(v).unwrap();
                }
                float(s)
            }
        },
        AggFunc::Min | AggFunc::Max => {
            let mut best = present[0].clone();
            for v in &present[1..] {
                let better = match (v, &best) {
                    (Value::Int(a), Value::Int(b)) | (Value::Timestamp(a), Value::Timestamp(b)) => {
                        if f == AggFunc::Min { a < b } else { a > b }
                    }
                    (Value::Float(a), Value::Float(b)) => {
                        if f == AggFunc::Min { a < b } else { a > b }
                    }
                    _ => false,
                };
                if better {
                    best = (*v).clone();
                }
            }
            best
        }
    }
}

pub fn eval(e: &Expression, t: &RowTable, i: usize) -> Value {
    let ty = expr_type(e, t).expect("checked expression");
    match e {
        Expression::Literal { value } => value.clone(),
        Expression::Column { name } => t.rows[i][t.index(name).unwrap()].clone(),
        Expression::Binary { op, left, right } => {
            let (a, b) = (eval(left, t, i), eval(right, t, i));
            if a.is_null() || b.is_null() {
                return Value::Null;
            }
            if let (Value::Int(x), Value::Int(y), false) = (&a, &b, *op == BinaryOp::Div) {
                let r = match op {
                    BinaryOp::Add => x.checked_add(*y),
                    BinaryOp::Sub => x.checked_sub(*y),
                    BinaryOp::Mul => x.checked_mul(*y),
                    BinaryOp::Div => unreachable!(),
                };
                return r.map_or(Value::Null, Value::Int);
            }
            let (x, y) = (as_f64(&a).unwrap(), as_f64(&b).unwrap());
            match op {
                BinaryOp::Add => float(x + y),
                BinaryOp::Sub => float(x - y),
                BinaryOp::Mul => float(x * y),
                BinaryOp::Div if y == 0.0 => Value::Null,
                BinaryOp::Div => float(x / y),
            }
        }
        Expression::Abs { arg } => match eval(arg, t, i) {
            Value::Int(x) => x.checked_abs().map_or(Value::Null, Value::Int),
            Value::Float(x) => Value::Float(x.abs()),
            _ => Value::Null,
        },
        Expression::Log { arg } => match as_f64(&eval(arg, t, i)) {
            Some(x) if x > 0.0 => float(x.ln()),
            _ => Value::Null,
        },
        Expression::Pow { base, exponent } => {
            match (as_f64(&eval(base, t, i)), as_f64(&eval(exponent, t, i))) {
                (Some(x), Some(y)) => float(x.powf(y)),
                _ => Value::Null,
            }
        }
        Expression::Extract { part, arg } => match eval(arg, t, i) {
            Value::Timestamp(ms) => match DateTime::from_timestamp_millis(ms) {
                Some(d) => Value::Int(match part {
                    TimePart::Year => d.year() as i64,
                    TimePart::Month => d.month() as i64,
                    TimePart::Day => d.day() as i64,
                    TimePart::Hour => d.hour() as i64,
                    TimePart::Weekday => d.weekday().num_days_from_monday() as i64,
                }),
                None => Value::Null,
            },
            _ => Value::Null,
        },
        Expression::TimestampDiff { left, right } => match (eval(left, t, i), eval(right, t, i)) {
            (Value::Timestamp(a), Value::Timestamp(b)) => {
                a.checked_sub(b).map_or(Value::Null, |d| Value::Float(d as f64 / 1000.0))
            }
            _ => Value::Null,
        },
        Expression::Shift { column, offset, direction } => {
            let j = match direction {
                ShiftDirection::Lag => i.checked_sub(*offset),
                ShiftDirection::Lead => Some(i + offset).filter(|j| *j < t.rows.len()),
            };
            j.map_or(Value::Null, |j| t.rows[j][t.index(column).unwrap()].clone())
        }
        Expression::If { condition, then, otherwise } => {
            let v = if pred(condition, t, i) == Some(true) { eval(then, t, i) } else { eval(otherwise, t, i) };
            conform(v, ty.unwrap())
        }
        Expression::Aggregate { func, column } => aggregate(&t.column(column), *func),
    }
}

fn ordering(a: &Value, b: &Value) -> Option<Ordering> {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) | (Value::Timestamp(x), Value::Timestamp(y)) => Some(x.cmp(y)),
        (Value::Str(x), Value::Str(y)) => Some(x.cmp(y)),
        (Value::Bool(x), Value::Bool(y)) => Some(x.cmp(y)),
        _ => as_f64(a)?.partial_cmp(&as_f64(b)?),
    }
}

pub fn pred(p: &Predicate, t: &RowTable, i: usize) -> Option<bool> {
    match p {
        Predicate::Compare { op, left, right } => {
            let (a, b) = (eval(left, t, i), eval(right, t, i));
            if a.is_null() || b.is_null() {
                return None;
            }
            let o = ordering(&a, &b)?;
            Some(match op {
                CmpOp::Eq => o == Ordering::Equal,
                CmpOp::Ne => o != Ordering::Equal,
                CmpOp::Lt => o == Ordering::Less,
                CmpOp::Le => o != Ordering::Greater,
                CmpOp::Gt => o == Ordering::Greater,
                CmpOp::Ge => o != Ordering::Less,
            })
        }
        Predicate::IsNull { arg } => Some(eval(arg, t, i).is_null()),
        Predicate::NotNull { arg } => Some(!eval(arg, t, i).is_null()),
        Predicate::And { left, right } => match (pred(left, t, i), pred(right, t, i)) {
            (Some(false), _) | (_, Some(false)) => Some(false),
            (Some(true), Some(true)) => Some(true),
            _ => None,
        },
        Predicate::Or { left, right } => match (pred(left, t, i), pred(right, t, i)) {
            (Some(true), _) | (_, Some(true)) => Some(true),
            (Some(false), Some(false)) => Some(false),
            _ => None,
        },
        Predicate::Not { arg } => pred(arg, t, i).map(|b| !b),
    }
}

fn fresh(t: &RowTable, name: &str) -> Result<(), String> {
    if name.is_empty() || t.index(name).is_some() {
        Err(format!("name-collision {name}"))
    } else {
        Ok(())
    }
}

/// Output of one step, or an error when the step is invalid for this input.
pub fn step(t: &RowTable, s: &PrepStep, others: &HashMap<DatasetId, RowTable>) -> Result<RowTable, String> {
    let mut out = t.clone();
    match s {
        PrepStep::CreateColumn { name, expr } => {
            fresh(t, name)?;
            let ty = expr_type(expr, t)?.ok_or("bare null")?;
            for i in 0..t.rows.len() {
                out.rows[i].push(conform(eval(expr, t, i), ty));
            }
            out.columns.push((name.clone(), ty));
        }
        PrepStep::DropColumns { names } => {
            for n in names {
                let i = out.index(n).ok_or("unknown-column")?;
                out.columns.remove(i);
                for r in &mut out.rows {
                    r.remove(i);
                }
            }
        }
        PrepStep::FilterRows { predicate } => {
            pred_check(predicate, t)?;
            out.rows = (0..t.rows.len())
                .filter(|i| pred(predicate, t, *i) == Some(true))
                .map(|i| t.rows[i].clone())
                .collect();
        }
        PrepStep::RenameColumn { from, to } => {
            let i = t.index(from).ok_or("unknown-column")?;
            fresh(t, to)?;
            out.columns[i].0 = to.clone();
        }
        PrepStep::Merge { right_dataset_id, keys, join_type } => {
            let r = others.get(right_dataset_id).ok_or("unknown-dataset")?;
            if keys.is_empty() {
                return Err("no keys".into());
            }
            let mut lk = Vec::new();
            let mut rk = Vec::new();
            for k in keys {
                let (a, b) = (t.index(k).ok_or("unknown-column")?, r.index(k).ok_or("unknown-column")?);
                if t.columns[a].1 != r.columns[b].1 {
                    return Err("key type mismatch".into());
                }
                lk.push(a);
                rk.push(b);
            }
            let extra: Vec<usize> = (0..r.columns.len()).filter(|j| !rk.contains(j)).collect();
            for j in &extra {
                fresh(&out, &r.columns[*j].0)?;
                out.columns.push(r.columns[*j].clone());
            }
            out.rows.clear();
            for lrow in &t.rows {
                let mut matched = false;
                for rrow in &r.rows {
                    let eq = lk.iter().zip(&rk).all(|(a, b)| !lrow[*a].is_null() && lrow[*a] == rrow[*b]);
                    if eq {
                        matched = true;
                        let mut row = lrow.clone();
                        row.extend(extra.iter().map(|j| rrow[*j].clone()));
                        out.rows.push(row);
                    }
                }
                if !matched && *join_type == JoinType::Left {
                    let mut row = lrow.clone();
                    row.extend(extra.iter().map(|_| Value::Null));
                    out.rows.push(row);
                }
            }
        }
        PrepStep::FillNull { column, strategy } => {
            let c = t.index(column).ok_or("unknown-column")?;
            let ty = t.columns[c].1;
            let values = t.column(column);
            let filled: Vec<Value> = match strategy {
                FillStrategy::Constant { value } => {
                    let ok = match value {
                        Value::Null => false,
                        Value::Int(_) if ty == ColumnType::Float64 => true,
                        v => lit_type(v) == Some(ty),
                    };
                    if !ok {
                        return Err("type-mismatch".into());
                    }
                    values.iter().map(|v| if v.is_null() { conform(value.clone(), ty) } else { v.clone() }).collect()
                }
                FillStrategy::Mean | FillStrategy::Median => {
                    if !numeric(ty) {
                        return Err("type-mismatch".into());
                    }
                    let fill = if *strategy == FillStrategy::Mean {
                        aggregate(&values, AggFunc::Mean)
                    } else {
                        let mut xs: Vec<f64> = values.iter().filter_map(as_f64).collect();
                        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                        match xs.len() {
                            0 => Value::Null,
                            n if n % 2 == 1 => Value::Float(xs[n / 2]),
                            n => Value::Float((xs[n / 2 - 1] + xs[n / 2]) / 2.0),
                        }
                    };
                    out.columns[c].1 = ColumnType::Float64;
                    values
                        .iter()
                        .map(|v| if v.is_null() { fill.clone() } else { conform(v.clone(), ColumnType::Float64) })
                        .collect()
                }
                FillStrategy::Forward => {
                    let mut last = Value::Null;
                    values
                        .iter()
                        .map(|v| {
                            if !v.is_null() {
                                last = v.clone();
                            }
                            last.clone()
                        })
                        .collect()
                }
            };
            for (r, v) in out.rows.iter_mut().zip(filled) {
                r[c] = v;
            }
        }
        PrepStep::Aggregate { group_by, aggs } => {
            let mut columns: Vec<(String, ColumnType)> = Vec::new();
            let mut gidx = Vec::new();
            for g in group_by {
                let i = t.index(g).ok_or("unknown-column")?;
                if columns.iter().any(|(n, _)| n == g) {
                    return Err("name-collision".into());
                }
                columns.push(t.columns[i].clone());
                gidx.push(i);
            }
            let mut aidx = Vec::new();
            for a in aggs {
                let i = t.index(&a.column).ok_or("unknown-column")?;
                let ty = agg_type(a.func, t.columns[i].1)?;
                if columns.iter().any(|(n, _)| n == &a.out_name) || a.out_name.is_empty() {
                    return Err("name-collision".into());
                }
                columns.push((a.out_name.clone(), ty));
                aidx.push(i);
            }
            let mut keys: Vec<Vec<Value>> = Vec::new();
            let mut members: Vec<Vec<usize>> = Vec::new();
            for (i, row) in t.rows.iter().enumerate() {
                let key: Vec<Value> = gidx.iter().map(|g| row[*g].clone()).collect();
                match keys.iter().position(|k| *k == key) {
                    Some(p) => members[p].push(i),
                    None => {
                        keys.push(key);
                        members.push(vec![i]);
                    }
                }
            }
            if group_by.is_empty() && keys.is_empty() {
                keys.push(Vec::new());
                members.push(Vec::new());
            }
            let rows = keys
                .into_iter()
                .zip(&members)
                .map(|(mut key, m)| {
                    for (a, col) in aggs.iter().zip(&aidx) {
                        let vals: Vec<Value> = m.iter().map(|i| t.rows[*i][*col].clone()).collect();
                        key.push(aggregate(&vals, a.func));
                    }
                    key
                })
                .collect();
            out = RowTable { columns, rows };
        }
    }
    Ok(out)
}

pub fn run(tables: &HashMap<DatasetId, RowTable>, p: &PrepPipeline) -> Result<RowTable, (usize, String)> {
    let first = p.inputs.first().ok_or((0, "no inputs".to_string()))?;
    let mut t = tables.get(first).cloned().ok_or((0, "unknown-dataset".to_string()))?;
    for (i, s) in p.steps.iter().enumerate() {
        if let PrepStep::Merge { right_dataset_id, .. } = s {
            if !p.inputs.contains(right_dataset_id) {
                return Err((i, "unknown-dataset".into()));
            }
        }
        t = step(&t, s, tables).map_err(|e| (i, e))?;
    }
    Ok(t)
}
