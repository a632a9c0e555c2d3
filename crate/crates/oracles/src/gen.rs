//! Random tables and pipelines for differential tests.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use seclab_core::dataprep::{
    AggFunc, AggSpec, BinaryOp, CmpOp, ColumnType, Expression, FillStrategy, JoinType, Predicate, PrepPipeline,
    PrepStep, ShiftDirection, TimePart, Value,
};
use seclab_core::ids::DatasetId;

use crate::prep::{self, RowTable};

const TYPES: [ColumnType; 5] = [
    ColumnType::Int64,
    ColumnType::Float64,
    ColumnType::String,
    ColumnType::Bool,
    ColumnType::TimestampMsUtc,
];

const DAY_MS: i64 = 86_400_000;

pub fn random_value<R: Rng>(rng: &mut R, ty: ColumnType, null_rate: f64) -> Value {
    if rng.gen_bool(null_rate) {
        return Value::Null;
    }
    match ty {
        ColumnType::Int64 => Value::Int(rng.gen_range(-20..=20)),
        ColumnType::Float64 => Value::Float((rng.gen_range(-400..=400) as f64) / 8.0),
        ColumnType::String => Value::Str(["a", "b", "c", "", "d e"][rng.gen_range(0..5)].to_string()),
        ColumnType::Bool => Value::Bool(rng.gen()),
        ColumnType::TimestampMsUtc => {
            Value::Timestamp(1_700_000_000_000 + rng.gen_range(0..400) * (DAY_MS / 7))
        }
    }
}

pub fn random_table<R: Rng>(rng: &mut R, max_rows: usize, max_cols: usize, prefix: &str) -> RowTable {
    let ncols = rng.gen_range(1..=max_cols.max(1));
    let nrows = rng.gen_range(0..=max_rows);
    let null_rate = [0.0, 0.1, 0.4][rng.gen_range(0..3)];
    let columns: Vec<(String, ColumnType)> =
        (0..ncols).map(|i| (format!("{prefix}{i}"), *TYPES.choose(rng).unwrap())).collect();
    let rows = (0..nrows)
        .map(|_| columns.iter().map(|(_, t)| random_value(rng, *t, null_rate)).collect())
        .collect();
    RowTable { columns, rows }
}

/// A table that shares column `key` (same type) with `left`, for merges.
pub fn random_right_table<R: Rng>(rng: &mut R, left: &RowTable, key: usize, max_rows: usize) -> RowTable {
    let mut t = random_table(rng, max_rows, 3, "r");
    let (name, ty) = left.columns[key].clone();
    t.columns.insert(0, (name, ty));
    for row in &mut t.rows {
        row.insert(0, random_value(rng, ty, 0.1));
    }
    t
}

fn columns_of(t: &RowTable, pred: impl Fn(ColumnType) -> bool) -> Vec<String> {
    t.columns.iter().filter(|(_, ty)| pred(*ty)).map(|(n, _)| n.clone()).collect()
}

fn numeric(ty: ColumnType) -> bool {
    matches!(ty, ColumnType::Int64 | ColumnType::Float64)
}

pub fn random_expression<R: Rng>(rng: &mut R, t: &RowTable, depth: u32) -> Expression {
    let nums = columns_of(t, numeric);
    let stamps = columns_of(t, |ty| ty == ColumnType::TimestampMsUtc);
    let any: Vec<String> = t.columns.iter().map(|c| c.0.clone()).collect();
    let leaf = |rng: &mut R| -> Expression {
        if !nums.is_empty() && rng.gen_bool(0.7) {
            Expression::Column { name: nums.choose(rng).unwrap().clone() }
        } else if rng.gen_bool(0.5) {
            Expression::lit(Value::Int(rng.gen_range(-3..=3)))
        } else {
            Expression::lit(Value::Float(rng.gen_range(-6..=6) as f64 * 0.5))
        }
    };
    if depth == 0 {
        return leaf(rng);
    }
    let sub = |rng: &mut R| random_expression(rng, t, depth - 1);
    match rng.gen_range(0..12) {
        0..=2 => {
            let op = *[BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div].choose(rng).unwrap();
            Expression::binary(op, sub(rng), sub(rng))
        }
        3 => Expression::Abs { arg: Box::new(sub(rng)) },
        4 => Expression::Log { arg: Box::new(sub(rng)) },
        5 => Expression::Pow { base: Box::new(sub(rng)), exponent: Box::new(leaf(rng)) },
        6 if !stamps.is_empty() => Expression::Extract {
            part: *[TimePart::Year, TimePart::Month, TimePart::Day, TimePart::Hour, TimePart::Weekday]
                .choose(rng)
                .unwrap(),
            arg: Box::new(Expression::Column { name: stamps.choose(rng).unwrap().clone() }),
        },
        7 if !stamps.is_empty() => Expression::TimestampDiff {
            left: Box::new(Expression::Column { name: stamps.choose(rng).unwrap().clone() }),
            right: Box::new(Expression::Column { name: stamps.choose(rng).unwrap().clone() }),
        },
        8 if !any.is_empty() => Expression::Shift {
            column: any.choose(rng).unwrap().clone(),
            offset: rng.gen_range(0..4),
            direction: if rng.gen() { ShiftDirection::Lag } else { ShiftDirection::Lead },
        },
        9 => {
            let otherwise = if rng.gen_bool(0.2) { Expression::lit(Value::Null) } else { sub(rng) };
            Expression::If {
                condition: Box::new(random_predicate(rng, t, depth - 1)),
                then: Box::new(sub(rng)),
                otherwise: Box::new(otherwise),
            }
        }
        10 if !any.is_empty() => Expression::Aggregate {
            func: *[AggFunc::Mean, AggFunc::Sum, AggFunc::Min, AggFunc::Max, AggFunc::Count].choose(rng).unwrap(),
            column: any.choose(rng).unwrap().clone(),
        },
        _ => leaf(rng),
    }
}

pub fn random_predicate<R: Rng>(rng: &mut R, t: &RowTable, depth: u32) -> Predicate {
    let choice = if depth == 0 { rng.gen_range(0..3) } else { rng.gen_range(0..6) };
    match choice {
        0 | 1 => {
            let op = *[CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge].choose(rng).unwrap();
            if rng.gen_bool(0.3) && !t.columns.is_empty() {
                // same-typed column against column or a literal of that type
                let (name, ty) = t.columns.choose(rng).unwrap().clone();
                let right = if rng.gen() {
                    Expression::lit(random_value(rng, ty, 0.0))
                } else {
                    let same = columns_of(t, |x| x == ty);
                    Expression::Column { name: same.choose(rng).unwrap().clone() }
                };
                Predicate::cmp(op, Expression::Column { name }, right)
            } else {
                Predicate::cmp(op, random_expression(rng, t, depth.min(1)), random_expression(rng, t, 0))
            }
        }
        2 => {
            let arg = match t.columns.choose(rng) {
                Some((name, _)) if rng.gen() => Expression::Column { name: name.clone() },
                _ => random_expression(rng, t, depth.min(1)),
            };
            if rng.gen() {
                Predicate::IsNull { arg }
            } else {
                Predicate::NotNull { arg }
            }
        }
        3 => Predicate::And {
            left: Box::new(random_predicate(rng, t, depth - 1)),
            right: Box::new(random_predicate(rng, t, depth - 1)),
        },
        4 => Predicate::Or {
            left: Box::new(random_predicate(rng, t, depth - 1)),
            right: Box::new(random_predicate(rng, t, depth - 1)),
        },
        _ => Predicate::Not { arg: Box::new(random_predicate(rng, t, depth - 1)) },
    }
}

fn random_step<R: Rng>(rng: &mut R, t: &RowTable, right: Option<(DatasetId, &RowTable)>, serial: usize) -> PrepStep {
    let names: Vec<String> = t.columns.iter().map(|c| c.0.clone()).collect();
    match rng.gen_range(0..8) {
        0 | 1 => PrepStep::CreateColumn { name: format!("n{serial}"), expr: random_expression(rng, t, 3) },
        2 => PrepStep::FilterRows { predicate: random_predicate(rng, t, 2) },
        3 if !names.is_empty() => {
            let mut pick = names.clone();
            pick.shuffle(rng);
            pick.truncate(rng.gen_range(1..=names.len().min(2)));
            PrepStep::DropColumns { names: pick }
        }
        4 if !names.is_empty() => {
            PrepStep::RenameColumn { from: names.choose(rng).unwrap().clone(), to: format!("m{serial}") }
        }
        5 if !names.is_empty() => {
            let (column, ty) = t.columns.choose(rng).unwrap().clone();
            let strategy = match rng.gen_range(0..4) {
                0 => FillStrategy::Constant { value: random_value(rng, ty, 0.0) },
                1 => FillStrategy::Mean,
                2 => FillStrategy::Median,
                _ => FillStrategy::Forward,
            };
            PrepStep::FillNull { column, strategy }
        }
        6 if !names.is_empty() => {
            let mut group_by = Vec::new();
            if rng.gen_bool(0.8) {
                group_by.push(names.choose(rng).unwrap().clone());
            }
            let aggs = (0..rng.gen_range(1..=3))
                .map(|j| AggSpec {
                    func: *[AggFunc::Mean, AggFunc::Sum, AggFunc::Min, AggFunc::Max, AggFunc::Count]
                        .choose(rng)
                        .unwrap(),
                    column: names.choose(rng).unwrap().clone(),
                    out_name: format!("g{serial}_{j}"),
                })
                .collect();
            PrepStep::Aggregate { group_by, aggs }
        }
        7 if right.is_some() => {
            let (rid, r) = right.unwrap();
            PrepStep::Merge {
                right_dataset_id: rid,
                keys: vec![r.columns[0].0.clone()],
                join_type: if rng.gen() { JoinType::Inner } else { JoinType::Left },
            }
        }
        _ => PrepStep::CreateColumn { name: format!("n{serial}"), expr: random_expression(rng, t, 2) },
    }
}

/// Two input tables and a pipeline of up to `max_steps` steps that the oracle
/// accepts. Candidate steps the oracle rejects are redrawn a few times, then dropped.
pub fn random_case<R: Rng>(
    rng: &mut R,
    max_rows: usize,
    max_steps: usize,
) -> (HashMap<DatasetId, RowTable>, PrepPipeline) {
    let left_id = DatasetId::from_bytes(rng.gen());
    let right_id = DatasetId::from_bytes(rng.gen());
    let left = random_table(rng, max_rows, 6, "c");
    let key = rng.gen_range(0..left.columns.len());
    let right = random_right_table(rng, &left, key, max_rows / 4 + 1);
    let mut tables = HashMap::new();
    tables.insert(left_id, left.clone());
    tables.insert(right_id, right.clone());

    let mut steps = Vec::new();
    let mut cur = left;
    let mut merged = false;
    for serial in 0..rng.gen_range(0..=max_steps) {
        for _ in 0..8 {
            let r = (!merged).then_some((right_id, &right));
            let s = random_step(rng, &cur, r, serial);
            if let Ok(next) = prep::step(&cur, &s, &tables) {
                merged |= matches!(s, PrepStep::Merge { .. });
                cur = next;
                steps.push(s);
                break;
            }
        }
    }
    (tables, PrepPipeline::new(vec![left_id, right_id], steps))
}
