//! Preparation steps, static pipeline validation and execution.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::expr::{self, aggregate_column, aggregate_type, AggFunc, Expression, Predicate, TypeError};
use super::{Column, ColumnDef, ColumnType, Schema, Table, Value};
use crate::ids::{DatasetId, PipelineId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinType {
    Inner,
    Left,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FillStrategy {
    Constant { value: Value },
    /// Numeric columns only; the column becomes float64.
    Mean,
    /// Numeric columns only; the column becomes float64.
    Median,
    /// Carries the last non-null value forward; leading nulls stay null.
    Forward,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggSpec {
    pub func: AggFunc,
    pub column: String,
    pub out_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum PrepStep {
    CreateColumn { name: String, expr: Expression },
    DropColumns { names: Vec<String> },
    FilterRows { predicate: Predicate },
    RenameColumn { from: String, to: String },
    Merge { right_dataset_id: DatasetId, keys: Vec<String>, join_type: JoinType },
    FillNull { column: String, strategy: FillStrategy },
    Aggregate { group_by: Vec<String>, aggs: Vec<AggSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepPipeline {
    pub pipeline_id: PipelineId,
    /// The first input is the table the steps fold over; the rest may be merged in.
    pub inputs: Vec<DatasetId>,
    pub steps: Vec<PrepStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_schema: Option<Schema>,
}

impl PrepPipeline {
    pub fn new(inputs: Vec<DatasetId>, steps: Vec<PrepStep>) -> Self {
        Self {
            pipeline_id: PipelineId::new(),
            inputs,
            steps,
            output_schema: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PrepErrorKind {
    #[error("unknown-column: {0}")]
    UnknownColumn(String),
    #[error("type-mismatch: {0}")]
    TypeMismatch(String),
    #[error("name-collision: {0}")]
    NameCollision(String),
    #[error("unknown-dataset: {0}")]
    UnknownDataset(DatasetId),
    #[error("no input datasets")]
    NoInputs,
}

impl PrepErrorKind {
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownColumn(_) => "unknown-column",
            Self::TypeMismatch(_) => "type-mismatch",
            Self::NameCollision(_) => "name-collision",
            Self::UnknownDataset(_) => "unknown-dataset",
            Self::NoInputs => "no-inputs",
        }
    }
}

/// A validation or execution error tagged with the index of the failing step.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("step {step}: {kind}")]
pub struct PrepError {
    pub step: usize,
    pub kind: PrepErrorKind,
}

impl From<TypeError> for PrepErrorKind {
    fn from(e: TypeError) -> Self {
        match e {
            TypeError::UnknownColumn(c) => PrepErrorKind::UnknownColumn(c),
            TypeError::Mismatch(m) => PrepErrorKind::TypeMismatch(m),
        }
    }
}

fn require(schema: &Schema, name: &str) -> Result<ColumnType, PrepErrorKind> {
    schema
        .type_of(name)
        .ok_or_else(|| PrepErrorKind::UnknownColumn(name.to_owned()))
}

fn fresh(schema: &Schema, name: &str) -> Result<(), PrepErrorKind> {
    if name.is_empty() || schema.index_of(name).is_some() {
        Err(PrepErrorKind::NameCollision(name.to_owned()))
    } else {
        Ok(())
    }
}

/// Output schema of one step, given its input schema.
pub fn step_output_schema(
    input: &Schema,
    step: &PrepStep,
    others: &HashMap<DatasetId, Schema>,
) -> Result<Schema, PrepErrorKind> {
    let mut out = input.clone();
    match step {
        PrepStep::CreateColumn { name, expr } => {
            fresh(input, name)?;
            let ty = expr::check_expression(expr, input)?;
            out.0.push(ColumnDef::new(name.clone(), ty));
        }
        PrepStep::DropColumns { names } => {
            for n in names {
                let i = out.index_of(n).ok_or_else(|| PrepErrorKind::UnknownColumn(n.clone()))?;
                out.0.remove(i);
            }
        }
        PrepStep::FilterRows { predicate } => expr::check_predicate(predicate, input)?,
        PrepStep::RenameColumn { from, to } => {
            let i = input.index_of(from).ok_or_else(|| PrepErrorKind::UnknownColumn(from.clone()))?;
            fresh(input, to)?;
            out.0[i].name = to.clone();
        }
        PrepStep::Merge { right_dataset_id, keys, .. } => {
            let right = others
                .get(right_dataset_id)
                .ok_or(PrepErrorKind::UnknownDataset(*right_dataset_id))?;
            if keys.is_empty() {
                return Err(PrepErrorKind::TypeMismatch("merge needs at least one key".into()));
            }
            for k in keys {
                let l = require(input, k)?;
                let r = require(right, k)?;
                if l != r {
                    return Err(PrepErrorKind::TypeMismatch(format!("key {k}: {l} vs {r}")));
                }
            }
            for c in right.columns().iter().filter(|c| !keys.contains(&c.name)) {
                fresh(&out, &c.name)?;
                out.0.push(c.clone());
            }
        }
        PrepStep::FillNull { column, strategy } => {
            let i = input.index_of(column).ok_or_else(|| PrepErrorKind::UnknownColumn(column.clone()))?;
            let ty = input.columns()[i].ty;
            match strategy {
                FillStrategy::Constant { value } => {
                    let ok = match (ty, value) {
                        (_, Value::Null) => false,
                        (ColumnType::Float64, Value::Int(_)) => true,
                        (ColumnType::Float64, Value::Float(x)) => x.is_finite(),
                        (t, v) => v.column_type() == Some(t),
                    };
                    if !ok {
                        return Err(PrepErrorKind::TypeMismatch(format!("cannot fill {ty} column with {value:?}")));
                    }
                }
                FillStrategy::Mean | FillStrategy::Median => {
                    if !ty.is_numeric() {
                        return Err(PrepErrorKind::TypeMismatch(format!("{column} is {ty}, not numeric")));
                    }
                    out.0[i].ty = ColumnType::Float64;
                }
                FillStrategy::Forward => {}
            }
        }
        PrepStep::Aggregate { group_by, aggs } => {
            let mut schema = Schema::default();
            for g in group_by {
                let ty = require(input, g)?;
                fresh(&schema, g)?;
                schema.0.push(ColumnDef::new(g.clone(), ty));
            }
            for a in aggs {
                let ty = require(input, &a.column)?;
                let out_ty = aggregate_type(a.func, ty).map_err(PrepErrorKind::TypeMismatch)?;
                fresh(&schema, &a.out_name)?;
                schema.0.push(ColumnDef::new(a.out_name.clone(), out_ty));
            }
            out = schema;
        }
    }
    Ok(out)
}

/// Statically resolves the output schema, or reports the first failing step.
pub fn validate_pipeline(
    input_schemas: &HashMap<DatasetId, Schema>,
    pipeline: &PrepPipeline,
) -> Result<Schema, PrepError> {
    let first = pipeline.inputs.first().ok_or(PrepError { step: 0, kind: PrepErrorKind::NoInputs })?;
    let mut schema = input_schemas
        .get(first)
        .cloned()
        .ok_or(PrepError { step: 0, kind: PrepErrorKind::UnknownDataset(*first) })?;
    for (i, step) in pipeline.steps.iter().enumerate() {
        if let PrepStep::Merge { right_dataset_id, .. } = step {
            if !pipeline.inputs.contains(right_dataset_id) {
                return Err(PrepError { step: i, kind: PrepErrorKind::UnknownDataset(*right_dataset_id) });
            }
        }
        schema = step_output_schema(&schema, step, input_schemas).map_err(|kind| PrepError { step: i, kind })?;
    }
    Ok(schema)
}

/// Hashable cell used for join and group keys. Floats compare by value (`-0.0 == 0.0`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum KeyCell {
    Null,
    Bool(bool),
    Int(i64),
    Float(u64),
    Str(String),
}

fn key_cell(v: Value) -> KeyCell {
    match v {
        Value::Null => KeyCell::Null,
        Value::Bool(b) => KeyCell::Bool(b),
        Value::Int(x) | Value::Timestamp(x) => KeyCell::Int(x),
        Value::Float(x) => KeyCell::Float(if x == 0.0 { 0.0f64.to_bits() } else { x.to_bits() }),
        Value::Str(s) => KeyCell::Str(s),
    }
}

fn row_key(cols: &[&Column], i: usize) -> Vec<KeyCell> {
    cols.iter().map(|c| key_cell(c.value(i))).collect()
}

fn gather_table(table: &Table, idx: &[Option<usize>]) -> (Vec<ColumnDef>, Vec<Column>) {
    (
        table.schema().columns().to_vec(),
        table.columns().iter().map(|c| c.gather(idx)).collect(),
    )
}

fn build(schema: Vec<ColumnDef>, columns: Vec<Column>, rows: usize) -> Table {
    Table::with_rows(Schema::new(schema), columns, rows).expect("validated step produces a well-formed table")
}

fn fill_nulls(col: &Column, strategy: &FillStrategy) -> Column {
    match strategy {
        FillStrategy::Constant { value } => {
            let mut out = Column::with_capacity(col.column_type(), col.len());
            for i in 0..col.len() {
                let v = if col.is_null(i) { value.clone() } else { col.value(i) };
                out.push(v).expect("validated constant");
            }
            out
        }
        FillStrategy::Mean | FillStrategy::Median => {
            let vals = col.as_f64();
            let fill = if *strategy == FillStrategy::Mean {
                match aggregate_column(col, AggFunc::Mean, 0..col.len()) {
                    Value::Float(m) => Some(m),
                    _ => None,
                }
            } else {
                let mut present: Vec<f64> = vals.iter().flatten().copied().collect();
                present.sort_by(f64::total_cmp);
                let n = present.len();
                match n {
                    0 => None,
                    _ if n % 2 == 1 => Some(present[n / 2]),
                    _ => Some((present[n / 2 - 1] + present[n / 2]) / 2.0),
                }
            };
            Column::Float64(vals.into_iter().map(|x| x.or(fill)).collect())
        }
        FillStrategy::Forward => {
            let mut last: Option<usize> = None;
            let idx: Vec<Option<usize>> = (0..col.len())
                .map(|i| {
                    if !col.is_null(i) {
                        last = Some(i);
                    }
                    last
                })
                .collect();
            col.gather(&idx)
        }
    }
}

/// Applies one validated step. `others` holds the tables a merge may reference.
pub fn apply_step(table: &Table, step: &PrepStep, others: &HashMap<DatasetId, Table>) -> Result<Table, PrepErrorKind> {
    let schemas: HashMap<DatasetId, Schema> = others.iter().map(|(k, v)| (*k, v.schema().clone())).collect();
    let out_schema = step_output_schema(table.schema(), step, &schemas)?;
    let n = table.row_count();
    Ok(match step {
        PrepStep::CreateColumn { expr, .. } => {
            let col = expr::eval_expression(expr, table);
            let mut t = table.clone();
            let def = out_schema.columns().last().expect("new column").clone();
            t.push_column(def, col);
            t
        }
        PrepStep::DropColumns { .. } => {
            let cols = out_schema
                .names()
                .map(|name| table.column(name).expect("kept column").clone())
                .collect();
            build(out_schema.0, cols, n)
        }
        PrepStep::FilterRows { predicate } => {
            let keep: Vec<bool> = expr::eval_predicate(predicate, table)
                .into_iter()
                .map(|v| v == Some(true))
                .collect();
            let kept = keep.iter().filter(|k| **k).count();
            let cols = table.columns().iter().map(|c| c.filter(&keep)).collect();
            build(out_schema.0, cols, kept)
        }
        PrepStep::RenameColumn { .. } => build(out_schema.0, table.columns().to_vec(), n),
        PrepStep::Merge { right_dataset_id, keys, join_type } => {
            let right = &others[right_dataset_id];
            let lk: Vec<&Column> = keys.iter().map(|k| table.column(k).expect("key")).collect();
            let rk: Vec<&Column> = keys.iter().map(|k| right.column(k).expect("key")).collect();
            let mut index: HashMap<Vec<KeyCell>, Vec<usize>> = HashMap::new();
            for j in 0..right.row_count() {
                let key = row_key(&rk, j);
                if key.contains(&KeyCell::Null) {
                    continue;
                }
                index.entry(key).or_default().push(j);
            }
            let mut li = Vec::new();
            let mut ri = Vec::new();
            for i in 0..n {
                let key = row_key(&lk, i);
                match index.get(&key).filter(|_| !key.contains(&KeyCell::Null)) {
                    Some(matches) => {
                        for &j in matches {
                            li.push(Some(i));
                            ri.push(Some(j));
                        }
                    }
                    None if *join_type == JoinType::Left => {
                        li.push(Some(i));
                        ri.push(None);
                    }
                    None => {}
                }
            }
            let (_, mut cols) = gather_table(table, &li);
            for def in right.schema().columns().iter().filter(|c| !keys.contains(&c.name)) {
                cols.push(right.column(&def.name).expect("right column").gather(&ri));
            }
            build(out_schema.0, cols, li.len())
        }
        PrepStep::FillNull { column, strategy } => {
            let i = table.schema().index_of(column).expect("validated column");
            let mut cols = table.columns().to_vec();
            cols[i] = fill_nulls(&cols[i], strategy);
            build(out_schema.0, cols, n)
        }
        PrepStep::Aggregate { group_by, aggs } => {
            let gcols: Vec<&Column> = group_by.iter().map(|g| table.column(g).expect("group column")).collect();
            let mut groups: Vec<Vec<usize>> = Vec::new();
            let mut first_of: Vec<usize> = Vec::new();
            let mut lookup: BTreeMap<Vec<KeyCell>, usize> = BTreeMap::new();
            for i in 0..n {
                let key = row_key(&gcols, i);
                let g = *lookup.entry(key).or_insert_with(|| {
                    groups.push(Vec::new());
                    first_of.push(i);
                    groups.len() - 1
                });
                groups[g].push(i);
            }
            if group_by.is_empty() && groups.is_empty() {
                groups.push(Vec::new());
                first_of.push(usize::MAX);
            }
            let mut cols: Vec<Column> = Vec::with_capacity(out_schema.len());
            for g in &gcols {
                let idx: Vec<Option<usize>> = first_of.iter().map(|&i| Some(i)).collect();
                cols.push(g.gather(&idx));
            }
            for (a, def) in aggs.iter().zip(&out_schema.columns()[group_by.len()..]) {
                let src = table.column(&a.column).expect("agg column");
                let mut col = Column::with_capacity(def.ty, groups.len());
                for rows in &groups {
                    col.push(aggregate_column(src, a.func, rows.iter().copied())).expect("aggregate type");
                }
                cols.push(col);
            }
            build(out_schema.0, cols, groups.len())
        }
    })
}

/// Validates, then folds `apply_step` over the steps starting from the first input.
pub fn run_pipeline(tables_by_id: &HashMap<DatasetId, Table>, pipeline: &PrepPipeline) -> Result<Table, PrepError> {
    let schemas: HashMap<DatasetId, Schema> = tables_by_id.iter().map(|(k, v)| (*k, v.schema().clone())).collect();
    validate_pipeline(&schemas, pipeline)?;
    let mut table = tables_by_id[&pipeline.inputs[0]].clone();
    for (i, step) in pipeline.steps.iter().enumerate() {
        table = apply_step(&table, step, tables_by_id).map_err(|kind| PrepError { step: i, kind })?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataprep::expr::CmpOp;

    fn schema(cols: &[(&str, ColumnType)]) -> Schema {
        Schema::new(cols.iter().map(|(n, t)| ColumnDef::new(*n, *t)).collect())
    }

    fn ints(name: &str, vals: &[Option<i64>]) -> Table {
        Table::new(schema(&[(name, ColumnType::Int64)]), vec![Column::Int64(vals.to_vec())]).unwrap()
    }

    fn single(id: DatasetId, s: Schema, steps: Vec<PrepStep>) -> (HashMap<DatasetId, Schema>, PrepPipeline) {
        (HashMap::from([(id, s)]), PrepPipeline::new(vec![id], steps))
    }

    #[test]
    fn rename_resolves_schema() {
        let id = DatasetId::new();
        let (m, p) = single(id, schema(&[("a", ColumnType::Int64)]), vec![PrepStep::RenameColumn { from: "a".into(), to: "b".into() }]);
        assert_eq!(validate_pipeline(&m, &p).unwrap(), schema(&[("b", ColumnType::Int64)]));
    }

    #[test]
    fn drop_unknown_column_is_step_zero() {
        let id = DatasetId::new();
        let (m, p) = single(id, schema(&[("a", ColumnType::Int64)]), vec![PrepStep::DropColumns { names: vec!["x".into()] }]);
        let err = validate_pipeline(&m, &p).unwrap_err();
        assert_eq!(err, PrepError { step: 0, kind: PrepErrorKind::UnknownColumn("x".into()) });
    }

    #[test]
    fn adding_string_is_type_mismatch() {
        let id = DatasetId::new();
        let (m, p) = single(
            id,
            schema(&[("colA", ColumnType::Int64), ("colB", ColumnType::String)]),
            vec![PrepStep::CreateColumn {
                name: "s".into(),
                expr: Expression::binary(expr::BinaryOp::Add, Expression::col("colA"), Expression::col("colB")),
            }],
        );
        let err = validate_pipeline(&m, &p).unwrap_err();
        assert_eq!(err.step, 0);
        assert!(matches!(err.kind, PrepErrorKind::TypeMismatch(_)));
    }

    #[test]
    fn collisions_are_detected() {
        let s = schema(&[("a", ColumnType::Int64), ("b", ColumnType::Int64)]);
        let rename = PrepStep::RenameColumn { from: "a".into(), to: "b".into() };
        assert!(matches!(step_output_schema(&s, &rename, &HashMap::new()), Err(PrepErrorKind::NameCollision(_))));
        let create = PrepStep::CreateColumn { name: "a".into(), expr: Expression::lit(Value::Int(1)) };
        assert!(matches!(step_output_schema(&s, &create, &HashMap::new()), Err(PrepErrorKind::NameCollision(_))));
    }

    #[test]
    fn filter_keeps_true_rows_in_order() {
        let t = ints("x", &[Some(1), Some(2), Some(3)]);
        let step = PrepStep::FilterRows { predicate: Predicate::cmp(CmpOp::Gt, Expression::col("x"), Expression::lit(Value::Int(1))) };
        assert_eq!(apply_step(&t, &step, &HashMap::new()).unwrap(), ints("x", &[Some(2), Some(3)]));
    }

    #[test]
    fn fill_mean_uses_non_null_values() {
        let t = ints("x", &[Some(1), None, Some(3)]);
        let step = PrepStep::FillNull { column: "x".into(), strategy: FillStrategy::Mean };
        let out = apply_step(&t, &step, &HashMap::new()).unwrap();
        assert_eq!(out.columns()[0], Column::Float64(vec![Some(1.0), Some(2.0), Some(3.0)]));
        let med = PrepStep::FillNull { column: "x".into(), strategy: FillStrategy::Median };
        let t = ints("x", &[Some(1), None, Some(3), Some(10), Some(4)]);
        assert_eq!(
            apply_step(&t, &med, &HashMap::new()).unwrap().columns()[0],
            Column::Float64(vec![Some(1.0), Some(3.5), Some(3.0), Some(10.0), Some(4.0)])
        );
        let fwd = PrepStep::FillNull { column: "x".into(), strategy: FillStrategy::Forward };
        let t = ints("x", &[None, Some(2), None, None, Some(5)]);
        assert_eq!(
            apply_step(&t, &fwd, &HashMap::new()).unwrap(),
            ints("x", &[None, Some(2), Some(2), Some(2), Some(5)])
        );
    }

    #[test]
    fn group_sum_in_first_appearance_order() {
        let t = Table::from_rows(
            schema(&[("g", ColumnType::String), ("x", ColumnType::Int64)]),
            &[
                vec![Value::Str("a".into()), Value::Int(1)],
                vec![Value::Str("b".into()), Value::Int(2)],
                vec![Value::Str("a".into()), Value::Int(3)],
            ],
        )
        .unwrap();
        let step = PrepStep::Aggregate {
            group_by: vec!["g".into()],
            aggs: vec![AggSpec { func: AggFunc::Sum, column: "x".into(), out_name: "sum_x".into() }],
        };
        let out = apply_step(&t, &step, &HashMap::new()).unwrap();
        assert_eq!(
            out.rows(),
            vec![vec![Value::Str("a".into()), Value::Int(4)], vec![Value::Str("b".into()), Value::Int(2)]]
        );
    }

    #[test]
    fn global_aggregate_over_empty_table_yields_one_row() {
        let t = ints("x", &[]);
        let step = PrepStep::Aggregate {
            group_by: vec![],
            aggs: vec![
                AggSpec { func: AggFunc::Count, column: "x".into(), out_name: "n".into() },
                AggSpec { func: AggFunc::Sum, column: "x".into(), out_name: "s".into() },
            ],
        };
        let out = apply_step(&t, &step, &HashMap::new()).unwrap();
        assert_eq!(out.rows(), vec![vec![Value::Int(0), Value::Null]]);
    }

    #[test]
    fn inner_merge_keeps_matching_keys() {
        let left_id = DatasetId::new();
        let right_id = DatasetId::new();
        let left = Table::from_rows(
            schema(&[("k", ColumnType::Int64), ("l", ColumnType::String)]),
            &[vec![Value::Int(1), Value::Str("l1".into())], vec![Value::Int(2), Value::Str("l2".into())]],
        )
        .unwrap();
        let right = Table::from_rows(
            schema(&[("k", ColumnType::Int64), ("r", ColumnType::String)]),
            &[vec![Value::Int(2), Value::Str("r2".into())], vec![Value::Int(3), Value::Str("r3".into())]],
        )
        .unwrap();
        let tables = HashMap::from([(left_id, left), (right_id, right)]);
        let p = PrepPipeline::new(
            vec![left_id, right_id],
            vec![PrepStep::Merge { right_dataset_id: right_id, keys: vec!["k".into()], join_type: JoinType::Inner }],
        );
        let out = run_pipeline(&tables, &p).unwrap();
        assert_eq!(out.rows(), vec![vec![Value::Int(2), Value::Str("l2".into()), Value::Str("r2".into())]]);

        let p = PrepPipeline::new(
            vec![left_id, right_id],
            vec![PrepStep::Merge { right_dataset_id: right_id, keys: vec!["k".into()], join_type: JoinType::Left }],
        );
        let out = run_pipeline(&tables, &p).unwrap();
        assert_eq!(out.row_count(), 2);
        assert_eq!(out.row(0)[2], Value::Null);
    }

    #[test]
    fn empty_pipeline_is_identity() {
        let id = DatasetId::new();
        let t = ints("x", &[Some(1), None]);
        let out = run_pipeline(&HashMap::from([(id, t.clone())]), &PrepPipeline::new(vec![id], vec![])).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn merge_must_reference_an_input() {
        let id = DatasetId::new();
        let other = DatasetId::new();
        let m = HashMap::from([(id, schema(&[("k", ColumnType::Int64)])), (other, schema(&[("k", ColumnType::Int64)]))]);
        let p = PrepPipeline::new(vec![id], vec![PrepStep::Merge { right_dataset_id: other, keys: vec!["k".into()], join_type: JoinType::Inner }]);
        assert!(matches!(validate_pipeline(&m, &p).unwrap_err().kind, PrepErrorKind::UnknownDataset(_)));
    }

    #[test]
    fn pipeline_document_parses() {
        let id = DatasetId::new();
        let doc = serde_json::json!({
            "pipeline_id": PipelineId::new(),
            "inputs": [id],
            "steps": [
                {"step": "filter_rows", "predicate": {"kind": "compare", "op": ">", "left": {"kind": "column", "name": "x"}, "right": {"kind": "literal", "value": {"int": 1}}}},
                {"step": "fill_null", "column": "x", "strategy": {"kind": "constant", "value": {"int": 0}}},
                {"step": "aggregate", "group_by": [], "aggs": [{"func": "count", "column": "x", "out_name": "n"}]}
            ]
        });
        let p: PrepPipeline = serde_json::from_value(doc).unwrap();
        assert_eq!(p.steps.len(), 3);
    }
}
