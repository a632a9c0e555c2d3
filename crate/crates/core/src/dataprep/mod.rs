//! Typed tables, the expression language, preparation pipelines and CSV ingestion.

pub mod csv;
pub mod expr;
pub mod pipeline;
mod table;
mod types;

pub use expr::{AggFunc, BinaryOp, CmpOp, Expression, Predicate, ShiftDirection, TimePart};
pub use pipeline::{
    apply_step, run_pipeline, validate_pipeline, AggSpec, FillStrategy, JoinType, PrepError, PrepErrorKind,
    PrepPipeline, PrepStep,
};
pub use table::{Column, Table, TableError};
pub use types::{ColumnDef, ColumnType, Schema, Value};
