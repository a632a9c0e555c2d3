//! Partitioned analytics over prepared tables.

mod executor;
mod kmeans;
mod regression;
mod series;
mod stats;

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use executor::{partition_rows, CompensatedSum, ExecutionPartition, Executor};
pub use kmeans::{kmeans, kmeans_model, KMeansModel};
pub use regression::{linear_regression, ols_fit, OlsFit};
pub use series::{render_result_series, render_series, AxisValue, ChartSpec, ChartType, DataSeries, NamedSeries};
pub use stats::{column_stats, descriptive_stats, pearson_correlation, pearson_r, ColumnStats};

use crate::dataprep::{Schema, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum AlgorithmSpec {
    DescriptiveStats { columns: Vec<String> },
    LinearRegression { target: String, features: Vec<String> },
    KMeans { k: usize, max_iter: usize, seed: u64, features: Vec<String> },
    PearsonCorrelation { col_a: String, col_b: String },
}

impl AlgorithmSpec {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::DescriptiveStats { .. } => "descriptive_stats",
            Self::LinearRegression { .. } => "linear_regression",
            Self::KMeans { .. } => "k_means",
            Self::PearsonCorrelation { .. } => "pearson_correlation",
        }
    }

    pub fn columns(&self) -> Vec<&str> {
        match self {
            Self::DescriptiveStats { columns } => columns.iter().map(String::as_str).collect(),
            Self::LinearRegression { target, features } => std::iter::once(target.as_str())
                .chain(features.iter().map(String::as_str))
                .collect(),
            Self::KMeans { features, .. } => features.iter().map(String::as_str).collect(),
            Self::PearsonCorrelation { col_a, col_b } => vec![col_a, col_b],
        }
    }

    /// Static check against the prepared table's schema.
    pub fn validate(&self, schema: &Schema) -> Result<(), AnalyticsError> {
        let cols = self.columns();
        if cols.is_empty() {
            return Err(AnalyticsError::InvalidSpec("no columns selected".into()));
        }
        for c in cols {
            match schema.type_of(c) {
                None => return Err(AnalyticsError::UnknownColumn(c.to_owned())),
                Some(t) if !t.is_numeric() => return Err(AnalyticsError::NonNumericColumn(c.to_owned())),
                Some(_) => {}
            }
        }
        if let Self::KMeans { k, max_iter, .. } = self {
            if *k == 0 || *max_iter == 0 {
                return Err(AnalyticsError::InvalidSpec("k and max_iter must be at least 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("column {0} is not numeric")]
    NonNumericColumn(String),
    #[error("need more than {needed} complete rows, found {found}")]
    InsufficientRows { needed: usize, found: usize },
    #[error("design matrix is singular")]
    SingularDesign,
    #[error("k = {k} exceeds the {rows} usable rows")]
    KExceedsRows { k: usize, rows: usize },
    #[error("column {0} has zero variance")]
    ZeroVariance(String),
    #[error("no input values")]
    EmptyInput,
    #[error("invalid algorithm spec: {0}")]
    InvalidSpec(String),
}

impl AnalyticsError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownColumn(_) => "unknown-column",
            Self::NonNumericColumn(_) => "non-numeric-column",
            Self::InsufficientRows { .. } => "insufficient-rows",
            Self::SingularDesign => "singular-design",
            Self::KExceedsRows { .. } => "k-exceeds-rows",
            Self::ZeroVariance(_) => "zero-variance",
            Self::EmptyInput => "empty-input",
            Self::InvalidSpec(_) => "invalid-spec",
        }
    }
}

/// A small named table inside a result, e.g. coefficients or centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<serde_json::Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSet {
    pub algorithm: String,
    /// `None` marks a metric that is undefined for this input (serialized as null).
    pub metrics: BTreeMap<String, Option<f64>>,
    pub tables: BTreeMap<String, ResultTable>,
    pub produced_at: DateTime<Utc>,
}

impl ResultSet {
    pub(crate) fn new(algorithm: &str) -> Self {
        Self {
            algorithm: algorithm.to_owned(),
            metrics: BTreeMap::new(),
            tables: BTreeMap::new(),
            produced_at: Utc::now(),
        }
    }

    pub(crate) fn metric(&mut self, name: impl Into<String>, value: Option<f64>) {
        self.metrics.insert(name.into(), value.filter(|v| v.is_finite()));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied().flatten()
    }
}

pub(crate) fn num(x: f64) -> serde_json::Value {
    serde_json::Number::from_f64(x).map_or(serde_json::Value::Null, serde_json::Value::Number)
}

pub(crate) fn opt_num(x: Option<f64>) -> serde_json::Value {
    x.map_or(serde_json::Value::Null, num)
}

/// Numeric views of the named columns.
pub(crate) fn numeric_columns(table: &Table, names: &[&str]) -> Result<Vec<Vec<Option<f64>>>, AnalyticsError> {
    names
        .iter()
        .map(|name| {
            let col = table.column(name).ok_or_else(|| AnalyticsError::UnknownColumn((*name).to_owned()))?;
            if !col.column_type().is_numeric() {
                return Err(AnalyticsError::NonNumericColumn((*name).to_owned()));
            }
            Ok(col.as_f64())
        })
        .collect()
}

/// Listwise deletion: returns the indices of rows with no null in any column, and a
/// row-major dense matrix of those rows.
pub(crate) fn complete_rows(cols: &[Vec<Option<f64>>], n: usize) -> (Vec<usize>, Vec<f64>) {
    let mut idx = Vec::new();
    let mut data = Vec::new();
    for i in 0..n {
        if cols.iter().all(|c| c[i].is_some()) {
            idx.push(i);
            data.extend(cols.iter().map(|c| c[i].expect("checked")));
        }
    }
    (idx, data)
}

/// Runs one algorithm over a prepared table.
pub fn run_algorithm(exec: &Executor, table: &Table, spec: &AlgorithmSpec) -> Result<ResultSet, AnalyticsError> {
    spec.validate(table.schema())?;
    match spec {
        AlgorithmSpec::DescriptiveStats { columns } => {
            descriptive_stats(exec, table, &columns.iter().map(String::as_str).collect::<Vec<_>>())
        }
        AlgorithmSpec::LinearRegression { target, features } => {
            linear_regression(exec, table, target, &features.iter().map(String::as_str).collect::<Vec<_>>())
        }
        AlgorithmSpec::KMeans { .. } => kmeans(exec, table, spec),
        AlgorithmSpec::PearsonCorrelation { col_a, col_b } => pearson_correlation(exec, table, col_a, col_b),
    }
}
