use serde::{Deserialize, Serialize};

use super::{AnalyticsError, ResultSet};
use crate::dataprep::{csv::format_timestamp, Column, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartType {
    Line,
    Bar,
    Scatter,
    Histogram,
}

/// What to plot. `y` is ignored for histograms. When `result_table` is set the columns
/// refer to that table of the result set instead of the prepared table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub chart_type: ChartType,
    pub x: String,
    #[serde(default)]
    pub y: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_table: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_label: Option<String>,
}

impl ChartSpec {
    pub fn new(chart_type: ChartType, x: &str, y: &[&str]) -> Self {
        Self {
            chart_type,
            x: x.to_owned(),
            y: y.iter().map(|s| (*s).to_owned()).collect(),
            result_table: None,
            x_label: None,
            y_label: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSeries {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSeries {
    pub chart_type: ChartType,
    pub x_label: String,
    pub y_label: String,
    pub x: Vec<Option<AxisValue>>,
    pub series: Vec<NamedSeries>,
    /// Histogram bin width; `x` then holds the lower bin edges.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_width: Option<f64>,
}

impl DataSeries {
    /// Adds a series computed from the numeric x values, e.g. a fitted line.
    pub fn overlay(&mut self, name: &str, f: impl Fn(f64) -> f64) {
        let values = self
            .x
            .iter()
            .map(|x| match x {
                Some(AxisValue::Number(v)) => Some(f(*v)).filter(|y| y.is_finite()),
                _ => None,
            })
            .collect();
        self.series.push(NamedSeries { name: name.to_owned(), values });
    }

    pub fn is_well_formed(&self) -> bool {
        self.series.iter().all(|s| s.values.len() == self.x.len())
    }
}

fn axis_values(col: &Column) -> Vec<Option<AxisValue>> {
    (0..col.len())
        .map(|i| match col {
            Column::String(v) => v[i].clone().map(AxisValue::Text),
            Column::Int64(v) => v[i].map(|x| AxisValue::Number(x as f64)),
            Column::Float64(v) => v[i].map(AxisValue::Number),
            Column::Bool(v) => v[i].map(|b| AxisValue::Text(b.to_string())),
            Column::TimestampMsUtc(v) => v[i].map(|t| AxisValue::Text(format_timestamp(t))),
        })
        .collect()
}

/// Counts values into ⌈√n⌉ equal-width bins; the maximum lands in the last bin.
pub(crate) fn histogram(values: &[f64]) -> (Vec<f64>, Vec<usize>, f64) {
    let n = values.len();
    let bins = ((n as f64).sqrt().ceil() as usize).max(1);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (max - min) / bins as f64;
    let mut counts = vec![0; bins];
    for v in values {
        let b = if width > 0.0 { ((v - min) / width) as usize } else { 0 };
        counts[b.min(bins - 1)] += 1;
    }
    let edges = (0..bins).map(|i| min + width * i as f64).collect();
    (edges, counts, width)
}

fn histogram_series(values: Vec<f64>, label: String) -> Result<DataSeries, AnalyticsError> {
    if values.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    let (edges, counts, width) = histogram(&values);
    Ok(DataSeries {
        chart_type: ChartType::Histogram,
        x_label: label,
        y_label: "count".into(),
        x: edges.into_iter().map(|e| Some(AxisValue::Number(e))).collect(),
        series: vec![NamedSeries { name: "count".into(), values: counts.into_iter().map(|c| Some(c as f64)).collect() }],
        bin_width: Some(width),
    })
}

fn labels(spec: &ChartSpec) -> (String, String) {
    (
        spec.x_label.clone().unwrap_or_else(|| spec.x.clone()),
        spec.y_label.clone().unwrap_or_else(|| spec.y.join(", ")),
    )
}

/// Renders a chart over the columns of a table.
pub fn render_series(table: &Table, spec: &ChartSpec) -> Result<DataSeries, AnalyticsError> {
    let x = table.column(&spec.x).ok_or_else(|| AnalyticsError::UnknownColumn(spec.x.clone()))?;
    let (x_label, y_label) = labels(spec);
    if spec.chart_type == ChartType::Histogram {
        if !x.column_type().is_numeric() {
            return Err(AnalyticsError::NonNumericColumn(spec.x.clone()));
        }
        return histogram_series(x.as_f64().into_iter().flatten().collect(), x_label);
    }
    if spec.y.is_empty() {
        return Err(AnalyticsError::InvalidSpec("chart needs at least one y column".into()));
    }
    if table.row_count() == 0 {
        return Err(AnalyticsError::EmptyInput);
    }
    let mut series = Vec::with_capacity(spec.y.len());
    for name in &spec.y {
        let col = table.column(name).ok_or_else(|| AnalyticsError::UnknownColumn(name.clone()))?;
        if !col.column_type().is_numeric() {
            return Err(AnalyticsError::NonNumericColumn(name.clone()));
        }
        series.push(NamedSeries { name: name.clone(), values: col.as_f64() });
    }
    Ok(DataSeries { chart_type: spec.chart_type, x_label, y_label, x: axis_values(x), series, bin_width: None })
}

fn json_axis(v: &serde_json::Value) -> Option<AxisValue> {
    match v {
        serde_json::Value::Number(n) => n.as_f64().map(AxisValue::Number),
        serde_json::Value::String(s) => Some(AxisValue::Text(s.clone())),
        serde_json::Value::Bool(b) => Some(AxisValue::Text(b.to_string())),
        _ => None,
    }
}

/// Renders a chart over one of the small tables in a result set.
pub fn render_result_series(result: &ResultSet, spec: &ChartSpec) -> Result<DataSeries, AnalyticsError> {
    let name = spec
        .result_table
        .as_deref()
        .ok_or_else(|| AnalyticsError::InvalidSpec("no result table named".into()))?;
    let t = result.tables.get(name).ok_or_else(|| AnalyticsError::UnknownColumn(name.to_owned()))?;
    let index = |c: &str| {
        t.columns
            .iter()
            .position(|n| n == c)
            .ok_or_else(|| AnalyticsError::UnknownColumn(c.to_owned()))
    };
    let xi = index(&spec.x)?;
    let (x_label, y_label) = labels(spec);
    if t.rows.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    if spec.chart_type == ChartType::Histogram {
        return histogram_series(t.rows.iter().filter_map(|r| r[xi].as_f64()).collect(), x_label);
    }
    let mut series = Vec::new();
    for y in &spec.y {
        let yi = index(y)?;
        series.push(NamedSeries { name: y.clone(), values: t.rows.iter().map(|r| r[yi].as_f64()).collect() });
    }
    Ok(DataSeries {
        chart_type: spec.chart_type,
        x_label,
        y_label,
        x: t.rows.iter().map(|r| json_axis(&r[xi])).collect(),
        series,
        bin_width: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataprep::{ColumnDef, ColumnType, Schema};

    #[test]
    fn hundred_values_ten_bins() {
        let v: Vec<f64> = (0..100).map(f64::from).collect();
        let (_, counts, _) = histogram(&v);
        assert_eq!(counts, vec![10; 10]);
    }

    #[test]
    fn scatter_keeps_row_order() {
        let t = Table::new(
            Schema::new(vec![ColumnDef::new("a", ColumnType::Int64), ColumnDef::new("b", ColumnType::Float64)]),
            vec![Column::Int64(vec![Some(3), Some(1), Some(2)]), Column::Float64(vec![Some(0.5), None, Some(1.5)])],
        )
        .unwrap();
        let s = render_series(&t, &ChartSpec::new(ChartType::Scatter, "a", &["b"])).unwrap();
        assert_eq!(s.x, vec![Some(AxisValue::Number(3.0)), Some(AxisValue::Number(1.0)), Some(AxisValue::Number(2.0))]);
        assert_eq!(s.series[0].values, vec![Some(0.5), None, Some(1.5)]);
        assert!(s.is_well_formed());
    }

    #[test]
    fn empty_histogram_is_an_error() {
        let t = Table::new(Schema::new(vec![ColumnDef::new("a", ColumnType::Float64)]), vec![Column::Float64(vec![])]).unwrap();
        assert_eq!(
            render_series(&t, &ChartSpec::new(ChartType::Histogram, "a", &[])),
            Err(AnalyticsError::EmptyInput)
        );
    }
}
