use super::{
    complete_rows, num, numeric_columns, opt_num, AnalyticsError, CompensatedSum, Executor, ResultSet, ResultTable,
};
use crate::dataprep::Table;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnStats {
    pub count: usize,
    pub null_count: usize,
    pub mean: Option<f64>,
    /// Population standard deviation.
    pub std: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Clone, Copy)]
struct FirstPass {
    count: usize,
    nulls: usize,
    sum: CompensatedSum,
    min: f64,
    max: f64,
}

impl FirstPass {
    fn merge(mut self, o: FirstPass) -> FirstPass {
        self.count += o.count;
        self.nulls += o.nulls;
        self.sum = self.sum.merge(o.sum);
        self.min = self.min.min(o.min);
        self.max = self.max.max(o.max);
        self
    }
}

/// Two passes: compensated sum for the mean, then compensated sum of squared deviations.
pub fn column_stats(exec: &Executor, values: &[Option<f64>]) -> ColumnStats {
    let first = exec.map_reduce(
        values.len(),
        |p| {
            let mut acc = FirstPass { count: 0, nulls: 0, sum: CompensatedSum::default(), min: f64::INFINITY, max: f64::NEG_INFINITY };
            for v in &values[p.rows.clone()] {
                match v {
                    Some(x) => {
                        acc.count += 1;
                        acc.sum.add(*x);
                        acc.min = acc.min.min(*x);
                        acc.max = acc.max.max(*x);
                    }
                    None => acc.nulls += 1,
                }
            }
            acc
        },
        FirstPass::merge,
    );
    if first.count == 0 {
        return ColumnStats { count: 0, null_count: first.nulls, mean: None, std: None, min: None, max: None };
    }
    let mean = first.sum.value() / first.count as f64;
    let ss = exec.map_reduce(
        values.len(),
        |p| {
            let mut s = CompensatedSum::default();
            for x in values[p.rows.clone()].iter().flatten() {
                let d = x - mean;
                s.add(d * d);
            }
            s
        },
        CompensatedSum::merge,
    );
    ColumnStats {
        count: first.count,
        null_count: first.nulls,
        mean: Some(mean),
        std: Some((ss.value() / first.count as f64).sqrt()),
        min: Some(first.min),
        max: Some(first.max),
    }
}

pub fn descriptive_stats(exec: &Executor, table: &Table, columns: &[&str]) -> Result<ResultSet, AnalyticsError> {
    let cols = numeric_columns(table, columns)?;
    let mut rs = ResultSet::new("descriptive_stats");
    let mut rows = Vec::new();
    for (name, values) in columns.iter().zip(&cols) {
        let s = column_stats(exec, values);
        rs.metric(format!("{name}.count"), Some(s.count as f64));
        rs.metric(format!("{name}.null_count"), Some(s.null_count as f64));
        rs.metric(format!("{name}.mean"), s.mean);
        rs.metric(format!("{name}.std"), s.std);
        rs.metric(format!("{name}.min"), s.min);
        rs.metric(format!("{name}.max"), s.max);
        rows.push(vec![
            serde_json::Value::from(*name),
            serde_json::Value::from(s.count),
            serde_json::Value::from(s.null_count),
            opt_num(s.mean),
            opt_num(s.std),
            opt_num(s.min),
            opt_num(s.max),
        ]);
    }
    rs.tables.insert(
        "stats".into(),
        ResultTable {
            columns: ["column", "count", "null_count", "mean", "std", "min", "max"].map(String::from).to_vec(),
            rows,
        },
    );
    Ok(rs)
}

/// Pearson r over pairwise-complete rows, clamped to [-1, 1].
pub fn pearson_r(exec: &Executor, a: &[Option<f64>], b: &[Option<f64>]) -> Result<(f64, usize), AnalyticsError> {
    let (_, data) = complete_rows(&[a.to_vec(), b.to_vec()], a.len());
    let n = data.len() / 2;
    if n < 2 {
        return Err(AnalyticsError::InsufficientRows { needed: 1, found: n });
    }
    let sums = exec.map_reduce(
        n,
        |p| {
            let (mut sa, mut sb) = (CompensatedSum::default(), CompensatedSum::default());
            for i in p.rows.clone() {
                sa.add(data[2 * i]);
                sb.add(data[2 * i + 1]);
            }
            (sa, sb)
        },
        |x, y| (x.0.merge(y.0), x.1.merge(y.1)),
    );
    let (ma, mb) = (sums.0.value() / n as f64, sums.1.value() / n as f64);
    let (saa, sbb, sab) = exec.map_reduce(
        n,
        |p| {
            let mut acc = [CompensatedSum::default(); 3];
            for i in p.rows.clone() {
                let (da, db) = (data[2 * i] - ma, data[2 * i + 1] - mb);
                acc[0].add(da * da);
                acc[1].add(db * db);
                acc[2].add(da * db);
            }
            (acc[0], acc[1], acc[2])
        },
        |x, y| (x.0.merge(y.0), x.1.merge(y.1), x.2.merge(y.2)),
    );
    let (saa, sbb, sab) = (saa.value(), sbb.value(), sab.value());
    if saa == 0.0 {
        return Err(AnalyticsError::ZeroVariance("a".into()));
    }
    if sbb == 0.0 {
        return Err(AnalyticsError::ZeroVariance("b".into()));
    }
    Ok(((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0), n))
}

pub fn pearson_correlation(exec: &Executor, table: &Table, col_a: &str, col_b: &str) -> Result<ResultSet, AnalyticsError> {
    let cols = numeric_columns(table, &[col_a, col_b])?;
    let (r, n) = pearson_r(exec, &cols[0], &cols[1]).map_err(|e| match e {
        AnalyticsError::ZeroVariance(which) => {
            AnalyticsError::ZeroVariance(if which == "a" { col_a } else { col_b }.to_owned())
        }
        other => other,
    })?;
    let mut rs = ResultSet::new("pearson_correlation");
    rs.metric("r", Some(r));
    rs.metric("n_rows", Some(n as f64));
    rs.metric("rows_dropped", Some((table.row_count() - n) as f64));
    rs.tables.insert(
        "pair".into(),
        ResultTable {
            columns: vec!["col_a".into(), "col_b".into(), "r".into()],
            rows: vec![vec![col_a.into(), col_b.into(), num(r)]],
        },
    );
    Ok(rs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_column() {
        let s = column_stats(&Executor::new(2), &[Some(1.0), Some(2.0), None, Some(3.0)]);
        assert_eq!(s.count, 3);
        assert_eq!(s.null_count, 1);
        assert_eq!(s.mean, Some(2.0));
        assert!((s.std.unwrap() - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!((s.min, s.max), (Some(1.0), Some(3.0)));
    }

    #[test]
    fn all_null_column() {
        let s = column_stats(&Executor::new(4), &[None, None]);
        assert_eq!(s.count, 0);
        assert_eq!(s.mean, None);
    }

    #[test]
    fn perfect_correlations() {
        let x: Vec<Option<f64>> = (0..20).map(|i| Some(i as f64 * 0.37)).collect();
        let neg: Vec<Option<f64>> = x.iter().map(|v| v.map(|v| -v)).collect();
        let e = Executor::new(3);
        assert_eq!(pearson_r(&e, &x, &x).unwrap().0, 1.0);
        assert_eq!(pearson_r(&e, &x, &neg).unwrap().0, -1.0);
        let flat = vec![Some(1.0); 20];
        assert!(matches!(pearson_r(&e, &x, &flat), Err(AnalyticsError::ZeroVariance(_))));
    }
}
