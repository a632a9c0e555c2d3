use super::{complete_rows, num, numeric_columns, AnalyticsError, CompensatedSum, Executor, ResultSet, ResultTable};
use crate::dataprep::Table;

/// Relative pivot below which a feature is treated as linearly dependent on earlier ones.
const SINGULAR_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub intercept: f64,
    pub weights: Vec<f64>,
    /// Undefined when the target is constant.
    pub r_squared: Option<f64>,
    pub rmse: f64,
    pub rows_used: Vec<usize>,
}

impl OlsFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
    }
}

fn sum_vec(a: Vec<CompensatedSum>, b: Vec<CompensatedSum>) -> Vec<CompensatedSum> {
    a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect()
}

/// Solves `a · w = b` for symmetric positive semi-definite `a` by Cholesky factorization.
/// Fails when a pivot falls below the tolerance relative to its diagonal entry.
fn solve_spd(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>, AnalyticsError> {
    let p = b.len();
    let mut l = vec![vec![0.0; p]; p];
    for j in 0..p {
        let mut d = a[j][j];
        for k in 0..j {
            d -= l[j][k] * l[j][k];
        }
        if !(d > SINGULAR_TOLERANCE * a[j][j]) || a[j][j] <= 0.0 {
            return Err(AnalyticsError::SingularDesign);
        }
        let djj = d.sqrt();
        l[j][j] = djj;
        for i in j + 1..p {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            l[i][j] = s / djj;
        }
    }
    let mut z = vec![0.0; p];
    for i in 0..p {
        let s: f64 = (0..i).map(|k| l[i][k] * z[k]).sum();
        z[i] = (b[i] - s) / l[i][i];
    }
    let mut w = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|k| l[k][i] * w[k]).sum();
        w[i] = (z[i] - s) / l[i][i];
    }
    Ok(w)
}

/// Ordinary least squares with intercept. The normal equations are formed on centered
/// data, which keeps the intercept out of the system and improves conditioning.
pub fn ols_fit(exec: &Executor, table: &Table, target: &str, features: &[&str]) -> Result<OlsFit, AnalyticsError> {
    let names: Vec<&str> = std::iter::once(target).chain(features.iter().copied()).collect();
    let cols = numeric_columns(table, &names)?;
    let (rows_used, data) = complete_rows(&cols, table.row_count());
    let n = rows_used.len();
    let p = features.len();
    let w = p + 1;
    if p == 0 {
        return Err(AnalyticsError::InvalidSpec("no features".into()));
    }
    if n <= p {
        return Err(AnalyticsError::InsufficientRows { needed: p, found: n });
    }
    let row = |i: usize| &data[i * w..(i + 1) * w];

    let sums = exec.map_reduce(
        n,
        |part| {
            let mut acc = vec![CompensatedSum::default(); w];
            for i in part.rows.clone() {
                for (a, x) in acc.iter_mut().zip(row(i)) {
                    a.add(*x);
                }
            }
            acc
        },
        sum_vec,
    );
    let means: Vec<f64> = sums.iter().map(|s| s.value() / n as f64).collect();

    // Upper triangle of the centered cross-product matrix over (y, x1..xp), row-major.
    let tri = w * (w + 1) / 2;
    let cross = exec.map_reduce(
        n,
        |part| {
            let mut acc = vec![CompensatedSum::default(); tri];
            let mut d = vec![0.0; w];
            for i in part.rows.clone() {
                for (j, x) in row(i).iter().enumerate() {
                    d[j] = x - means[j];
                }
                let mut t = 0;
                for a in 0..w {
                    for b in a..w {
                        acc[t].add(d[a] * d[b]);
                        t += 1;
                    }
                }
            }
            acc
        },
        sum_vec,
    );
    let mut s = vec![vec![0.0; w]; w];
    let mut t = 0;
    for a in 0..w {
        for b in a..w {
            s[a][b] = cross[t].value();
            s[b][a] = s[a][b];
            t += 1;
        }
    }
    let sxx: Vec<Vec<f64>> = (1..w).map(|a| s[a][1..].to_vec()).collect();
    let sxy: Vec<f64> = (1..w).map(|a| s[a][0]).collect();
    let weights = solve_spd(&sxx, &sxy)?;
    let intercept = means[0] - weights.iter().zip(&means[1..]).map(|(w, m)| w * m).sum::<f64>();

    let sse = exec
        .map_reduce(
            n,
            |part| {
                let mut acc = CompensatedSum::default();
                for i in part.rows.clone() {
                    let r = row(i);
                    let fitted = intercept + weights.iter().zip(&r[1..]).map(|(w, x)| w * x).sum::<f64>();
                    let e = r[0] - fitted;
                    acc.add(e * e);
                }
                acc
            },
            CompensatedSum::merge,
        )
        .value();
    let sst = s[0][0];
    Ok(OlsFit {
        intercept,
        weights,
        r_squared: (sst > 0.0).then(|| 1.0 - sse / sst),
        rmse: (sse / n as f64).sqrt(),
        rows_used,
    })
}

pub fn linear_regression(exec: &Executor, table: &Table, target: &str, features: &[&str]) -> Result<ResultSet, AnalyticsError> {
    let fit = ols_fit(exec, table, target, features)?;
    let mut rs = ResultSet::new("linear_regression");
    rs.metric("r_squared", fit.r_squared);
    rs.metric("rmse", Some(fit.rmse));
    rs.metric("intercept", Some(fit.intercept));
    rs.metric("n_rows", Some(fit.rows_used.len() as f64));
    rs.metric("rows_dropped", Some((table.row_count() - fit.rows_used.len()) as f64));
    rs.tables.insert(
        "coefficients".into(),
        ResultTable {
            columns: vec!["feature".into(), "weight".into()],
            rows: features.iter().zip(&fit.weights).map(|(f, w)| vec![(*f).into(), num(*w)]).collect(),
        },
    );
    Ok(rs)
}
